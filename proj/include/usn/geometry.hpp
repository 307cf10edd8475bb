#pragma once

#include <Eigen/Dense>

#include <cmath>

namespace usn {

using Vec3 = Eigen::Vector3d;
using Vec2 = Eigen::Vector2d;
using Mat3 = Eigen::Matrix3d;

/// Continuous pixel position: x = u (column, lateral), y = v (row, depth).
using ImagePoint = Eigen::Vector2d;

inline constexpr double kPi = 3.14159265358979323846;

inline double deg_to_rad(double deg) { return deg * kPi / 180.0; }
inline double rad_to_deg(double rad) { return rad * 180.0 / kPi; }

// Probe frame {p} convention (right-handed):
//   X = probe long axis (lateral, footprint direction)
//   Y = probe short axis (elevation); the image plane is y = 0
//   Z = imaging depth (axial)
inline const Vec3 kProbeLongAxis = Vec3::UnitX();
inline const Vec3 kProbeShortAxis = Vec3::UnitY();
inline const Vec3 kProbeDepthAxis = Vec3::UnitZ();

/// Rigid body pose; maps child-frame coordinates into the parent frame:
/// x_parent = rotation * x_child + translation. Units are millimeters.
struct RigidTransform {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  static RigidTransform identity() { return {}; }
  static RigidTransform from_translation(const Vec3& t) { return {Mat3::Identity(), t}; }
  static RigidTransform rot_x(double rad);
  static RigidTransform rot_y(double rad);
  static RigidTransform rot_z(double rad);

  Vec3 apply(const Vec3& p) const { return rotation * p + translation; }

  Vec3 x_axis() const { return rotation.col(0); }
  Vec3 y_axis() const { return rotation.col(1); }
  Vec3 z_axis() const { return rotation.col(2); }

  /// Orthonormality defect: ||R^T R - I||_inf plus |det - 1|.
  double rigidity_error() const;
};

/// result applies b first, then a.
RigidTransform compose(const RigidTransform& a, const RigidTransform& b);
RigidTransform invert(const RigidTransform& t);

/// Projects the rotation back onto SO(3) (nearest orthonormal matrix, det +1).
Mat3 orthonormalized(const Mat3& r);

/// Pixel-grid to probe-frame mapping. Image u maps onto u_axis_in_p (+X by
/// default), v onto v_axis_in_p (+Z, depth). Pixel centers sit at integer
/// coordinates 0..width-1 / 0..height-1; bounds checks accept the closed box
/// [0,width]x[0,height] so the far grid edge is addressable.
struct CalibrationMap {
  int width = 671;
  int height = 657;
  double pixel_spacing_u = 51.3 / 671.0;  // mm per pixel, lateral
  double pixel_spacing_v = 50.0 / 657.0;  // mm per pixel, axial
  Vec3 image_origin_in_p = Vec3(-51.3 / 2.0, 0.0, 0.0);
  Vec3 u_axis_in_p = Vec3::UnitX();
  Vec3 v_axis_in_p = Vec3::UnitZ();

  double footprint_mm() const { return width * pixel_spacing_u; }
  double depth_mm() const { return height * pixel_spacing_v; }
  bool contains(const ImagePoint& px) const {
    return px.x() >= 0.0 && px.x() <= width && px.y() >= 0.0 && px.y() <= height;
  }
};

/// Maps a pixel to its probe-frame point on the image plane (y = 0 in {p}).
/// Throws std::out_of_range when the pixel is outside the image box.
Vec3 pixel_to_probe(const ImagePoint& px, const CalibrationMap& cal);

/// Inverse of pixel_to_probe for points on (or near) the image plane; the
/// out-of-plane component is ignored.
ImagePoint probe_to_pixel(const Vec3& pt_in_p, const CalibrationMap& cal);

inline Vec3 probe_to_base(const Vec3& pt_in_p, const RigidTransform& probe_pose) {
  return probe_pose.apply(pt_in_p);
}
inline Vec3 base_to_probe(const Vec3& pt_in_b, const RigidTransform& probe_pose) {
  return probe_pose.rotation.transpose() * (pt_in_b - probe_pose.translation);
}

}  // namespace usn
