#include "usn/geometry.hpp"

#include <stdexcept>

namespace usn {

RigidTransform RigidTransform::rot_x(double rad) {
  RigidTransform t;
  t.rotation = Eigen::AngleAxisd(rad, Vec3::UnitX()).toRotationMatrix();
  return t;
}

RigidTransform RigidTransform::rot_y(double rad) {
  RigidTransform t;
  t.rotation = Eigen::AngleAxisd(rad, Vec3::UnitY()).toRotationMatrix();
  return t;
}

RigidTransform RigidTransform::rot_z(double rad) {
  RigidTransform t;
  t.rotation = Eigen::AngleAxisd(rad, Vec3::UnitZ()).toRotationMatrix();
  return t;
}

double RigidTransform::rigidity_error() const {
  const Mat3 defect = rotation.transpose() * rotation - Mat3::Identity();
  return defect.cwiseAbs().maxCoeff() + std::abs(rotation.determinant() - 1.0);
}

Mat3 orthonormalized(const Mat3& r) {
  Eigen::JacobiSVD<Mat3> svd(r, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 q = svd.matrixU() * svd.matrixV().transpose();
  if (q.determinant() < 0.0) {
    Mat3 flip = Mat3::Identity();
    flip(2, 2) = -1.0;
    q = svd.matrixU() * flip * svd.matrixV().transpose();
  }
  return q;
}

RigidTransform compose(const RigidTransform& a, const RigidTransform& b) {
  RigidTransform out;
  out.rotation = a.rotation * b.rotation;
  out.translation = a.rotation * b.translation + a.translation;
  if (out.rigidity_error() > 1e-9) {
    out.rotation = orthonormalized(out.rotation);
  }
  return out;
}

RigidTransform invert(const RigidTransform& t) {
  RigidTransform out;
  out.rotation = t.rotation.transpose();
  out.translation = -(out.rotation * t.translation);
  return out;
}

Vec3 pixel_to_probe(const ImagePoint& px, const CalibrationMap& cal) {
  if (!cal.contains(px)) {
    throw std::out_of_range("pixel_to_probe: pixel outside image bounds");
  }
  return cal.image_origin_in_p + px.x() * cal.pixel_spacing_u * cal.u_axis_in_p +
         px.y() * cal.pixel_spacing_v * cal.v_axis_in_p;
}

ImagePoint probe_to_pixel(const Vec3& pt_in_p, const CalibrationMap& cal) {
  const Vec3 d = pt_in_p - cal.image_origin_in_p;
  return {d.dot(cal.u_axis_in_p) / cal.pixel_spacing_u,
          d.dot(cal.v_axis_in_p) / cal.pixel_spacing_v};
}

}  // namespace usn
