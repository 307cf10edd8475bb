#pragma once

#include "usn/geometry.hpp"
#include "usn/mask_pipeline.hpp"

#include <cstdint>
#include <utility>
#include <vector>

namespace usn {

struct TrackedSlice {
  RigidTransform probe_pose;
  NeedleDetection2D detection;
  int frame_index = 0;
};

using PointCloud3 = std::vector<Vec3>;

struct DbscanParams {
  double eps_mm = 2.0;
  int min_pts = 3;  // neighbourhood count including the point itself
};

struct RansacParams {
  int iterations = 500;
  double inlier_threshold_mm = 1.0;
  int min_inliers = 5;
  std::uint64_t seed = 0;
};

struct Line3Fit {
  bool valid = false;
  Vec3 point = Vec3::Zero();      // centroid of the inliers
  Vec3 direction = Vec3::UnitX();  // unit
  int inlier_count = 0;
  double rms_residual_mm = 0.0;
  std::vector<int> inlier_indices;

  /// Two points on the axis, span_mm apart, for downstream consumption.
  std::pair<Vec3, Vec3> axis_points(double span_mm = 20.0) const {
    return {point - 0.5 * span_mm * direction, point + 0.5 * span_mm * direction};
  }
};

/// Slice-thickness correction for transverse frames: the short segment's
/// midpoint stands in for the true needle/plane intersection. Throws
/// std::invalid_argument on an invalid detection.
ImagePoint intersection_point(const NeedleDetection2D& det);

/// Midpoint of every valid slice mapped pixel -> probe -> base. Invalid
/// slices are skipped; the result is empty when none are valid.
PointCloud3 stack_points(const std::vector<TrackedSlice>& slices, const CalibrationMap& cal);

/// Density filter; returns the largest cluster's core and border points in
/// input order. Empty result when every point is noise.
PointCloud3 dbscan_filter(const PointCloud3& cloud, const DbscanParams& params);

/// 2-point-sample RANSAC with a total-least-squares refit on the consensus
/// set. Throws std::invalid_argument for clouds of fewer than 2 points;
/// valid == false when no consensus reaches min_inliers.
Line3Fit ransac_line(const PointCloud3& cloud, const RansacParams& params);

double point_line_distance(const Vec3& p, const Vec3& line_point, const Vec3& line_dir);

}  // namespace usn
