#pragma once

#include "usn/geometry.hpp"
#include "usn/image.hpp"
#include "usn/sim_scene.hpp"

#include <vector>

namespace usn {

/// Minimum-area enclosing rectangle; angle_deg is the long-axis line angle
/// in [-90, 90), length >= width (px).
struct RotatedRect {
  Vec2 center = Vec2::Zero();
  double length = 0.0;
  double width = 0.0;
  double angle_deg = 0.0;
};

struct ComponentBox {
  std::vector<Eigen::Vector2i> pixels;         // (u, v)
  std::vector<Eigen::Vector2i> closed_pixels;  // after 3x3 morphological closing
  Vec2 centroid = Vec2::Zero();
  long area = 0;
  RotatedRect rect;  // minimum-area rectangle of the closed component
};

/// 8-connected components, each closed with a 3x3 structuring element before
/// the rectangle fit. Sorted by area descending; ties broken by shallower
/// centroid (smaller v), then smaller centroid u.
std::vector<ComponentBox> extract_components(const BinaryMask& mask);

RotatedRect min_area_rect(const std::vector<Eigen::Vector2i>& pixels);

/// Absolute difference between two undirected line angles, in [0, 90].
double line_angle_difference_deg(double a_deg, double b_deg);

/// Seed-and-merge outlier rejection: the largest component seeds S_tag; the
/// remaining components join when the centroid-to-centroid slope stays within
/// theta_threshold of the running shaft orientation. Throws
/// std::invalid_argument on an empty component list.
std::vector<Eigen::Vector2i> select_needle(const std::vector<ComponentBox>& components,
                                           double theta_threshold_deg);

enum class InsertionSide { kLeft, kRight };

struct NeedleDetection2D {
  bool valid = false;
  Vec2 line_point = Vec2::Zero();  // on the fitted line (px)
  Vec2 line_dir = Vec2::UnitX();   // unit
  Vec2 endpoint_a = Vec2::Zero();
  Vec2 endpoint_b = Vec2::Zero();
  Vec2 tip = Vec2::Zero();
  double shaft_length_px = 0.0;

  double angle_deg() const { return rad_to_deg(std::atan2(line_dir.y(), line_dir.x())); }
};

/// Total-least-squares line through the pixel set; endpoints are the extremal
/// projections onto the line; the tip is the endpoint away from the insertion
/// side. Throws std::invalid_argument when fewer than two pixels are given.
NeedleDetection2D fit_line_and_tip(const std::vector<Eigen::Vector2i>& pixels,
                                   InsertionSide side);

struct DetectConfig {
  double theta_threshold_deg = 10.0;  // theta_slo threshold
  long min_area_px = 150;
  // Components below this size are dropped before the merge step; the
  // centroid-slope test is meaningless for speckle-sized fragments.
  long component_min_area_px = 8;
  InsertionSide insertion_side = InsertionSide::kLeft;
};

/// Full needle determination: components -> outlier rejection -> line + tip.
/// valid == false on an empty mask or when the merged set is below min_area.
NeedleDetection2D detect(const BinaryMask& mask, const DetectConfig& config);

struct SegMetrics {
  double recall = 0.0;
  double precision = 0.0;
  double iou = 0.0;
  double continuity = 0.0;
};

/// Standard recall/precision/IoU plus shaft continuity: scan lines parallel to
/// the ground-truth ROI short axis count as covered when predicted pixels fill
/// at least t_con of the short-axis length. Throws std::invalid_argument on an
/// empty ground truth.
SegMetrics seg_metrics(const BinaryMask& pred, const BinaryMask& gt, double t_con = 0.70);

struct DetectionErrors {
  double tip_error_mm = 0.0;
  double angle_error_deg = 0.0;
  double center_error_mm = 0.0;
};

DetectionErrors detection_errors(const NeedleDetection2D& det, const GtAnnotation& gt,
                                 const CalibrationMap& cal);

struct SsimRoi {
  int u0 = 0, v0 = 0, u1 = -1, v1 = -1;  // inclusive; negative = full image
};

/// Mean SSIM over sliding windows fully inside the ROI (uniform window,
/// dynamic range 1.0).
double ssim(const GrayImage& a, const GrayImage& b, int window = 7, double k1 = 0.01,
            double k2 = 0.03, const SsimRoi& roi = {});

}  // namespace usn
