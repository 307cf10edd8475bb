#include "usn/mask_pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <stdexcept>

namespace usn {
namespace {

// Monotone-chain convex hull; collinear inputs collapse to the two extremes.
std::vector<Vec2> convex_hull(std::vector<Vec2> pts) {
  std::sort(pts.begin(), pts.end(), [](const Vec2& a, const Vec2& b) {
    return a.x() < b.x() || (a.x() == b.x() && a.y() < b.y());
  });
  pts.erase(std::unique(pts.begin(), pts.end(),
                        [](const Vec2& a, const Vec2& b) { return a == b; }),
            pts.end());
  const int n = static_cast<int>(pts.size());
  if (n <= 2) return pts;
  auto cross = [](const Vec2& o, const Vec2& a, const Vec2& b) {
    return (a.x() - o.x()) * (b.y() - o.y()) - (a.y() - o.y()) * (b.x() - o.x());
  };
  std::vector<Vec2> hull(2 * n);
  int k = 0;
  for (int i = 0; i < n; ++i) {
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
    hull[k++] = pts[i];
  }
  const int lower = k + 1;
  for (int i = n - 2; i >= 0; --i) {
    while (k >= lower && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
    hull[k++] = pts[i];
  }
  hull.resize(k - 1);
  return hull;
}

double wrap_line_angle_deg(double a) {
  while (a >= 90.0) a -= 180.0;
  while (a < -90.0) a += 180.0;
  return a;
}

// TLS orientation of a pixel set, as a line angle in [-90, 90).
double tls_angle_deg(const std::vector<Eigen::Vector2i>& pixels) {
  Vec2 mean = Vec2::Zero();
  for (const auto& p : pixels) mean += p.cast<double>();
  mean /= static_cast<double>(pixels.size());
  Eigen::Matrix2d cov = Eigen::Matrix2d::Zero();
  for (const auto& p : pixels) {
    const Vec2 d = p.cast<double>() - mean;
    cov += d * d.transpose();
  }
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(cov);
  const Vec2 dir = es.eigenvectors().col(1);
  return wrap_line_angle_deg(rad_to_deg(std::atan2(dir.y(), dir.x())));
}

}  // namespace

RotatedRect min_area_rect(const std::vector<Eigen::Vector2i>& pixels) {
  RotatedRect rect;
  if (pixels.empty()) return rect;
  std::vector<Vec2> pts;
  pts.reserve(pixels.size());
  for (const auto& p : pixels) pts.push_back(p.cast<double>());
  const std::vector<Vec2> hull = convex_hull(std::move(pts));
  if (hull.size() == 1) {
    rect.center = hull[0];
    return rect;
  }

  double best_area = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < hull.size(); ++i) {
    const Vec2 edge = hull[(i + 1) % hull.size()] - hull[i];
    const double elen = edge.norm();
    if (elen < 1e-12) continue;
    const Vec2 dir = edge / elen;
    const Vec2 nrm(-dir.y(), dir.x());
    double t0 = std::numeric_limits<double>::infinity(), t1 = -t0;
    double s0 = t0, s1 = -t0;
    for (const auto& q : hull) {
      const double t = q.dot(dir);
      const double s = q.dot(nrm);
      t0 = std::min(t0, t);
      t1 = std::max(t1, t);
      s0 = std::min(s0, s);
      s1 = std::max(s1, s);
    }
    const double area = (t1 - t0) * (s1 - s0);
    if (area < best_area - 1e-12) {
      best_area = area;
      rect.center = 0.5 * (t0 + t1) * dir + 0.5 * (s0 + s1) * nrm;
      const double along = t1 - t0, across = s1 - s0;
      if (along >= across) {
        rect.length = along;
        rect.width = across;
        rect.angle_deg = wrap_line_angle_deg(rad_to_deg(std::atan2(dir.y(), dir.x())));
      } else {
        rect.length = across;
        rect.width = along;
        rect.angle_deg = wrap_line_angle_deg(rad_to_deg(std::atan2(nrm.y(), nrm.x())));
      }
    }
  }
  // All hull edges degenerate: coincident points after dedup.
  if (!std::isfinite(best_area)) {
    const Vec2 d = hull.back() - hull.front();
    rect.center = 0.5 * (hull.front() + hull.back());
    rect.length = d.norm();
    rect.width = 0.0;
    rect.angle_deg = wrap_line_angle_deg(rad_to_deg(std::atan2(d.y(), d.x())));
  }
  return rect;
}

std::vector<ComponentBox> extract_components(const BinaryMask& mask) {
  const int h = static_cast<int>(mask.rows());
  const int w = static_cast<int>(mask.cols());
  Eigen::ArrayXXi labels = Eigen::ArrayXXi::Constant(h, w, -1);
  std::vector<ComponentBox> components;

  for (int v = 0; v < h; ++v) {
    for (int u = 0; u < w; ++u) {
      if (!mask(v, u) || labels(v, u) >= 0) continue;
      const int id = static_cast<int>(components.size());
      ComponentBox box;
      std::deque<Eigen::Vector2i> queue;
      queue.emplace_back(u, v);
      labels(v, u) = id;
      while (!queue.empty()) {
        const Eigen::Vector2i p = queue.front();
        queue.pop_front();
        box.pixels.push_back(p);
        for (int dv = -1; dv <= 1; ++dv) {
          for (int du = -1; du <= 1; ++du) {
            if (du == 0 && dv == 0) continue;
            const int nu = p.x() + du, nv = p.y() + dv;
            if (nu < 0 || nu >= w || nv < 0 || nv >= h) continue;
            if (!mask(nv, nu) || labels(nv, nu) >= 0) continue;
            labels(nv, nu) = id;
            queue.emplace_back(nu, nv);
          }
        }
      }
      box.area = static_cast<long>(box.pixels.size());
      Vec2 c = Vec2::Zero();
      for (const auto& p : box.pixels) c += p.cast<double>();
      box.centroid = c / static_cast<double>(box.area);

      // 3x3 morphological closing on the component's padded bounding box.
      int u0 = w, u1 = -1, v0 = h, v1 = -1;
      for (const auto& p : box.pixels) {
        u0 = std::min(u0, p.x());
        u1 = std::max(u1, p.x());
        v0 = std::min(v0, p.y());
        v1 = std::max(v1, p.y());
      }
      const int bw = u1 - u0 + 1 + 4, bh = v1 - v0 + 1 + 4;
      BinaryMask sub = zero_mask(bh, bw);
      for (const auto& p : box.pixels) sub(p.y() - v0 + 2, p.x() - u0 + 2) = 1;
      BinaryMask dil = zero_mask(bh, bw);
      for (int y = 0; y < bh; ++y)
        for (int x = 0; x < bw; ++x) {
          if (!sub(y, x)) continue;
          for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
              const int yy = y + dy, xx = x + dx;
              if (yy >= 0 && yy < bh && xx >= 0 && xx < bw) dil(yy, xx) = 1;
            }
        }
      for (int y = 1; y < bh - 1; ++y)
        for (int x = 1; x < bw - 1; ++x) {
          bool keep = true;
          for (int dy = -1; dy <= 1 && keep; ++dy)
            for (int dx = -1; dx <= 1 && keep; ++dx)
              if (!dil(y + dy, x + dx)) keep = false;
          if (keep) box.closed_pixels.emplace_back(x + u0 - 2, y + v0 - 2);
        }
      if (box.closed_pixels.empty()) box.closed_pixels = box.pixels;
      box.rect = min_area_rect(box.closed_pixels);
      components.push_back(std::move(box));
    }
  }

  std::sort(components.begin(), components.end(), [](const ComponentBox& a, const ComponentBox& b) {
    if (a.area != b.area) return a.area > b.area;
    if (a.centroid.y() != b.centroid.y()) return a.centroid.y() < b.centroid.y();
    return a.centroid.x() < b.centroid.x();
  });
  return components;
}

double line_angle_difference_deg(double a_deg, double b_deg) {
  double d = std::fmod(std::abs(a_deg - b_deg), 180.0);
  return std::min(d, 180.0 - d);
}

std::vector<Eigen::Vector2i> select_needle(const std::vector<ComponentBox>& components,
                                           double theta_threshold_deg) {
  if (components.empty()) throw std::invalid_argument("select_needle: no components");
  std::vector<Eigen::Vector2i> merged = components[0].pixels;
  Vec2 c_tag = components[0].centroid;
  double theta_tag = components[0].rect.angle_deg;
  double merged_weight = static_cast<double>(components[0].area);

  for (std::size_t i = 1; i < components.size(); ++i) {
    const ComponentBox& comp = components[i];
    const Vec2 d = comp.centroid - c_tag;
    if (d.norm() < 1e-9) continue;  // coincident centroid, keep out
    const double theta_i = wrap_line_angle_deg(rad_to_deg(std::atan2(d.y(), d.x())));
    if (line_angle_difference_deg(theta_i, theta_tag) > theta_threshold_deg) continue;
    merged.insert(merged.end(), comp.pixels.begin(), comp.pixels.end());
    c_tag = (c_tag * merged_weight + comp.centroid * static_cast<double>(comp.area)) /
            (merged_weight + static_cast<double>(comp.area));
    merged_weight += static_cast<double>(comp.area);
    theta_tag = tls_angle_deg(merged);
  }
  return merged;
}

NeedleDetection2D fit_line_and_tip(const std::vector<Eigen::Vector2i>& pixels,
                                   InsertionSide side) {
  if (pixels.size() < 2) throw std::invalid_argument("fit_line_and_tip: need >= 2 pixels");
  Vec2 mean = Vec2::Zero();
  for (const auto& p : pixels) mean += p.cast<double>();
  mean /= static_cast<double>(pixels.size());
  Eigen::Matrix2d cov = Eigen::Matrix2d::Zero();
  for (const auto& p : pixels) {
    const Vec2 d = p.cast<double>() - mean;
    cov += d * d.transpose();
  }
  if (cov.cwiseAbs().maxCoeff() < 1e-12) {
    throw std::invalid_argument("fit_line_and_tip: degenerate pixel set");
  }
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(cov);
  Vec2 dir = es.eigenvectors().col(1);
  if (dir.x() < 0.0 || (dir.x() == 0.0 && dir.y() < 0.0)) dir = -dir;

  double t_min = std::numeric_limits<double>::infinity(), t_max = -t_min;
  for (const auto& p : pixels) {
    const double t = (p.cast<double>() - mean).dot(dir);
    t_min = std::min(t_min, t);
    t_max = std::max(t_max, t);
  }

  NeedleDetection2D det;
  det.valid = true;
  det.line_point = mean;
  det.line_dir = dir;
  det.endpoint_a = mean + t_min * dir;
  det.endpoint_b = mean + t_max * dir;
  det.shaft_length_px = t_max - t_min;
  const Vec2& left = det.endpoint_a.x() <= det.endpoint_b.x() ? det.endpoint_a : det.endpoint_b;
  const Vec2& right = det.endpoint_a.x() <= det.endpoint_b.x() ? det.endpoint_b : det.endpoint_a;
  det.tip = side == InsertionSide::kLeft ? right : left;
  return det;
}

NeedleDetection2D detect(const BinaryMask& mask, const DetectConfig& config) {
  auto components = extract_components(mask);
  std::erase_if(components, [&](const ComponentBox& c) {
    return c.area < config.component_min_area_px;
  });
  if (components.empty()) return {};
  const auto merged = select_needle(components, config.theta_threshold_deg);
  if (static_cast<long>(merged.size()) < config.min_area_px) return {};
  return fit_line_and_tip(merged, config.insertion_side);
}

SegMetrics seg_metrics(const BinaryMask& pred, const BinaryMask& gt, double t_con) {
  if (pred.rows() != gt.rows() || pred.cols() != gt.cols()) {
    throw std::invalid_argument("seg_metrics: dimension mismatch");
  }
  std::vector<Eigen::Vector2i> gt_pixels;
  long tp = 0, fp = 0, fn = 0;
  for (Eigen::Index v = 0; v < gt.rows(); ++v) {
    for (Eigen::Index u = 0; u < gt.cols(); ++u) {
      const bool p = pred(v, u) != 0, g = gt(v, u) != 0;
      if (g) gt_pixels.emplace_back(static_cast<int>(u), static_cast<int>(v));
      tp += p && g;
      fp += p && !g;
      fn += !p && g;
    }
  }
  if (gt_pixels.empty()) throw std::invalid_argument("seg_metrics: empty ground truth");

  SegMetrics m;
  m.recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
  m.precision = tp + fp > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
  m.iou = static_cast<double>(tp) / static_cast<double>(tp + fp + fn);

  const RotatedRect roi = min_area_rect(gt_pixels);
  const double a = deg_to_rad(roi.angle_deg);
  const Vec2 axis(std::cos(a), std::sin(a));
  const Vec2 nrm(-axis.y(), axis.x());
  const int n_long = static_cast<int>(std::lround(roi.length)) + 1;
  const int short_px = static_cast<int>(std::lround(roi.width)) + 1;
  std::vector<int> bin_count(n_long, 0);
  for (Eigen::Index v = 0; v < pred.rows(); ++v) {
    for (Eigen::Index u = 0; u < pred.cols(); ++u) {
      if (!pred(v, u)) continue;
      const Vec2 d = Vec2(static_cast<double>(u), static_cast<double>(v)) - roi.center;
      if (std::abs(d.dot(nrm)) > 0.5 * roi.width + 0.5) continue;
      const double along = d.dot(axis) + 0.5 * roi.length;
      if (along < -0.5 || along > roi.length + 0.5) continue;
      const int bin = std::clamp(static_cast<int>(std::lround(along)), 0, n_long - 1);
      ++bin_count[bin];
    }
  }
  int marked = 0;
  for (const int c : bin_count) {
    if (static_cast<double>(c) / short_px >= t_con) ++marked;
  }
  m.continuity = static_cast<double>(marked) / n_long;
  return m;
}

DetectionErrors detection_errors(const NeedleDetection2D& det, const GtAnnotation& gt,
                                 const CalibrationMap& cal) {
  const double su = cal.pixel_spacing_u, sv = cal.pixel_spacing_v;
  auto to_mm = [&](const Vec2& px) { return Vec2(px.x() * su, px.y() * sv); };
  auto point_line_dist_mm = [&](const Vec2& pt_px, const Vec2& line_a_px, const Vec2& line_b_px) {
    const Vec2 p = to_mm(pt_px);
    const Vec2 a = to_mm(line_a_px);
    Vec2 d = to_mm(line_b_px) - a;
    const double n = d.norm();
    if (n < 1e-12) return (p - a).norm();
    d /= n;
    const Vec2 r = p - a;
    return std::abs(r.x() * d.y() - r.y() * d.x());
  };

  DetectionErrors e;
  e.tip_error_mm = to_mm(det.tip - gt.tip_px).norm();

  const Vec2 gt_d = gt.shaft_p1_px - gt.shaft_p0_px;
  const double gt_angle = rad_to_deg(std::atan2(gt_d.y(), gt_d.x()));
  e.angle_error_deg = line_angle_difference_deg(det.angle_deg(), gt_angle);

  const Vec2 center_px(cal.width / 2.0, cal.height / 2.0);
  const double d_pred = point_line_dist_mm(center_px, det.endpoint_a, det.endpoint_b);
  const double d_gt = point_line_dist_mm(center_px, gt.shaft_p0_px, gt.shaft_p1_px);
  e.center_error_mm = std::abs(d_pred - d_gt);
  return e;
}

double ssim(const GrayImage& a, const GrayImage& b, int window, double k1, double k2,
            const SsimRoi& roi) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument("ssim: dimension mismatch");
  }
  const int h = static_cast<int>(a.rows());
  const int w = static_cast<int>(a.cols());
  const int u0 = std::max(0, roi.u0);
  const int v0 = std::max(0, roi.v0);
  const int u1 = roi.u1 < 0 ? w - 1 : std::min(w - 1, roi.u1);
  const int v1 = roi.v1 < 0 ? h - 1 : std::min(h - 1, roi.v1);
  if (u1 - u0 + 1 < window || v1 - v0 + 1 < window) {
    throw std::invalid_argument("ssim: ROI smaller than window");
  }

  const double c1 = k1 * k1;  // dynamic range 1.0
  const double c2 = k2 * k2;
  const double n = static_cast<double>(window) * window;
  double total = 0.0;
  long count = 0;
  for (int v = v0; v + window - 1 <= v1; ++v) {
    for (int u = u0; u + window - 1 <= u1; ++u) {
      double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
      for (int y = 0; y < window; ++y)
        for (int x = 0; x < window; ++x) {
          const double xa = a(v + y, u + x);
          const double xb = b(v + y, u + x);
          sa += xa;
          sb += xb;
          saa += xa * xa;
          sbb += xb * xb;
          sab += xa * xb;
        }
      const double mu_a = sa / n, mu_b = sb / n;
      const double var_a = saa / n - mu_a * mu_a;
      const double var_b = sbb / n - mu_b * mu_b;
      const double cov = sab / n - mu_a * mu_b;
      const double s = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) /
                       ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
      total += s;
      ++count;
    }
  }
  return total / static_cast<double>(count);
}

}  // namespace usn
