#include "usn/sim_scene.hpp"

#include "usn/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <vector>

namespace usn {
namespace {

struct ClippedSegment {
  bool ok = false;
  double s_lo = 0.0, s_hi = 0.0;  // arc-length params along the axis
  bool flat_lo = false, flat_hi = false;  // end bound is the physical needle end
  Vec3 p_lo = Vec3::Zero(), p_hi = Vec3::Zero();  // probe-frame endpoints
};

// Intersects the inserted needle segment with the thick-slice slab
// |y| <= elevation_width(z)/2, solved as two linear inequalities in s.
ClippedSegment clip_to_slab(const NeedleModel& needle, const RigidTransform& probe_pose,
                            const ProbeModel& probe) {
  ClippedSegment out;
  const double len = needle.inserted_length_mm;
  if (len <= 0.0) return out;

  const Vec3 p0 = base_to_probe(needle.entry_point, probe_pose);
  const Vec3 d = probe_pose.rotation.transpose() * needle.direction;

  double lo = -std::numeric_limits<double>::infinity();
  double hi = std::numeric_limits<double>::infinity();
  bool empty = false;

  // a*s <= b
  auto constrain = [&](double a, double b) {
    constexpr double kTiny = 1e-12;
    if (std::abs(a) < kTiny) {
      if (b < 0.0) empty = true;
      return;
    }
    if (a > 0.0)
      hi = std::min(hi, b / a);
    else
      lo = std::max(lo, b / a);
  };

  const double e0 = probe.elevation_width_mm;
  const double k = probe.elevation_slope;
  //  y(s) <= (e0 + k z(s)) / 2
  constrain(d.y() - 0.5 * k * d.z(), 0.5 * e0 + 0.5 * k * p0.z() - p0.y());
  // -y(s) <= (e0 + k z(s)) / 2
  constrain(-d.y() - 0.5 * k * d.z(), 0.5 * e0 + 0.5 * k * p0.z() + p0.y());
  if (empty || lo > hi) return out;

  out.s_lo = std::max(lo, 0.0);
  out.s_hi = std::min(hi, len);
  if (out.s_hi < out.s_lo) return out;
  out.flat_lo = lo <= 0.0;
  out.flat_hi = hi >= len;
  if (out.flat_lo && out.flat_hi && out.s_hi - out.s_lo <= 0.0) return out;
  out.p_lo = p0 + out.s_lo * d;
  out.p_hi = p0 + out.s_hi * d;
  out.ok = true;
  return out;
}

// In-plane mm coordinates of a probe-frame point, relative to the image origin.
Vec2 plane_mm(const Vec3& pt_in_p, const CalibrationMap& cal) {
  const Vec3 d = pt_in_p - cal.image_origin_in_p;
  return {d.dot(cal.u_axis_in_p), d.dot(cal.v_axis_in_p)};
}

void rasterize_segment(BinaryMask& mask, const Vec2& a_mm, const Vec2& b_mm, double radius_mm,
                       bool flat_a, bool flat_b, const CalibrationMap& cal) {
  const double su = cal.pixel_spacing_u;
  const double sv = cal.pixel_spacing_v;
  const Vec2 ab = b_mm - a_mm;
  const double seg_len = ab.norm();
  const Vec2 dir = seg_len > 1e-12 ? Vec2(ab / seg_len) : Vec2(1.0, 0.0);

  const double u_min = std::min(a_mm.x(), b_mm.x()) - radius_mm;
  const double u_max = std::max(a_mm.x(), b_mm.x()) + radius_mm;
  const double v_min = std::min(a_mm.y(), b_mm.y()) - radius_mm;
  const double v_max = std::max(a_mm.y(), b_mm.y()) + radius_mm;
  const int u0 = std::max(0, static_cast<int>(std::floor(u_min / su)));
  const int u1 = std::min(cal.width - 1, static_cast<int>(std::ceil(u_max / su)));
  const int v0 = std::max(0, static_cast<int>(std::floor(v_min / sv)));
  const int v1 = std::min(cal.height - 1, static_cast<int>(std::ceil(v_max / sv)));

  for (int v = v0; v <= v1; ++v) {
    for (int u = u0; u <= u1; ++u) {
      const Vec2 q(u * su, v * sv);
      const double t = (q - a_mm).dot(dir);
      if (flat_a && t < 0.0) continue;
      if (flat_b && t > seg_len) continue;
      const double tc = std::clamp(t, 0.0, seg_len);
      const Vec2 closest = a_mm + tc * dir;
      if ((q - closest).norm() <= radius_mm) mask(v, u) = 1;
    }
  }
}

void stamp_disk(BinaryMask& mask, double cu, double cv, double r_px_u, double r_px_v) {
  const int h = static_cast<int>(mask.rows());
  const int w = static_cast<int>(mask.cols());
  const int u0 = std::max(0, static_cast<int>(std::floor(cu - r_px_u)));
  const int u1 = std::min(w - 1, static_cast<int>(std::ceil(cu + r_px_u)));
  const int v0 = std::max(0, static_cast<int>(std::floor(cv - r_px_v)));
  const int v1 = std::min(h - 1, static_cast<int>(std::ceil(cv + r_px_v)));
  for (int v = v0; v <= v1; ++v)
    for (int u = u0; u <= u1; ++u) {
      const double du = (u - cu) / r_px_u;
      const double dv = (v - cv) / r_px_v;
      if (du * du + dv * dv <= 1.0) mask(v, u) = 1;
    }
}

double line_angle_deg(double dy, double dx) {
  double a = rad_to_deg(std::atan2(dy, dx));
  while (a >= 90.0) a -= 180.0;
  while (a < -90.0) a += 180.0;
  return a;
}

}  // namespace

RenderResult render_mask(const NeedleModel& needle, const RigidTransform& probe_pose,
                         const ProbeModel& probe, const CalibrationMap& cal) {
  RenderResult out;
  out.mask = zero_mask(cal.height, cal.width);
  const ClippedSegment seg = clip_to_slab(needle, probe_pose, probe);
  if (!seg.ok) return out;
  out.intersects_slab = true;
  rasterize_segment(out.mask, plane_mm(seg.p_lo, cal), plane_mm(seg.p_hi, cal),
                    0.5 * needle.diameter_mm, seg.flat_lo, seg.flat_hi, cal);
  return out;
}

GtAnnotation ground_truth(const NeedleModel& needle, const RigidTransform& probe_pose,
                          const ProbeModel& probe, const CalibrationMap& cal) {
  GtAnnotation gt;
  gt.axis_point = needle.entry_point;
  gt.axis_dir = needle.direction;
  const ClippedSegment seg = clip_to_slab(needle, probe_pose, probe);
  if (!seg.ok) return gt;
  gt.shaft_p0_px = probe_to_pixel(seg.p_lo, cal);
  gt.shaft_p1_px = probe_to_pixel(seg.p_hi, cal);
  gt.tip_px = gt.shaft_p1_px;  // deepest insertion parameter
  gt.shaft_length_px = (gt.shaft_p1_px - gt.shaft_p0_px).norm();
  const double u_lo = std::min(gt.shaft_p0_px.x(), gt.shaft_p1_px.x());
  const double u_hi = std::max(gt.shaft_p0_px.x(), gt.shaft_p1_px.x());
  const double v_lo = std::min(gt.shaft_p0_px.y(), gt.shaft_p1_px.y());
  const double v_hi = std::max(gt.shaft_p0_px.y(), gt.shaft_p1_px.y());
  gt.visible = u_hi >= 0.0 && u_lo <= cal.width && v_hi >= 0.0 && v_lo <= cal.height;
  return gt;
}

GrayImage render_intensity(const NeedleModel& needle, const RigidTransform& probe_pose,
                           const ProbeModel& probe, const CalibrationMap& cal,
                           const IntensityParams& params, std::uint64_t noise_seed) {
  auto rng = make_rng(noise_seed);
  const BinaryMask shaft = render_mask(needle, probe_pose, probe, cal).mask;
  BinaryMask bright = shaft;

  if (params.distractor_count > 0) {
    // Needle slope in the image, for keeping distractors off-axis.
    const Vec3 d_p = probe_pose.rotation.transpose() * needle.direction;
    const double needle_angle =
        line_angle_deg(d_p.dot(cal.v_axis_in_p) / cal.pixel_spacing_v,
                       d_p.dot(cal.u_axis_in_p) / cal.pixel_spacing_u);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double w_px = cal.width;
    const double h_px = cal.height;
    const double r_px_u = 0.5 * params.distractor_width_mm / cal.pixel_spacing_u;
    const double r_px_v = 0.5 * params.distractor_width_mm / cal.pixel_spacing_v;
    for (int i = 0; i < params.distractor_count; ++i) {
      const double off = params.distractor_min_angle_deg +
                         unit(rng) * (90.0 - params.distractor_min_angle_deg);
      const double sign = unit(rng) < 0.5 ? -1.0 : 1.0;
      const double angle = deg_to_rad(needle_angle + sign * off);
      const double len = (0.3 + 0.3 * unit(rng)) * w_px;
      const double cx = (0.2 + 0.6 * unit(rng)) * w_px;
      const double cy = (0.2 + 0.6 * unit(rng)) * h_px;
      const Vec2 dir(std::cos(angle), std::sin(angle));
      const Vec2 nrm(-dir.y(), dir.x());
      const Vec2 p0 = Vec2(cx, cy) - 0.5 * len * dir;
      const Vec2 p2 = Vec2(cx, cy) + 0.5 * len * dir;
      const Vec2 p1 = Vec2(cx, cy) + (unit(rng) - 0.5) * 0.16 * len * nrm;  // low bow
      const int steps = std::max(8, static_cast<int>(len * 4.0));
      for (int s = 0; s <= steps; ++s) {
        const double t = static_cast<double>(s) / steps;
        const Vec2 q = (1 - t) * (1 - t) * p0 + 2 * (1 - t) * t * p1 + t * t * p2;
        stamp_disk(bright, q.x(), q.y(), r_px_u, r_px_v);
      }
    }
  }

  GrayImage img(cal.height, cal.width);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const double sigma = params.speckle_sigma;
  // exp(-sigma^2/2) keeps the speckle mean at 1.
  const double norm = std::exp(-0.5 * sigma * sigma);
  for (int v = 0; v < cal.height; ++v) {
    for (int u = 0; u < cal.width; ++u) {
      double level = params.background_level;
      if (bright(v, u)) level = params.distractor_level;
      if (shaft(v, u)) level = params.shaft_level;
      double speckle = 1.0;
      if (sigma > 0.0) speckle = std::exp(sigma * gauss(rng)) * norm;
      img(v, u) = std::clamp(level * speckle, 0.0, 1.0);
    }
  }
  return img;
}

DegradationParams default_stress_degradation() {
  DegradationParams d;
  d.gap_rate = 0.5;
  d.gap_len_min_px = 5;
  d.gap_len_max_px = 15;
  d.blob_rate = 0.5;
  d.blob_radius_min_px = 2;
  d.blob_radius_max_px = 4;
  d.flip_noise = 2e-4;
  return d;
}

BinaryMask degrade_mask(const BinaryMask& mask, const DegradationParams& params) {
  auto rng = make_rng(params.rng_seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  BinaryMask out = mask;
  const int h = static_cast<int>(out.rows());
  const int w = static_cast<int>(out.cols());

  auto count_from_rate = [&](double rate) {
    const double fl = std::floor(rate);
    int n = static_cast<int>(fl);
    if (unit(rng) < rate - fl) ++n;
    return n;
  };

  // Gaps carved along the shaft's principal axis.
  std::vector<Vec2> lit;
  for (int v = 0; v < h; ++v)
    for (int u = 0; u < w; ++u)
      if (out(v, u)) lit.emplace_back(u, v);

  const int n_gaps = count_from_rate(params.gap_rate);
  if (!lit.empty() && n_gaps > 0) {
    Vec2 mean = Vec2::Zero();
    for (const auto& p : lit) mean += p;
    mean /= static_cast<double>(lit.size());
    Eigen::Matrix2d cov = Eigen::Matrix2d::Zero();
    for (const auto& p : lit) {
      const Vec2 d = p - mean;
      cov += d * d.transpose();
    }
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(cov);
    const Vec2 axis = es.eigenvectors().col(1);  // largest eigenvalue
    double t_min = std::numeric_limits<double>::infinity();
    double t_max = -t_min;
    for (const auto& p : lit) {
      const double t = (p - mean).dot(axis);
      t_min = std::min(t_min, t);
      t_max = std::max(t_max, t);
    }
    const double range = t_max - t_min;
    std::uniform_int_distribution<int> gap_len(params.gap_len_min_px, params.gap_len_max_px);
    for (int g = 0; g < n_gaps; ++g) {
      const double len = gap_len(rng);
      // keep both shaft ends intact
      const double c = t_min + (0.15 + 0.70 * unit(rng)) * range;
      for (const auto& p : lit) {
        const double t = (p - mean).dot(axis);
        if (std::abs(t - c) <= 0.5 * len)
          out(static_cast<int>(p.y()), static_cast<int>(p.x())) = 0;
      }
    }
  }

  const int n_blobs = count_from_rate(params.blob_rate);
  std::uniform_int_distribution<int> blob_r(params.blob_radius_min_px, params.blob_radius_max_px);
  for (int b = 0; b < n_blobs; ++b) {
    const double cu = unit(rng) * (w - 1);
    const double cv = unit(rng) * (h - 1);
    const double r = blob_r(rng);
    stamp_disk(out, cu, cv, r, r);
  }

  if (params.flip_noise > 0.0) {
    for (int v = 0; v < h; ++v)
      for (int u = 0; u < w; ++u)
        if (unit(rng) < params.flip_noise) out(v, u) = out(v, u) ? 0 : 1;
  }
  return out;
}

namespace {

GrayImage gaussian_blur(const GrayImage& img, double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> kernel(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    kernel[i + radius] = std::exp(-0.5 * (i * i) / (sigma * sigma));
    sum += kernel[i + radius];
  }
  for (auto& k : kernel) k /= sum;

  const int h = static_cast<int>(img.rows());
  const int w = static_cast<int>(img.cols());
  auto reflect = [](int i, int n) {
    if (i < 0) i = -i - 1;
    if (i >= n) i = 2 * n - i - 1;
    return i;
  };
  GrayImage tmp(h, w), out(h, w);
  for (int v = 0; v < h; ++v)
    for (int u = 0; u < w; ++u) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) acc += kernel[i + radius] * img(v, reflect(u + i, w));
      tmp(v, u) = acc;
    }
  for (int v = 0; v < h; ++v)
    for (int u = 0; u < w; ++u) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) acc += kernel[i + radius] * tmp(reflect(v + i, h), u);
      out(v, u) = acc;
    }
  return out;
}

}  // namespace

AugmentedSample augment(const GrayImage& image, const GrayImage& label,
                        const AugmentParams& params, std::uint64_t seed) {
  auto rng = make_rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  AugmentedSample s{image, label};

  if (unit(rng) < params.p_flip) {
    s.image = s.image.rowwise().reverse().eval();
    s.label = s.label.rowwise().reverse().eval();
  }
  if (unit(rng) < params.p_contrast) {
    const double c = (2.0 * unit(rng) - 1.0) * params.contrast_range;
    s.image = (s.image * (1.0 + c)).cwiseMin(1.0).cwiseMax(0.0);
  }
  if (unit(rng) < params.p_noise) {
    std::normal_distribution<double> gauss(0.0, params.noise_sigma);
    for (Eigen::Index v = 0; v < s.image.rows(); ++v)
      for (Eigen::Index u = 0; u < s.image.cols(); ++u)
        s.image(v, u) = std::clamp(s.image(v, u) + gauss(rng), 0.0, 1.0);
  }
  if (unit(rng) < params.p_blur) {
    s.image = gaussian_blur(s.image, params.blur_sigma_px);
  }
  return s;
}

NeedleModel needle_for_frame(const SweepSpec& spec, int frame_index) {
  NeedleModel needle = spec.needle;
  if (spec.mode == SweepMode::kInsertion) {
    const int n = static_cast<int>(spec.poses.size());
    const double t = n > 1 ? static_cast<double>(frame_index) / (n - 1) : 0.0;
    needle.inserted_length_mm =
        spec.insertion_start_mm + t * (spec.insertion_end_mm - spec.insertion_start_mm);
  }
  return needle;
}

std::vector<SweepFrame> simulate_sweep(const SweepSpec& spec) {
  if (spec.mode == SweepMode::kTransverse && spec.poses.size() < 2) {
    throw std::invalid_argument("simulate_sweep: transverse mode needs >= 2 poses");
  }
  std::vector<SweepFrame> frames;
  const int n = static_cast<int>(spec.poses.size());
  frames.reserve(n);
  for (int i = 0; i < n; ++i) {
    const NeedleModel needle = needle_for_frame(spec, i);
    SweepFrame f;
    f.pose = spec.poses[i];
    f.gt = ground_truth(needle, f.pose, spec.probe, spec.cal);
    DegradationParams deg = spec.degradation;
    deg.rng_seed = derive_seed(spec.seed, static_cast<std::uint64_t>(i));
    f.mask = degrade_mask(render_mask(needle, f.pose, spec.probe, spec.cal).mask, deg);
    frames.push_back(std::move(f));
  }
  return frames;
}

}  // namespace usn
