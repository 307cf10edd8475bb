#pragma once

#include "usn/geometry.hpp"
#include "usn/image.hpp"

#include <cstdint>
#include <vector>

namespace usn {

struct NeedleModel {
  Vec3 entry_point = Vec3(-30.0, 0.0, 20.0);  // base frame, mm
  Vec3 direction = Vec3::UnitX();             // unit
  double inserted_length_mm = 30.0;
  double diameter_mm = 1.3;  // 18G
};

struct ProbeModel {
  double footprint_mm = 51.3;
  double depth_mm = 50.0;
  // Elevation beam width as a function of depth; constant 2 mm by default,
  // slope enables a linear focus profile.
  double elevation_width_mm = 2.0;
  double elevation_slope = 0.0;  // mm of width per mm of depth

  double elevation_width(double z_mm) const {
    return elevation_width_mm + elevation_slope * z_mm;
  }
};

struct RenderResult {
  BinaryMask mask;
  bool intersects_slab = false;
};

/// Renders the needle into a binary mask at the given probe pose. Axis points
/// with |y_p| <= elevation_width(z_p)/2 project onto the image plane and are
/// dilated by diameter/2 in mm space. Slab-clipped ends keep the needle's
/// round cross section; the physical needle ends (entry, tip) cut flat so the
/// lit region stops exactly at the tip.
RenderResult render_mask(const NeedleModel& needle, const RigidTransform& probe_pose,
                         const ProbeModel& probe, const CalibrationMap& cal);

struct IntensityParams {
  double background_level = 0.25;
  double shaft_level = 1.0;
  double speckle_sigma = 0.0;  // log-normal multiplicative speckle
  int distractor_count = 0;    // bright low-curvature curves
  double distractor_level = 0.95;
  double distractor_width_mm = 0.9;
  double distractor_min_angle_deg = 20.0;  // orientation offset from the needle slope
};

GrayImage render_intensity(const NeedleModel& needle, const RigidTransform& probe_pose,
                           const ProbeModel& probe, const CalibrationMap& cal,
                           const IntensityParams& params, std::uint64_t noise_seed);

struct DegradationParams {
  double gap_rate = 0.0;  // expected gaps per shaft
  int gap_len_min_px = 5;
  int gap_len_max_px = 20;
  double blob_rate = 0.0;  // expected spurious components per frame
  int blob_radius_min_px = 2;
  int blob_radius_max_px = 6;
  double flip_noise = 0.0;  // per-pixel flip probability
  std::uint64_t rng_seed = 0;
};

/// Carves zero-runs along the shaft, adds spurious blobs, then applies flip
/// noise. Deterministic for a fixed params.rng_seed.
BinaryMask degrade_mask(const BinaryMask& mask, const DegradationParams& params);

/// Stress preset used by the closed-loop experiments: mid-shaft dropouts,
/// spurious blobs, and sparse flip noise.
DegradationParams default_stress_degradation();

struct AugmentParams {
  double p_flip = 0.30;
  double p_contrast = 0.30;
  double contrast_range = 0.10;  // +-10 %
  double p_noise = 0.20;
  double noise_sigma = 0.02;
  double p_blur = 0.20;
  double blur_sigma_px = 1.0;
};

struct AugmentedSample {
  GrayImage image;
  GrayImage label;  // 0/1 valued
};

/// Augmentation chain: horizontal flip, contrast, Gaussian noise, Gaussian
/// blur, applied sequentially, each gated by its probability. The label only
/// participates in the flip.
AugmentedSample augment(const GrayImage& image, const GrayImage& label,
                        const AugmentParams& params, std::uint64_t seed);

enum class SweepMode { kInsertion, kTransverse };

struct SweepSpec {
  SweepMode mode = SweepMode::kInsertion;
  std::vector<RigidTransform> poses;  // one per frame; >= 2 for transverse
  NeedleModel needle;
  ProbeModel probe;
  CalibrationMap cal;
  DegradationParams degradation;
  // Insertion mode: inserted length interpolates linearly across frames.
  double insertion_start_mm = 10.0;
  double insertion_end_mm = 30.0;
  std::uint64_t seed = 0;
};

struct GtAnnotation {
  bool visible = false;
  ImagePoint tip_px = ImagePoint::Zero();       // projection of the deepest visible axis point
  ImagePoint shaft_p0_px = ImagePoint::Zero();  // projected clipped axis endpoints
  ImagePoint shaft_p1_px = ImagePoint::Zero();
  double shaft_length_px = 0.0;
  Vec3 axis_point = Vec3::Zero();  // 3D ground-truth axis, base frame
  Vec3 axis_dir = Vec3::UnitX();
};

struct SweepFrame {
  RigidTransform pose;
  BinaryMask mask;
  GtAnnotation gt;
};

/// Renders one frame per pose; per-frame degradation streams derive from
/// (spec.seed, frame index) so frames are independent and reproducible.
std::vector<SweepFrame> simulate_sweep(const SweepSpec& spec);

/// Needle model used for frame i of a sweep (insertion growth applied).
NeedleModel needle_for_frame(const SweepSpec& spec, int frame_index);

/// Ground truth for a single scene configuration (no degradation applied).
GtAnnotation ground_truth(const NeedleModel& needle, const RigidTransform& probe_pose,
                          const ProbeModel& probe, const CalibrationMap& cal);

}  // namespace usn
