#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "usn/sim_scene.hpp"

#include "usn/mask_pipeline.hpp"
#include "usn/sweep_io.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>

using namespace usn;

namespace {

// Lit-pixel extent along u/v, in pixels (inclusive span of centers).
struct Extent {
  int u_min = 1 << 30, u_max = -1, v_min = 1 << 30, v_max = -1;
  bool any = false;
};

Extent lit_extent(const BinaryMask& m) {
  Extent e;
  for (Eigen::Index v = 0; v < m.rows(); ++v)
    for (Eigen::Index u = 0; u < m.cols(); ++u)
      if (m(v, u)) {
        e.any = true;
        e.u_min = std::min<int>(e.u_min, static_cast<int>(u));
        e.u_max = std::max<int>(e.u_max, static_cast<int>(u));
        e.v_min = std::min<int>(e.v_min, static_cast<int>(v));
        e.v_max = std::max<int>(e.v_max, static_cast<int>(v));
      }
  return e;
}

NeedleModel in_plane_needle(double length_mm = 30.0) {
  NeedleModel n;
  n.entry_point = Vec3(-15.0, 0.0, 25.0);
  n.direction = Vec3::UnitX();
  n.inserted_length_mm = length_mm;
  return n;
}

}  // namespace

TEST_CASE("in-plane needle renders its full inserted length") {
  const CalibrationMap cal;
  const ProbeModel probe;
  const NeedleModel needle = in_plane_needle(30.0);
  const RenderResult r = render_mask(needle, RigidTransform::identity(), probe, cal);
  REQUIRE(r.intersects_slab);

  const NeedleDetection2D det = detect(r.mask, {});
  REQUIRE(det.valid);
  const double expected_px = 30.0 / cal.pixel_spacing_u;  // ~392 px
  CHECK(det.shaft_length_px == doctest::Approx(expected_px).epsilon(0.01));
  CHECK(std::abs(det.angle_deg()) < 0.5);
}

TEST_CASE("perpendicular needle collapses to a near-point blob") {
  const CalibrationMap cal;
  const ProbeModel probe;  // 2 mm elevation width
  NeedleModel needle;
  needle.entry_point = Vec3(0.0, -5.0, 25.0);
  needle.direction = Vec3::UnitY();
  needle.inserted_length_mm = 10.0;

  const RenderResult r = render_mask(needle, RigidTransform::identity(), probe, cal);
  REQUIRE(r.intersects_slab);
  const Extent e = lit_extent(r.mask);
  REQUIRE(e.any);
  const double diameter_px_u = needle.diameter_mm / cal.pixel_spacing_u;
  CHECK(e.u_max - e.u_min + 1 <= diameter_px_u + 2.0);
  CHECK(e.v_max - e.v_min + 1 <= needle.diameter_mm / cal.pixel_spacing_v + 2.0);
}

TEST_CASE("45-degree crossing renders e*cot(theta) of in-plane extent") {
  const CalibrationMap cal;
  const ProbeModel probe;
  NeedleModel needle;
  needle.entry_point = Vec3(0.0, 0.0, 25.0) - 10.0 * Vec3(std::sqrt(0.5), std::sqrt(0.5), 0.0);
  needle.direction = Vec3(std::sqrt(0.5), std::sqrt(0.5), 0.0);  // horizontal, 45 deg off-plane
  needle.inserted_length_mm = 20.0;

  const RenderResult r = render_mask(needle, RigidTransform::identity(), probe, cal);
  REQUIRE(r.intersects_slab);
  const Extent e = lit_extent(r.mask);
  // Round caps at the slab boundaries add one diameter to the axis segment.
  const double measured_px = (e.u_max - e.u_min) - needle.diameter_mm / cal.pixel_spacing_u;
  const double expected_px = 2.0 / cal.pixel_spacing_u;  // e * cot(45) = 2 mm ~ 26 px
  CHECK(measured_px == doctest::Approx(expected_px).epsilon(0.1));
}

TEST_CASE("linear focus profile widens the slab with depth") {
  const CalibrationMap cal;
  ProbeModel probe;
  probe.elevation_width_mm = 2.0;
  probe.elevation_slope = 0.05;  // 2.5 mm at z=10, 4.0 mm at z=40

  auto crossing_extent = [&](double depth_mm) {
    NeedleModel needle;
    needle.direction = Vec3(std::sqrt(0.5), std::sqrt(0.5), 0.0);
    needle.entry_point = Vec3(0.0, 0.0, depth_mm) - 15.0 * needle.direction;
    needle.inserted_length_mm = 30.0;
    const BinaryMask mask = render_mask(needle, RigidTransform::identity(), probe, cal).mask;
    const Extent e = lit_extent(mask);
    REQUIRE(e.any);
    return (e.u_max - e.u_min + 1) - needle.diameter_mm / cal.pixel_spacing_u;
  };

  const double shallow = crossing_extent(10.0);
  const double deep = crossing_extent(40.0);
  CHECK(shallow == doctest::Approx(2.5 / cal.pixel_spacing_u).epsilon(0.08));
  CHECK(deep == doctest::Approx(4.0 / cal.pixel_spacing_u).epsilon(0.08));
}

TEST_CASE("needle missing the slab renders an empty flagged mask") {
  const CalibrationMap cal;
  const ProbeModel probe;
  NeedleModel needle = in_plane_needle();
  needle.entry_point.y() = 5.0;  // well outside the 1 mm half-width

  const RenderResult r = render_mask(needle, RigidTransform::identity(), probe, cal);
  CHECK_FALSE(r.intersects_slab);
  CHECK(mask_area(r.mask) == 0);
}

TEST_CASE("zero-length needle renders nothing") {
  const CalibrationMap cal;
  const ProbeModel probe;
  NeedleModel needle = in_plane_needle(0.0);
  const RenderResult r = render_mask(needle, RigidTransform::identity(), probe, cal);
  CHECK_FALSE(r.intersects_slab);
  CHECK(mask_area(r.mask) == 0);
}

TEST_CASE("intensity render thresholds back to the mask when clean") {
  const CalibrationMap cal;
  const ProbeModel probe;
  const NeedleModel needle = in_plane_needle();

  IntensityParams params;  // no speckle, no distractors
  const GrayImage img = render_intensity(needle, RigidTransform::identity(), probe, cal, params, 1);
  const BinaryMask from_gray = threshold(img, 0.5);
  const BinaryMask direct = render_mask(needle, RigidTransform::identity(), probe, cal).mask;
  CHECK((from_gray == direct).all());
}

TEST_CASE("intensity render is deterministic per seed") {
  const CalibrationMap cal;
  const ProbeModel probe;
  const NeedleModel needle = in_plane_needle();
  IntensityParams params;
  params.speckle_sigma = 0.3;
  params.distractor_count = 2;

  const GrayImage a = render_intensity(needle, RigidTransform::identity(), probe, cal, params, 42);
  const GrayImage b = render_intensity(needle, RigidTransform::identity(), probe, cal, params, 42);
  const GrayImage c = render_intensity(needle, RigidTransform::identity(), probe, cal, params, 43);
  CHECK((a == b).all());
  CHECK_FALSE((a == c).all());
}

TEST_CASE("distractor-only scene yields no valid needle detection") {
  CalibrationMap cal;
  cal.width = 64;
  cal.height = 64;
  cal.pixel_spacing_u = 0.65;
  cal.pixel_spacing_v = 0.65;
  cal.image_origin_in_p = Vec3(-0.5 * 64 * 0.65, 0.0, 0.0);
  ProbeModel probe;
  probe.footprint_mm = cal.footprint_mm();
  probe.depth_mm = cal.depth_mm();

  NeedleModel needle = in_plane_needle(0.0);  // nothing inserted
  IntensityParams params;
  params.distractor_count = 3;
  params.distractor_width_mm = 0.6;

  DetectConfig config;
  config.min_area_px = 100;

  const GrayImage img = render_intensity(needle, RigidTransform::identity(), probe, cal, params, 9);
  const BinaryMask mask = threshold(img, 0.5);
  REQUIRE(mask_area(mask) > 0);

  const auto components = extract_components(mask);
  const auto merged = select_needle(components, config.theta_threshold_deg);
  // The slope filter keeps the off-axis curves out of the merged set, which
  // then falls below the area gate.
  CHECK(static_cast<long>(merged.size()) <= components[0].area + 8);
  CHECK_FALSE(detect(mask, config).valid);
}

TEST_CASE("degrade_mask identity at zero rates") {
  const CalibrationMap cal;
  const ProbeModel probe;
  const BinaryMask mask =
      render_mask(in_plane_needle(), RigidTransform::identity(), probe, cal).mask;
  DegradationParams params;
  params.rng_seed = 5;
  CHECK((degrade_mask(mask, params) == mask).all());
}

TEST_CASE("gap splits the shaft into multiple components") {
  const CalibrationMap cal;
  const ProbeModel probe;
  const BinaryMask mask =
      render_mask(in_plane_needle(), RigidTransform::identity(), probe, cal).mask;
  DegradationParams params;
  params.gap_rate = 1.0;
  params.gap_len_min_px = 20;
  params.gap_len_max_px = 20;
  params.rng_seed = 3;

  const BinaryMask degraded = degrade_mask(mask, params);
  CHECK(extract_components(mask).size() == 1);
  CHECK(extract_components(degraded).size() >= 2);
  CHECK(mask_area(degraded) < mask_area(mask));
}

TEST_CASE("degradation is reproducible and blobs add components") {
  const CalibrationMap cal;
  const ProbeModel probe;
  const BinaryMask mask =
      render_mask(in_plane_needle(), RigidTransform::identity(), probe, cal).mask;
  DegradationParams params;
  params.gap_rate = 0.5;
  params.blob_rate = 2.0;
  params.flip_noise = 1e-4;
  params.rng_seed = 17;

  const BinaryMask a = degrade_mask(mask, params);
  const BinaryMask b = degrade_mask(mask, params);
  CHECK((a == b).all());

  DegradationParams blob_only;
  blob_only.blob_rate = 3.0;
  blob_only.rng_seed = 21;
  CHECK(extract_components(degrade_mask(mask, blob_only)).size() >=
        extract_components(mask).size() + 1);
}

TEST_CASE("augment with zero probabilities is the identity") {
  GrayImage img = GrayImage::Random(32, 32).abs();
  img = img.cwiseMin(1.0);
  const GrayImage label = (img > 0.7).cast<double>();
  AugmentParams params;
  params.p_flip = params.p_contrast = params.p_noise = params.p_blur = 0.0;
  const AugmentedSample s = augment(img, label, params, 77);
  CHECK((s.image == img).all());
  CHECK((s.label == label).all());
}

TEST_CASE("forced flip mirrors image and label and negates the needle angle") {
  const CalibrationMap cal;
  const ProbeModel probe;
  NeedleModel needle;
  needle.entry_point = Vec3(-12.0, 0.0, 20.0);
  needle.direction = Vec3(std::cos(deg_to_rad(20.0)), 0.0, std::sin(deg_to_rad(20.0)));
  needle.inserted_length_mm = 24.0;
  const BinaryMask mask = render_mask(needle, RigidTransform::identity(), probe, cal).mask;
  const GrayImage label = to_gray(mask);

  AugmentParams params;
  params.p_flip = 1.0;
  params.p_contrast = params.p_noise = params.p_blur = 0.0;
  const AugmentedSample s = augment(label, label, params, 3);

  for (int v = 0; v < label.rows(); v += 13)
    for (int u = 0; u < label.cols(); u += 17)
      CHECK(s.label(v, u) == label(v, label.cols() - 1 - u));

  const NeedleDetection2D orig = detect(mask, {});
  const NeedleDetection2D flipped = detect(threshold(s.label, 0.5), {});
  REQUIRE(orig.valid);
  REQUIRE(flipped.valid);
  CHECK(flipped.angle_deg() == doctest::Approx(-orig.angle_deg()).epsilon(0.02));
}

TEST_CASE("contrast round trip is broken by the clamp") {
  // x * 1.1 clamps at 1.0, so scaling back by 10/11 cannot restore values
  // near the top of the range.
  GrayImage img(2, 2);
  img << 0.2, 0.5, 0.95, 0.99;
  GrayImage up = (img * 1.1).cwiseMin(1.0).cwiseMax(0.0);
  GrayImage back = (up * (10.0 / 11.0)).cwiseMin(1.0).cwiseMax(0.0);
  CHECK(back(0, 0) == doctest::Approx(img(0, 0)).epsilon(1e-12));
  CHECK(std::abs(back(1, 0) - img(1, 0)) > 1e-3);
  CHECK(std::abs(back(1, 1) - img(1, 1)) > 1e-3);
}

TEST_CASE("insertion sweep ground truth grows monotonically") {
  SweepSpec spec;
  spec.mode = SweepMode::kInsertion;
  spec.poses.assign(50, RigidTransform::identity());
  spec.needle = in_plane_needle();
  spec.insertion_start_mm = 5.0;
  spec.insertion_end_mm = 30.0;
  spec.seed = 1;

  const auto frames = simulate_sweep(spec);
  REQUIRE(frames.size() == 50);
  for (std::size_t i = 1; i < frames.size(); ++i) {
    CHECK(frames[i].gt.shaft_length_px >= frames[i - 1].gt.shaft_length_px - 1e-9);
  }
}

TEST_CASE("transverse sweep: non-empty frames are exactly the slab hits") {
  SweepSpec spec;
  spec.mode = SweepMode::kTransverse;
  spec.needle.entry_point = Vec3(0.0, -10.0, 25.0);
  spec.needle.direction = Vec3::UnitY();
  spec.needle.inserted_length_mm = 20.0;
  spec.seed = 2;
  // The needle runs along base y; sweeping the probe along y moves the slab
  // across the needle's [-10, 10] span.
  for (int i = 0; i < 61; ++i) {
    RigidTransform pose;
    pose.translation = Vec3(0.0, -15.0 + 0.5 * i, 0.0);
    spec.poses.push_back(pose);
  }

  const auto frames = simulate_sweep(spec);
  int visible = 0;
  for (const auto& f : frames) {
    CHECK((mask_area(f.mask) > 0) == f.gt.visible);
    visible += f.gt.visible;
  }
  CHECK(visible >= 40);  // ~44 of 61 poses put the slab on the needle
  CHECK(visible < 61);
}

TEST_CASE("empty needle gives all-empty sweep") {
  SweepSpec spec;
  spec.mode = SweepMode::kInsertion;
  spec.poses.assign(10, RigidTransform::identity());
  spec.needle = in_plane_needle();
  spec.insertion_start_mm = 0.0;
  spec.insertion_end_mm = 0.0;
  const auto frames = simulate_sweep(spec);
  for (const auto& f : frames) {
    CHECK(mask_area(f.mask) == 0);
    CHECK_FALSE(f.gt.visible);
  }
}

TEST_CASE("sweep directory round-trips masks, poses, and annotations") {
  SweepSpec spec;
  spec.mode = SweepMode::kInsertion;
  for (int i = 0; i < 4; ++i) {
    RigidTransform pose = RigidTransform::rot_z(deg_to_rad(2.0 * i));
    pose.translation = Vec3(0.1 * i, 0.0, 0.2 * i);
    spec.poses.push_back(pose);
  }
  spec.needle = in_plane_needle();
  spec.degradation.gap_rate = 1.0;
  spec.seed = 31;
  const auto frames = simulate_sweep(spec);

  const std::string dir =
      (std::filesystem::temp_directory_path() / "usn_sweep_roundtrip").string();
  std::filesystem::remove_all(dir);
  write_sweep(dir, spec, frames);
  const LoadedSweep loaded = read_sweep(dir);

  REQUIRE(loaded.frames.size() == frames.size());
  CHECK(loaded.spec.mode == spec.mode);
  CHECK(loaded.spec.needle.inserted_length_mm ==
        doctest::Approx(spec.needle.inserted_length_mm));
  CHECK(loaded.spec.degradation.gap_rate == doctest::Approx(1.0));
  for (std::size_t i = 0; i < frames.size(); ++i) {
    CHECK((loaded.frames[i].mask == frames[i].mask).all());
    CHECK((loaded.frames[i].pose.rotation - frames[i].pose.rotation).cwiseAbs().maxCoeff() <
          1e-12);
    CHECK((loaded.frames[i].pose.translation - frames[i].pose.translation).norm() < 1e-12);
    CHECK(loaded.frames[i].gt.visible == frames[i].gt.visible);
    CHECK((loaded.frames[i].gt.tip_px - frames[i].gt.tip_px).norm() < 1e-9);
    CHECK(loaded.frames[i].gt.shaft_length_px ==
          doctest::Approx(frames[i].gt.shaft_length_px));
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("transverse sweep requires at least two poses") {
  SweepSpec spec;
  spec.mode = SweepMode::kTransverse;
  spec.poses.assign(1, RigidTransform::identity());
  CHECK_THROWS_AS(simulate_sweep(spec), std::invalid_argument);
}

TEST_CASE("sweep masks are deterministic per seed") {
  SweepSpec spec;
  spec.mode = SweepMode::kInsertion;
  spec.poses.assign(5, RigidTransform::identity());
  spec.needle = in_plane_needle();
  spec.degradation.gap_rate = 1.0;
  spec.degradation.blob_rate = 1.0;
  spec.degradation.flip_noise = 1e-4;
  spec.seed = 99;

  const auto a = simulate_sweep(spec);
  const auto b = simulate_sweep(spec);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK((a[i].mask == b[i].mask).all());
}
