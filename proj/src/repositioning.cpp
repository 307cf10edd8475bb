#include "usn/repositioning.hpp"

#include "usn/rng.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace usn {

RepositionCommand compute_reposition(const Line3Fit& line, const RigidTransform& probe_pose) {
  if (!line.valid) throw std::invalid_argument("compute_reposition: invalid line fit");
  const auto [b1, b2] = line.axis_points();
  Vec3 p1 = base_to_probe(b1, probe_pose);
  Vec3 p2 = base_to_probe(b2, probe_pose);
  if (p1.x() > p2.x()) std::swap(p1, p2);  // P1' smaller in probe X
  const double dx = p1.x() - p2.x();
  if (std::abs(dx) < 1e-6) {
    throw std::invalid_argument("compute_reposition: needle projects perpendicular to probe X");
  }

  RepositionCommand cmd;
  cmd.delta_y_mm = p2.y() - p2.x() * (p1.y() - p2.y()) / dx;
  const Vec2 v(p2.x() - p1.x(), p2.y() - p1.y());
  cmd.delta_theta_deg = rad_to_deg(std::atan2(v.y(), v.x()));  // signed, from probe X
  return cmd;
}

RigidTransform apply(const RigidTransform& pose, const RepositionCommand& cmd) {
  RigidTransform out;
  out.translation = pose.translation + pose.rotation * cmd.delta_p();
  out.rotation =
      pose.rotation *
      Eigen::AngleAxisd(deg_to_rad(cmd.delta_theta_deg), Vec3::UnitZ()).toRotationMatrix();
  if (out.rigidity_error() > 1e-9) out.rotation = orthonormalized(out.rotation);
  return out;
}

const char* to_string(ControllerState s) {
  switch (s) {
    case ControllerState::kMonitoring: return "Monitoring";
    case ControllerState::kMisalignmentDetected: return "MisalignmentDetected";
    case ControllerState::kTransverseSearch: return "TransverseSearch";
    case ControllerState::kReconstructing: return "Reconstructing";
    case ControllerState::kRepositioning: return "Repositioning";
    case ControllerState::kVerifying: return "Verifying";
    case ControllerState::kRestored: return "Restored";
    case ControllerState::kFailed: return "Failed";
  }
  return "?";
}

namespace {

BinaryMask render_degraded(const Scene& scene, const RigidTransform& pose,
                           const DegradationParams& base, std::uint64_t seed,
                           std::uint64_t frame) {
  DegradationParams deg = base;
  deg.rng_seed = derive_seed(seed, frame);
  return degrade_mask(render_mask(scene.needle, pose, scene.probe, scene.cal).mask, deg);
}

// Out-of-plane residuals of the ground-truth needle segment under the pose.
void plane_errors(const Scene& scene, const RigidTransform& pose, double& e_p_mm,
                  double& e_theta_deg) {
  const Vec3 d_p = pose.rotation.transpose() * scene.needle.direction;
  e_theta_deg = rad_to_deg(std::asin(std::min(1.0, std::abs(d_p.y()))));

  const double len = scene.needle.inserted_length_mm;
  const int samples = 200;
  double sum = 0.0;
  long count = 0;
  for (int i = 0; i <= samples; ++i) {
    const double s = len * i / samples;
    const Vec3 q = base_to_probe(scene.needle.entry_point + s * scene.needle.direction, pose);
    if (std::abs(q.x()) > 0.5 * scene.cal.footprint_mm()) continue;
    if (q.z() < 0.0 || q.z() > scene.cal.depth_mm()) continue;
    sum += std::abs(q.y());
    ++count;
  }
  if (count > 0) {
    e_p_mm = sum / count;
  } else {  // nothing under the footprint: fall back to the shaft midpoint
    const Vec3 mid = scene.needle.entry_point + 0.5 * len * scene.needle.direction;
    e_p_mm = std::abs(base_to_probe(mid, pose).y());
  }
}

}  // namespace

EpisodeLog run_closed_loop(const Scene& scene, const RigidTransform& initial_pose,
                           const EpisodeConfig& config) {
  EpisodeLog log;
  ShaftLengthMonitor monitor(config.n_ring, config.t_mis);
  RigidTransform pose = initial_pose;

  // Last detection observed while tracking; anchors the transverse search.
  bool have_reference = false;
  NeedleDetection2D ref_det;
  RigidTransform ref_pose;

  int trigger_frame = -1;
  for (int f = 0; f < config.max_monitor_frames; ++f) {
    if (f == config.perturb_frame &&
        (config.inject_delta_theta_deg != 0.0 || config.inject_delta_p_mm != 0.0)) {
      RepositionCommand perturb;
      perturb.delta_y_mm = config.inject_delta_p_mm;
      perturb.delta_theta_deg = config.inject_delta_theta_deg;
      pose = apply(pose, perturb);
    }
    const BinaryMask mask =
        render_degraded(scene, pose, config.degradation, config.seed, static_cast<std::uint64_t>(f));
    const NeedleDetection2D det = detect(mask, config.detect);
    const MonitorState state = monitor.push_and_check(det.shaft_length_px, det.valid);
    if (state == MonitorState::kMisaligned) {
      trigger_frame = f;
      break;
    }
    if (det.valid) {
      have_reference = true;
      ref_det = det;
      ref_pose = pose;
    }
  }

  if (trigger_frame < 0) {
    log.final_state = ControllerState::kMonitoring;
    log.final_pose = pose;
    return log;
  }
  log.trigger_frame = trigger_frame;
  const double reference_length = monitor.average();

  if (!have_reference) {
    log.final_state = ControllerState::kFailed;
    log.final_pose = pose;
    return log;
  }

  // Transverse search: probe yawed 90 degrees off the last tracked needle
  // azimuth, sweeping along the new short axis across the old shaft midpoint.
  // Fitted-line endpoints may overhang the pixel grid by a fraction of a
  // pixel; clamp before mapping.
  auto clamped_to_base = [&](ImagePoint px) {
    px.x() = std::clamp(px.x(), 0.0, static_cast<double>(scene.cal.width));
    px.y() = std::clamp(px.y(), 0.0, static_cast<double>(scene.cal.height));
    return probe_to_base(pixel_to_probe(px, scene.cal), ref_pose);
  };
  const Vec3 mid_b = clamped_to_base(intersection_point(ref_det));
  const Vec3 tracked_dir_b =
      (clamped_to_base(ref_det.endpoint_b) - clamped_to_base(ref_det.endpoint_a)).normalized();

  const Vec3 z_axis = pose.z_axis();
  const Vec3 azimuth = (tracked_dir_b - tracked_dir_b.dot(z_axis) * z_axis).normalized();
  Vec3 x_search = z_axis.cross(azimuth).normalized();  // perpendicular to the needle azimuth
  const Vec3 y_search = z_axis.cross(x_search).normalized();

  RigidTransform search_pose;
  search_pose.rotation.col(0) = x_search;
  search_pose.rotation.col(1) = y_search;
  search_pose.rotation.col(2) = z_axis;
  if (search_pose.rigidity_error() > 1e-9) {
    search_pose.rotation = orthonormalized(search_pose.rotation);
  }
  const double z_mid = base_to_probe(mid_b, ref_pose).z();
  search_pose.translation = mid_b - search_pose.rotation * Vec3(0.0, 0.0, z_mid);

  std::vector<TrackedSlice> slices;
  const int n_steps = static_cast<int>(std::floor(config.search.extent_mm / config.search.step_mm));
  for (int i = 0; i <= n_steps; ++i) {
    const double offset = -0.5 * config.search.extent_mm + i * config.search.step_mm;
    TrackedSlice slice;
    slice.frame_index = i;
    slice.probe_pose = search_pose;
    slice.probe_pose.translation += search_pose.rotation * Vec3(0.0, offset, 0.0);
    const BinaryMask mask = render_degraded(scene, slice.probe_pose, config.degradation,
                                            config.seed, 1000 + static_cast<std::uint64_t>(i));
    slice.detection = detect(mask, config.detect);
    slices.push_back(std::move(slice));
  }
  log.search_frames = static_cast<int>(slices.size());

  const PointCloud3 raw = stack_points(slices, scene.cal);
  log.valid_slices = static_cast<int>(raw.size());
  if (log.valid_slices < config.min_valid_slices) {
    log.final_state = ControllerState::kFailed;
    log.final_pose = pose;
    return log;
  }
  const PointCloud3 filtered = dbscan_filter(raw, config.dbscan);
  if (filtered.empty()) {
    log.final_state = ControllerState::kFailed;
    log.final_pose = pose;
    return log;
  }
  const Line3Fit fit = ransac_line(filtered, config.ransac);
  if (!fit.valid) {
    log.final_state = ControllerState::kFailed;
    log.final_pose = pose;
    return log;
  }

  RigidTransform new_pose;
  try {
    log.command = compute_reposition(fit, pose);
    new_pose = apply(pose, log.command);
  } catch (const std::invalid_argument&) {
    log.final_state = ControllerState::kFailed;
    log.final_pose = pose;
    return log;
  }

  // Verify at the adjusted pose against the pre-misalignment shaft length.
  const BinaryMask verify_mask =
      render_degraded(scene, new_pose, config.degradation, config.seed, 2000);
  const NeedleDetection2D verify_det = detect(verify_mask, config.detect);
  plane_errors(scene, new_pose, log.e_p_mm, log.e_theta_deg);
  log.final_pose = new_pose;
  log.frames_to_restore = log.search_frames + 1;

  if (verify_det.valid &&
      verify_det.shaft_length_px >= config.verify_min_length_ratio * reference_length) {
    log.success = true;
    log.final_state = ControllerState::kRestored;
  } else {
    log.final_state = ControllerState::kFailed;
  }
  return log;
}

}  // namespace usn
