#pragma once

#include "usn/alignment_monitor.hpp"
#include "usn/geometry.hpp"
#include "usn/mask_pipeline.hpp"
#include "usn/needle3d.hpp"
#include "usn/sim_scene.hpp"

#include <cstdint>
#include <limits>

namespace usn {

/// Probe adjustment: translation along the probe short axis (y of {p}) and
/// yaw about the probe depth axis (z of {p}).
struct RepositionCommand {
  double delta_y_mm = 0.0;
  double delta_theta_deg = 0.0;

  Vec3 delta_p() const { return {0.0, delta_y_mm, 0.0}; }
};

/// Closed-form command from the reconstructed 3D axis: two axis points are
/// projected onto the probe X-Y plane, ordered so P1'.x < P2'.x; delta-y is
/// the projected line's y at x = 0 and delta-theta the signed angle from the
/// probe X axis to the projected direction. Throws std::invalid_argument when
/// the projection is degenerate (|P1'.x - P2'.x| < 1e-6).
RepositionCommand compute_reposition(const Line3Fit& line, const RigidTransform& probe_pose);

/// Translates by delta_p expressed in {p}, then yaws about the (translated)
/// probe z axis.
RigidTransform apply(const RigidTransform& pose, const RepositionCommand& cmd);

enum class ControllerState {
  kMonitoring,
  kMisalignmentDetected,
  kTransverseSearch,
  kReconstructing,
  kRepositioning,
  kVerifying,
  kRestored,
  kFailed,
};

const char* to_string(ControllerState s);

struct SearchSpec {
  double extent_mm = 30.0;  // total sweep, centered on the last tracked shaft midpoint
  double step_mm = 0.5;
};

struct Scene {
  NeedleModel needle;
  ProbeModel probe;
  CalibrationMap cal;
};

struct EpisodeConfig {
  int perturb_frame = 30;             // after monitor warmup
  double inject_delta_theta_deg = 0;  // yaw about probe z at injection
  double inject_delta_p_mm = 0;       // shift along probe y at injection
  int max_monitor_frames = 120;

  DetectConfig detect;
  int n_ring = 25;
  double t_mis = 0.40;
  DbscanParams dbscan;
  RansacParams ransac;
  SearchSpec search;
  DegradationParams degradation;  // rng_seed ignored; streams derive from seed
  int min_valid_slices = 5;
  double verify_min_length_ratio = 0.60;
  std::uint64_t seed = 0;
};

struct EpisodeLog {
  bool success = false;
  ControllerState final_state = ControllerState::kMonitoring;
  int trigger_frame = -1;
  int search_frames = 0;
  int valid_slices = 0;
  RepositionCommand command;
  // Set only when the episode reaches verification; NaN before that.
  double e_p_mm = std::numeric_limits<double>::quiet_NaN();
  double e_theta_deg = std::numeric_limits<double>::quiet_NaN();
  int frames_to_restore = -1;
  RigidTransform final_pose;
};

/// Drives the full loop on the simulator: monitor -> misalignment -> transverse
/// search -> reconstruction -> reposition -> verify. The perturbation from the
/// config is injected at perturb_frame.
EpisodeLog run_closed_loop(const Scene& scene, const RigidTransform& initial_pose,
                           const EpisodeConfig& config);

}  // namespace usn
