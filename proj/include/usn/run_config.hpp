#pragma once

#include "usn/mask_pipeline.hpp"
#include "usn/needle3d.hpp"
#include "usn/repositioning.hpp"
#include "usn/seg_losses.hpp"
#include "usn/sim_scene.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace usn {

/// Invalid configuration input; the CLI maps it to exit code 2.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct SweepConfig {
  SweepMode mode = SweepMode::kInsertion;
  int frames = 50;
  double insertion_start_mm = 10.0;
  double insertion_end_mm = 30.0;
  double transverse_extent_mm = 30.0;
  RigidTransform initial_pose;  // insertion-mode pose
};

struct ExperimentConfig {
  std::vector<double> delta_theta_deg = {5.0, 10.0, 15.0};
  std::vector<double> delta_p_mm = {0.0, 3.0, 6.0};
  int trials = 5;
  int perturb_frame = 30;
  int max_monitor_frames = 120;
  int min_valid_slices = 5;
  double verify_min_length_ratio = 0.60;
  SearchSpec search;
};

struct TrainRunConfig {
  TrainConfig train;
  LossChoice loss = LossChoice::kDice;
  bool compare_dice_vs_ce = false;
  int compare_seeds = 5;
  ToyDataParams data;
  int val_count = 16;
};

struct MonitorConfig {
  int n_ring = 25;
  double t_mis = 0.40;
};

/// Every tunable constant surfaces as a named config key; a missing config
/// file or missing keys fall back to the defaults below.
struct RunConfig {
  Scene scene;
  SweepConfig sweep;
  DegradationParams degradation = default_stress_degradation();
  DetectConfig detect;
  double t_con = 0.70;
  MonitorConfig monitor;
  DbscanParams dbscan;
  RansacParams ransac;
  ExperimentConfig experiment;
  TrainRunConfig training;
  std::uint64_t seed = 0;
  std::string out_dir = "out";
  int jobs = 1;
};

RunConfig parse_config_file(const std::string& path);
RunConfig parse_config_text(const std::string& json_text);
std::string config_to_json_text(const RunConfig& config);

}  // namespace usn
