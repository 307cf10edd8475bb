#include "usn/json_convert.hpp"
#include "usn/mask_pipeline.hpp"
#include "usn/needle3d.hpp"
#include "usn/repositioning.hpp"
#include "usn/rng.hpp"
#include "usn/run_config.hpp"
#include "usn/seg_losses.hpp"
#include "usn/sim_scene.hpp"
#include "usn/sweep_io.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <future>
#include <iomanip>
#include <iostream>
#include <random>
#include <vector>

namespace fs = std::filesystem;
using namespace usn;

namespace {

constexpr int kExitConfigError = 2;
constexpr int kExitRuntimeError = 3;

struct CliOverrides {
  std::string config_path;
  std::string out_dir;
  std::uint64_t seed = 0;
  bool seed_set = false;
  bool out_set = false;
  int jobs = 0;
};

RunConfig load_config(const CliOverrides& cli) {
  RunConfig config = cli.config_path.empty() ? RunConfig{} : parse_config_file(cli.config_path);
  if (cli.seed_set) config.seed = cli.seed;
  if (cli.out_set) config.out_dir = cli.out_dir;
  if (cli.jobs > 0) config.jobs = cli.jobs;
  return config;
}

void add_common_options(CLI::App* cmd, CliOverrides& cli) {
  cmd->add_option("--config", cli.config_path, "JSON config file (defaults used when omitted)");
  cmd->add_option("--seed", cli.seed, "Master seed override")->each([&cli](const std::string&) {
    cli.seed_set = true;
  });
  cmd->add_option("--out", cli.out_dir, "Output directory override")
      ->each([&cli](const std::string&) { cli.out_set = true; });
  cmd->add_option("--jobs", cli.jobs, "Parallel episodes for 'experiment'");
}

SweepSpec build_sweep_spec(const RunConfig& config) {
  SweepSpec spec;
  spec.mode = config.sweep.mode;
  spec.needle = config.scene.needle;
  spec.probe = config.scene.probe;
  spec.cal = config.scene.cal;
  spec.degradation = config.degradation;
  spec.insertion_start_mm = config.sweep.insertion_start_mm;
  spec.insertion_end_mm = config.sweep.insertion_end_mm;
  spec.seed = config.seed;

  if (spec.mode == SweepMode::kInsertion) {
    spec.poses.assign(config.sweep.frames, config.sweep.initial_pose);
    return spec;
  }

  // Transverse: probe perpendicular to the needle azimuth, sweeping across
  // the needle midpoint along the new short axis.
  const RigidTransform& init = config.sweep.initial_pose;
  const Vec3 z_axis = init.z_axis();
  Vec3 azimuth = spec.needle.direction - spec.needle.direction.dot(z_axis) * z_axis;
  if (azimuth.norm() < 1e-9) throw ConfigError("sweep: needle is parallel to the probe z axis");
  azimuth.normalize();
  RigidTransform pose;
  pose.rotation.col(0) = z_axis.cross(azimuth).normalized();
  pose.rotation.col(2) = z_axis;
  pose.rotation.col(1) = z_axis.cross(pose.rotation.col(0)).normalized();
  const Vec3 mid =
      spec.needle.entry_point + 0.5 * spec.needle.inserted_length_mm * spec.needle.direction;
  const double z_mid = base_to_probe(mid, init).z();
  pose.translation = mid - pose.rotation * Vec3(0.0, 0.0, z_mid);

  for (int i = 0; i < config.sweep.frames; ++i) {
    const double t = static_cast<double>(i) / (config.sweep.frames - 1);
    const double offset = (t - 0.5) * config.sweep.transverse_extent_mm;
    RigidTransform p = pose;
    p.translation += pose.rotation * Vec3(0.0, offset, 0.0);
    spec.poses.push_back(p);
  }
  return spec;
}

int cmd_simulate(const RunConfig& config) {
  const SweepSpec spec = build_sweep_spec(config);
  const auto frames = simulate_sweep(spec);
  write_sweep(config.out_dir, spec, frames);
  int visible = 0;
  for (const auto& f : frames) visible += f.gt.visible;
  std::cout << "wrote " << frames.size() << " frames (" << visible << " with visible needle) to "
            << config.out_dir << "\n";
  return 0;
}

struct Stats {
  double mean = 0.0, stddev = 0.0;
  long n = 0;
};

Stats stats_of(const std::vector<double>& xs) {
  Stats s;
  s.n = static_cast<long>(xs.size());
  if (xs.empty()) return s;
  for (const double x : xs) s.mean += x;
  s.mean /= static_cast<double>(xs.size());
  for (const double x : xs) s.stddev += (x - s.mean) * (x - s.mean);
  s.stddev = std::sqrt(s.stddev / static_cast<double>(xs.size()));
  return s;
}

int cmd_detect(const RunConfig& config, const std::string& sweep_dir) {
  if (!fs::is_directory(sweep_dir) || !fs::exists(fs::path(sweep_dir) / "spec.json")) {
    throw ConfigError("detect: not a sweep directory: " + sweep_dir);
  }
  const LoadedSweep sweep = read_sweep(sweep_dir);
  fs::create_directories(config.out_dir);

  Json detections = Json::array();
  std::ofstream csv(fs::path(config.out_dir) / "metrics.csv");
  csv << "frame,valid,recall,precision,iou,continuity,tip_error_mm,angle_error_deg,center_error_mm\n";
  std::vector<double> recalls, precisions, ious, continuities, tips, angles, centers;

  for (std::size_t i = 0; i < sweep.frames.size(); ++i) {
    const SweepFrame& frame = sweep.frames[i];
    const NeedleDetection2D det = detect(frame.mask, config.detect);

    Json dj = {{"frame", i}, {"valid", det.valid}};
    if (det.valid) {
      dj["line_point_px"] = Json::array({det.line_point.x(), det.line_point.y()});
      dj["line_dir"] = Json::array({det.line_dir.x(), det.line_dir.y()});
      dj["endpoints_px"] = Json::array({Json::array({det.endpoint_a.x(), det.endpoint_a.y()}),
                                        Json::array({det.endpoint_b.x(), det.endpoint_b.y()})});
      dj["tip_px"] = Json::array({det.tip.x(), det.tip.y()});
      dj["shaft_length_px"] = det.shaft_length_px;
    }
    detections.push_back(dj);

    csv << i << "," << (det.valid ? 1 : 0);
    const BinaryMask gt_mask = render_mask(needle_for_frame(sweep.spec, static_cast<int>(i)),
                                           frame.pose, sweep.spec.probe, sweep.spec.cal)
                                   .mask;
    if (mask_area(gt_mask) > 0) {
      const SegMetrics m = seg_metrics(frame.mask, gt_mask, config.t_con);
      csv << "," << m.recall << "," << m.precision << "," << m.iou << "," << m.continuity;
      recalls.push_back(m.recall);
      precisions.push_back(m.precision);
      ious.push_back(m.iou);
      continuities.push_back(m.continuity);
    } else {
      csv << ",,,,";
    }
    if (det.valid && frame.gt.visible) {
      const DetectionErrors e = detection_errors(det, frame.gt, sweep.spec.cal);
      csv << "," << e.tip_error_mm << "," << e.angle_error_deg << "," << e.center_error_mm;
      tips.push_back(e.tip_error_mm);
      angles.push_back(e.angle_error_deg);
      centers.push_back(e.center_error_mm);
    } else {
      csv << ",,,";
    }
    csv << "\n";
  }

  auto summary_row = [&](const char* name, auto pick) {
    csv << name;
    csv << "," << "";
    for (const auto* xs : {&recalls, &precisions, &ious, &continuities, &tips, &angles, &centers}) {
      csv << "," << pick(stats_of(*xs));
    }
    csv << "\n";
  };
  summary_row("mean", [](const Stats& s) { return s.mean; });
  summary_row("std", [](const Stats& s) { return s.stddev; });

  std::ofstream dj(fs::path(config.out_dir) / "detections.json");
  dj << detections.dump(2) << "\n";

  const Stats iou_s = stats_of(ious), tip_s = stats_of(tips), ang_s = stats_of(angles);
  std::cout << "frames: " << sweep.frames.size() << "  IoU " << iou_s.mean << " +- "
            << iou_s.stddev << "  tip " << tip_s.mean << " mm  angle " << ang_s.mean << " deg\n";

  // Transverse sweeps additionally reconstruct the 3D axis from the slice
  // midpoints; a failed consensus is a runtime failure (exit 3).
  if (sweep.spec.mode == SweepMode::kTransverse) {
    std::vector<TrackedSlice> slices;
    for (std::size_t i = 0; i < sweep.frames.size(); ++i) {
      TrackedSlice s;
      s.frame_index = static_cast<int>(i);
      s.probe_pose = sweep.frames[i].pose;
      s.detection = detect(sweep.frames[i].mask, config.detect);
      slices.push_back(std::move(s));
    }
    const PointCloud3 raw = stack_points(slices, sweep.spec.cal);
    const PointCloud3 filtered = dbscan_filter(raw, config.dbscan);

    Json rj;
    Json cloud = Json::array();
    for (const Vec3& p : raw) cloud.push_back(to_json(p));
    rj["cloud_mm"] = cloud;
    rj["filtered_count"] = filtered.size();

    Line3Fit fit;
    if (filtered.size() >= 2) fit = ransac_line(filtered, config.ransac);
    rj["fit"] = {{"valid", fit.valid}};
    if (fit.valid) {
      const auto [p1, p2] = fit.axis_points();
      rj["fit"] = {{"valid", true},
                   {"p1_mm", to_json(p1)},
                   {"p2_mm", to_json(p2)},
                   {"direction", to_json(fit.direction)},
                   {"inlier_count", fit.inlier_count},
                   {"rms_residual_mm", fit.rms_residual_mm}};
    }
    std::ofstream rf(fs::path(config.out_dir) / "reconstruction.json");
    rf << rj.dump(2) << "\n";
    if (!fit.valid) {
      std::cerr << "runtime error: no RANSAC consensus on the transverse sweep\n";
      return kExitRuntimeError;
    }
    std::cout << "axis fit: " << fit.inlier_count << " inliers, rms " << fit.rms_residual_mm
              << " mm\n";
  }
  return 0;
}

int cmd_experiment(const RunConfig& config) {
  struct Cell {
    double d_theta, d_p;
    int trial;
  };
  std::vector<Cell> grid;
  for (const double th : config.experiment.delta_theta_deg)
    for (const double dp : config.experiment.delta_p_mm)
      for (int t = 0; t < config.experiment.trials; ++t) grid.push_back({th, dp, t});

  auto run_episode = [&](int idx) {
    const Cell& cell = grid[idx];
    EpisodeConfig ec;
    ec.perturb_frame = config.experiment.perturb_frame;
    ec.inject_delta_theta_deg = cell.d_theta;
    ec.inject_delta_p_mm = cell.d_p;
    ec.max_monitor_frames = config.experiment.max_monitor_frames;
    ec.detect = config.detect;
    ec.n_ring = config.monitor.n_ring;
    ec.t_mis = config.monitor.t_mis;
    ec.dbscan = config.dbscan;
    ec.ransac = config.ransac;
    ec.ransac.seed = derive_seed(config.seed, 50000 + static_cast<std::uint64_t>(idx));
    ec.search = config.experiment.search;
    ec.degradation = config.degradation;
    ec.min_valid_slices = config.experiment.min_valid_slices;
    ec.verify_min_length_ratio = config.experiment.verify_min_length_ratio;
    ec.seed = derive_seed(config.seed, static_cast<std::uint64_t>(idx));
    return run_closed_loop(config.scene, config.sweep.initial_pose, ec);
  };

  std::vector<EpisodeLog> logs(grid.size());
  const int jobs = std::max(1, config.jobs);
  for (std::size_t start = 0; start < grid.size(); start += jobs) {
    std::vector<std::future<EpisodeLog>> futs;
    const std::size_t end = std::min(grid.size(), start + jobs);
    for (std::size_t i = start; i < end; ++i) {
      futs.push_back(std::async(std::launch::async, run_episode, static_cast<int>(i)));
    }
    for (std::size_t i = start; i < end; ++i) logs[i] = futs[i - start].get();
  }

  fs::create_directories(config.out_dir);
  std::ofstream csv(fs::path(config.out_dir) / "results.csv");
  csv << "d_theta_inj,d_p_inj,trial,success,e_p_mm,e_theta_deg,frames_to_restore\n";
  int successes = 0;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const EpisodeLog& log = logs[i];
    successes += log.success;
    csv << grid[i].d_theta << "," << grid[i].d_p << "," << grid[i].trial << ","
        << (log.success ? 1 : 0) << ",";
    if (std::isfinite(log.e_p_mm)) csv << log.e_p_mm;
    csv << ",";
    if (std::isfinite(log.e_theta_deg)) csv << log.e_theta_deg;
    csv << "," << log.frames_to_restore << "\n";
  }

  std::cout << "restored " << successes << "/" << grid.size() << " episodes\n";
  std::cout << std::fixed << std::setprecision(2);
  for (const double th : config.experiment.delta_theta_deg) {
    for (const double dp : config.experiment.delta_p_mm) {
      std::vector<double> eps, ets;
      for (std::size_t i = 0; i < grid.size(); ++i) {
        if (grid[i].d_theta == th && grid[i].d_p == dp && logs[i].success) {
          eps.push_back(logs[i].e_p_mm);
          ets.push_back(logs[i].e_theta_deg);
        }
      }
      const Stats ep = stats_of(eps), et = stats_of(ets);
      std::cout << "  dTheta " << th << " deg, dP " << dp << " mm: e_p " << ep.mean << " +- "
                << ep.stddev << " mm, e_theta " << et.mean << " +- " << et.stddev << " deg ("
                << ep.n << "/" << config.experiment.trials << ")\n";
    }
  }
  return 0;
}

void write_history_csv(const std::string& path, const std::vector<EpochStats>& history) {
  std::ofstream csv(path);
  csv << "phase,epoch,mean_loss,val_iou,lr_gen,lr_disc\n";
  for (const auto& e : history) {
    csv << e.phase << "," << e.epoch << "," << e.mean_loss << "," << e.val_iou << "," << e.lr_gen
        << "," << e.lr_disc << "\n";
  }
}

Json model_to_json(const TrainResult& result) {
  Json j;
  j["weights"] = std::vector<double>(result.model.weights.data(),
                                     result.model.weights.data() + result.model.weights.size());
  j["bias"] = result.model.bias;
  j["feature_mean"] = std::vector<double>(
      result.model.feature_mean.data(),
      result.model.feature_mean.data() + result.model.feature_mean.size());
  j["feature_scale"] = std::vector<double>(
      result.model.feature_scale.data(),
      result.model.feature_scale.data() + result.model.feature_scale.size());
  j["discriminator"] = {{"grid", result.disc.grid()},
                        {"weights", std::vector<double>(result.disc.weights.data(),
                                                        result.disc.weights.data() +
                                                            result.disc.weights.size())},
                        {"bias", result.disc.bias}};
  return j;
}

int cmd_train_toy(const RunConfig& config) {
  fs::create_directories(config.out_dir);

  ToyDataParams train_params = config.training.data;
  train_params.seed = derive_seed(config.seed, 11);
  ToyDataParams val_params = config.training.data;
  val_params.count = config.training.val_count;
  val_params.seed = derive_seed(config.seed, 12);
  const ToyDataset train_set = make_toy_dataset(train_params);
  const ToyDataset val_set = make_toy_dataset(val_params);

  TrainConfig tc = config.training.train;
  tc.seed = derive_seed(config.seed, 13);
  const TrainResult result = train_toy(train_set, val_set, tc, config.training.loss);

  write_history_csv((fs::path(config.out_dir) / "history.csv").string(), result.history);
  std::ofstream mj(fs::path(config.out_dir) / "model.json");
  mj << model_to_json(result).dump(2) << "\n";
  std::cout << "final val IoU " << result.history.back().val_iou << " after "
            << result.history.size() << " epochs\n";

  if (config.training.compare_dice_vs_ce) {
    std::ofstream cmp(fs::path(config.out_dir) / "comparison.csv");
    cmp << "seed,iou_dice,iou_ce\n";
    double dice_sum = 0.0, ce_sum = 0.0;
    for (int s = 0; s < config.training.compare_seeds; ++s) {
      ToyDataParams tp = config.training.data;
      tp.seed = derive_seed(config.seed, 100 + s);
      ToyDataParams vp = val_params;
      vp.seed = derive_seed(config.seed, 200 + s);
      const ToyDataset tr = make_toy_dataset(tp);
      const ToyDataset va = make_toy_dataset(vp);
      TrainConfig c2 = tc;
      c2.seed = derive_seed(config.seed, 300 + s);
      const double iou_dice =
          train_toy(tr, va, c2, LossChoice::kDice).history.back().val_iou;
      const double iou_ce = train_toy(tr, va, c2, LossChoice::kCe).history.back().val_iou;
      cmp << s << "," << iou_dice << "," << iou_ce << "\n";
      dice_sum += iou_dice;
      ce_sum += iou_ce;
    }
    const int n = config.training.compare_seeds;
    std::cout << "dice-vs-ce mean val IoU over " << n << " seeds: " << dice_sum / n << " vs "
              << ce_sum / n << "\n";
  }
  return 0;
}

int cmd_eval_losses(const RunConfig& config) {
  fs::create_directories(config.out_dir);
  const int n_masks = 20;
  const int side = 16;
  const double step = 1e-4;
  const FeatureEmbedding emb;
  const ToyDiscriminator disc(4, 5);
  const LossWeights w = config.training.train.weights;

  struct Row {
    const char* name;
    double value_sum = 0.0;
    double max_rel_err = 0.0;
  };
  std::vector<Row> rows = {{"dice"}, {"ce"}, {"focal"}, {"contextual"}, {"seg"}, {"gen"}};

  auto rng = make_rng(config.seed);
  std::uniform_real_distribution<double> up(0.1, 0.9);
  std::uniform_int_distribution<int> ug(0, 1);
  std::uniform_int_distribution<int> upix(0, side * side - 1);

  for (int m = 0; m < n_masks; ++m) {
    ProbMask pred(side, side), gt(side, side);
    for (Eigen::Index i = 0; i < pred.size(); ++i) {
      pred(i) = up(rng);
      gt(i) = ug(rng);
    }
    auto losses = [&](const ProbMask& p) {
      return std::array<LossGrad, 6>{dice_loss(p, gt),
                                     ce_loss(p, gt),
                                     focal_loss(p, gt, config.training.train.focal_gamma),
                                     contextual_loss(p, gt, emb),
                                     seg_loss(p, gt, emb, w),
                                     gen_loss_through_disc(p, gt, emb, disc, w)};
    };
    const auto at_point = losses(pred);
    for (int k = 0; k < 8; ++k) {
      const int pix = upix(rng);
      ProbMask plus = pred, minus = pred;
      plus(pix) += step;
      minus(pix) -= step;
      const auto lp = losses(plus);
      const auto lm = losses(minus);
      for (std::size_t li = 0; li < rows.size(); ++li) {
        const double fd = (lp[li].value - lm[li].value) / (2.0 * step);
        const double an = at_point[li].grad(pix);
        const double rel = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-8});
        rows[li].max_rel_err = std::max(rows[li].max_rel_err, rel);
      }
    }
    for (std::size_t li = 0; li < rows.size(); ++li) rows[li].value_sum += at_point[li].value;
  }

  std::ofstream csv(fs::path(config.out_dir) / "losses.csv");
  csv << "loss,mean_value,max_fd_rel_err\n";
  std::cout << std::setprecision(6);
  for (const auto& r : rows) {
    csv << r.name << "," << r.value_sum / n_masks << "," << r.max_rel_err << "\n";
    std::cout << std::setw(12) << r.name << "  mean " << std::setw(10) << r.value_sum / n_masks
              << "  max FD rel err " << r.max_rel_err << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Simulator-backed needle tracking and probe repositioning toolkit"};
  app.require_subcommand(1);
  CliOverrides cli;
  std::string sweep_dir;

  CLI::App* simulate = app.add_subcommand("simulate", "Render a sweep to a directory");
  add_common_options(simulate, cli);
  CLI::App* detect_cmd = app.add_subcommand("detect", "Run detection + metrics over a sweep");
  detect_cmd->add_option("sweep_dir", sweep_dir, "Sweep directory from 'simulate'")->required();
  add_common_options(detect_cmd, cli);
  CLI::App* experiment = app.add_subcommand("experiment", "Closed-loop repositioning grid");
  add_common_options(experiment, cli);
  CLI::App* train = app.add_subcommand("train-toy", "Train the toy segmenter");
  add_common_options(train, cli);
  CLI::App* eval_losses = app.add_subcommand("eval-losses", "Loss values + gradient checks");
  add_common_options(eval_losses, cli);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_name() == "CallForHelp" || e.get_name() == "CallForAllHelp" ||
        e.get_name() == "CallForVersion") {
      return app.exit(e);
    }
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfigError;
  }

  try {
    const RunConfig config = load_config(cli);
    if (simulate->parsed()) return cmd_simulate(config);
    if (detect_cmd->parsed()) return cmd_detect(config, sweep_dir);
    if (experiment->parsed()) return cmd_experiment(config);
    if (train->parsed()) return cmd_train_toy(config);
    if (eval_losses->parsed()) return cmd_eval_losses(config);
    return kExitConfigError;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfigError;
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << "\n";
    return kExitRuntimeError;
  }
}
