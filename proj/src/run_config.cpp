#include "usn/run_config.hpp"

#include "usn/json_convert.hpp"

#include <fstream>

namespace usn {
namespace {

LossChoice loss_from_string(const std::string& s) {
  if (s == "ce") return LossChoice::kCe;
  if (s == "focal") return LossChoice::kFocal;
  if (s == "dice") return LossChoice::kDice;
  if (s == "dice_cl") return LossChoice::kDiceCl;
  if (s == "focal_cl") return LossChoice::kFocalCl;
  throw ConfigError("unknown loss choice: " + s);
}

std::string loss_to_string(LossChoice c) {
  switch (c) {
    case LossChoice::kCe: return "ce";
    case LossChoice::kFocal: return "focal";
    case LossChoice::kDice: return "dice";
    case LossChoice::kDiceCl: return "dice_cl";
    case LossChoice::kFocalCl: return "focal_cl";
  }
  return "dice";
}

RunConfig from_json(const Json& j) {
  RunConfig c;
  try {
    if (j.contains("scene")) {
      const Json& s = j["scene"];
      if (s.contains("needle")) c.scene.needle = needle_from_json(s["needle"]);
      if (s.contains("probe")) c.scene.probe = probe_from_json(s["probe"]);
      if (s.contains("calibration")) c.scene.cal = calibration_from_json(s["calibration"]);
    }
    if (j.contains("sweep")) {
      const Json& s = j["sweep"];
      const std::string mode = s.value("mode", "insertion");
      if (mode != "insertion" && mode != "transverse") {
        throw ConfigError("sweep.mode must be 'insertion' or 'transverse'");
      }
      c.sweep.mode = mode == "transverse" ? SweepMode::kTransverse : SweepMode::kInsertion;
      c.sweep.frames = s.value("frames", c.sweep.frames);
      c.sweep.insertion_start_mm = s.value("insertion_start_mm", c.sweep.insertion_start_mm);
      c.sweep.insertion_end_mm = s.value("insertion_end_mm", c.sweep.insertion_end_mm);
      c.sweep.transverse_extent_mm = s.value("transverse_extent_mm", c.sweep.transverse_extent_mm);
      if (s.contains("initial_pose")) c.sweep.initial_pose = pose_from_json(s["initial_pose"]);
      if (c.sweep.frames < 1) throw ConfigError("sweep.frames must be >= 1");
      if (c.sweep.mode == SweepMode::kTransverse && c.sweep.frames < 2) {
        throw ConfigError("sweep: transverse mode needs >= 2 poses");
      }
    }
    if (j.contains("degradation")) c.degradation = degradation_from_json(j["degradation"]);
    if (j.contains("pipeline")) {
      const Json& p = j["pipeline"];
      c.detect.theta_threshold_deg = p.value("theta_slo_threshold_deg", c.detect.theta_threshold_deg);
      c.detect.min_area_px = p.value("min_area_px", c.detect.min_area_px);
      c.detect.component_min_area_px =
          p.value("component_min_area_px", c.detect.component_min_area_px);
      const std::string side = p.value("insertion_side", "left");
      if (side != "left" && side != "right") {
        throw ConfigError("pipeline.insertion_side must be 'left' or 'right'");
      }
      c.detect.insertion_side = side == "left" ? InsertionSide::kLeft : InsertionSide::kRight;
      c.t_con = p.value("t_con", c.t_con);
      if (c.t_con <= 0.0 || c.t_con > 1.0) throw ConfigError("pipeline.t_con must be in (0,1]");
    }
    if (j.contains("monitor")) {
      const Json& m = j["monitor"];
      c.monitor.n_ring = m.value("n_ring", c.monitor.n_ring);
      c.monitor.t_mis = m.value("t_mis", c.monitor.t_mis);
      if (c.monitor.n_ring < 1) throw ConfigError("monitor.n_ring must be >= 1");
      if (c.monitor.t_mis <= 0.0 || c.monitor.t_mis >= 1.0) {
        throw ConfigError("monitor.t_mis must be in (0,1)");
      }
    }
    if (j.contains("dbscan")) {
      const Json& d = j["dbscan"];
      c.dbscan.eps_mm = d.value("eps_mm", c.dbscan.eps_mm);
      c.dbscan.min_pts = d.value("min_pts", c.dbscan.min_pts);
      if (c.dbscan.eps_mm <= 0.0 || c.dbscan.min_pts < 1) {
        throw ConfigError("dbscan: eps_mm must be > 0 and min_pts >= 1");
      }
    }
    if (j.contains("ransac")) {
      const Json& r = j["ransac"];
      c.ransac.iterations = r.value("iterations", c.ransac.iterations);
      c.ransac.inlier_threshold_mm = r.value("inlier_threshold_mm", c.ransac.inlier_threshold_mm);
      c.ransac.min_inliers = r.value("min_inliers", c.ransac.min_inliers);
      c.ransac.seed = r.value("seed", c.ransac.seed);
      if (c.ransac.iterations < 1 || c.ransac.inlier_threshold_mm <= 0.0 || c.ransac.min_inliers < 2) {
        throw ConfigError("ransac: iterations >= 1, threshold > 0, min_inliers >= 2");
      }
    }
    if (j.contains("experiment")) {
      const Json& e = j["experiment"];
      if (e.contains("delta_theta_deg"))
        c.experiment.delta_theta_deg = e["delta_theta_deg"].get<std::vector<double>>();
      if (e.contains("delta_p_mm"))
        c.experiment.delta_p_mm = e["delta_p_mm"].get<std::vector<double>>();
      c.experiment.trials = e.value("trials", c.experiment.trials);
      c.experiment.perturb_frame = e.value("perturb_frame", c.experiment.perturb_frame);
      c.experiment.max_monitor_frames = e.value("max_monitor_frames", c.experiment.max_monitor_frames);
      c.experiment.min_valid_slices = e.value("min_valid_slices", c.experiment.min_valid_slices);
      c.experiment.verify_min_length_ratio =
          e.value("verify_min_length_ratio", c.experiment.verify_min_length_ratio);
      if (e.contains("search")) {
        c.experiment.search.extent_mm = e["search"].value("extent_mm", c.experiment.search.extent_mm);
        c.experiment.search.step_mm = e["search"].value("step_mm", c.experiment.search.step_mm);
      }
      if (c.experiment.trials < 1) throw ConfigError("experiment.trials must be >= 1");
      if (c.experiment.search.extent_mm <= 0.0 || c.experiment.search.step_mm <= 0.0) {
        throw ConfigError("experiment.search: extent and step must be > 0");
      }
    }
    if (j.contains("losses")) {
      const Json& l = j["losses"];
      c.training.train.weights.lambda_dice = l.value("lambda_dice", 1.0);
      c.training.train.weights.lambda_cl = l.value("lambda_cl", 0.001);
      c.training.train.weights.lambda_adv = l.value("lambda_adv", 0.1);
      c.training.train.focal_gamma = l.value("focal_gamma", 2.0);
      if (c.training.train.weights.lambda_dice < 0 || c.training.train.weights.lambda_cl < 0 ||
          c.training.train.weights.lambda_adv < 0) {
        throw ConfigError("losses: weights must be non-negative");
      }
    }
    if (j.contains("train")) {
      const Json& t = j["train"];
      if (t.contains("phase1")) {
        c.training.train.phase1.epochs = t["phase1"].value("epochs", 40);
        c.training.train.phase1.batch_size = t["phase1"].value("batch_size", 8);
        c.training.train.phase1.lr = t["phase1"].value("lr", 1e-4);
      }
      if (t.contains("phase2")) {
        c.training.train.phase2.epochs = t["phase2"].value("epochs", 40);
        c.training.train.phase2.batch_size = t["phase2"].value("batch_size", 8);
        c.training.train.phase2.lr_gen = t["phase2"].value("lr_gen", 5e-5);
        c.training.train.phase2.lr_disc = t["phase2"].value("lr_disc", 1e-5);
        c.training.train.phase2.halving_period_epochs = t["phase2"].value("halving_period_epochs", 8);
      }
      c.training.train.run_phase2 = t.value("run_phase2", false);
      c.training.train.feature_gain = t.value("feature_gain", c.training.train.feature_gain);
      const std::string opt = t.value("optimizer", "sgd");
      if (opt != "adam" && opt != "sgd") throw ConfigError("train.optimizer must be 'adam' or 'sgd'");
      c.training.train.optimizer = opt == "adam" ? Optimizer::kAdam : Optimizer::kSgd;
      c.training.loss = loss_from_string(t.value("loss", "dice"));
      c.training.compare_dice_vs_ce = t.value("compare_dice_vs_ce", false);
      c.training.compare_seeds = t.value("compare_seeds", 5);
      if (t.contains("dataset")) {
        const Json& d = t["dataset"];
        c.training.data.count = d.value("count", c.training.data.count);
        c.training.data.image_px = d.value("image_px", c.training.data.image_px);
        c.training.data.pixel_spacing_mm = d.value("pixel_spacing_mm", c.training.data.pixel_spacing_mm);
        c.training.data.background_level = d.value("background_level", c.training.data.background_level);
        c.training.data.shaft_level = d.value("shaft_level", c.training.data.shaft_level);
        c.training.data.distractor_level = d.value("distractor_level", c.training.data.distractor_level);
        c.training.data.speckle_sigma = d.value("speckle_sigma", c.training.data.speckle_sigma);
        c.training.data.distractor_count = d.value("distractor_count", c.training.data.distractor_count);
        c.training.data.needle_angle_range_deg =
            d.value("needle_angle_range_deg", c.training.data.needle_angle_range_deg);
        c.training.val_count = d.value("val_count", c.training.val_count);
        if (c.training.data.count < 1 || c.training.data.image_px < 16) {
          throw ConfigError("train.dataset: count >= 1 and image_px >= 16 required");
        }
      }
      const auto& p1 = c.training.train.phase1;
      const auto& p2 = c.training.train.phase2;
      if (p1.epochs < 1 || p1.batch_size < 1 || p1.lr <= 0 || p2.epochs < 0 ||
          p2.batch_size < 1 || p2.lr_gen <= 0 || p2.lr_disc <= 0 || p2.halving_period_epochs < 1) {
        throw ConfigError("train: phase parameters must be positive");
      }
    }
    c.seed = j.value("seed", c.seed);
    c.out_dir = j.value("out_dir", c.out_dir);
    c.jobs = j.value("jobs", c.jobs);
    if (c.jobs < 1) throw ConfigError("jobs must be >= 1");
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  } catch (const std::runtime_error& e) {
    throw ConfigError(e.what());
  }
  return c;
}

}  // namespace

RunConfig parse_config_text(const std::string& json_text) {
  Json j;
  try {
    j = Json::parse(json_text);
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  return from_json(j);
}

RunConfig parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_config_text(text);
}

std::string config_to_json_text(const RunConfig& c) {
  Json j;
  j["scene"] = {{"needle", to_json(c.scene.needle)},
                {"probe", to_json(c.scene.probe)},
                {"calibration", to_json(c.scene.cal)}};
  j["sweep"] = {{"mode", c.sweep.mode == SweepMode::kInsertion ? "insertion" : "transverse"},
                {"frames", c.sweep.frames},
                {"insertion_start_mm", c.sweep.insertion_start_mm},
                {"insertion_end_mm", c.sweep.insertion_end_mm},
                {"transverse_extent_mm", c.sweep.transverse_extent_mm},
                {"initial_pose", to_json(c.sweep.initial_pose)}};
  j["degradation"] = to_json(c.degradation);
  j["pipeline"] = {{"theta_slo_threshold_deg", c.detect.theta_threshold_deg},
                   {"min_area_px", c.detect.min_area_px},
                   {"component_min_area_px", c.detect.component_min_area_px},
                   {"insertion_side", c.detect.insertion_side == InsertionSide::kLeft ? "left" : "right"},
                   {"t_con", c.t_con}};
  j["monitor"] = {{"n_ring", c.monitor.n_ring}, {"t_mis", c.monitor.t_mis}};
  j["dbscan"] = {{"eps_mm", c.dbscan.eps_mm}, {"min_pts", c.dbscan.min_pts}};
  j["ransac"] = {{"iterations", c.ransac.iterations},
                 {"inlier_threshold_mm", c.ransac.inlier_threshold_mm},
                 {"min_inliers", c.ransac.min_inliers},
                 {"seed", c.ransac.seed}};
  j["experiment"] = {{"delta_theta_deg", c.experiment.delta_theta_deg},
                     {"delta_p_mm", c.experiment.delta_p_mm},
                     {"trials", c.experiment.trials},
                     {"perturb_frame", c.experiment.perturb_frame},
                     {"max_monitor_frames", c.experiment.max_monitor_frames},
                     {"min_valid_slices", c.experiment.min_valid_slices},
                     {"verify_min_length_ratio", c.experiment.verify_min_length_ratio},
                     {"search",
                      {{"extent_mm", c.experiment.search.extent_mm},
                       {"step_mm", c.experiment.search.step_mm}}}};
  j["losses"] = {{"lambda_dice", c.training.train.weights.lambda_dice},
                 {"lambda_cl", c.training.train.weights.lambda_cl},
                 {"lambda_adv", c.training.train.weights.lambda_adv},
                 {"focal_gamma", c.training.train.focal_gamma}};
  j["train"] = {{"phase1",
                 {{"epochs", c.training.train.phase1.epochs},
                  {"batch_size", c.training.train.phase1.batch_size},
                  {"lr", c.training.train.phase1.lr}}},
                {"phase2",
                 {{"epochs", c.training.train.phase2.epochs},
                  {"batch_size", c.training.train.phase2.batch_size},
                  {"lr_gen", c.training.train.phase2.lr_gen},
                  {"lr_disc", c.training.train.phase2.lr_disc},
                  {"halving_period_epochs", c.training.train.phase2.halving_period_epochs}}},
                {"run_phase2", c.training.train.run_phase2},
                {"optimizer", c.training.train.optimizer == Optimizer::kAdam ? "adam" : "sgd"},
                {"feature_gain", c.training.train.feature_gain},
                {"loss", loss_to_string(c.training.loss)},
                {"compare_dice_vs_ce", c.training.compare_dice_vs_ce},
                {"compare_seeds", c.training.compare_seeds},
                {"dataset",
                 {{"count", c.training.data.count},
                  {"image_px", c.training.data.image_px},
                  {"pixel_spacing_mm", c.training.data.pixel_spacing_mm},
                  {"background_level", c.training.data.background_level},
                  {"shaft_level", c.training.data.shaft_level},
                  {"distractor_level", c.training.data.distractor_level},
                  {"speckle_sigma", c.training.data.speckle_sigma},
                  {"distractor_count", c.training.data.distractor_count},
                  {"needle_angle_range_deg", c.training.data.needle_angle_range_deg},
                  {"val_count", c.training.val_count}}}};
  j["seed"] = c.seed;
  j["out_dir"] = c.out_dir;
  j["jobs"] = c.jobs;
  return j.dump(2);
}

}  // namespace usn
