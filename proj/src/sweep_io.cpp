#include "usn/sweep_io.hpp"

#include "usn/json_convert.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>

namespace usn {
namespace fs = std::filesystem;

namespace {

std::string frame_name(int i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "frame_%04d.pgm", i);
  return buf;
}

Json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("read_sweep: missing " + path.string());
  Json j;
  in >> j;
  return j;
}

void write_json_file(const fs::path& path, const Json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_sweep: cannot open " + path.string());
  out << j.dump(2) << "\n";
}

}  // namespace

void write_sweep(const std::string& dir, const SweepSpec& spec,
                 const std::vector<SweepFrame>& frames) {
  fs::create_directories(dir);
  const fs::path base(dir);

  Json poses = Json::array();
  Json gts = Json::array();
  for (std::size_t i = 0; i < frames.size(); ++i) {
    write_pgm((base / frame_name(static_cast<int>(i))).string(), frames[i].mask);
    poses.push_back(to_json(frames[i].pose));
    gts.push_back(to_json(frames[i].gt));
  }
  write_json_file(base / "poses.json", poses);
  write_json_file(base / "gt.json", gts);

  Json sj = {{"mode", spec.mode == SweepMode::kInsertion ? "insertion" : "transverse"},
             {"needle", to_json(spec.needle)},
             {"probe", to_json(spec.probe)},
             {"calibration", to_json(spec.cal)},
             {"degradation", to_json(spec.degradation)},
             {"insertion_start_mm", spec.insertion_start_mm},
             {"insertion_end_mm", spec.insertion_end_mm},
             {"seed", spec.seed},
             {"frame_count", frames.size()}};
  write_json_file(base / "spec.json", sj);
}

LoadedSweep read_sweep(const std::string& dir) {
  const fs::path base(dir);
  if (!fs::is_directory(base)) throw std::runtime_error("read_sweep: not a directory: " + dir);

  LoadedSweep sweep;
  const Json sj = read_json_file(base / "spec.json");
  const std::string mode = sj.value("mode", "insertion");
  sweep.spec.mode = mode == "transverse" ? SweepMode::kTransverse : SweepMode::kInsertion;
  if (sj.contains("needle")) sweep.spec.needle = needle_from_json(sj["needle"]);
  if (sj.contains("probe")) sweep.spec.probe = probe_from_json(sj["probe"]);
  if (sj.contains("calibration")) sweep.spec.cal = calibration_from_json(sj["calibration"]);
  if (sj.contains("degradation")) sweep.spec.degradation = degradation_from_json(sj["degradation"]);
  sweep.spec.insertion_start_mm = sj.value("insertion_start_mm", 10.0);
  sweep.spec.insertion_end_mm = sj.value("insertion_end_mm", 30.0);
  sweep.spec.seed = sj.value("seed", 0ULL);

  const Json poses = read_json_file(base / "poses.json");
  const Json gts = read_json_file(base / "gt.json");
  if (poses.size() != gts.size()) {
    throw std::runtime_error("read_sweep: poses.json and gt.json disagree on frame count");
  }
  for (std::size_t i = 0; i < poses.size(); ++i) {
    SweepFrame f;
    f.pose = pose_from_json(poses.at(i));
    f.gt = gt_from_json(gts.at(i));
    f.mask = read_pgm_mask((base / frame_name(static_cast<int>(i))).string());
    sweep.spec.poses.push_back(f.pose);
    sweep.frames.push_back(std::move(f));
  }
  return sweep;
}

}  // namespace usn
