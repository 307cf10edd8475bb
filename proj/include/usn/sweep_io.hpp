#pragma once

#include "usn/geometry.hpp"
#include "usn/sim_scene.hpp"

#include <string>
#include <vector>

namespace usn {

/// Directory layout: frame_%04d.pgm (binary P5), poses.json (4x4 row-major
/// matrices, mm), gt.json (per-frame annotations), spec.json (scene echo).
void write_sweep(const std::string& dir, const SweepSpec& spec,
                 const std::vector<SweepFrame>& frames);

struct LoadedSweep {
  SweepSpec spec;
  std::vector<SweepFrame> frames;
};

/// Throws std::runtime_error on missing or malformed sweep directories.
LoadedSweep read_sweep(const std::string& dir);

}  // namespace usn
