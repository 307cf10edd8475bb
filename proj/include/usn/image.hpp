#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <string>

namespace usn {

/// Raster layout: element (row, col) = (v, u); row 0 is the shallowest depth.
using GrayImage = Eigen::ArrayXXd;  // values in [0, 1]
using BinaryMask = Eigen::Array<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>;

inline BinaryMask zero_mask(int height, int width) { return BinaryMask::Zero(height, width); }

inline long mask_area(const BinaryMask& m) { return (m != 0).count(); }

inline BinaryMask threshold(const GrayImage& g, double t) {
  return (g >= t).cast<std::uint8_t>();
}

inline GrayImage to_gray(const BinaryMask& m) { return m.cast<double>(); }

/// 8-bit binary PGM (P5). Masks are written with 0/255 levels, gray images
/// scaled by 255 and rounded.
void write_pgm(const std::string& path, const BinaryMask& mask);
void write_pgm(const std::string& path, const GrayImage& image);
BinaryMask read_pgm_mask(const std::string& path);
GrayImage read_pgm_gray(const std::string& path);

}  // namespace usn
