#include "usn/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>
#include <vector>

namespace usn {
namespace {

void write_pgm_bytes(const std::string& path, int height, int width,
                     const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_pgm: cannot open " + path);
  out << "P5\n" << width << " " << height << "\n255\n";
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write_pgm: write failed for " + path);
}

std::vector<std::uint8_t> read_pgm_bytes(const std::string& path, int& height, int& width) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("read_pgm: cannot open " + path);
  std::string magic;
  in >> magic;
  if (magic != "P5") throw std::runtime_error("read_pgm: not a binary PGM: " + path);
  int maxval = 0;
  // PGM headers may carry '#' comment lines between tokens.
  auto next_int = [&in, &path]() {
    int value = 0;
    while (true) {
      in >> std::ws;
      if (in.peek() == '#') {
        std::string comment;
        std::getline(in, comment);
        continue;
      }
      if (!(in >> value)) throw std::runtime_error("read_pgm: bad header in " + path);
      return value;
    }
  };
  width = next_int();
  height = next_int();
  maxval = next_int();
  if (maxval != 255) throw std::runtime_error("read_pgm: only 8-bit PGM supported: " + path);
  in.get();  // single whitespace after maxval
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(width) * height);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (in.gcount() != static_cast<std::streamsize>(bytes.size())) {
    throw std::runtime_error("read_pgm: truncated file " + path);
  }
  return bytes;
}

}  // namespace

void write_pgm(const std::string& path, const BinaryMask& mask) {
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(mask.rows()) * mask.cols());
  std::size_t k = 0;
  for (Eigen::Index v = 0; v < mask.rows(); ++v)
    for (Eigen::Index u = 0; u < mask.cols(); ++u)
      bytes[k++] = mask(v, u) ? 255 : 0;
  write_pgm_bytes(path, static_cast<int>(mask.rows()), static_cast<int>(mask.cols()), bytes);
}

void write_pgm(const std::string& path, const GrayImage& image) {
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(image.rows()) * image.cols());
  std::size_t k = 0;
  for (Eigen::Index v = 0; v < image.rows(); ++v)
    for (Eigen::Index u = 0; u < image.cols(); ++u) {
      const double x = std::clamp(image(v, u), 0.0, 1.0);
      bytes[k++] = static_cast<std::uint8_t>(std::lround(x * 255.0));
    }
  write_pgm_bytes(path, static_cast<int>(image.rows()), static_cast<int>(image.cols()), bytes);
}

BinaryMask read_pgm_mask(const std::string& path) {
  int h = 0, w = 0;
  const auto bytes = read_pgm_bytes(path, h, w);
  BinaryMask mask(h, w);
  std::size_t k = 0;
  for (int v = 0; v < h; ++v)
    for (int u = 0; u < w; ++u) mask(v, u) = bytes[k++] >= 128 ? 1 : 0;
  return mask;
}

GrayImage read_pgm_gray(const std::string& path) {
  int h = 0, w = 0;
  const auto bytes = read_pgm_bytes(path, h, w);
  GrayImage img(h, w);
  std::size_t k = 0;
  for (int v = 0; v < h; ++v)
    for (int u = 0; u < w; ++u) img(v, u) = bytes[k++] / 255.0;
  return img;
}

}  // namespace usn
