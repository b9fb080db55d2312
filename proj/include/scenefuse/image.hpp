#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "scenefuse/geometry.hpp"

namespace scenefuse {

// Interleaved RGB, row-major, channel values in [0,1].
struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<float> data;

  RgbImage() = default;
  RgbImage(int w, int h) : width(w), height(h), data(static_cast<std::size_t>(w) * h * 3, 0.0f) {}

  Vec3 at(int x, int y) const {
    const std::size_t i = (static_cast<std::size_t>(y) * width + x) * 3;
    return {data[i], data[i + 1], data[i + 2]};
  }
  void set(int x, int y, const Vec3& c) {
    const std::size_t i = (static_cast<std::size_t>(y) * width + x) * 3;
    data[i] = static_cast<float>(c.x());
    data[i + 1] = static_cast<float>(c.y());
    data[i + 2] = static_cast<float>(c.z());
  }
};

// Binary P6, 8-bit, no gamma.
std::string encode_ppm(const RgbImage& image);
RgbImage decode_ppm(const std::string& bytes);
void write_ppm(const std::filesystem::path& path, const RgbImage& image);
RgbImage read_ppm(const std::filesystem::path& path);

}  // namespace scenefuse
