#include "scenefuse/image.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "binary_io.hpp"

namespace scenefuse {

std::string encode_ppm(const RgbImage& image) {
  std::string out = "P6\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
  out.reserve(out.size() + image.data.size());
  for (float v : image.data) {
    const long q = std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f);
    out.push_back(static_cast<char>(static_cast<unsigned char>(q)));
  }
  return out;
}

RgbImage decode_ppm(const std::string& bytes) {
  std::size_t pos = 0;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto token = [&] {
    skip_space();
    const std::size_t start = pos;
    while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    return bytes.substr(start, pos - start);
  };
  if (token() != "P6") throw Error(ErrorCode::kFormat, "not a binary PPM (P6)");
  int w = 0, h = 0, maxval = 0;
  try {
    w = std::stoi(token());
    h = std::stoi(token());
    maxval = std::stoi(token());
  } catch (const std::exception&) {
    throw Error(ErrorCode::kFormat, "malformed PPM header");
  }
  if (w <= 0 || h <= 0 || maxval != 255) throw Error(ErrorCode::kFormat, "unsupported PPM header");
  ++pos;  // single whitespace after maxval
  const std::size_t need = static_cast<std::size_t>(w) * h * 3;
  if (bytes.size() < pos + need) throw Error(ErrorCode::kFormat, "truncated PPM data");
  RgbImage image(w, h);
  for (std::size_t i = 0; i < need; ++i) {
    image.data[i] = static_cast<float>(static_cast<unsigned char>(bytes[pos + i])) / 255.0f;
  }
  return image;
}

void write_ppm(const std::filesystem::path& path, const RgbImage& image) {
  io::write_file(path, encode_ppm(image));
}

RgbImage read_ppm(const std::filesystem::path& path) { return decode_ppm(io::read_file(path)); }

}  // namespace scenefuse
