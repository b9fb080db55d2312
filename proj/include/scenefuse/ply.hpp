#pragma once

#include <filesystem>
#include <string>

#include "scenefuse/geometry.hpp"

namespace scenefuse {

// ASCII PLY subset: one `vertex` element with properties
// `x y z red green blue sem inst`; colors in [0,1], -1 marks a missing label.
std::string encode_ply(const PointCloud& cloud);
PointCloud decode_ply(const std::string& text);
void write_ply(const std::filesystem::path& path, const PointCloud& cloud);
PointCloud read_ply(const std::filesystem::path& path);

}  // namespace scenefuse
