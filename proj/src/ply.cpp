#include "scenefuse/ply.hpp"

#include <charconv>
#include <cstdio>
#include <sstream>
#include <vector>

#include "binary_io.hpp"

namespace scenefuse {

namespace {

const char* const kProperties[] = {"x", "y", "z", "red", "green", "blue", "sem", "inst"};

void append_number(std::string& out, double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  out += buf;
}

}  // namespace

std::string encode_ply(const PointCloud& cloud) {
  cloud.validate();
  std::string out = "ply\nformat ascii 1.0\nelement vertex " + std::to_string(cloud.size()) + "\n";
  out +=
      "property float x\nproperty float y\nproperty float z\n"
      "property float red\nproperty float green\nproperty float blue\n"
      "property int sem\nproperty int inst\nend_header\n";
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    for (int a = 0; a < 3; ++a) {
      append_number(out, cloud.positions[i][a]);
      out += ' ';
    }
    for (int a = 0; a < 3; ++a) {
      append_number(out, cloud.colors[i][a]);
      out += ' ';
    }
    out += std::to_string(cloud.sem_label[i]);
    out += ' ';
    out += std::to_string(cloud.inst_label[i]);
    out += '\n';
  }
  return out;
}

PointCloud decode_ply(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "ply") throw Error(ErrorCode::kFormat, "missing ply magic");
  if (!std::getline(in, line) || line.rfind("format ascii 1.0", 0) != 0) {
    throw Error(ErrorCode::kFormat, "only ascii 1.0 PLY is supported");
  }
  std::size_t count = 0;
  bool in_vertex = false;
  std::vector<std::string> props;
  while (std::getline(in, line)) {
    if (line == "end_header") break;
    std::istringstream ls(line);
    std::string word;
    ls >> word;
    if (word == "comment" || word.empty()) continue;
    if (word == "element") {
      std::string name;
      ls >> name >> count;
      in_vertex = name == "vertex";
      if (!in_vertex) throw Error(ErrorCode::kFormat, "unsupported PLY element " + name);
    } else if (word == "property" && in_vertex) {
      std::string type, name;
      ls >> type >> name;
      props.push_back(name);
    } else {
      throw Error(ErrorCode::kFormat, "unsupported PLY header line: " + line);
    }
  }
  if (props.size() != std::size(kProperties)) {
    throw Error(ErrorCode::kFormat, "expected properties x y z red green blue sem inst");
  }
  for (std::size_t i = 0; i < props.size(); ++i) {
    if (props[i] != kProperties[i]) throw Error(ErrorCode::kFormat, "unexpected property " + props[i]);
  }

  PointCloud cloud;
  cloud.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    if (!std::getline(in, line)) throw Error(ErrorCode::kFormat, "truncated PLY body");
    const char* p = line.data();
    const char* end = line.data() + line.size();
    double v[6];
    long labels[2];
    auto skip = [&] {
      while (p < end && (*p == ' ' || *p == '\t' || *p == '\r')) ++p;
    };
    for (double& x : v) {
      skip();
      char* next = nullptr;
      x = std::strtod(p, &next);
      if (next == p) throw Error(ErrorCode::kFormat, "bad PLY number on line " + std::to_string(i));
      p = next;
    }
    for (long& x : labels) {
      skip();
      auto res = std::from_chars(p, end, x);
      if (res.ec != std::errc()) throw Error(ErrorCode::kFormat, "bad PLY label on line " + std::to_string(i));
      p = res.ptr;
    }
    cloud.push_back({v[0], v[1], v[2]}, {v[3], v[4], v[5]}, static_cast<int>(labels[0]),
                    static_cast<int>(labels[1]));
  }
  cloud.validate();
  return cloud;
}

void write_ply(const std::filesystem::path& path, const PointCloud& cloud) {
  io::write_file(path, encode_ply(cloud));
}

PointCloud read_ply(const std::filesystem::path& path) { return decode_ply(io::read_file(path)); }

}  // namespace scenefuse
