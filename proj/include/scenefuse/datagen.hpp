#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "scenefuse/geometry.hpp"
#include "scenefuse/proposals.hpp"

namespace scenefuse {

enum class Primitive { kPlane, kBox, kCylinder, kSphere };

struct ClassSpec {
  std::string name;
  Primitive shape = Primitive::kBox;
  Vec3 color = Vec3::Constant(0.5);
  Vec3 min_size = Vec3::Constant(0.2);  // box: width, depth, height; cylinder/sphere: diameter, -, height
  Vec3 max_size = Vec3::Constant(0.3);
};

struct SceneSpec {
  Vec3 room_extent = Vec3(2.4, 2.4, 0.6);
  int min_objects = 3;
  int max_objects = 6;
  std::vector<ClassSpec> vocabulary;  // index 0 floor, 1 wall
  double density = 400.0;             // points per square meter
  double position_jitter = 0.0;       // gaussian sigma, meters
  double color_noise = 0.02;
  double instance_color_variation = 0.05;
  double wall_margin = 0.15;
  double min_gap = 0.15;
  double adjacent_probability = 0.6;  // chance to plant a touching pair of different classes
  double adjacent_gap = 0.02;
  std::vector<std::string> novel_classes;

  void validate() const;
};

SceneSpec default_scene_spec();

struct GeneratedScene {
  PointCloud cloud;
  TriangleMesh mesh;          // analytic primitive surfaces
  std::vector<Box3D> boxes;   // one per object instance, label = class id
  std::vector<int> classes;   // class multiset, sorted
  bool has_adjacent_pair = false;
  double sampled_area = 0.0;  // visible surface area that was sampled
};

GeneratedScene gen_scene(const SceneSpec& spec, std::uint64_t seed);

struct ManifestScene {
  std::string file;
  std::uint64_t seed = 0;
  std::string split;  // "train" or "test"
  std::vector<Box3D> boxes;
  std::vector<int> classes;
  bool has_adjacent_pair = false;
};

struct Manifest {
  std::vector<std::string> vocabulary;
  std::vector<Vec3> colors;
  std::vector<std::string> base_classes;
  std::vector<std::string> novel_classes;
  std::vector<ManifestScene> scenes;
  std::uint64_t seed = 0;
  std::filesystem::path root;  // directory the file paths are relative to

  int class_index(const std::string& name) const;
  std::vector<int> base_ids() const;
  std::vector<int> novel_ids() const;
};

std::uint64_t scene_seed(std::uint64_t dataset_seed, int index);

// Writes scene_XXXX.ply files and manifest.json into `out_dir`. The last
// `n_test` scenes are marked as the test split.
Manifest gen_dataset(const SceneSpec& spec, int n_scenes, int n_test, std::uint64_t seed,
                     const std::filesystem::path& out_dir);

// In-memory variant used by tests and benchmarks.
struct Dataset {
  Manifest manifest;
  std::vector<GeneratedScene> scenes;
};
Dataset gen_dataset_in_memory(const SceneSpec& spec, int n_scenes, int n_test, std::uint64_t seed);

std::string manifest_to_json(const Manifest& manifest);
Manifest manifest_from_json(const std::string& text, const std::filesystem::path& root);
Manifest read_manifest(const std::filesystem::path& path);

// Spec JSON: flat keys overriding default_scene_spec().
SceneSpec scene_spec_from_json(const std::string& text);

}  // namespace scenefuse
