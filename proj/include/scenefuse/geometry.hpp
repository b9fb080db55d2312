#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <vector>

namespace scenefuse {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Triangle = std::array<int, 3>;

inline constexpr int kUnlabeled = -1;
inline constexpr int kNoInstance = -1;
inline constexpr int kNoPoint = -1;

// Scene geometry with per-point labels. Parallel arrays, all of equal length.
struct PointCloud {
  std::vector<Vec3> positions;
  std::vector<Vec3> colors;  // rgb in [0,1]
  std::vector<int> sem_label;
  std::vector<int> inst_label;

  std::size_t size() const { return positions.size(); }
  bool empty() const { return positions.empty(); }
  void push_back(const Vec3& p, const Vec3& c, int sem = kUnlabeled, int inst = kNoInstance);
  void reserve(std::size_t n);
  PointCloud subset(std::span<const int> indices) const;
  // Throws kShapeMismatch / kDegenerateInput when the invariants do not hold.
  void validate() const;
};

struct TriangleMesh {
  std::vector<Vec3> vertices;
  std::vector<Triangle> triangles;
  std::vector<Vec3> vertex_color;
  std::vector<int> vertex_point;  // source point index or kNoPoint

  void validate() const;
};

struct Aabb3 {
  Vec3 min = Vec3::Zero();
  Vec3 max = Vec3::Zero();

  static Aabb3 of(std::span<const Vec3> points);
  Vec3 center() const { return 0.5 * (min + max); }
  Vec3 extent() const { return max - min; }
  double volume() const;
  bool contains(const Vec3& p) const;
};

struct CameraIntrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 1;
  int height = 1;

  void validate() const;
};

// World-to-camera transform. Camera looks down +z, +x right, +y down.
struct CameraPose {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  static CameraPose look_at(const Vec3& eye, const Vec3& target, const Vec3& up = Vec3::UnitZ());
  Vec3 to_camera(const Vec3& world) const { return rotation * world + translation; }
  Vec3 to_world(const Vec3& cam) const { return rotation.transpose() * (cam - translation); }
  Vec3 center() const { return -rotation.transpose() * translation; }
  void validate() const;
};

struct Camera {
  CameraIntrinsics intrinsics;
  CameraPose pose;
};

struct Pixel {
  double u = 0.0;
  double v = 0.0;
  double depth = 0.0;
};

std::optional<Pixel> project_point(const Vec3& p, const CameraIntrinsics& intrinsics,
                                   const CameraPose& pose);
Vec3 unproject_pixel(const Pixel& px, const CameraIntrinsics& intrinsics, const CameraPose& pose);

// Bowyer-Watson with a symbolic point at infinity, so the result always
// covers the convex hull. Throws kDegenerateInput on <3 points, all-collinear
// input, or exact duplicate points.
std::vector<Triangle> delaunay_2d(std::span<const Vec2> points);

struct MeshParams {
  double normal_angle_deg = 15.0;
  double plane_distance = 0.02;
  double neighbor_radius = 0.08;
  int normal_k = 10;
  double seed_curvature = 0.05;
};

struct MeshStats {
  std::size_t patches = 0;
  std::size_t skipped_patches = 0;
  std::size_t skipped_points = 0;
  std::size_t dropped_triangles = 0;
};

TriangleMesh mesh_scene(const PointCloud& cloud, const MeshParams& params = {},
                        MeshStats* stats = nullptr);

struct RingParams {
  int width = 256;
  int height = 256;
  double fov_deg = 90.0;
  // Horizontal camera distance from the center, as a fraction of the smaller
  // horizontal half-extent of the bounds.
  double radius_factor = 0.75;
};

std::vector<Camera> camera_ring(const Aabb3& bounds, int n_views, double elevation,
                                const RingParams& params = {});

inline double triangle_area(const Vec3& a, const Vec3& b, const Vec3& c) {
  return 0.5 * (b - a).cross(c - a).norm();
}

}  // namespace scenefuse
