#include "scenefuse/geometry.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <queue>
#include <string>
#include <unordered_map>

#include "scenefuse/error.hpp"
#include "scenefuse/spatial.hpp"

namespace scenefuse {

void PointCloud::push_back(const Vec3& p, const Vec3& c, int sem, int inst) {
  positions.push_back(p);
  colors.push_back(c);
  sem_label.push_back(sem);
  inst_label.push_back(inst);
}

void PointCloud::reserve(std::size_t n) {
  positions.reserve(n);
  colors.reserve(n);
  sem_label.reserve(n);
  inst_label.reserve(n);
}

PointCloud PointCloud::subset(std::span<const int> indices) const {
  PointCloud out;
  out.reserve(indices.size());
  for (int i : indices) out.push_back(positions[i], colors[i], sem_label[i], inst_label[i]);
  return out;
}

void PointCloud::validate() const {
  const std::size_t n = positions.size();
  if (colors.size() != n || sem_label.size() != n || inst_label.size() != n) {
    throw Error(ErrorCode::kShapeMismatch, "point cloud arrays differ in length");
  }
  for (const auto& p : positions) {
    if (!p.allFinite()) throw Error(ErrorCode::kDegenerateInput, "non-finite point position");
  }
}

void TriangleMesh::validate() const {
  const std::size_t n = vertices.size();
  if (vertex_color.size() != n || vertex_point.size() != n) {
    throw Error(ErrorCode::kShapeMismatch, "mesh vertex arrays differ in length");
  }
  for (const auto& t : triangles) {
    for (int v : t) {
      if (v < 0 || static_cast<std::size_t>(v) >= n) {
        throw Error(ErrorCode::kDegenerateInput, "triangle index out of range");
      }
    }
    if (!(triangle_area(vertices[t[0]], vertices[t[1]], vertices[t[2]]) > 0.0)) {
      throw Error(ErrorCode::kDegenerateInput, "zero-area triangle");
    }
  }
}

Aabb3 Aabb3::of(std::span<const Vec3> points) {
  Aabb3 box;
  if (points.empty()) return box;
  box.min = box.max = points.front();
  for (const auto& p : points) {
    box.min = box.min.cwiseMin(p);
    box.max = box.max.cwiseMax(p);
  }
  return box;
}

double Aabb3::volume() const {
  const Vec3 e = extent().cwiseMax(0.0);
  return e.x() * e.y() * e.z();
}

bool Aabb3::contains(const Vec3& p) const {
  return (p.array() >= min.array()).all() && (p.array() <= max.array()).all();
}

void CameraIntrinsics::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) throw Error(ErrorCode::kBadParam, "focal lengths must be positive");
  if (width < 1 || height < 1) throw Error(ErrorCode::kBadParam, "image size must be at least 1x1");
}

CameraPose CameraPose::look_at(const Vec3& eye, const Vec3& target, const Vec3& up) {
  const Vec3 forward = (target - eye).normalized();
  Vec3 right = forward.cross(up);
  if (right.norm() < 1e-9) right = forward.cross(Vec3::UnitY());
  if (right.norm() < 1e-9) right = forward.cross(Vec3::UnitX());
  right.normalize();
  const Vec3 down = forward.cross(right).normalized();
  CameraPose pose;
  pose.rotation.row(0) = right.transpose();
  pose.rotation.row(1) = down.transpose();
  pose.rotation.row(2) = forward.transpose();
  pose.translation = -pose.rotation * eye;
  return pose;
}

void CameraPose::validate() const {
  if ((rotation * rotation.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff() > 1e-6 ||
      std::abs(rotation.determinant() - 1.0) > 1e-6) {
    throw Error(ErrorCode::kBadParam, "camera rotation is not orthonormal");
  }
  if (!translation.allFinite()) throw Error(ErrorCode::kBadParam, "non-finite camera translation");
}

std::optional<Pixel> project_point(const Vec3& p, const CameraIntrinsics& intrinsics,
                                   const CameraPose& pose) {
  // Homogeneous K * [R | t] * (x, y, z, 1).
  Eigen::Matrix4d extrinsic = Eigen::Matrix4d::Identity();
  extrinsic.topLeftCorner<3, 3>() = pose.rotation;
  extrinsic.topRightCorner<3, 1>() = pose.translation;
  Eigen::Matrix<double, 3, 4> k = Eigen::Matrix<double, 3, 4>::Zero();
  k(0, 0) = intrinsics.fx;
  k(0, 2) = intrinsics.cx;
  k(1, 1) = intrinsics.fy;
  k(1, 2) = intrinsics.cy;
  k(2, 2) = 1.0;
  const Vec3 h = k * extrinsic * p.homogeneous();
  if (!(h.z() > 0.0)) return std::nullopt;
  return Pixel{h.x() / h.z(), h.y() / h.z(), h.z()};
}

Vec3 unproject_pixel(const Pixel& px, const CameraIntrinsics& intrinsics, const CameraPose& pose) {
  if (!(px.depth > 0.0)) throw Error(ErrorCode::kDegenerateDepth, "pixel depth must be positive");
  const Vec3 cam((px.u - intrinsics.cx) / intrinsics.fx * px.depth,
                 (px.v - intrinsics.cy) / intrinsics.fy * px.depth, px.depth);
  return pose.to_world(cam);
}

// ---------------------------------------------------------------------------
// Delaunay triangulation

namespace {

constexpr int kInf = -1;

using Real = long double;

struct P2 {
  Real x;
  Real y;
};

Real orient(const P2& a, const P2& b, const P2& c) {
  return (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x);
}

// > 0 when d lies inside the circumcircle of counter-clockwise (a, b, c).
Real incircle(const P2& a, const P2& b, const P2& c, const P2& d) {
  const Real adx = a.x - d.x, ady = a.y - d.y;
  const Real bdx = b.x - d.x, bdy = b.y - d.y;
  const Real cdx = c.x - d.x, cdy = c.y - d.y;
  const Real ad = adx * adx + ady * ady;
  const Real bd = bdx * bdx + bdy * bdy;
  const Real cd = cdx * cdx + cdy * cdy;
  return adx * (bdy * cd - bd * cdy) - ady * (bdx * cd - bd * cdx) + ad * (bdx * cdy - bdy * cdx);
}

class Triangulator {
 public:
  explicit Triangulator(std::vector<P2> pts) : pts_(std::move(pts)) {}

  void seed(int a, int b, int c) {
    if (orient(pts_[a], pts_[b], pts_[c]) < 0) std::swap(b, c);
    add({a, b, c});
    add({b, a, kInf});
    add({c, b, kInf});
    add({a, c, kInf});
  }

  void insert(int p) {
    const int start = locate(p);
    std::vector<int> cavity{start};
    in_cavity_.clear();
    in_cavity_[start] = true;
    for (std::size_t i = 0; i < cavity.size(); ++i) {
      const auto& t = tris_[cavity[i]].v;
      for (int e = 0; e < 3; ++e) {
        const int nb = neighbor(t[e], t[(e + 1) % 3]);
        if (nb < 0 || in_cavity_.count(nb)) continue;
        if (conflicts(nb, p)) {
          in_cavity_[nb] = true;
          cavity.push_back(nb);
        }
      }
    }
    std::vector<std::array<int, 2>> boundary;
    for (int ti : cavity) {
      const auto t = tris_[ti].v;
      for (int e = 0; e < 3; ++e) {
        const int nb = neighbor(t[e], t[(e + 1) % 3]);
        if (nb < 0 || !in_cavity_.count(nb)) boundary.push_back({t[e], t[(e + 1) % 3]});
      }
    }
    for (int ti : cavity) remove(ti);
    for (const auto& [u, v] : boundary) {
      if (u == kInf) {
        add({v, p, kInf});
      } else if (v == kInf) {
        add({p, u, kInf});
      } else {
        add({u, v, p});
      }
    }
  }

  std::vector<Triangle> finite() const {
    std::vector<Triangle> out;
    for (const auto& t : tris_) {
      if (t.alive && t.v[2] != kInf) out.push_back(t.v);
    }
    return out;
  }

 private:
  struct Tri {
    Triangle v;
    bool alive;
  };

  static std::int64_t edge_key(int u, int v) {
    return (static_cast<std::int64_t>(u) + 1) * (std::int64_t{1} << 32) + (v + 1);
  }

  int neighbor(int u, int v) const {
    auto it = edges_.find(edge_key(v, u));
    return it == edges_.end() ? -1 : it->second;
  }

  void add(Triangle t) {
    const int id = static_cast<int>(tris_.size());
    tris_.push_back({t, true});
    for (int e = 0; e < 3; ++e) edges_[edge_key(t[e], t[(e + 1) % 3])] = id;
    if (t[2] != kInf) last_finite_ = id;
  }

  void remove(int id) {
    auto& t = tris_[id];
    t.alive = false;
    for (int e = 0; e < 3; ++e) edges_.erase(edge_key(t.v[e], t.v[(e + 1) % 3]));
  }

  bool conflicts(int ti, int p) const {
    const auto& t = tris_[ti].v;
    const P2& q = pts_[p];
    if (t[2] != kInf) return incircle(pts_[t[0]], pts_[t[1]], pts_[t[2]], q) > 0;
    const P2& a = pts_[t[0]];
    const P2& b = pts_[t[1]];
    const Real o = orient(a, b, q);
    if (o > 0) return true;
    if (o < 0) return false;
    // Collinear with the hull edge: conflict only strictly inside the segment.
    const Real dot = (q.x - a.x) * (b.x - a.x) + (q.y - a.y) * (b.y - a.y);
    const Real len = (b.x - a.x) * (b.x - a.x) + (b.y - a.y) * (b.y - a.y);
    return dot > 0 && dot < len;
  }

  // Visibility walk from the most recent finite triangle.
  int locate(int p) const {
    const P2& q = pts_[p];
    int cur = last_finite_;
    const std::size_t max_steps = 4 * tris_.size() + 16;
    for (std::size_t step = 0; step < max_steps && cur >= 0; ++step) {
      const auto& t = tris_[cur].v;
      if (t[2] == kInf) {
        if (conflicts(cur, p)) return cur;
        break;
      }
      int next = -1;
      for (int e = 0; e < 3; ++e) {
        if (orient(pts_[t[e]], pts_[t[(e + 1) % 3]], q) < 0) {
          next = neighbor(t[e], t[(e + 1) % 3]);
          break;
        }
      }
      if (next < 0) {
        if (conflicts(cur, p)) return cur;
        break;
      }
      cur = next;
    }
    // Fallback scan; reached only in near-degenerate configurations.
    for (int i = static_cast<int>(tris_.size()) - 1; i >= 0; --i) {
      if (tris_[i].alive && conflicts(i, p)) return i;
    }
    throw Error(ErrorCode::kDegenerateInput, "point location failed during triangulation");
  }

  std::vector<P2> pts_;
  std::vector<Tri> tris_;
  std::unordered_map<std::int64_t, int> edges_;
  std::unordered_map<int, bool> in_cavity_;
  int last_finite_ = -1;
};

}  // namespace

std::vector<Triangle> delaunay_2d(std::span<const Vec2> points) {
  const std::size_t n = points.size();
  if (n < 3) throw Error(ErrorCode::kDegenerateInput, "triangulation needs at least 3 points");
  Vec2 lo = points[0], hi = points[0];
  for (const auto& p : points) {
    if (!p.allFinite()) throw Error(ErrorCode::kDegenerateInput, "non-finite point");
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  const Vec2 mid = 0.5 * (lo + hi);
  const double scale = std::max((hi - lo).maxCoeff(), 1e-300);
  std::vector<P2> pts(n);
  for (std::size_t i = 0; i < n; ++i) {
    pts[i] = {static_cast<Real>((points[i].x() - mid.x()) / scale),
              static_cast<Real>((points[i].y() - mid.y()) / scale)};
  }

  // Insertion order: row-snake over a coarse grid keeps the walk short.
  std::vector<int> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = static_cast<int>(i);
  const int bins = std::max(1, static_cast<int>(std::sqrt(static_cast<double>(n) / 4.0)));
  auto bin_of = [&](int i) {
    return std::min(bins - 1, static_cast<int>((pts[i].y + 0.5L) * bins));
  };
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    const int ba = bin_of(a), bb = bin_of(b);
    if (ba != bb) return ba < bb;
    const bool reverse = ba % 2 == 1;
    if (pts[a].x != pts[b].x) return reverse ? pts[a].x > pts[b].x : pts[a].x < pts[b].x;
    if (pts[a].y != pts[b].y) return pts[a].y < pts[b].y;
    return a < b;
  });
  {
    std::vector<std::pair<Real, Real>> sorted(n);
    for (std::size_t i = 0; i < n; ++i) sorted[i] = {pts[i].x, pts[i].y};
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
      throw Error(ErrorCode::kDegenerateInput, "duplicate points");
    }
  }

  const int a = order[0];
  int b = a;
  Real best = -1;
  for (std::size_t i = 0; i < n; ++i) {
    const Real dx = pts[i].x - pts[a].x, dy = pts[i].y - pts[a].y;
    if (dx * dx + dy * dy > best) {
      best = dx * dx + dy * dy;
      b = static_cast<int>(i);
    }
  }
  int c = -1;
  Real area = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const Real o = std::abs(orient(pts[a], pts[b], pts[i]));
    if (o > area) {
      area = o;
      c = static_cast<int>(i);
    }
  }
  if (c < 0 || area <= 1e-12L) throw Error(ErrorCode::kDegenerateInput, "points are collinear");

  Triangulator tri(pts);
  tri.seed(a, b, c);
  for (int i : order) {
    if (i == a || i == b || i == c) continue;
    tri.insert(i);
  }
  return tri.finite();
}

// ---------------------------------------------------------------------------
// Scene meshing

TriangleMesh mesh_scene(const PointCloud& cloud, const MeshParams& params, MeshStats* stats) {
  cloud.validate();
  if (cloud.empty()) throw Error(ErrorCode::kDegenerateInput, "cannot mesh an empty cloud");
  MeshStats local;
  const auto est = estimate_normals(cloud.positions, params.normal_k);
  const PointGrid grid(cloud.positions, params.neighbor_radius);
  const double cos_limit = std::cos(params.normal_angle_deg * std::numbers::pi / 180.0);

  const std::size_t n = cloud.size();
  std::vector<int> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = static_cast<int>(i);
  std::sort(order.begin(), order.end(), [&](int x, int y) {
    if (est.curvature[x] != est.curvature[y]) return est.curvature[x] < est.curvature[y];
    return position_less(cloud.positions[x], cloud.positions[y]);
  });

  std::vector<int> patch_of(n, -1);
  std::vector<std::vector<int>> patches;
  std::vector<Vec3> patch_normal, patch_origin;
  auto grow = [&](int seed) {
    const int pid = static_cast<int>(patches.size());
    const Vec3 normal = est.normals[seed];
    const Vec3 origin = cloud.positions[seed];
    std::vector<int> members{seed};
    patch_of[seed] = pid;
    for (std::size_t head = 0; head < members.size(); ++head) {
      for (int nb : grid.radius(cloud.positions[members[head]], params.neighbor_radius)) {
        if (patch_of[nb] >= 0) continue;
        if (std::abs(est.normals[nb].dot(normal)) < cos_limit) continue;
        if (std::abs((cloud.positions[nb] - origin).dot(normal)) > params.plane_distance) continue;
        patch_of[nb] = pid;
        members.push_back(nb);
      }
    }
    patches.push_back(std::move(members));
    patch_normal.push_back(normal);
    patch_origin.push_back(origin);
  };

  // Smooth points seed patches first; crease points, whose normals blend two
  // surfaces, then join the neighboring patch whose plane they lie closest to.
  for (int seed : order) {
    if (patch_of[seed] < 0 && est.curvature[seed] <= params.seed_curvature) grow(seed);
  }
  const int smooth_patches = static_cast<int>(patches.size());
  std::vector<std::pair<int, int>> joins;
  for (int p : order) {
    if (patch_of[p] >= 0) continue;
    int best = -1;
    double best_dist = params.plane_distance;
    for (int nb : grid.radius(cloud.positions[p], params.neighbor_radius)) {
      const int pid = patch_of[nb];
      if (pid < 0 || pid >= smooth_patches) continue;
      const double d = std::abs((cloud.positions[p] - patch_origin[pid]).dot(patch_normal[pid]));
      if (d < best_dist || (d == best_dist && best >= 0 && pid < best)) {
        best_dist = d;
        best = pid;
      }
    }
    if (best >= 0) joins.push_back({p, best});
  }
  for (const auto& [p, pid] : joins) {
    patch_of[p] = pid;
    patches[pid].push_back(p);
  }
  for (int seed : order) {
    if (patch_of[seed] < 0) grow(seed);
  }

  TriangleMesh mesh;
  for (auto& members : patches) {
    ++local.patches;
    if (members.size() < 3) {
      ++local.skipped_patches;
      local.skipped_points += members.size();
      continue;
    }

    // Best-fit plane basis.
    Vec3 mean = Vec3::Zero();
    for (int m : members) mean += cloud.positions[m];
    mean /= static_cast<double>(members.size());
    Mat3 cov = Mat3::Zero();
    for (int m : members) {
      const Vec3 d = cloud.positions[m] - mean;
      cov += d * d.transpose();
    }
    Eigen::SelfAdjointEigenSolver<Mat3> solver(cov);
    const Vec3 e1 = solver.eigenvectors().col(2);
    const Vec3 e2 = solver.eigenvectors().col(1);

    std::sort(members.begin(), members.end(), [&](int x, int y) {
      return position_less(cloud.positions[x], cloud.positions[y]);
    });
    std::vector<Vec2> flat;
    std::vector<int> kept;
    flat.reserve(members.size());
    for (int m : members) {
      const Vec3 d = cloud.positions[m] - mean;
      flat.emplace_back(d.dot(e1), d.dot(e2));
      kept.push_back(m);
    }
    // Drop exact 2D duplicates (coincident after projection).
    {
      std::vector<int> idx(flat.size());
      for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
      std::sort(idx.begin(), idx.end(), [&](int x, int y) {
        if (flat[x].x() != flat[y].x()) return flat[x].x() < flat[y].x();
        if (flat[x].y() != flat[y].y()) return flat[x].y() < flat[y].y();
        return x < y;
      });
      std::vector<char> dup(flat.size(), 0);
      for (std::size_t i = 1; i < idx.size(); ++i) {
        if (flat[idx[i]] == flat[idx[i - 1]]) dup[idx[i]] = 1;
      }
      std::vector<Vec2> f2;
      std::vector<int> k2;
      for (std::size_t i = 0; i < flat.size(); ++i) {
        if (dup[i]) {
          ++local.skipped_points;
          continue;
        }
        f2.push_back(flat[i]);
        k2.push_back(kept[i]);
      }
      flat.swap(f2);
      kept.swap(k2);
    }

    std::vector<Triangle> tris;
    try {
      tris = delaunay_2d(flat);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kDegenerateInput) throw;
      ++local.skipped_patches;
      local.skipped_points += kept.size();
      continue;
    }
    const int base = static_cast<int>(mesh.vertices.size());
    for (int m : kept) {
      mesh.vertices.push_back(cloud.positions[m]);
      mesh.vertex_color.push_back(cloud.colors[m]);
      mesh.vertex_point.push_back(m);
    }
    for (const auto& t : tris) {
      const Triangle g{base + t[0], base + t[1], base + t[2]};
      if (triangle_area(mesh.vertices[g[0]], mesh.vertices[g[1]], mesh.vertices[g[2]]) <= 1e-12) {
        ++local.dropped_triangles;
        continue;
      }
      mesh.triangles.push_back(g);
    }
  }
  if (stats != nullptr) *stats = local;
  return mesh;
}

std::vector<Camera> camera_ring(const Aabb3& bounds, int n_views, double elevation,
                                const RingParams& params) {
  if (n_views < 1) throw Error(ErrorCode::kBadParam, "n_views must be at least 1");
  if (!(std::abs(elevation) < 0.5 * std::numbers::pi - 1e-6)) {
    throw Error(ErrorCode::kBadParam, "elevation must lie strictly between -90 and 90 degrees");
  }
  const Vec3 extent = bounds.extent();
  if (!(extent.x() > 0.0) || !(extent.y() > 0.0)) {
    throw Error(ErrorCode::kDegenerateInput, "camera ring needs bounds with horizontal extent");
  }
  const Vec3 center = bounds.center();
  const double horizontal = params.radius_factor * 0.5 * std::min(extent.x(), extent.y());
  const double distance = horizontal / std::cos(elevation);
  const double f = 0.5 * params.width / std::tan(0.5 * params.fov_deg * std::numbers::pi / 180.0);

  std::vector<Camera> cams;
  cams.reserve(n_views);
  for (int i = 0; i < n_views; ++i) {
    const double yaw = 2.0 * std::numbers::pi * i / n_views;
    const Vec3 eye = center + distance * Vec3(std::cos(elevation) * std::cos(yaw),
                                              std::cos(elevation) * std::sin(yaw),
                                              std::sin(elevation));
    Camera cam;
    cam.intrinsics = {f, f, 0.5 * params.width, 0.5 * params.height, params.width, params.height};
    cam.pose = CameraPose::look_at(eye, center);
    cam.pose.validate();
    cams.push_back(cam);
  }
  return cams;
}

}  // namespace scenefuse
