#include "scenefuse/spatial.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>

#include "scenefuse/error.hpp"

namespace scenefuse {

bool position_less(const Vec3& a, const Vec3& b) {
  if (a.x() != b.x()) return a.x() < b.x();
  if (a.y() != b.y()) return a.y() < b.y();
  return a.z() < b.z();
}

PointGrid::PointGrid(std::span<const Vec3> points, double cell_size)
    : points_(points), cell_(cell_size) {
  if (!(cell_size > 0.0)) throw Error(ErrorCode::kBadParam, "grid cell size must be positive");
  lo_ = {0, 0, 0};
  hi_ = {0, 0, 0};
  bool first = true;
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto c = cell_of(points[i]);
    cells_[key(c[0], c[1], c[2])].push_back(static_cast<int>(i));
    for (int a = 0; a < 3; ++a) {
      lo_[a] = first ? c[a] : std::min(lo_[a], c[a]);
      hi_[a] = first ? c[a] : std::max(hi_[a], c[a]);
    }
    first = false;
  }
}

std::int64_t PointGrid::key(int ix, int iy, int iz) const {
  constexpr std::int64_t kSpan = 1 << 20;
  return ((static_cast<std::int64_t>(ix) + kSpan / 2) * kSpan + (iy + kSpan / 2)) * kSpan +
         (iz + kSpan / 2);
}

std::array<int, 3> PointGrid::cell_of(const Vec3& p) const {
  return {static_cast<int>(std::floor(p.x() / cell_)), static_cast<int>(std::floor(p.y() / cell_)),
          static_cast<int>(std::floor(p.z() / cell_))};
}

void PointGrid::sort_by_distance(const Vec3& query, std::vector<int>& ids) const {
  std::sort(ids.begin(), ids.end(), [&](int a, int b) {
    const double da = (points_[a] - query).squaredNorm();
    const double db = (points_[b] - query).squaredNorm();
    if (da != db) return da < db;
    if (points_[a] != points_[b]) return position_less(points_[a], points_[b]);
    return a < b;
  });
}

std::vector<int> PointGrid::radius(const Vec3& query, double r) const {
  std::vector<int> out;
  const auto c = cell_of(query);
  const int reach = static_cast<int>(std::ceil(r / cell_));
  const double r2 = r * r;
  for (int dx = -reach; dx <= reach; ++dx) {
    for (int dy = -reach; dy <= reach; ++dy) {
      for (int dz = -reach; dz <= reach; ++dz) {
        auto it = cells_.find(key(c[0] + dx, c[1] + dy, c[2] + dz));
        if (it == cells_.end()) continue;
        for (int id : it->second) {
          if ((points_[id] - query).squaredNorm() <= r2) out.push_back(id);
        }
      }
    }
  }
  sort_by_distance(query, out);
  return out;
}

std::vector<int> PointGrid::knn(const Vec3& query, int k) const {
  std::vector<int> out;
  if (k <= 0 || points_.empty()) return out;
  const auto c = cell_of(query);
  int max_ring = 0;
  for (int a = 0; a < 3; ++a) {
    max_ring = std::max({max_ring, std::abs(c[a] - lo_[a]), std::abs(hi_[a] - c[a])});
  }
  std::vector<int> candidates;
  for (int ring = 0; ring <= max_ring + 1; ++ring) {
    // Add only the shell at Chebyshev distance == ring.
    for (int dx = -ring; dx <= ring; ++dx) {
      for (int dy = -ring; dy <= ring; ++dy) {
        for (int dz = -ring; dz <= ring; ++dz) {
          if (std::max({std::abs(dx), std::abs(dy), std::abs(dz)}) != ring) continue;
          auto it = cells_.find(key(c[0] + dx, c[1] + dy, c[2] + dz));
          if (it == cells_.end()) continue;
          candidates.insert(candidates.end(), it->second.begin(), it->second.end());
        }
      }
    }
    if (static_cast<int>(candidates.size()) >= k) {
      sort_by_distance(query, candidates);
      // Everything within `ring * cell_` of the query has been seen.
      const double covered = ring * cell_;
      if ((points_[candidates[k - 1]] - query).norm() <= covered || ring > max_ring) {
        candidates.resize(k);
        return candidates;
      }
    }
  }
  sort_by_distance(query, candidates);
  if (static_cast<int>(candidates.size()) > k) candidates.resize(k);
  return candidates;
}

NormalEstimate estimate_normals(std::span<const Vec3> points, int k) {
  NormalEstimate out;
  out.normals.resize(points.size(), Vec3::UnitZ());
  out.curvature.resize(points.size(), 0.0);
  if (points.empty()) return out;

  const Aabb3 box = Aabb3::of(points);
  const double extent = std::max(box.extent().maxCoeff(), 1e-6);
  const Vec3 viewpoint(box.center().x(), box.center().y(), box.max.z() + 2.0 * extent);
  // Cell size tuned so a k-neighbourhood spans only a few cells.
  const double density_cell =
      std::cbrt(std::max(box.volume(), extent * extent * 1e-3) / static_cast<double>(points.size()));
  const PointGrid grid(points, std::clamp(density_cell * 2.0, extent * 1e-3, extent));

  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto nb = grid.knn(points[i], k);
    Vec3 mean = Vec3::Zero();
    for (int j : nb) mean += points[j];
    mean /= static_cast<double>(nb.size());
    Mat3 cov = Mat3::Zero();
    for (int j : nb) {
      const Vec3 d = points[j] - mean;
      cov += d * d.transpose();
    }
    Eigen::SelfAdjointEigenSolver<Mat3> solver(cov);
    Vec3 n = solver.eigenvectors().col(0);
    const Vec3 ev = solver.eigenvalues();
    const double total = ev.sum();
    out.curvature[i] = total > 0.0 ? std::max(0.0, ev(0)) / total : 0.0;
    if (n.dot(viewpoint - points[i]) < 0.0) n = -n;
    out.normals[i] = n.normalized();
  }
  return out;
}

}  // namespace scenefuse
