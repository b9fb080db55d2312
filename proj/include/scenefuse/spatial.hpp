#pragma once

#include <cstdint>
#include <span>
#include <unordered_map>
#include <vector>

#include "scenefuse/geometry.hpp"

namespace scenefuse {

// Uniform hash grid over a fixed point set. Query results are ordered by
// (distance, x, y, z), so downstream algorithms depend only on positions and
// never on input order.
class PointGrid {
 public:
  PointGrid(std::span<const Vec3> points, double cell_size);

  std::vector<int> radius(const Vec3& query, double r) const;
  std::vector<int> knn(const Vec3& query, int k) const;
  std::size_t size() const { return points_.size(); }

 private:
  std::int64_t key(int ix, int iy, int iz) const;
  std::array<int, 3> cell_of(const Vec3& p) const;
  void sort_by_distance(const Vec3& query, std::vector<int>& ids) const;

  std::span<const Vec3> points_;
  double cell_;
  std::unordered_map<std::int64_t, std::vector<int>> cells_;
  std::array<int, 3> lo_{};
  std::array<int, 3> hi_{};
};

// Lexicographic position order used as the tie-break everywhere.
bool position_less(const Vec3& a, const Vec3& b);

struct NormalEstimate {
  std::vector<Vec3> normals;
  std::vector<double> curvature;  // lambda_min / sum(lambda), 0 on a plane
};

// k-NN plane fit. Normals are oriented toward a viewpoint above the cloud.
NormalEstimate estimate_normals(std::span<const Vec3> points, int k);

}  // namespace scenefuse
