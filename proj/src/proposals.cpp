#include "scenefuse/proposals.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>

#include "json.hpp"
#include "scenefuse/error.hpp"
#include "scenefuse/spatial.hpp"

namespace scenefuse {

namespace {

struct UnionFind {
  std::vector<int> parent;
  explicit UnionFind(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  int find(int x) {
    while (parent[x] != x) {
      parent[x] = parent[parent[x]];
      x = parent[x];
    }
    return x;
  }
  void unite(int a, int b) {
    a = find(a);
    b = find(b);
    if (a != b) parent[std::max(a, b)] = std::min(a, b);
  }
};

// Chromaticity (r, g, b) / (r + g + b); unlit pixels map to a sentinel far
// from every lit color.
Vec3 chromaticity(const RgbImage& image, int x, int y) {
  const Vec3 c = image.at(x, y);
  const double sum = c.sum();
  if (sum < 1e-3) return Vec3::Constant(-10.0);
  return c / sum;
}

BoxOrigin origin_from_name(const std::string& name) {
  if (name == "FROM_2D") return BoxOrigin::kFrom2D;
  if (name == "FROM_3D") return BoxOrigin::kFrom3D;
  if (name == "GROUND_TRUTH") return BoxOrigin::kGroundTruth;
  throw Error(ErrorCode::kFormat, "unknown box origin " + name);
}

}  // namespace

const char* box_origin_name(BoxOrigin origin) {
  switch (origin) {
    case BoxOrigin::kFrom2D:
      return "FROM_2D";
    case BoxOrigin::kFrom3D:
      return "FROM_3D";
    case BoxOrigin::kGroundTruth:
      return "GROUND_TRUTH";
  }
  return "?";
}

double Box3D::volume() const {
  const Vec3 e = (max - min).cwiseMax(0.0);
  return e.x() * e.y() * e.z();
}

bool Box3D::contains(const Vec3& p) const {
  return (p.array() >= min.array()).all() && (p.array() <= max.array()).all();
}

double iou3d(const Box3D& a, const Box3D& b) {
  const Vec3 lo = a.min.cwiseMax(b.min);
  const Vec3 hi = a.max.cwiseMin(b.max);
  const Vec3 e = (hi - lo).cwiseMax(0.0);
  const double inter = e.x() * e.y() * e.z();
  const double uni = a.volume() + b.volume() - inter;
  if (uni <= 0.0) return (a.min == b.min && a.max == b.max) ? 1.0 : 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

std::vector<Box2D> propose_2d(const RenderedView& view, int view_id, const Propose2DParams& params) {
  const Framebuffer& fb = view.framebuffer;
  const int w = fb.width, h = fb.height;
  const double tolerance = 1.0 / params.chroma_bins;
  std::vector<Vec3> chroma(static_cast<std::size_t>(w) * h, Vec3::Zero());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (fb.hit(x, y)) chroma[fb.index(x, y)] = chromaticity(fb.color, x, y);
    }
  }
  std::vector<char> visited(chroma.size(), 0);
  std::vector<Box2D> out;
  std::vector<int> stack;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t start = fb.index(x, y);
      if (!fb.hit(x, y) || visited[start]) continue;
      Box2D box{x, y, x, y, 0.0, view_id, {}};
      visited[start] = 1;
      stack.assign(1, static_cast<int>(start));
      while (!stack.empty()) {
        const int i = stack.back();
        stack.pop_back();
        box.pixels.push_back(i);
        const int px = i % w, py = i / w;
        box.x0 = std::min(box.x0, px);
        box.x1 = std::max(box.x1, px);
        box.y0 = std::min(box.y0, py);
        box.y1 = std::max(box.y1, py);
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            const int nx = px + dx, ny = py + dy;
            if (nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
            const std::size_t j = fb.index(nx, ny);
            if (visited[j] || !fb.hit(nx, ny) || (chroma[j] - chroma[i]).norm() >= tolerance) continue;
            visited[j] = 1;
            stack.push_back(static_cast<int>(j));
          }
        }
      }
      if (static_cast<int>(box.pixels.size()) < params.min_area_px) continue;
      std::sort(box.pixels.begin(), box.pixels.end());
      box.score = std::clamp(static_cast<double>(box.pixels.size()) / (static_cast<double>(w) * h), 0.05, 1.0);
      out.push_back(std::move(box));
    }
  }
  return out;
}

std::optional<Box3D> lift_2d_to_3d(const Box2D& box, const RenderedView& view,
                                   std::span<const Vec3> positions) {
  const Framebuffer& fb = view.framebuffer;
  if (box.x0 < 0 || box.y0 < 0 || box.x1 >= fb.width || box.y1 >= fb.height || box.x0 > box.x1 ||
      box.y0 > box.y1) {
    throw Error(ErrorCode::kBadParam, "2D box outside the view");
  }
  Box3D out;
  out.origin = BoxOrigin::kFrom2D;
  out.score = box.score;
  bool any = false;
  auto add = [&](std::size_t i) {
    const int p = fb.correspondence[i];
    if (p < 0) return;
    if (p >= static_cast<int>(positions.size())) throw Error(ErrorCode::kShapeMismatch, "view vs cloud");
    out.members.push_back(p);
    if (!any) {
      out.min = out.max = positions[p];
      any = true;
    } else {
      out.min = out.min.cwiseMin(positions[p]);
      out.max = out.max.cwiseMax(positions[p]);
    }
  };
  if (!box.pixels.empty()) {
    for (int i : box.pixels) add(static_cast<std::size_t>(i));
  } else {
    for (int y = box.y0; y <= box.y1; ++y) {
      for (int x = box.x0; x <= box.x1; ++x) add(fb.index(x, y));
    }
  }
  if (!any) return std::nullopt;
  std::sort(out.members.begin(), out.members.end());
  out.members.erase(std::unique(out.members.begin(), out.members.end()), out.members.end());
  return out;
}

std::vector<int> ransac_plane_inliers(std::span<const Vec3> points, double threshold, int iterations,
                                      std::uint64_t seed) {
  const int n = static_cast<int>(points.size());
  if (n < 3) return {};
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> pick(0, n - 1);
  int best_count = -1;
  Vec3 best_normal = Vec3::UnitZ();
  double best_offset = 0.0;
  for (int it = 0; it < iterations; ++it) {
    const Vec3& a = points[pick(rng)];
    const Vec3& b = points[pick(rng)];
    const Vec3& c = points[pick(rng)];
    Vec3 normal = (b - a).cross(c - a);
    if (normal.norm() < 1e-12) continue;
    normal.normalize();
    const double offset = normal.dot(a);
    int count = 0;
    for (const Vec3& p : points) count += std::abs(normal.dot(p) - offset) <= threshold;
    if (count > best_count) {
      best_count = count;
      best_normal = normal;
      best_offset = offset;
    }
  }
  std::vector<int> out;
  if (best_count < 0) return out;
  for (int i = 0; i < n; ++i) {
    if (std::abs(best_normal.dot(points[i]) - best_offset) <= threshold) out.push_back(i);
  }
  return out;
}

std::vector<int> euclidean_clusters(std::span<const Vec3> points, std::span<const char> include, double radius) {
  if (include.size() != points.size()) throw Error(ErrorCode::kShapeMismatch, "mask vs points");
  const PointGrid grid(points, radius);
  UnionFind uf(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (!include[i]) continue;
    for (int j : grid.radius(points[i], radius)) {
      if (include[j]) uf.unite(static_cast<int>(i), j);
    }
  }
  std::map<int, int> dense;
  std::vector<int> out(points.size(), -1);
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (!include[i]) continue;
    const int root = uf.find(static_cast<int>(i));
    auto it = dense.emplace(root, static_cast<int>(dense.size())).first;
    out[i] = it->second;
  }
  return out;
}

std::vector<Box3D> propose_3d(const PointCloud& cloud, const Propose3DParams& params) {
  if (cloud.empty()) throw Error(ErrorCode::kDegenerateInput, "cannot propose on an empty cloud");
  std::vector<char> include(cloud.size(), 1);
  for (int i : ransac_plane_inliers(cloud.positions, params.floor_threshold, params.ransac_iterations,
                                    params.seed)) {
    include[i] = 0;
  }
  const auto cluster = euclidean_clusters(cloud.positions, include, params.cluster_radius);
  std::map<int, std::vector<int>> members;
  for (std::size_t i = 0; i < cluster.size(); ++i) {
    if (cluster[i] >= 0) members[cluster[i]].push_back(static_cast<int>(i));
  }
  std::vector<Box3D> out;
  for (const auto& [id, pts] : members) {
    if (static_cast<int>(pts.size()) < params.min_points) continue;
    Box3D box;
    box.origin = BoxOrigin::kFrom3D;
    box.min = box.max = cloud.positions[pts[0]];
    for (int p : pts) {
      box.min = box.min.cwiseMin(cloud.positions[p]);
      box.max = box.max.cwiseMax(cloud.positions[p]);
    }
    box.score = static_cast<double>(pts.size()) / static_cast<double>(cloud.size());
    box.members = pts;
    out.push_back(box);
  }
  return out;
}

std::vector<Box3D> union_proposals(std::span<const Box3D> lifted_2d, std::span<const Box3D> r3d,
                                   double dedup_iou) {
  if (!(dedup_iou > 0.0 && dedup_iou <= 1.0)) throw Error(ErrorCode::kBadParam, "dedup_iou must lie in (0,1]");
  std::vector<Box3D> out(r3d.begin(), r3d.end());
  for (const Box3D& b : lifted_2d) {
    double best = 0.0;
    for (const Box3D& r : r3d) best = std::max(best, iou3d(b, r));
    if (best < dedup_iou) out.push_back(b);
  }
  return out;
}

PrecisionRecall proposal_pr(std::span<const Box3D> proposals, std::span<const Box3D> gt, double iou_thresh) {
  if (gt.empty()) throw Error(ErrorCode::kDegenerateLabels, "no ground-truth boxes");
  if (!(iou_thresh > 0.0 && iou_thresh < 1.0)) throw Error(ErrorCode::kBadParam, "iou_thresh must lie in (0,1)");
  if (proposals.empty()) return {0.0, 0.0};
  std::vector<int> order(proposals.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return proposals[a].score > proposals[b].score; });
  std::vector<char> taken(gt.size(), 0);
  int matched = 0;
  for (int p : order) {
    int best = -1;
    double best_iou = iou_thresh;
    for (std::size_t g = 0; g < gt.size(); ++g) {
      if (taken[g]) continue;
      const double v = iou3d(proposals[p], gt[g]);
      if (v >= best_iou && (best < 0 || v > best_iou)) {
        best = static_cast<int>(g);
        best_iou = v;
      }
    }
    if (best >= 0) {
      taken[best] = 1;
      ++matched;
    }
  }
  return {static_cast<double>(matched) / proposals.size(), static_cast<double>(matched) / gt.size()};
}

SceneProposals propose_scene(const PointCloud& cloud, std::span<const RenderedView> views,
                             const Propose2DParams& p2d, const Propose3DParams& p3d, double dedup_iou) {
  SceneProposals out;
  std::vector<Box3D> pooled;
  for (std::size_t v = 0; v < views.size(); ++v) {
    for (const Box2D& box : propose_2d(views[v], static_cast<int>(v), p2d)) {
      if (auto lifted = lift_2d_to_3d(box, views[v], cloud.positions)) pooled.push_back(*lifted);
    }
  }
  std::stable_sort(pooled.begin(), pooled.end(), [](const Box3D& a, const Box3D& b) { return a.score > b.score; });
  for (const Box3D& b : pooled) {
    bool duplicate = false;
    for (const Box3D& k : out.r2d) {
      if (iou3d(b, k) >= dedup_iou) {
        duplicate = true;
        break;
      }
    }
    if (!duplicate) out.r2d.push_back(b);
  }
  out.r3d = propose_3d(cloud, p3d);
  out.united = union_proposals(out.r2d, out.r3d, dedup_iou);
  return out;
}

std::string proposals_to_json(std::span<const Box3D> boxes) {
  nlohmann::json arr = nlohmann::json::array();
  for (const Box3D& b : boxes) {
    arr.push_back({{"min", {b.min.x(), b.min.y(), b.min.z()}},
                   {"max", {b.max.x(), b.max.y(), b.max.z()}},
                   {"score", b.score},
                   {"origin", box_origin_name(b.origin)}});
  }
  return arr.dump(2);
}

std::vector<Box3D> proposals_from_json(const std::string& text) {
  std::vector<Box3D> out;
  try {
    for (const auto& item : nlohmann::json::parse(text)) {
      Box3D b;
      for (int a = 0; a < 3; ++a) {
        b.min[a] = item.at("min").at(a).get<double>();
        b.max[a] = item.at("max").at(a).get<double>();
      }
      b.score = item.at("score").get<double>();
      b.origin = origin_from_name(item.at("origin").get<std::string>());
      out.push_back(b);
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kFormat, std::string("bad proposal json: ") + e.what());
  }
  return out;
}

}  // namespace scenefuse
