#include <algorithm>
#include <functional>
#include <numeric>
#include <random>

#include "doctest.h"
#include "scenefuse/datagen.hpp"
#include "scenefuse/error.hpp"
#include "scenefuse/proposals.hpp"
#include "scenefuse/renderer.hpp"

using namespace scenefuse;

namespace {

Box3D box(Vec3 lo, Vec3 hi, double score = 1.0) {
  Box3D b;
  b.min = lo;
  b.max = hi;
  b.score = score;
  b.origin = BoxOrigin::kFrom3D;
  return b;
}

void add_sphere(PointCloud& cloud, const Vec3& c, double r, int n) {
  const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
  for (int i = 0; i < n; ++i) {
    const double z = 1.0 - 2.0 * (i + 0.5) / n;
    const double rho = std::sqrt(1.0 - z * z);
    cloud.push_back(c + r * Vec3(rho * std::cos(golden * i), rho * std::sin(golden * i), z), Vec3(0.5, 0.5, 0.5));
  }
}

void add_floor(PointCloud& cloud, double size, double spacing) {
  for (double x = 0; x <= size; x += spacing) {
    for (double y = 0; y <= size; y += spacing) cloud.push_back(Vec3(x, y, 0), Vec3(0.4, 0.3, 0.2));
  }
}

void add_box_surface(PointCloud& cloud, const Vec3& lo, const Vec3& hi, double spacing) {
  for (double x = lo.x(); x <= hi.x() + 1e-9; x += spacing) {
    for (double y = lo.y(); y <= hi.y() + 1e-9; y += spacing) {
      for (double z = lo.z(); z <= hi.z() + 1e-9; z += spacing) {
        const bool on_face = std::abs(x - lo.x()) < 1e-9 || std::abs(x - hi.x()) < 1e-6 ||
                             std::abs(y - lo.y()) < 1e-9 || std::abs(y - hi.y()) < 1e-6 || std::abs(z - hi.z()) < 1e-6;
        if (on_face) cloud.push_back(Vec3(x, y, z), Vec3(0.7, 0.2, 0.2));
      }
    }
  }
}

// Maximum number of (proposal, gt) pairs with IoU >= thresh, by exhaustive search.
int max_matching(std::span<const Box3D> props, std::span<const Box3D> gt, double thresh) {
  std::vector<char> used(gt.size(), 0);
  std::function<int(std::size_t)> rec = [&](std::size_t p) -> int {
    if (p == props.size()) return 0;
    int best = rec(p + 1);
    for (std::size_t g = 0; g < gt.size(); ++g) {
      if (used[g] || iou3d(props[p], gt[g]) < thresh) continue;
      used[g] = 1;
      best = std::max(best, 1 + rec(p + 1));
      used[g] = 0;
    }
    return best;
  };
  return rec(0);
}

}  // namespace

TEST_CASE("iou3d fuzz properties") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 2000; ++i) {
    const Vec3 a0(u(rng), u(rng), u(rng)), b0(u(rng), u(rng), u(rng));
    const Box3D a = box(a0, a0 + Vec3(u(rng), u(rng), u(rng))), b = box(b0, b0 + Vec3(u(rng), u(rng), u(rng)));
    const double ab = iou3d(a, b);
    CHECK(ab == iou3d(b, a));
    CHECK(ab >= 0.0);
    CHECK(ab < 1.0);
    CHECK(iou3d(a, a) == 1.0);
  }
  const Box3D flat = box(Vec3(0, 0, 0), Vec3(1, 1, 0));
  CHECK(iou3d(flat, flat) == 1.0);
  CHECK(iou3d(flat, box(Vec3(0, 0, 0), Vec3(1, 2, 0))) == 0.0);
}

TEST_CASE("propose_2d on empty and single-quadrant views") {
  RenderedView empty;
  empty.intrinsics = {64, 64, 32, 32, 64, 64};
  empty.framebuffer = rasterize(TriangleMesh{}, empty.intrinsics, empty.pose, kDefaultLight);
  CHECK(propose_2d(empty).empty());

  TriangleMesh quad;
  quad.vertices = {Vec3(-0.5, -0.5, 1), Vec3(0, -0.5, 1), Vec3(0, 0, 1), Vec3(-0.5, 0, 1)};
  quad.vertex_color.assign(4, Vec3(0.8, 0.2, 0.2));
  quad.vertex_point = {0, 1, 2, 3};
  quad.triangles = {{0, 1, 2}, {0, 2, 3}};
  RenderedView view;
  view.intrinsics = empty.intrinsics;
  view.framebuffer = rasterize(quad, view.intrinsics, view.pose, kDefaultLight);
  const auto boxes = propose_2d(view);
  REQUIRE(boxes.size() == 1);
  CHECK(std::abs(boxes[0].x0 - 0) <= 2);
  CHECK(std::abs(boxes[0].y0 - 0) <= 2);
  CHECK(std::abs(boxes[0].x1 - 31) <= 2);
  CHECK(std::abs(boxes[0].y1 - 31) <= 2);
  CHECK(boxes[0].score == doctest::Approx(0.25));

  const std::vector<Vec3> points = quad.vertices;
  const auto lifted = lift_2d_to_3d(boxes[0], view, points);
  REQUIRE(lifted.has_value());
  CHECK(lifted->origin == BoxOrigin::kFrom2D);
  Box2D void_box{40, 40, 60, 60, 0.1, 0, {}};
  CHECK_FALSE(lift_2d_to_3d(void_box, view, points).has_value());
}

TEST_CASE("2D proposals on rendered rooms stay in bounds and lift around objects") {
  SceneSpec spec = default_scene_spec();
  spec.min_objects = spec.max_objects = 1;
  int close = 0;
  const int scenes = 6;
  for (int s = 0; s < scenes; ++s) {
    const GeneratedScene scene = gen_scene(spec, scene_seed(21, s));
    const TriangleMesh mesh = mesh_scene(scene.cloud);
    RingParams rp;
    rp.width = rp.height = 128;
    const auto cams = camera_ring(Aabb3::of(scene.cloud.positions), 6, 0.5, rp);
    const auto views = render_views(mesh, cams);
    bool found = false;
    for (std::size_t v = 0; v < views.size(); ++v) {
      for (const Box2D& b : propose_2d(views[v], static_cast<int>(v))) {
        CHECK(b.x0 >= 0);
        CHECK(b.y0 >= 0);
        CHECK(b.x1 < 128);
        CHECK(b.y1 < 128);
        CHECK(b.x0 <= b.x1);
        CHECK(b.y0 <= b.y1);
        const auto lifted = lift_2d_to_3d(b, views[v], scene.cloud.positions);
        REQUIRE(lifted.has_value());
        const bool has_point = std::any_of(scene.cloud.positions.begin(), scene.cloud.positions.end(),
                                           [&](const Vec3& p) { return lifted->contains(p); });
        CHECK(has_point);
        const Box3D& gt = scene.boxes[0];
        if ((lifted->min - gt.min).cwiseAbs().maxCoeff() <= 0.05 && (lifted->max - gt.max).cwiseAbs().maxCoeff() <= 0.05) {
          found = true;
        }
      }
    }
    close += found;
  }
  CHECK(close == scenes);
}

TEST_CASE("propose_3d separates distant objects and merges touching ones") {
  PointCloud two;
  add_floor(two, 2.0, 0.03);
  add_sphere(two, Vec3(0.5, 1.0, 0.15), 0.1, 400);
  add_sphere(two, Vec3(1.5, 1.0, 0.15), 0.1, 400);
  Propose3DParams params;
  params.cluster_radius = 0.1;
  const auto boxes = propose_3d(two, params);
  REQUIRE(boxes.size() == 2);
  for (const auto& b : boxes) {
    CHECK(b.max.z() == doctest::Approx(0.25).epsilon(0.01));
    CHECK(b.origin == BoxOrigin::kFrom3D);
  }

  PointCloud touching;
  add_floor(touching, 2.0, 0.04);
  add_box_surface(touching, Vec3(0.5, 0.5, 0.0), Vec3(0.9, 0.9, 0.4), 0.04);
  add_box_surface(touching, Vec3(0.92, 0.5, 0.0), Vec3(1.3, 0.9, 0.3), 0.04);
  const auto merged = propose_3d(touching, params);
  REQUIRE(merged.size() == 1);
  CHECK(merged[0].min.x() == doctest::Approx(0.5));
  CHECK(merged[0].max.x() == doctest::Approx(1.3).epsilon(0.02));
}

TEST_CASE("euclidean_clusters equals brute-force single linkage") {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 50 + 20 * trial;
    std::vector<Vec3> pts;
    std::vector<char> include(n);
    for (int i = 0; i < n && i < 500; ++i) {
      pts.emplace_back(u(rng), u(rng), 0.3 * u(rng));
      include[i] = u(rng) < 0.9;
    }
    include.resize(pts.size());
    const double radius = 0.06;
    const auto got = euclidean_clusters(pts, include, radius);

    std::vector<int> parent(pts.size());
    std::iota(parent.begin(), parent.end(), 0);
    std::function<int(int)> find = [&](int x) { return parent[x] == x ? x : parent[x] = find(parent[x]); };
    for (std::size_t i = 0; i < pts.size(); ++i) {
      for (std::size_t j = 0; j < i; ++j) {
        if (include[i] && include[j] && (pts[i] - pts[j]).norm() <= radius) parent[find(i)] = find(j);
      }
    }
    std::vector<int> want(pts.size(), -1);
    std::map<int, int> dense;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      if (!include[i]) continue;
      want[i] = dense.emplace(find(i), static_cast<int>(dense.size())).first->second;
    }
    CHECK(got == want);
  }
}

TEST_CASE("union_proposals contract") {
  const std::vector<Box3D> r3d{box(Vec3(0, 0, 0), Vec3(1, 1, 1)), box(Vec3(2, 2, 2), Vec3(3, 3, 3))};
  CHECK(union_proposals({}, r3d).size() == 2);
  std::vector<Box3D> lifted{box(Vec3(0, 0, 0), Vec3(1, 1, 1), 0.3), box(Vec3(5, 5, 5), Vec3(6, 6, 6), 0.2)};
  const auto u = union_proposals(lifted, r3d, 0.5);
  REQUIRE(u.size() == 3);
  CHECK(u[0].min == r3d[0].min);
  CHECK(u[1].min == r3d[1].min);
  CHECK(u[2].min == lifted[1].min);
  CHECK_THROWS_AS(union_proposals(lifted, r3d, 0.0), Error);

  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> c(0.0, 4.0), s(0.2, 1.0), jitter(-0.2, 0.2);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<Box3D> gt, a, b;
    for (int i = 0; i < 5; ++i) {
      const Vec3 lo(c(rng), c(rng), c(rng));
      gt.push_back(box(lo, lo + Vec3(s(rng), s(rng), s(rng))));
      auto noisy = [&](const Box3D& g) {
        return box(g.min + Vec3(jitter(rng), jitter(rng), jitter(rng)), g.max + Vec3(jitter(rng), jitter(rng), jitter(rng)),
                   std::uniform_real_distribution<double>(0, 1)(rng));
      };
      if (rng() % 2) a.push_back(noisy(gt.back()));
      if (rng() % 2) b.push_back(noisy(gt.back()));
    }
    const auto un = union_proposals(a, b);
    for (std::size_t i = 0; i < b.size(); ++i) CHECK(un[i].min == b[i].min);
    const double r_un = proposal_pr(un, gt).recall;
    CHECK(r_un >= proposal_pr(b, gt).recall);
  }
}

TEST_CASE("proposal_pr fixtures and exhaustive oracle") {
  const std::vector<Box3D> gt{box(Vec3(0, 0, 0), Vec3(1, 1, 1)), box(Vec3(2, 0, 0), Vec3(3, 1, 1))};
  auto pr = proposal_pr(gt, gt);
  CHECK(pr.precision == 1.0);
  CHECK(pr.recall == 1.0);
  pr = proposal_pr({}, gt);
  CHECK(pr.precision == 0.0);
  CHECK(pr.recall == 0.0);
  CHECK_THROWS_AS(proposal_pr(gt, {}), Error);

  const std::vector<Box3D> three{box(Vec3(0, 0, 0), Vec3(1, 1, 1.2), 0.9), box(Vec3(0.1, 0, 0), Vec3(1, 1, 1), 0.8),
                                 box(Vec3(2.5, 0, 0), Vec3(3.5, 1, 1), 0.4)};
  pr = proposal_pr(three, gt);
  const int best = max_matching(three, gt, 0.25);
  CHECK(best == 2);
  CHECK(pr.recall == doctest::Approx(best / 2.0));
  CHECK(pr.precision == doctest::Approx(best / 3.0));

  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> c(0.0, 2.0), s(0.3, 1.0), sc(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<Box3D> g, p;
    for (int i = 0; i < 3; ++i) {
      const Vec3 lo(c(rng), c(rng), c(rng));
      g.push_back(box(lo, lo + Vec3(s(rng), s(rng), s(rng))));
    }
    for (int i = 0; i < 4; ++i) {
      const Vec3 lo(c(rng), c(rng), c(rng));
      p.push_back(box(lo, lo + Vec3(s(rng), s(rng), s(rng)), sc(rng)));
    }
    const auto got = proposal_pr(p, g);
    CHECK(got.recall * 3 <= max_matching(p, g, 0.25) + 1e-9);
    CHECK(got.precision >= 0.0);
    CHECK(got.precision <= 1.0);
    std::vector<Box3D> more = p;
    Box3D exact = g[0];
    exact.score = 2.0;
    more.push_back(exact);
    CHECK(proposal_pr(more, g).recall >= got.recall);
  }
}

TEST_CASE("proposal JSON round trip") {
  std::vector<Box3D> boxes{box(Vec3(0, 0.5, 0), Vec3(1, 1, 1.25), 0.75)};
  boxes[0].origin = BoxOrigin::kFrom2D;
  const auto back = proposals_from_json(proposals_to_json(boxes));
  REQUIRE(back.size() == 1);
  CHECK(back[0].min == boxes[0].min);
  CHECK(back[0].max == boxes[0].max);
  CHECK(back[0].score == 0.75);
  CHECK(back[0].origin == BoxOrigin::kFrom2D);
  CHECK_THROWS_AS(proposals_from_json("[{\"min\": 1}]"), Error);
}
