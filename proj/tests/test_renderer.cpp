#include <cmath>
#include <filesystem>
#include <random>

#include "doctest.h"
#include "oracles.hpp"
#include "scenefuse/error.hpp"
#include "scenefuse/geometry.hpp"
#include "scenefuse/renderer.hpp"

using namespace scenefuse;

namespace {

void add_triangle(TriangleMesh& mesh, const Vec3& a, const Vec3& b, const Vec3& c, const Vec3& color) {
  const int base = static_cast<int>(mesh.vertices.size());
  for (const Vec3& v : {a, b, c}) {
    mesh.vertices.push_back(v);
    mesh.vertex_color.push_back(color);
    mesh.vertex_point.push_back(static_cast<int>(mesh.vertex_point.size()));
  }
  mesh.triangles.push_back({base, base + 1, base + 2});
}

Vec3 pixel_ray(const CameraIntrinsics& k, int x, int y) {
  return Vec3((x + 0.5 - k.cx) / k.fx, (y + 0.5 - k.cy) / k.fy, 1.0);
}

}  // namespace

TEST_CASE("empty mesh renders nothing") {
  const CameraIntrinsics k{50, 50, 16, 12, 32, 24};
  const Framebuffer fb = rasterize(TriangleMesh{}, k, CameraPose{}, kDefaultLight);
  CHECK(fb.width == 32);
  CHECK(fb.height == 24);
  for (std::size_t i = 0; i < fb.correspondence.size(); ++i) {
    CHECK(fb.correspondence[i] == -1);
    CHECK(std::isinf(fb.depth[i]));
    CHECK(fb.color.data[3 * i] == 0.0f);
  }
}

TEST_CASE("nearer of two coaxial triangles wins") {
  TriangleMesh mesh;
  add_triangle(mesh, Vec3(-1, -1, 2), Vec3(1, -1, 2), Vec3(0, 1, 2), Vec3(1, 0, 0));
  add_triangle(mesh, Vec3(-0.5, -0.5, 1), Vec3(0.5, -0.5, 1), Vec3(0, 0.5, 1), Vec3(0, 1, 0));
  const CameraIntrinsics k{10, 10, 5, 5, 10, 10};
  const Framebuffer fb = rasterize(mesh, k, CameraPose{}, kDefaultLight);
  const std::size_t c = fb.index(5, 5);
  REQUIRE(fb.hit(5, 5));
  CHECK(fb.depth[c] == doctest::Approx(1.0));
  CHECK(fb.triangle[c] == 1);
  CHECK(fb.correspondence[c] >= 3);
  CHECK(fb.color.data[3 * c + 1] > 0.0f);
  CHECK(fb.color.data[3 * c] == 0.0f);
}

TEST_CASE("shared edges are covered exactly once") {
  const CameraIntrinsics k{10, 10, 0, 0, 20, 20};
  const Vec3 a(0.25, 0.25, 1), b(1.25, 0.25, 1), c(1.25, 1.25, 1), d(0.25, 1.25, 1);
  TriangleMesh first, second, both;
  add_triangle(first, a, b, c, Vec3(1, 1, 1));
  add_triangle(second, a, c, d, Vec3(1, 1, 1));
  add_triangle(both, a, b, c, Vec3(1, 1, 1));
  add_triangle(both, a, c, d, Vec3(1, 1, 1));
  const Framebuffer f1 = rasterize(first, k, CameraPose{}, kDefaultLight);
  const Framebuffer f2 = rasterize(second, k, CameraPose{}, kDefaultLight);
  const Framebuffer fb = rasterize(both, k, CameraPose{}, kDefaultLight);
  int covered = 0;
  for (std::size_t i = 0; i < fb.correspondence.size(); ++i) {
    const bool h1 = f1.correspondence[i] >= 0;
    const bool h2 = f2.correspondence[i] >= 0;
    CHECK_FALSE((h1 && h2));
    CHECK((h1 || h2) == (fb.correspondence[i] >= 0));
    covered += h1 || h2;
  }
  CHECK(covered == 100);
}

TEST_CASE("triangles behind the camera are clipped, straddling ones are kept") {
  TriangleMesh mesh;
  add_triangle(mesh, Vec3(-1, -1, -1), Vec3(1, -1, -1), Vec3(0, 1, -1), Vec3(1, 1, 1));
  const CameraIntrinsics k{10, 10, 5, 5, 10, 10};
  const Framebuffer behind = rasterize(mesh, k, CameraPose{}, kDefaultLight);
  for (int v : behind.correspondence) CHECK(v == -1);

  TriangleMesh straddle;
  add_triangle(straddle, Vec3(-0.2, 0.0, -1), Vec3(0.2, 0.0, -1), Vec3(0.0, 0.0, 3), Vec3(1, 1, 1));
  add_triangle(straddle, Vec3(-1, -1, 2), Vec3(1, -1, 2), Vec3(0, 1, 2), Vec3(1, 1, 1));
  const Framebuffer fb = rasterize(straddle, k, CameraPose{}, kDefaultLight);
  for (std::size_t i = 0; i < fb.depth.size(); ++i) {
    if (fb.correspondence[i] >= 0) CHECK(fb.depth[i] > 0.0);
  }
}

TEST_CASE("random triangle soup matches a ray-casting oracle") {
  std::mt19937_64 rng(19);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::uniform_real_distribution<double> depth(1.0, 4.0);
  const CameraIntrinsics k{40, 40, 24, 20, 48, 40};
  for (int trial = 0; trial < 8; ++trial) {
    TriangleMesh mesh;
    for (int t = 0; t < 25; ++t) {
      const Vec3 center(1.5 * u(rng), 1.5 * u(rng), depth(rng));
      add_triangle(mesh, center + 0.4 * Vec3(u(rng), u(rng), u(rng)),
                   center + 0.4 * Vec3(u(rng), u(rng), u(rng)),
                   center + 0.4 * Vec3(u(rng), u(rng), u(rng)), Vec3(0.5, 0.5, 0.5));
    }
    const Framebuffer fb = rasterize(mesh, k, CameraPose{}, kDefaultLight);
    int compared = 0;
    for (int y = 0; y < k.height; ++y) {
      for (int x = 0; x < k.width; ++x) {
        const Vec3 dir = pixel_ray(k, x, y);
        double best = std::numeric_limits<double>::infinity(), second = best, margin = 1.0;
        int best_tri = -1;
        for (std::size_t t = 0; t < mesh.triangles.size(); ++t) {
          const auto& tri = mesh.triangles[t];
          const Vec3 &a = mesh.vertices[tri[0]], &b = mesh.vertices[tri[1]], &c = mesh.vertices[tri[2]];
          const double m = oracle::ray_edge_margin(Vec3::Zero(), dir, a, b, c);
          if (std::abs(m) < 1e-6) margin = 0.0;
          const auto hit = oracle::ray_triangle(Vec3::Zero(), dir, a, b, c);
          if (!hit) continue;
          if (*hit < best) {
            second = best;
            best = *hit;
            best_tri = static_cast<int>(t);
          } else if (*hit < second) {
            second = *hit;
          }
        }
        if (margin == 0.0 || second - best < 1e-9) continue;
        ++compared;
        const std::size_t i = fb.index(x, y);
        if (best_tri < 0) {
          CHECK(fb.correspondence[i] == -1);
          continue;
        }
        REQUIRE(fb.correspondence[i] >= 0);
        CHECK(fb.triangle[i] == best_tri);
        CHECK(fb.depth[i] == doctest::Approx(best).epsilon(1e-9));
        const Vec3 surface = best * dir;
        const auto& tri = mesh.triangles[best_tri];
        int nearest = tri[0];
        for (int v : tri) {
          if ((mesh.vertices[v] - surface).norm() < (mesh.vertices[nearest] - surface).norm()) nearest = v;
        }
        CHECK(fb.correspondence[i] == mesh.vertex_point[nearest]);
      }
    }
    CHECK(compared > k.width * k.height * 9 / 10);
  }
}

TEST_CASE("correspondence is consistent with projection on a finely meshed plane") {
  PointCloud cloud;
  for (int x = 0; x <= 40; ++x) {
    for (int y = 0; y <= 40; ++y) cloud.push_back(Vec3(-0.4 + 0.02 * x, -0.4 + 0.02 * y, 0.0), Vec3(0.7, 0.2, 0.2));
  }
  const TriangleMesh mesh = mesh_scene(cloud);
  REQUIRE(mesh.triangles.size() > 1000);
  Camera cam;
  cam.intrinsics = {60, 60, 32, 32, 64, 64};
  cam.pose = CameraPose::look_at(Vec3(0.3, -0.5, 1.2), Vec3::Zero());
  const Framebuffer fb = rasterize(mesh, cam.intrinsics, cam.pose, kDefaultLight);
  int hits = 0;
  for (int y = 0; y < fb.height; ++y) {
    for (int x = 0; x < fb.width; ++x) {
      const int p = fb.correspondence[fb.index(x, y)];
      if (p < 0) continue;
      ++hits;
      const auto px = project_point(cloud.positions[p], cam.intrinsics, cam.pose);
      REQUIRE(px.has_value());
      CHECK(std::hypot(px->u - (x + 0.5), px->v - (y + 0.5)) <= 1.5);
    }
  }
  CHECK(hits > 500);
}

TEST_CASE("render_views is order-stable and thread-count independent") {
  PointCloud cloud;
  for (int x = 0; x <= 20; ++x) {
    for (int y = 0; y <= 20; ++y) cloud.push_back(Vec3(0.05 * x, 0.05 * y, 0.0), Vec3(0.2, 0.6, 0.3));
  }
  const TriangleMesh mesh = mesh_scene(cloud);
  Aabb3 bounds = Aabb3::of(cloud.positions);
  bounds.max.z() = 0.5;
  RingParams rp;
  rp.width = rp.height = 48;
  const auto cams = camera_ring(bounds, 5, 0.5, rp);
  const auto serial = render_views(mesh, cams, kDefaultLight, 1);
  const auto parallel = render_views(mesh, cams, kDefaultLight, 3);
  REQUIRE(serial.size() == 5);
  for (std::size_t i = 0; i < serial.size(); ++i) {
    CHECK(serial[i].framebuffer.correspondence == parallel[i].framebuffer.correspondence);
    CHECK(serial[i].framebuffer.color.data == parallel[i].framebuffer.color.data);
    CHECK(serial[i].pose.center() == cams[i].pose.center());
  }
}

TEST_CASE("lift_pixel_labels keeps the nearest pixel and checks shapes") {
  RenderedView view;
  view.intrinsics = {1, 1, 1, 1, 2, 1};
  view.framebuffer = Framebuffer(2, 1);
  view.framebuffer.correspondence = {4, 4};
  view.framebuffer.depth = {2.0, 1.0};
  const std::vector<int> labels{7, 9};
  const auto lifted = lift_pixel_labels<int>(view, labels);
  REQUIRE(lifted.size() == 1);
  CHECK(lifted.at(4) == 9);
  const std::vector<int> wrong{1, 2, 3};
  CHECK_THROWS_AS(lift_pixel_labels<int>(view, wrong), Error);
}

TEST_CASE("framebuffer dumps round trip") {
  TriangleMesh mesh;
  add_triangle(mesh, Vec3(-1, -1, 2), Vec3(1, -1, 2), Vec3(0, 1, 2), Vec3(0.9, 0.1, 0.1));
  const CameraIntrinsics k{8, 8, 4, 4, 8, 8};
  const Framebuffer fb = rasterize(mesh, k, CameraPose{}, kDefaultLight);
  const auto dir = std::filesystem::temp_directory_path() / "scenefuse_test_renderer";
  write_ppm(dir / "v.ppm", fb.color);
  write_correspondence(dir / "v.c3dm", fb);
  write_depth(dir / "v.dpth", fb);
  const Framebuffer back = read_framebuffer(dir / "v.ppm", dir / "v.c3dm", dir / "v.dpth");
  CHECK(back.correspondence == fb.correspondence);
  for (std::size_t i = 0; i < fb.depth.size(); ++i) {
    if (std::isinf(fb.depth[i])) {
      CHECK(std::isinf(back.depth[i]));
    } else {
      CHECK(back.depth[i] == doctest::Approx(fb.depth[i]).epsilon(1e-6));
    }
  }
  std::filesystem::remove_all(dir);
}
