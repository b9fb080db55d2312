#include <cmath>
#include <numbers>
#include <random>
#include <set>

#include "doctest.h"
#include "oracles.hpp"
#include "scenefuse/error.hpp"
#include "scenefuse/geometry.hpp"
#include "scenefuse/ply.hpp"
#include "scenefuse/spatial.hpp"

using namespace scenefuse;

namespace {

CameraPose random_pose(std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  Eigen::Quaterniond q(g(rng), g(rng), g(rng), g(rng));
  q.normalize();
  CameraPose pose;
  pose.rotation = q.toRotationMatrix();
  pose.translation = Vec3(g(rng), g(rng), g(rng));
  return pose;
}

int count_unique(const std::vector<Triangle>& tris) {
  std::set<int> v;
  for (const auto& t : tris) v.insert(t.begin(), t.end());
  return static_cast<int>(v.size());
}

double total_area(std::span<const Vec2> pts, const std::vector<Triangle>& tris) {
  double sum = 0.0;
  for (const auto& t : tris) {
    const Vec2 a = pts[t[0]], b = pts[t[1]], c = pts[t[2]];
    sum += 0.5 * std::abs((b - a).x() * (c - a).y() - (b - a).y() * (c - a).x());
  }
  return sum;
}

}  // namespace

TEST_CASE("project_point on the identity camera") {
  const CameraIntrinsics k{1, 1, 0, 0, 1, 1};
  const auto px = project_point({0, 0, 1}, k, CameraPose{});
  REQUIRE(px.has_value());
  CHECK(px->u == 0.0);
  CHECK(px->v == 0.0);
  CHECK(px->depth == 1.0);
  CHECK_FALSE(project_point({0, 0, -1}, k, CameraPose{}).has_value());
}

TEST_CASE("project_point manual pinhole arithmetic and its inverse") {
  const CameraIntrinsics k{100, 100, 50, 50, 100, 100};
  const auto px = project_point({0.1, 0.2, 1.0}, k, CameraPose{});
  REQUIRE(px.has_value());
  CHECK(px->u == doctest::Approx(60.0).epsilon(1e-12));
  CHECK(px->v == doctest::Approx(70.0).epsilon(1e-12));
  CHECK(px->depth == doctest::Approx(1.0));
  const Vec3 back = unproject_pixel(*px, k, CameraPose{});
  CHECK((back - Vec3(0.1, 0.2, 1.0)).norm() < 1e-12);
  CHECK(unproject_pixel({0, 0, 1}, CameraIntrinsics{1, 1, 0, 0, 1, 1}, CameraPose{}) == Vec3(0, 0, 1));
}

TEST_CASE("unproject_pixel rejects non-positive depth") {
  try {
    unproject_pixel({1, 1, 0.0}, CameraIntrinsics{}, CameraPose{});
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kDegenerateDepth);
  }
}

TEST_CASE("project/unproject round trip over random poses") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  const CameraIntrinsics k{320, 300, 160, 120, 320, 240};
  int checked = 0;
  for (int i = 0; i < 2000; ++i) {
    const CameraPose pose = random_pose(rng);
    const Vec3 p(u(rng), u(rng), u(rng));
    const auto px = project_point(p, k, pose);
    if (!px) continue;
    const Vec3 back = unproject_pixel(*px, k, pose);
    CHECK((back - p).norm() / std::max(1.0, p.norm()) < 1e-6);
    const auto again = project_point(back, k, pose);
    REQUIRE(again.has_value());
    CHECK(std::abs(again->u - px->u) <= 1e-6 * std::max(1.0, std::abs(px->u)));
    ++checked;
  }
  CHECK(checked > 500);
}

TEST_CASE("delaunay_2d small cases") {
  const std::vector<Vec2> tri{{0, 0}, {1, 0}, {0, 1}};
  CHECK(delaunay_2d(tri).size() == 1);

  const std::vector<Vec2> square{{0, 0}, {1, 0}, {1, 1}, {0, 1}};
  const auto tris = delaunay_2d(square);
  CHECK(tris.size() == 2);
  CHECK(oracle::empty_circumcircles(square, tris));
  CHECK(total_area(square, tris) == doctest::Approx(1.0));

  const std::vector<Vec2> line{{0, 0}, {1, 1}, {2, 2}};
  CHECK_THROWS_AS(delaunay_2d(line), Error);
  const std::vector<Vec2> two{{0, 0}, {1, 1}};
  CHECK_THROWS_AS(delaunay_2d(two), Error);
}

TEST_CASE("delaunay_2d brute-force circumcircle property on random inputs") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 60; ++trial) {
    std::uniform_int_distribution<int> count(3, 200);
    std::uniform_real_distribution<double> u(-5.0, 5.0);
    const int n = count(rng);
    std::vector<Vec2> pts;
    for (int i = 0; i < n; ++i) pts.emplace_back(u(rng), u(rng));
    const auto tris = delaunay_2d(pts);
    CHECK(oracle::empty_circumcircles(pts, tris));
    CHECK(count_unique(tris) == n);
    CHECK(total_area(pts, tris) == doctest::Approx(oracle::hull_area(pts)).epsilon(1e-9));
  }
}

TEST_CASE("delaunay_2d handles a jittered grid with near-cocircular points") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> j(-1e-3, 1e-3);
  std::vector<Vec2> pts;
  for (int x = 0; x < 15; ++x) {
    for (int y = 0; y < 12; ++y) pts.emplace_back(x + j(rng), y + j(rng));
  }
  const auto tris = delaunay_2d(pts);
  CHECK(oracle::empty_circumcircles(pts, tris));
  CHECK(count_unique(tris) == static_cast<int>(pts.size()));
  CHECK(total_area(pts, tris) == doctest::Approx(oracle::hull_area(pts)).epsilon(1e-9));
}

TEST_CASE("mesh_scene on a 4-point plane gives two triangles") {
  PointCloud cloud;
  for (const Vec3& p : {Vec3(0, 0, 0), Vec3(0.05, 0, 0), Vec3(0.05, 0.05, 0), Vec3(0, 0.05, 0)}) {
    cloud.push_back(p, Vec3(0.5, 0.5, 0.5), 0, -1);
  }
  MeshParams params;
  params.normal_k = 4;
  const TriangleMesh mesh = mesh_scene(cloud, params);
  CHECK(mesh.triangles.size() == 2);
  CHECK(mesh.vertices.size() == 4);
  mesh.validate();
}

TEST_CASE("mesh_scene keeps parallel planes as separate patches") {
  PointCloud cloud;
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> j(-0.01, 0.01);
  for (int plane = 0; plane < 2; ++plane) {
    for (int x = 0; x < 10; ++x) {
      for (int y = 0; y < 10; ++y) {
        cloud.push_back(Vec3(x * 0.05 + j(rng), y * 0.05 + j(rng), plane * 0.3), Vec3(0.5, 0.5, 0.5),
                        plane, -1);
      }
    }
  }
  MeshStats stats;
  const TriangleMesh mesh = mesh_scene(cloud, {}, &stats);
  mesh.validate();
  CHECK(mesh.vertices.size() == 200);
  for (const auto& t : mesh.triangles) {
    const int a = cloud.sem_label[mesh.vertex_point[t[0]]];
    CHECK(cloud.sem_label[mesh.vertex_point[t[1]]] == a);
    CHECK(cloud.sem_label[mesh.vertex_point[t[2]]] == a);
    CHECK(triangle_area(mesh.vertices[t[0]], mesh.vertices[t[1]], mesh.vertices[t[2]]) > 1e-12);
  }
}

TEST_CASE("camera_ring poses") {
  Aabb3 bounds{Vec3(0, 0, 0), Vec3(2, 2, 1)};
  const auto one = camera_ring(bounds, 1, 0.3);
  REQUIRE(one.size() == 1);
  const auto px = project_point(bounds.center(), one[0].intrinsics, one[0].pose);
  REQUIRE(px.has_value());
  CHECK(px->u == doctest::Approx(one[0].intrinsics.cx));

  const auto four = camera_ring(bounds, 4, 0.0);
  REQUIRE(four.size() == 4);
  const double expected[] = {0.0, 90.0, 180.0, -90.0};
  for (int i = 0; i < 4; ++i) {
    const Vec3 c = four[i].pose.center() - bounds.center();
    const double yaw = std::atan2(c.y(), c.x()) * 180.0 / std::numbers::pi;
    const double diff = std::remainder(yaw - expected[i], 360.0);
    CHECK(std::abs(diff) < 1e-9);
  }
  for (const auto& cam : camera_ring(bounds, 7, 0.6)) {
    CHECK_NOTHROW(cam.pose.validate());
    const auto p = project_point(bounds.center(), cam.intrinsics, cam.pose);
    REQUIRE(p.has_value());
    CHECK(p->u >= 0);
    CHECK(p->u < cam.intrinsics.width);
    CHECK(p->v >= 0);
    CHECK(p->v < cam.intrinsics.height);
  }
  CHECK_THROWS_AS(camera_ring(Aabb3{Vec3(1, 1, 1), Vec3(1, 1, 1)}, 3, 0.1), Error);
}

TEST_CASE("PLY subset round trip") {
  PointCloud cloud;
  cloud.push_back(Vec3(0.125, -2.5, 3.0), Vec3(0.25, 0.5, 1.0), 3, -1);
  cloud.push_back(Vec3(1.0, 2.0, 3.0), Vec3(0, 0, 0), -1, 7);
  const PointCloud back = decode_ply(encode_ply(cloud));
  REQUIRE(back.size() == 2);
  CHECK(back.positions[0] == cloud.positions[0]);
  CHECK(back.sem_label[1] == -1);
  CHECK(back.inst_label[1] == 7);
  CHECK_THROWS_AS(decode_ply("ply\nformat binary_little_endian 1.0\n"), Error);
}

TEST_CASE("PointGrid knn matches brute force") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<Vec3> pts;
  for (int i = 0; i < 400; ++i) pts.emplace_back(u(rng), u(rng), 0.1 * u(rng));
  const PointGrid grid(pts, 0.07);
  for (int q = 0; q < 50; ++q) {
    const Vec3 query(u(rng), u(rng), 0.0);
    auto got = grid.knn(query, 10);
    std::vector<std::pair<double, int>> all;
    for (int i = 0; i < 400; ++i) all.push_back({(pts[i] - query).norm(), i});
    std::sort(all.begin(), all.end());
    REQUIRE(got.size() == 10);
    for (int i = 0; i < 10; ++i) CHECK(got[i] == all[i].second);
  }
}
