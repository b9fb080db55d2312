#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <numeric>
#include <random>

#include "doctest.h"
#include "oracles.hpp"
#include "scenefuse/datagen.hpp"
#include "scenefuse/error.hpp"
#include "scenefuse/regions.hpp"

using namespace scenefuse;

namespace {

PointCloud plane_grid(int nx, int ny, double spacing, const Vec3& origin, const Vec3& u, const Vec3& v,
                      const Vec3& color, int label = 0) {
  PointCloud cloud;
  for (int i = 0; i < nx; ++i) {
    for (int j = 0; j < ny; ++j) cloud.push_back(origin + i * spacing * u + j * spacing * v, color, label);
  }
  return cloud;
}

void append(PointCloud& dst, const PointCloud& src) {
  for (std::size_t i = 0; i < src.size(); ++i) {
    dst.push_back(src.positions[i], src.colors[i], src.sem_label[i], src.inst_label[i]);
  }
}

}  // namespace

TEST_CASE("single uniform plane is one region") {
  const PointCloud cloud = plane_grid(20, 20, 0.04, Vec3::Zero(), Vec3::UnitX(), Vec3::UnitY(), Vec3(0.5, 0.5, 0.5));
  const RegionSet r = oversegment(cloud);
  CHECK(r.region_count == 1);
  CHECK(r.edges.empty());
}

TEST_CASE("two separated parallel planes are two regions") {
  PointCloud cloud = plane_grid(15, 15, 0.04, Vec3::Zero(), Vec3::UnitX(), Vec3::UnitY(), Vec3(0.5, 0.5, 0.5));
  append(cloud, plane_grid(15, 15, 0.04, Vec3(0, 0, 0.3), Vec3::UnitX(), Vec3::UnitY(), Vec3(0.5, 0.5, 0.5)));
  const RegionSet r = oversegment(cloud);
  CHECK(r.region_count == 2);
  CHECK(r.edges.empty());
  CHECK(r.region_of[0] != r.region_of[cloud.size() - 1]);
}

TEST_CASE("oversegment is label-pure on generated rooms and order independent") {
  const SceneSpec spec = default_scene_spec();
  for (int s = 0; s < 4; ++s) {
    const GeneratedScene scene = gen_scene(spec, scene_seed(11, s));
    const RegionSet r = oversegment(scene.cloud);
    CHECK(r.region_count >= 5);
    CHECK(r.region_count <= 50);
    const auto major = region_majority_labels(r, scene.cloud.sem_label);
    std::vector<int> agree(r.region_count, 0);
    for (std::size_t i = 0; i < scene.cloud.size(); ++i) agree[r.region_of[i]] += scene.cloud.sem_label[i] == major[r.region_of[i]];
    const auto sizes = r.sizes();
    for (int id = 0; id < r.region_count; ++id) {
      CHECK(static_cast<double>(agree[id]) / sizes[id] >= 0.95);
      CHECK(sizes[id] >= SegParams{}.min_size);
    }

    std::vector<int> perm(scene.cloud.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), std::mt19937_64(s));
    const PointCloud shuffled = scene.cloud.subset(perm);
    const RegionSet rs = oversegment(shuffled);
    CHECK(rs.region_count == r.region_count);
    std::vector<int> unshuffled(scene.cloud.size());
    for (std::size_t i = 0; i < perm.size(); ++i) unshuffled[perm[i]] = rs.region_of[i];
    CHECK(canonical_relabel(scene.cloud.positions, unshuffled) ==
          canonical_relabel(scene.cloud.positions, r.region_of));
  }
}

TEST_CASE("edge features on hand fixtures") {
  // Region 0: floor patch, region 1: identical patch shifted in x, region 2: wall.
  PointCloud cloud = plane_grid(4, 4, 0.05, Vec3::Zero(), Vec3::UnitX(), Vec3::UnitY(), Vec3(0.2, 0.2, 0.2));
  append(cloud, plane_grid(4, 4, 0.05, Vec3(0.2, 0, 0), Vec3::UnitX(), Vec3::UnitY(), Vec3(0.2, 0.2, 0.2)));
  append(cloud, plane_grid(4, 4, 0.05, Vec3(0.4, 0, 0), Vec3::UnitZ(), Vec3::UnitY(), Vec3(0.8, 0.2, 0.2)));
  std::vector<int> ids(48);
  for (int i = 0; i < 48; ++i) ids[i] = i / 16;
  const RegionSet r = make_region_set(cloud.positions, ids, 0.06);
  REQUIRE(r.edges.size() == 2);
  CHECK(r.edges[0].a == 0);
  CHECK(r.edges[0].b == 1);
  CHECK(r.edges[1].a == 1);
  CHECK(r.edges[1].b == 2);
  // Border counts: column x=0.15 vs x=0.2, 4 rows, each point links straight
  // across (0.05) but not diagonally (0.0707 > 0.06).
  CHECK(r.edges[0].border == 4);

  NormalEstimate normals;
  for (int i = 0; i < 48; ++i) normals.normals.push_back(i < 32 ? Vec3::UnitZ() : Vec3(-1, 0, 0));
  normals.curvature.assign(48, 0.0);
  const EdgeFeatures f = edge_features(cloud, normals, r);
  CHECK(f(0, 0) == doctest::Approx(0.2));
  CHECK(f(0, 1) == doctest::Approx(0.0));
  CHECK(f(0, 2) == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(f(0, 3) == doctest::Approx(4.0 / 16.0));
  // Centroids (0.275, 0.075, 0) and (0.4, 0.075, 0.075).
  CHECK(f(1, 0) == doctest::Approx(std::hypot(0.125, 0.075)));
  CHECK(f(1, 1) == doctest::Approx(0.6));
  CHECK(f(1, 2) == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("boundary classifier gradients match central differences") {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> g(0.0, 1.0);
  EdgeFeatures f(12, kEdgeFeatureDim);
  std::vector<int> y(12);
  for (int i = 0; i < 12; ++i) {
    for (int c = 0; c < kEdgeFeatureDim; ++c) f(i, c) = g(rng);
    y[i] = i % 3 == 0;
  }
  for (EdgeLoss kind : {EdgeLoss::kFocal, EdgeLoss::kBce}) {
    for (int draw = 0; draw < 5; ++draw) {
      EdgeClassifier m;
      for (int c = 0; c < kEdgeFeatureDim; ++c) m.weights[c] = g(rng);
      m.bias = g(rng);
      EdgeLossGrad grad;
      edge_loss(m, f, y, kind, &grad);
      const double h = 1e-5;
      for (int c = 0; c <= kEdgeFeatureDim; ++c) {
        EdgeClassifier plus = m, minus = m;
        double* pp = c < kEdgeFeatureDim ? &plus.weights[c] : &plus.bias;
        double* pm = c < kEdgeFeatureDim ? &minus.weights[c] : &minus.bias;
        *pp += h;
        *pm -= h;
        const double fd = (edge_loss(plus, f, y, kind) - edge_loss(minus, f, y, kind)) / (2 * h);
        const double an = c < kEdgeFeatureDim ? grad.weights[c] : grad.bias;
        CHECK(std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-5}) < 1e-4);
      }
    }
  }
}

TEST_CASE("boundary classifier trains to separation with monotone loss") {
  EdgeFeatures f(20, kEdgeFeatureDim);
  std::vector<int> y(20);
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 20; ++i) {
    y[i] = i % 2;
    f(i, 0) = u(rng);
    f(i, 1) = y[i] ? 0.5 + u(rng) : -0.5 - u(rng);
    f(i, 2) = u(rng);
    f(i, 3) = u(rng);
  }
  for (EdgeLoss kind : {EdgeLoss::kFocal, EdgeLoss::kBce}) {
    const auto result = train_boundary_classifier(f, y, kind, 200);
    for (std::size_t e = 1; e < result.loss_history.size(); ++e) {
      CHECK(result.loss_history[e] <= result.loss_history[e - 1]);
    }
    const auto p = result.model.predict(f);
    int correct = 0;
    for (int i = 0; i < 20; ++i) correct += (p[i] >= 0.5) == (y[i] == 1);
    CHECK(correct == 20);
  }
  const std::vector<int> single(20, 1);
  CHECK_THROWS_AS(train_boundary_classifier(f, single, EdgeLoss::kBce, 5), Error);
}

TEST_CASE("filter_confident") {
  BoundaryLabels labels{{0.9, 0.5, 0.1}, LabelSource::kPredicted};
  const auto kept = filter_confident(labels, 0.8);
  REQUIRE(kept.size() == 2);
  CHECK(kept[0].edge == 0);
  CHECK(kept[0].label == 1);
  CHECK(kept[1].edge == 2);
  CHECK(kept[1].label == 0);
  CHECK(filter_confident({{0.5, 0.5, 0.5}, LabelSource::kPredicted}, 0.8).empty());
  CHECK_THROWS_AS(filter_confident(labels, 0.4), Error);

  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  BoundaryLabels random;
  for (int i = 0; i < 500; ++i) random.prob.push_back(u(rng));
  std::size_t prev = random.prob.size() + 1;
  for (double gamma = 0.51; gamma < 1.0; gamma += 0.02) {
    const auto k = filter_confident(random, gamma);
    CHECK(k.size() <= prev);
    prev = k.size();
    for (const auto& e : k) CHECK((e.prob >= gamma || e.prob <= 1.0 - gamma));
  }
}

TEST_CASE("boundary_ap fixtures and oracle agreement") {
  BoundaryLabels gt{{1, 0, 1, 0}, LabelSource::kGroundTruth};
  const double ap = boundary_ap({{0.9, 0.8, 0.3, 0.1}, LabelSource::kPredicted}, gt);
  CHECK(ap == doctest::Approx(0.5 + 0.5 * (1.0 + 2.0 / 3.0) / 2.0));
  CHECK(boundary_ap({{0.9, 0.1, 0.8, 0.2}, LabelSource::kPredicted}, gt) == doctest::Approx(1.0));
  for (int n = 1; n <= 8; ++n) {
    BoundaryLabels pred, one;
    for (int i = 0; i < n; ++i) {
      pred.prob.push_back(1.0 - 0.1 * i);
      one.prob.push_back(i == n - 1 ? 1.0 : 0.0);
    }
    CHECK(boundary_ap(pred, one) == doctest::Approx(1.0 / n));
  }
  CHECK_THROWS_AS(boundary_ap({{0.3}, LabelSource::kPredicted}, {{0.0}, LabelSource::kGroundTruth}), Error);

  std::mt19937_64 rng(10);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 1 + trial % 30;
    BoundaryLabels pred, truth;
    std::vector<int> g(n);
    for (int i = 0; i < n; ++i) {
      pred.prob.push_back(std::round(u(rng) * 10) / 10);
      g[i] = u(rng) < 0.4;
    }
    g[trial % n] = 1;
    for (int v : g) truth.prob.push_back(v);
    CHECK(boundary_ap(pred, truth) == doctest::Approx(oracle::boundary_ap_prefix(pred.prob, g)).epsilon(1e-12));
  }
}

TEST_CASE("REGS dump round trip") {
  PointCloud cloud = plane_grid(4, 4, 0.05, Vec3::Zero(), Vec3::UnitX(), Vec3::UnitY(), Vec3(0.2, 0.2, 0.2));
  std::vector<int> ids(16);
  for (int i = 0; i < 16; ++i) ids[i] = i < 8 ? 0 : 1;
  const RegionSet r = make_region_set(cloud.positions, ids, 0.06);
  BoundaryLabels labels{std::vector<double>(r.edges.size(), 0.25), LabelSource::kPredicted};
  const auto path = std::filesystem::temp_directory_path() / "scenefuse_test_regions.regs";
  write_regions(path, r, &labels);
  BoundaryLabels back_labels;
  const RegionSet back = read_regions(path, &back_labels);
  CHECK(back.region_of == r.region_of);
  REQUIRE(back.edges.size() == r.edges.size());
  CHECK(back.edges[0].border == r.edges[0].border);
  CHECK(back_labels.prob[0] == doctest::Approx(0.25));
  std::filesystem::remove(path);
}
