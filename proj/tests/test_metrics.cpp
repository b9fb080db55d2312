#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "doctest.h"
#include "oracles.hpp"
#include "scenefuse/error.hpp"
#include "scenefuse/metrics.hpp"

using namespace scenefuse;

namespace {

// Disjoint ground-truth instances over `n` points plus predictions that
// perturb them, with some spurious ones.
struct InstanceFixture {
  std::vector<std::vector<int>> gt;
  std::vector<InstancePrediction> preds;
};

InstanceFixture random_instances(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> n_points(6, 30), n_gt(1, 4), n_pred(1, 6), coin(0, 3);
  std::uniform_real_distribution<double> score(0.0, 1.0);
  const int n = n_points(rng);
  std::vector<int> owner(static_cast<std::size_t>(n));
  const int g = n_gt(rng);
  for (int& o : owner) o = std::uniform_int_distribution<int>(-1, g - 1)(rng);
  InstanceFixture f;
  for (int k = 0; k < g; ++k) {
    std::vector<int> pts;
    for (int i = 0; i < n; ++i) {
      if (owner[static_cast<std::size_t>(i)] == k) pts.push_back(i);
    }
    if (!pts.empty()) f.gt.push_back(pts);
  }
  if (f.gt.empty()) f.gt.push_back({0});
  const int p = n_pred(rng);
  for (int k = 0; k < p; ++k) {
    std::set<int> pts;
    if (coin(rng) > 0) {
      const auto& src = f.gt[static_cast<std::size_t>(k) % f.gt.size()];
      for (int x : src) {
        if (coin(rng) > 0) pts.insert(x);
      }
    }
    const int extra = coin(rng);
    for (int e = 0; e < extra; ++e) pts.insert(std::uniform_int_distribution<int>(0, n - 1)(rng));
    if (pts.empty()) pts.insert(0);
    f.preds.push_back({std::vector<int>(pts.begin(), pts.end()), std::round(score(rng) * 8) / 8});
  }
  return f;
}

}  // namespace

TEST_CASE("miou examples") {
  const std::vector<int> gt{0, 0, 1, 1}, pred{0, 1, 1, 1};
  const MiouResult r = miou(pred, gt, 2);
  CHECK(r.iou[0] == doctest::Approx(0.5));
  CHECK(r.iou[1] == doctest::Approx(2.0 / 3.0));
  CHECK(r.mean == doctest::Approx(7.0 / 12.0));
  CHECK(miou(gt, gt, 2).mean == 1.0);
  const MiouResult absent = miou(gt, gt, 5);
  CHECK(absent.mean == 1.0);
  CHECK_FALSE(absent.present[3]);
  CHECK_THROWS_AS(miou(pred, std::vector<int>{0, 1}, 2), Error);
  const std::vector<int> ignored{0, kUnlabeled, 1, 1};
  CHECK(miou(pred, ignored, 2).iou[1] == 1.0);
  CHECK(r.mean_over(std::vector<int>{1}) == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("miou matches a direct count on random fixtures") {
  std::mt19937_64 rng(11);
  for (int t = 0; t < 100; ++t) {
    const int n = std::uniform_int_distribution<int>(1, 30)(rng);
    const int c = std::uniform_int_distribution<int>(1, 5)(rng);
    std::uniform_int_distribution<int> label(-1, c - 1);
    std::vector<int> pred(static_cast<std::size_t>(n)), gt(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      pred[static_cast<std::size_t>(i)] = std::max(0, label(rng));
      gt[static_cast<std::size_t>(i)] = label(rng);
    }
    CHECK(miou(pred, gt, c).mean == doctest::Approx(oracle::miou_direct(pred, gt, c)).epsilon(1e-12));
  }
}

TEST_CASE("miou of a random labeling concentrates near 1/(2C-1)") {
  const int c = 4, n = 20000;
  std::vector<int> gt(n);
  for (int i = 0; i < n; ++i) gt[static_cast<std::size_t>(i)] = i % c;
  std::vector<int> pred(gt);
  std::mt19937_64 rng(2);
  std::shuffle(pred.begin(), pred.end(), rng);
  const double expected = 1.0 / (2 * c - 1);
  const double p = 1.0 / (c * c), sigma = std::sqrt(p * (1 - p) / n) * c * 2;
  CHECK(std::abs(miou(pred, gt, c).mean - expected) < 3 * sigma);
}

TEST_CASE("hiou examples and bounds") {
  CHECK(hiou(0.5, 0.5) == doctest::Approx(0.5));
  CHECK(hiou(0.2, 0.8) == doctest::Approx(0.32));
  CHECK(hiou(0.0, 0.7) == 0.0);
  CHECK(hiou(0.0, 0.0) == 0.0);
  CHECK_THROWS_AS(hiou(1.2, 0.5), Error);
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 10000; ++i) {
    const double a = u(rng), b = u(rng), h = hiou(a, b);
    REQUIRE(h >= std::min(a, b) - 1e-15);
    REQUIRE(h <= (a + b) / 2 + 1e-15);
  }
}

TEST_CASE("ap50 examples") {
  const std::vector<std::vector<int>> gt{{0, 1, 2}, {3, 4}};
  const std::vector<InstancePrediction> exact{{{3, 4}, 0.1}, {{0, 1, 2}, 0.9}};
  CHECK(ap50_instances(exact, gt) == 1.0);
  const std::vector<InstancePrediction> miss{{{0, 5, 6, 7}, 0.9}, {{2, 3, 8}, 0.8}};
  CHECK(ap50_instances(miss, gt) == 0.0);
  const std::vector<InstancePrediction> three{{{0, 1}, 0.9}, {{0, 1, 2, 3, 4}, 0.8}, {{3, 4, 5}, 0.7}};
  std::vector<std::set<int>> ps, gs;
  std::vector<double> scores;
  for (const auto& p : three) {
    ps.emplace_back(p.points.begin(), p.points.end());
    scores.push_back(p.score);
  }
  for (const auto& g : gt) gs.emplace_back(g.begin(), g.end());
  CHECK(ap50_instances(three, gt) == doctest::Approx(oracle::ap_exhaustive(ps, scores, gs, 0.5)));
  CHECK_THROWS_AS(ap50_instances(three, std::vector<std::vector<int>>{}), Error);
}

TEST_CASE("ap50 matches exhaustive matching on random fixtures") {
  std::mt19937_64 rng(8);
  for (int t = 0; t < 100; ++t) {
    const InstanceFixture f = random_instances(rng);
    std::vector<std::set<int>> ps, gs;
    std::vector<double> scores;
    for (const auto& p : f.preds) {
      ps.emplace_back(p.points.begin(), p.points.end());
      scores.push_back(p.score);
    }
    for (const auto& g : f.gt) gs.emplace_back(g.begin(), g.end());
    CHECK(ap50_instances(f.preds, f.gt) == doctest::Approx(oracle::ap_exhaustive(ps, scores, gs, 0.5)).epsilon(1e-12));
  }
}

TEST_CASE("adding a correct top-scored prediction never lowers ap50") {
  std::mt19937_64 rng(12);
  for (int t = 0; t < 200; ++t) {
    InstanceFixture f = random_instances(rng);
    const double before = ap50_instances(f.preds, f.gt);
    f.gt.push_back({100, 101, 102});
    f.preds.insert(f.preds.begin(), {f.gt.back(), 2.0});
    CHECK(ap50_instances(f.preds, f.gt) >= before - 1e-12);
  }
}

TEST_CASE("eval report json") {
  CHECK(eval_report_json({}) == "{}\n");
  EvalReport report;
  report[1.0] = {0.5, 0.4, 0.6, 0.3, 0.25, 0.75};
  report[0.1] = {0.125, 0.2, 0.3, 0.15, 0.05, 0.5};
  report[0.05] = {};
  const std::string text = eval_report_json(report);
  CHECK(text.find("\"0.05\"") < text.find("\"0.1\""));
  CHECK(text.find("\"0.1\"") < text.find("\"1\""));
  CHECK(parse_eval_report(text) == report);
}
