#pragma once

// Seeded loss-through-encoder fixtures for finite-difference gradient checks.

#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "scenefuse/embeddings.hpp"
#include "scenefuse/losses.hpp"
#include "scenefuse/regions.hpp"

namespace gradcheck {

using namespace scenefuse;

struct Case {
  std::string name;
  VecX x0;
  std::function<double(const VecX&, VecX*)> eval;
};

struct Fixture {
  EncoderParams params;
  std::vector<MatX> regions;
  std::mt19937_64 rng;
};

inline VecX random_unit(std::mt19937_64& rng, int d) {
  std::normal_distribution<double> n(0.0, 1.0);
  VecX v(d);
  for (int i = 0; i < d; ++i) v[i] = n(rng);
  return v.normalized();
}

inline Fixture make_fixture(std::uint64_t seed, int n_regions = 6) {
  Fixture f{EncoderParams::init(seed, 16, 12), {}, std::mt19937_64(seed * 7919 + 1)};
  std::uniform_real_distribution<double> u(-1.0, 1.0), c(0.0, 1.0);
  std::uniform_int_distribution<int> count(3, 7);
  for (int i = 0; i < f.params.b1.size(); ++i) f.params.b1[i] = 0.1 * u(f.rng);
  for (int i = 0; i < f.params.b2.size(); ++i) f.params.b2[i] = 0.1 * u(f.rng);
  for (int r = 0; r < n_regions; ++r) {
    MatX x(count(f.rng), kPointFeatureDim);
    for (int p = 0; p < x.rows(); ++p) {
      for (int k = 0; k < 3; ++k) x(p, k) = 0.3 * u(f.rng);
      for (int k = 3; k < 6; ++k) x(p, k) = c(f.rng);
      x.block<1, 3>(p, 6) = random_unit(f.rng, 3).transpose();
    }
    f.regions.push_back(x);
  }
  return f;
}

inline std::vector<RegionEncoding> encode(const EncoderParams& p, const std::vector<MatX>& regions) {
  std::vector<RegionEncoding> out;
  for (const MatX& x : regions) out.push_back(encode_points(p, x));
  return out;
}

inline std::vector<VecX> outputs(const std::vector<RegionEncoding>& enc) {
  std::vector<VecX> out;
  for (const auto& e : enc) out.push_back(e.output.values);
  return out;
}

inline std::vector<VecX> hiddens(const std::vector<RegionEncoding>& enc) {
  std::vector<VecX> out;
  for (const auto& e : enc) out.push_back(e.hidden.values);
  return out;
}

// Wraps a loss over region outputs (and optionally hidden features) into a
// function of the flattened encoder parameters.
using RegionLoss = std::function<LossReport(const std::vector<RegionEncoding>&)>;

inline Case encoder_case(const std::string& name, Fixture f, RegionLoss loss, bool uses_hidden) {
  const VecX x0 = f.params.flatten();
  auto params = std::make_shared<EncoderParams>(f.params);
  auto regions = std::make_shared<std::vector<MatX>>(f.regions);
  return {name, x0, [params, regions, loss, uses_hidden](const VecX& x, VecX* grad) {
            EncoderParams p = *params;
            p.assign(x);
            const auto enc = encode(p, *regions);
            const LossReport r = loss(enc);
            if (grad != nullptr) {
              const std::size_t n = enc.size();
              std::vector<VecX> go(r.input_grads.end() - static_cast<long>(n), r.input_grads.end());
              std::vector<VecX> gh;
              if (uses_hidden) gh.assign(r.input_grads.begin(), r.input_grads.begin() + static_cast<long>(n));
              *grad = region_grads(p, enc, go, gh);
            }
            return r.value;
          }};
}

inline std::vector<Case> loss_cases(std::uint64_t seed) {
  std::vector<Case> cases;
  {
    Fixture f = make_fixture(seed);
    const VecX anchor = random_unit(f.rng, f.params.dim());
    std::uniform_real_distribution<double> w(0.2, 1.0);
    const std::vector<double> weights{w(f.rng), w(f.rng)};
    // Region order: positives 0..1, negatives 2..n-1, matching input_grads.
    cases.push_back(encoder_case("contrastive", std::move(f), [anchor, weights](const auto& enc) {
      const auto out = outputs(enc);
      std::vector<VecX> pos(out.begin(), out.begin() + 2), neg(out.begin() + 2, out.end());
      return loss_contrastive(anchor, pos, neg, kDefaultTau, weights);
    }, false));
  }
  {
    Fixture f = make_fixture(seed + 1);
    std::vector<VecX> teachers;
    for (std::size_t r = 0; r < f.regions.size(); ++r) teachers.push_back(random_unit(f.rng, f.params.dim()));
    cases.push_back(encoder_case("distill", std::move(f), [teachers](const auto& enc) {
      LossReport total;
      const double inv = 1.0 / static_cast<double>(enc.size());
      for (std::size_t r = 0; r < enc.size(); ++r) {
        LossReport one = loss_distill(teachers[r], enc[r].output.values);
        total.value += inv * one.value;
        total.input_grads.push_back(inv * one.input_grads[0]);
      }
      return total;
    }, false));
  }
  {
    Fixture f = make_fixture(seed + 2);
    const int n = static_cast<int>(f.regions.size());
    std::vector<RegionEdge> edges;
    std::vector<ConfidentEdge> confident;
    std::bernoulli_distribution coin(0.5);
    for (int a = 0; a < n; ++a) {
      for (int b = a + 1; b < n; ++b) {
        if (!coin(f.rng)) continue;
        confident.push_back({static_cast<int>(edges.size()), coin(f.rng) ? 1 : 0, 0.9});
        edges.push_back({a, b, 1});
      }
    }
    cases.push_back(encoder_case("boundary_energy", std::move(f), [edges, confident](const auto& enc) {
      return loss_boundary_energy(outputs(enc), edges, confident, 1.5);
    }, false));
  }
  {
    Fixture f = make_fixture(seed + 3, 8);
    std::vector<int> labels;
    std::vector<double> conf;
    std::uniform_real_distribution<double> c(0.5, 1.0);
    for (std::size_t r = 0; r < f.regions.size(); ++r) {
      labels.push_back(static_cast<int>(r % 3));
      conf.push_back(r < 6 ? 0.9 : c(f.rng));
    }
    cases.push_back(encoder_case("region_contrast_unsup", std::move(f), [labels, conf](const auto& enc) {
      return loss_region_contrast_unsup({hiddens(enc), outputs(enc)}, labels, conf, kDefaultGamma, kDefaultTau);
    }, true));
  }
  {
    Fixture f = make_fixture(seed + 4, 8);
    std::vector<int> labels;
    for (std::size_t r = 0; r < f.regions.size(); ++r) labels.push_back(r == 7 ? kUnlabeled : static_cast<int>(r % 3));
    cases.push_back(encoder_case("region_contrast_sup", std::move(f), [labels](const auto& enc) {
      return loss_region_contrast_sup(outputs(enc), labels, kDefaultTau);
    }, false));
  }
  for (EdgeLoss kind : {EdgeLoss::kFocal, EdgeLoss::kBce}) {
    std::mt19937_64 rng(seed * 31 + (kind == EdgeLoss::kFocal ? 5 : 6));
    std::normal_distribution<double> n(0.0, 1.0);
    EdgeFeatures feats(12, kEdgeFeatureDim);
    std::vector<int> labels;
    for (int i = 0; i < feats.rows(); ++i) {
      for (int k = 0; k < kEdgeFeatureDim; ++k) feats(i, k) = n(rng);
      labels.push_back(i % 3 == 0 ? 1 : 0);
    }
    EdgeClassifier base;
    for (int k = 0; k < kEdgeFeatureDim; ++k) {
      base.feature_mean[k] = 0.1 * n(rng);
      base.feature_scale[k] = 1.0 + 0.2 * std::abs(n(rng));
    }
    VecX x0(kEdgeFeatureDim + 1);
    for (int k = 0; k <= kEdgeFeatureDim; ++k) x0[k] = n(rng);
    cases.push_back({kind == EdgeLoss::kFocal ? "edge_focal" : "edge_bce", x0,
                     [feats, labels, base, kind](const VecX& x, VecX* grad) {
                       EdgeClassifier m = base;
                       m.weights = x.head(kEdgeFeatureDim);
                       m.bias = x[kEdgeFeatureDim];
                       EdgeLossGrad g;
                       const double v = edge_loss(m, feats, labels, kind, &g);
                       if (grad != nullptr) {
                         grad->resize(kEdgeFeatureDim + 1);
                         grad->head(kEdgeFeatureDim) = g.weights;
                         (*grad)[kEdgeFeatureDim] = g.bias;
                       }
                       return v;
                     }});
  }
  return cases;
}

inline double check(const Case& c, int probes, std::uint64_t seed) {
  VecX grad;
  c.eval(c.x0, &grad);
  return finite_diff_check([&](const VecX& x) { return c.eval(x, nullptr); }, c.x0, grad, probes, seed);
}

}  // namespace gradcheck
