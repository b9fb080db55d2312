#include "scenefuse/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "hashing.hpp"
#include "scenefuse/error.hpp"

namespace scenefuse {

namespace {

// Gradient with respect to raw x given the gradient at unit = x / |x|.
VecX unnormalize_grad(const VecX& raw, const VecX& unit, const VecX& g) {
  return (g - unit * unit.dot(g)) / raw.norm();
}

std::vector<VecX> normalize_all(std::span<const VecX> xs) {
  std::vector<VecX> out;
  out.reserve(xs.size());
  for (const VecX& x : xs) out.push_back(normalize(x).values);
  return out;
}

std::vector<VecX> zeros_like(std::span<const VecX> xs) {
  std::vector<VecX> out;
  out.reserve(xs.size());
  for (const VecX& x : xs) out.push_back(VecX::Zero(x.size()));
  return out;
}

void check_tau(double tau) {
  if (!(tau > 0.0)) throw Error(ErrorCode::kBadParam, "temperature must be positive");
}

VecX log_softmax(const VecX& z) {
  const double m = z.maxCoeff();
  return z.array() - (m + std::log((z.array() - m).exp().sum()));
}

VecX combine_grads(std::initializer_list<std::pair<const LossReport*, double>> parts) {
  VecX out;
  for (const auto& [r, w] : parts) {
    if (r->grads.size() == 0 || w == 0.0) continue;
    if (out.size() == 0) {
      out = w * r->grads;
    } else {
      if (out.size() != r->grads.size()) throw Error(ErrorCode::kShapeMismatch, "loss gradients differ in size");
      out += w * r->grads;
    }
  }
  return out;
}

}  // namespace

LossReport loss_contrastive(const VecX& anchor, std::span<const VecX> positives, std::span<const VecX> negatives,
                            double tau, std::span<const double> weights) {
  check_tau(tau);
  if (positives.empty()) throw Error(ErrorCode::kDegenerateInput, "contrastive loss needs a positive");
  if (!weights.empty() && weights.size() != positives.size()) {
    throw Error(ErrorCode::kShapeMismatch, "one weight per positive");
  }
  const VecX t = normalize(anchor).values;
  const auto up = normalize_all(positives), un = normalize_all(negatives);
  VecX sn(static_cast<Eigen::Index>(un.size()));
  for (std::size_t n = 0; n < un.size(); ++n) sn[static_cast<Eigen::Index>(n)] = t.dot(un[n]) / tau;

  double total_w = 0.0;
  for (std::size_t p = 0; p < up.size(); ++p) total_w += weights.empty() ? 1.0 : weights[p];
  LossReport out;
  std::vector<VecX> gp = zeros_like(positives), gn = zeros_like(negatives);
  if (total_w > 0.0) {
    for (std::size_t p = 0; p < up.size(); ++p) {
      const double w = (weights.empty() ? 1.0 : weights[p]) / total_w;
      if (w == 0.0) continue;
      const double sp = t.dot(up[p]) / tau;
      const double m = std::max(sp, un.empty() ? sp : sn.maxCoeff());
      const double denom = std::exp(sp - m) + (sn.array() - m).exp().sum();
      const double lse = m + std::log(denom);
      out.value += w * (lse - sp);
      const double pp = std::exp(sp - lse);
      gp[p] += w * (pp - 1.0) / tau * t;
      for (std::size_t n = 0; n < un.size(); ++n) {
        gn[n] += w * std::exp(sn[static_cast<Eigen::Index>(n)] - lse) / tau * t;
      }
    }
  }
  for (std::size_t p = 0; p < up.size(); ++p) out.input_grads.push_back(unnormalize_grad(positives[p], up[p], gp[p]));
  for (std::size_t n = 0; n < un.size(); ++n) out.input_grads.push_back(unnormalize_grad(negatives[n], un[n], gn[n]));
  out.components["contrastive"] = out.value;
  return out;
}

LossReport loss_distill(const VecX& v2d, const VecX& v3d, double softmax_temp) {
  check_tau(softmax_temp);
  if (v2d.size() != v3d.size()) throw Error(ErrorCode::kShapeMismatch, "distillation vectors differ in size");
  const VecX u2 = normalize(v2d).values, u3 = normalize(v3d).values;
  const VecX lp = log_softmax(u2 / softmax_temp), lq = log_softmax(u3 / softmax_temp);
  const VecX p = lp.array().exp(), q = lq.array().exp();
  LossReport out;
  out.value = std::max(0.0, (p.array() * (lp - lq).array()).sum());
  out.input_grads.push_back(unnormalize_grad(v3d, u3, (q - p) / softmax_temp));
  out.components["distill"] = out.value;
  return out;
}

LossReport loss_pretrain(const LossReport& ctr, const LossReport& dist, double lambda_kl) {
  if (!(lambda_kl > 0.0)) throw Error(ErrorCode::kBadParam, "lambda_kl must be positive");
  LossReport out;
  out.value = ctr.value + lambda_kl * dist.value;
  out.components = {{"contrastive", ctr.value}, {"distill", dist.value}};
  out.grads = combine_grads({{&ctr, 1.0}, {&dist, lambda_kl}});
  return out;
}

LossReport loss_boundary_energy(std::span<const VecX> feats, std::span<const RegionEdge> region_edges,
                                std::span<const ConfidentEdge> edges, double margin) {
  if (!(margin > 0.0)) throw Error(ErrorCode::kBadParam, "margin must be positive");
  LossReport out;
  std::vector<VecX> g = zeros_like(feats);
  out.components["energy"] = 0.0;
  if (edges.empty()) {
    out.input_grads = std::move(g);
    return out;
  }
  const auto u = normalize_all(feats);
  const double inv = 1.0 / static_cast<double>(edges.size());
  for (const ConfidentEdge& e : edges) {
    if (e.edge < 0 || e.edge >= static_cast<int>(region_edges.size())) {
      throw Error(ErrorCode::kShapeMismatch, "confident edge outside the edge list");
    }
    const auto a = static_cast<std::size_t>(region_edges[static_cast<std::size_t>(e.edge)].a);
    const auto b = static_cast<std::size_t>(region_edges[static_cast<std::size_t>(e.edge)].b);
    if (a >= feats.size() || b >= feats.size()) throw Error(ErrorCode::kShapeMismatch, "edge region outside feats");
    const VecX d = u[a] - u[b];
    const double dist = d.norm();
    VecX gd;
    if (e.label == 0) {
      out.value += inv * dist * dist;
      gd = 2.0 * d;
    } else {
      if (dist >= margin) continue;
      out.value += inv * (margin - dist) * (margin - dist);
      gd = dist > 0.0 ? VecX(-2.0 * (margin - dist) / dist * d) : VecX::Zero(d.size());
    }
    g[a] += inv * gd;
    g[b] -= inv * gd;
  }
  for (std::size_t r = 0; r < feats.size(); ++r) out.input_grads.push_back(unnormalize_grad(feats[r], u[r], g[r]));
  out.components["energy"] = out.value;
  return out;
}

LossReport supcon(std::span<const VecX> feats, std::span<const int> labels, std::span<const char> is_anchor,
                  double tau) {
  check_tau(tau);
  if (labels.size() != feats.size() || is_anchor.size() != feats.size()) {
    throw Error(ErrorCode::kShapeMismatch, "one label and anchor flag per feature");
  }
  LossReport out;
  std::vector<VecX> g = zeros_like(feats);
  std::vector<std::size_t> anchors;
  for (std::size_t i = 0; i < feats.size(); ++i) {
    if (is_anchor[i]) anchors.push_back(i);
  }
  std::vector<VecX> u(feats.size());
  for (std::size_t i : anchors) u[i] = normalize(feats[i]).values;

  int contributing = 0;
  std::vector<std::pair<std::size_t, std::vector<double>>> coeffs;
  for (std::size_t i : anchors) {
    int positives = 0;
    for (std::size_t a : anchors) positives += a != i && labels[a] == labels[i];
    if (positives == 0) continue;
    ++contributing;
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t a : anchors) {
      if (a != i) m = std::max(m, u[i].dot(u[a]) / tau);
    }
    double denom = 0.0;
    for (std::size_t a : anchors) {
      if (a != i) denom += std::exp(u[i].dot(u[a]) / tau - m);
    }
    const double lse = m + std::log(denom);
    double loss = lse;
    std::vector<double> c(anchors.size(), 0.0);
    for (std::size_t k = 0; k < anchors.size(); ++k) {
      const std::size_t a = anchors[k];
      if (a == i) continue;
      const double s = u[i].dot(u[a]) / tau;
      c[k] = std::exp(s - lse);
      if (labels[a] == labels[i]) {
        loss -= s / positives;
        c[k] -= 1.0 / positives;
      }
    }
    out.value += loss;
    coeffs.emplace_back(i, std::move(c));
  }
  if (contributing > 0) {
    const double inv = 1.0 / contributing;
    out.value *= inv;
    for (const auto& [i, c] : coeffs) {
      for (std::size_t k = 0; k < anchors.size(); ++k) {
        if (c[k] == 0.0) continue;
        const std::size_t a = anchors[k];
        g[i] += inv * c[k] / tau * u[a];
        g[a] += inv * c[k] / tau * u[i];
      }
    }
  }
  for (std::size_t r = 0; r < feats.size(); ++r) {
    out.input_grads.push_back(is_anchor[r] ? unnormalize_grad(feats[r], u[r], g[r]) : VecX(g[r]));
  }
  return out;
}

LossReport loss_region_contrast_unsup(const std::vector<std::vector<VecX>>& stage_feats,
                                      std::span<const int> pseudo_labels, std::span<const double> confidences,
                                      double gamma, double tau) {
  check_tau(tau);
  if (stage_feats.size() < 2) throw Error(ErrorCode::kBadParam, "unsupervised region contrast needs two stages");
  const std::size_t n = pseudo_labels.size();
  if (confidences.size() != n) throw Error(ErrorCode::kShapeMismatch, "one confidence per region");
  std::vector<char> anchor(n, 0);
  std::vector<int> distinct;
  for (std::size_t i = 0; i < n; ++i) {
    if (confidences[i] >= gamma) {
      anchor[i] = 1;
      if (std::find(distinct.begin(), distinct.end(), pseudo_labels[i]) == distinct.end()) {
        distinct.push_back(pseudo_labels[i]);
      }
    }
  }
  LossReport out;
  out.components["unsup_ctr"] = 0.0;
  const bool active = distinct.size() >= 2;
  const double inv = 1.0 / static_cast<double>(stage_feats.size());
  for (const auto& feats : stage_feats) {
    if (feats.size() != n) throw Error(ErrorCode::kShapeMismatch, "one feature per region and stage");
    if (!active) {
      for (const VecX& f : feats) out.input_grads.push_back(VecX::Zero(f.size()));
      continue;
    }
    LossReport stage = supcon(feats, pseudo_labels, anchor, tau);
    out.value += inv * stage.value;
    for (VecX& gr : stage.input_grads) out.input_grads.push_back(inv * gr);
  }
  out.components["unsup_ctr"] = out.value;
  return out;
}

LossReport loss_region_contrast_sup(std::span<const VecX> feats, std::span<const int> labels, double tau) {
  check_tau(tau);
  if (labels.size() != feats.size()) throw Error(ErrorCode::kShapeMismatch, "one label per region");
  std::vector<char> anchor(feats.size(), 0);
  std::vector<int> classes;
  int labeled = 0;
  for (std::size_t i = 0; i < feats.size(); ++i) {
    if (labels[i] == kUnlabeled) continue;
    anchor[i] = 1;
    ++labeled;
    if (std::find(classes.begin(), classes.end(), labels[i]) == classes.end()) classes.push_back(labels[i]);
  }
  if (labeled < 2 || classes.size() < 2) {
    throw Error(ErrorCode::kDegenerateLabels, "supervised region contrast needs two labeled classes");
  }
  LossReport out = supcon(feats, labels, anchor, tau);
  out.components["sup_ctr"] = out.value;
  return out;
}

LossReport loss_cross_entropy(const LinearHead& head, std::span<const VecX> feats, std::span<const int> labels,
                              HeadGrads* head_grads) {
  if (labels.size() != feats.size()) throw Error(ErrorCode::kShapeMismatch, "one label per region");
  if (head_grads != nullptr) {
    head_grads->w = MatX::Zero(head.w.rows(), head.w.cols());
    head_grads->b = VecX::Zero(head.b.size());
  }
  LossReport out;
  int count = 0;
  for (int l : labels) count += l != kUnlabeled;
  for (std::size_t i = 0; i < feats.size(); ++i) {
    if (labels[i] == kUnlabeled) {
      out.input_grads.push_back(VecX::Zero(feats[i].size()));
      continue;
    }
    if (labels[i] < 0 || labels[i] >= head.classes()) throw Error(ErrorCode::kShapeMismatch, "label outside the head");
    const VecX u = normalize(feats[i]).values;
    const VecX lp = log_softmax(head.logits(u));
    out.value -= lp[labels[i]] / count;
    VecX d = lp.array().exp();
    d[labels[i]] -= 1.0;
    d /= count;
    out.input_grads.push_back(unnormalize_grad(feats[i], u, head.w.transpose() * d));
    if (head_grads != nullptr) {
      head_grads->w.noalias() += d * u.transpose();
      head_grads->b += d;
    }
  }
  out.components["sup_ce"] = out.value;
  return out;
}

LossReport loss_finetune_total(const LossReport& sup_ce, const LossReport& sup_ctr, const LossReport& energy,
                               const LossReport& unsup_ctr, const FinetuneWeights& w) {
  if (w.alpha < 0.0 || w.beta < 0.0 || w.lambda_u < 0.0) throw Error(ErrorCode::kBadParam, "weights must be >= 0");
  LossReport out;
  out.value = sup_ce.value + sup_ctr.value + w.lambda_u * (w.alpha * energy.value + w.beta * unsup_ctr.value);
  out.components = {{"sup_ce", sup_ce.value},
                    {"sup_ctr", sup_ctr.value},
                    {"energy", energy.value},
                    {"unsup_ctr", unsup_ctr.value}};
  out.grads = combine_grads({{&sup_ce, 1.0},
                             {&sup_ctr, 1.0},
                             {&energy, w.lambda_u * w.alpha},
                             {&unsup_ctr, w.lambda_u * w.beta}});
  return out;
}

VecX region_grads(const EncoderParams& params, std::span<const RegionEncoding> enc, std::span<const VecX> grad_output,
                  std::span<const VecX> grad_hidden) {
  if (grad_output.size() != enc.size() || (!grad_hidden.empty() && grad_hidden.size() != enc.size())) {
    throw Error(ErrorCode::kShapeMismatch, "one gradient per region");
  }
  EncoderParams g = params;
  g.set_zero();
  for (std::size_t r = 0; r < enc.size(); ++r) {
    backprop_region(params, enc[r], grad_output[r], grad_hidden.empty() ? nullptr : &grad_hidden[r], g);
  }
  return g.flatten();
}

OptimizerState OptimizerState::adam(double lr) {
  OptimizerState s;
  s.mode = OptimizerMode::kAdam;
  s.base_lr = s.lr = lr;
  return s;
}

OptimizerState OptimizerState::sgd(double lr) {
  OptimizerState s;
  s.mode = OptimizerMode::kSgd;
  s.base_lr = s.lr = lr;
  return s;
}

void begin_epoch(OptimizerState& state, int epoch) {
  if (!(state.base_lr > 0.0)) throw Error(ErrorCode::kBadParam, "learning rate must be positive");
  state.lr = state.base_lr * std::pow(state.decay, epoch / std::max(1, state.decay_every));
}

void optimizer_step(OptimizerState& state, VecX& params, const VecX& grads) {
  if (grads.size() != params.size()) throw Error(ErrorCode::kShapeMismatch, "gradient and parameter sizes differ");
  if (!(state.lr > 0.0)) throw Error(ErrorCode::kBadParam, "learning rate must be positive");
  ++state.step;
  if (state.mode == OptimizerMode::kSgd) {
    params -= state.lr * grads;
    return;
  }
  if (state.m.size() == 0) {
    state.m = VecX::Zero(params.size());
    state.v = VecX::Zero(params.size());
  }
  if (state.m.size() != params.size()) throw Error(ErrorCode::kShapeMismatch, "optimizer state size differs");
  state.m = state.beta1 * state.m + (1.0 - state.beta1) * grads;
  state.v = state.beta2 * state.v + (1.0 - state.beta2) * grads.cwiseProduct(grads);
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  params.array() -= state.lr * (state.m.array() / c1) / ((state.v.array() / c2).sqrt() + state.eps);
}

double finite_diff_check(const std::function<double(const VecX&)>& loss_fn, const VecX& params,
                         const VecX& analytic, int probe_count, std::uint64_t seed, double h) {
  if (analytic.size() != params.size()) throw Error(ErrorCode::kShapeMismatch, "gradient and parameter sizes differ");
  std::vector<Eigen::Index> coords(static_cast<std::size_t>(params.size()));
  std::iota(coords.begin(), coords.end(), 0);
  std::mt19937_64 rng(mix64(seed));
  std::shuffle(coords.begin(), coords.end(), rng);
  if (probe_count < static_cast<int>(coords.size())) coords.resize(static_cast<std::size_t>(std::max(0, probe_count)));
  double worst = 0.0;
  VecX x = params;
  for (Eigen::Index c : coords) {
    x[c] = params[c] + h;
    const double up = loss_fn(x);
    x[c] = params[c] - h;
    const double down = loss_fn(x);
    x[c] = params[c];
    const double numeric = (up - down) / (2.0 * h);
    const double scale = std::max({std::abs(numeric), std::abs(analytic[c]), 1e-5});
    worst = std::max(worst, std::abs(numeric - analytic[c]) / scale);
  }
  return worst;
}

}  // namespace scenefuse
