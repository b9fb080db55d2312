#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "scenefuse/embeddings.hpp"
#include "scenefuse/regions.hpp"

namespace scenefuse {

inline constexpr double kDefaultTau = 0.07;
inline constexpr double kDefaultLambdaKl = 0.5;
inline constexpr double kDefaultMargin = 0.5;
inline constexpr double kDefaultGamma = 0.8;

// `input_grads` holds the gradient with respect to each raw input vector, in
// the order documented per loss. `grads` is the parameter gradient and stays
// empty until an input gradient has been backpropagated (see region_grads).
struct LossReport {
  double value = 0.0;
  std::map<std::string, double> components;
  std::vector<VecX> input_grads;
  VecX grads;
};

// Mean over positives of -log(exp(t.p/tau) / (exp(t.p/tau) + sum_n exp(t.n/tau)))
// on normalized vectors. Optional weights give a weighted mean. The anchor is
// frozen; input_grads are [positives..., negatives...].
LossReport loss_contrastive(const VecX& anchor, std::span<const VecX> positives, std::span<const VecX> negatives,
                            double tau = kDefaultTau, std::span<const double> weights = {});

// KL(softmax(v2d/T) || softmax(v3d/T)) on L2-normalized inputs. input_grads
// holds the gradient for v3d only.
LossReport loss_distill(const VecX& v2d, const VecX& v3d, double softmax_temp = 1.0);

LossReport loss_pretrain(const LossReport& ctr, const LossReport& dist, double lambda_kl = kDefaultLambdaKl);

// Mean over confident edges of |f_a - f_b|^2 (non-boundary) or
// max(0, margin - |f_a - f_b|)^2 (boundary), features normalized. `edges`
// indexes into `region_edges`; input_grads follow `feats`.
LossReport loss_boundary_energy(std::span<const VecX> feats, std::span<const RegionEdge> region_edges,
                                std::span<const ConfidentEdge> edges, double margin = kDefaultMargin);

// Supervised-contrastive loss: for each anchor with at least one positive,
// -mean_p log softmax over the other anchors. Anchors without positives are
// skipped. Returns the mean over contributing anchors.
LossReport supcon(std::span<const VecX> feats, std::span<const int> labels, std::span<const char> is_anchor,
                  double tau);

// stage_feats[s][r]. Anchors are regions with confidence >= gamma; result is
// the mean over stages. input_grads are stage-major, then region.
LossReport loss_region_contrast_unsup(const std::vector<std::vector<VecX>>& stage_feats,
                                      std::span<const int> pseudo_labels, std::span<const double> confidences,
                                      double gamma = kDefaultGamma, double tau = kDefaultTau);

// Regions labeled kUnlabeled are ignored. Throws kDegenerateLabels unless at
// least two labeled regions from two classes remain.
LossReport loss_region_contrast_sup(std::span<const VecX> feats, std::span<const int> labels, double tau = kDefaultTau);

struct LinearHead {
  MatX w;  // classes x dim
  VecX b;

  int classes() const { return static_cast<int>(w.rows()); }
  VecX logits(const VecX& unit_feature) const { return w * unit_feature + b; }
};

struct HeadGrads {
  MatX w;
  VecX b;
};

// Mean cross-entropy of the head over labeled regions on normalized features.
// input_grads follow `feats`; head gradients go to `head_grads` when given.
LossReport loss_cross_entropy(const LinearHead& head, std::span<const VecX> feats, std::span<const int> labels,
                              HeadGrads* head_grads = nullptr);

struct FinetuneWeights {
  double alpha = 1.0;
  double beta = 1.0;
  double lambda_u = 0.1;
};

LossReport loss_finetune_total(const LossReport& sup_ce, const LossReport& sup_ctr, const LossReport& energy,
                               const LossReport& unsup_ctr, const FinetuneWeights& w = {});

// Parameter gradient (flattened EncoderParams) of a loss with the given
// per-region gradients on the normalized output and, optionally, hidden
// features. Missing hidden gradients may be an empty span.
VecX region_grads(const EncoderParams& params, std::span<const RegionEncoding> enc, std::span<const VecX> grad_output,
                  std::span<const VecX> grad_hidden = {});

enum class OptimizerMode { kAdam, kSgd };

struct OptimizerState {
  OptimizerMode mode = OptimizerMode::kAdam;
  double base_lr = 1e-3;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int decay_every = 50;
  double decay = 0.2;
  long step = 0;
  VecX m;
  VecX v;

  static OptimizerState adam(double lr);
  static OptimizerState sgd(double lr);
};

// Sets lr = base_lr * decay^(epoch / decay_every).
void begin_epoch(OptimizerState& state, int epoch);
void optimizer_step(OptimizerState& state, VecX& params, const VecX& grads);

// Largest relative error between analytic and central-difference gradients
// over `probe_count` seeded coordinates. Coordinates where both magnitudes
// fall below 1e-5 are measured against that floor.
double finite_diff_check(const std::function<double(const VecX&)>& loss_fn, const VecX& params,
                         const VecX& analytic, int probe_count, std::uint64_t seed = 0, double h = 1e-5);

}  // namespace scenefuse
