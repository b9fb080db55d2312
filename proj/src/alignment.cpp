#include "scenefuse/alignment.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "json.hpp"
#include "scenefuse/error.hpp"

namespace scenefuse {

std::string caption_text(std::vector<std::string> class_names, const std::string& templ) {
  std::sort(class_names.begin(), class_names.end());
  class_names.erase(std::unique(class_names.begin(), class_names.end()), class_names.end());
  std::string list;
  for (std::size_t i = 0; i < class_names.size(); ++i) {
    if (i > 0) list += i + 1 == class_names.size() ? " and " : ", ";
    list += class_names[i];
  }
  const auto slot = templ.find("{}");
  if (slot == std::string::npos) return templ + " " + list;
  return templ.substr(0, slot) + list + templ.substr(slot + 2);
}

SceneCaption caption_scene(const std::vector<std::string>& class_names, const EmbeddingProvider& provider,
                           const std::string& templ) {
  if (class_names.empty()) throw Error(ErrorCode::kDegenerateInput, "cannot caption an empty class set");
  SceneCaption out;
  out.text = caption_text(class_names, templ);
  out.embedding = provider.embed_text(out.text);
  return out;
}

double global_match(std::span<const Embedding> views, const Embedding& caption) {
  if (views.empty()) throw Error(ErrorCode::kDegenerateInput, "global match needs at least one view");
  VecX sum = VecX::Zero(caption.dim());
  for (const Embedding& v : views) {
    if (v.dim() != caption.dim()) throw Error(ErrorCode::kShapeMismatch, "view and caption dimensions differ");
    sum += v.normalized ? v.values : normalize(v.values).values;
  }
  return cosine(sum / static_cast<double>(views.size()), caption.values);
}

MatchMatrix local_match(std::span<const Embedding> regions, std::span<const Embedding> words) {
  if (regions.empty() || words.empty()) throw Error(ErrorCode::kDegenerateInput, "local match needs regions and words");
  MatchMatrix m;
  m.scores.resize(static_cast<Eigen::Index>(regions.size()), static_cast<Eigen::Index>(words.size()));
  for (std::size_t i = 0; i < regions.size(); ++i) {
    for (std::size_t j = 0; j < words.size(); ++j) {
      if (regions[i].dim() != words[j].dim()) throw Error(ErrorCode::kShapeMismatch, "region and word dimensions differ");
      m.scores(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = cosine(regions[i], words[j]);
    }
  }
  m.regions.resize(regions.size());
  std::iota(m.regions.begin(), m.regions.end(), 0);
  return m;
}

double aggregate_similarity(const Embedding& global_v, const Embedding& global_l, std::span<const Embedding> local_v,
                            std::span<const Embedding> local_l) {
  if (local_v.size() != local_l.size()) throw Error(ErrorCode::kShapeMismatch, "local pairs must be matched");
  double local = 0.0;
  for (std::size_t i = 0; i < local_v.size(); ++i) local += cosine(local_v[i], local_l[i]);
  if (!local_v.empty()) local /= static_cast<double>(local_v.size());
  return cosine(global_v, global_l) + local;
}

VecX soft_topk(const VecX& scores, int k, double reg, int* iterations) {
  const int n = static_cast<int>(scores.size());
  if (n < 1 || k < 1 || k > n) throw Error(ErrorCode::kBadParam, "soft_topk needs 1 <= k <= n");
  if (!(reg > 0.0)) throw Error(ErrorCode::kBadParam, "soft_topk regularization must be positive");
  if (!scores.allFinite()) throw Error(ErrorCode::kDegenerateInput, "soft_topk scores must be finite");
  if (iterations != nullptr) *iterations = 0;
  if (k == n) return VecX::Ones(n);

  // After the row update the selected mass of element i is
  // sigmoid((s_i - t) / reg) with t = g1 - g0, so the column update is a
  // root find on t. Plain alternating updates converge sublinearly once the
  // plan is nearly sparse, hence safeguarded Newton on the same fixed point.
  const VecX s = scores.array() - scores.maxCoeff();
  auto selected_mass = [&](double t, VecX& w, double& slope) {
    double total = 0.0;
    slope = 0.0;
    for (int i = 0; i < n; ++i) {
      const double z = (s[i] - t) / reg;
      w[i] = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
      total += w[i];
      slope += w[i] * (1.0 - w[i]) / reg;
    }
    return total - static_cast<double>(k);
  };
  double lo = s.minCoeff() - 60.0 * reg, hi = 60.0 * reg;
  double t = 0.5 * (lo + hi);
  VecX w(n);
  constexpr int kMaxIterations = 10000;
  for (int it = 1; it <= kMaxIterations; ++it) {
    double slope = 0.0;
    const double excess = selected_mass(t, w, slope);
    if (std::abs(excess) < 1e-9) {
      if (iterations != nullptr) *iterations = it;
      return w;
    }
    if (excess > 0.0) {
      lo = t;
    } else {
      hi = t;
    }
    const double newton = slope > 0.0 ? t + excess / slope : std::numeric_limits<double>::quiet_NaN();
    t = newton > lo && newton < hi ? newton : 0.5 * (lo + hi);
  }
  throw Error(ErrorCode::kConvergenceFailure, "soft_topk Sinkhorn did not converge");
}

std::vector<PositivePair> select_positive_pairs(const MatchMatrix& match, int k, double reg,
                                                std::vector<VecX>* column_weights) {
  const int n = static_cast<int>(match.scores.rows()), m = static_cast<int>(match.scores.cols());
  if (n < k) throw Error(ErrorCode::kBadParam, "select_positive_pairs needs at least k regions");
  std::vector<int> best_word(static_cast<std::size_t>(n), -1);
  for (int i = 0; i < n; ++i) {
    int best = 0;
    bool unique = true;
    for (int j = 1; j < m; ++j) {
      if (match.scores(i, j) > match.scores(i, best)) {
        best = j;
        unique = true;
      } else if (match.scores(i, j) == match.scores(i, best)) {
        unique = false;
      }
    }
    if (unique) best_word[static_cast<std::size_t>(i)] = best;
  }

  std::vector<PositivePair> out;
  if (column_weights != nullptr) column_weights->clear();
  for (int j = 0; j < m; ++j) {
    const VecX w = soft_topk(match.scores.col(j), k, reg);
    if (column_weights != nullptr) column_weights->push_back(w);
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return w[a] > w[b]; });
    std::vector<char> in_topk(static_cast<std::size_t>(n), 0);
    for (int r = 0; r < k; ++r) in_topk[static_cast<std::size_t>(order[static_cast<std::size_t>(r)])] = 1;

    std::vector<PositivePair> column;
    int confirmed = 0;
    double unconfirmed_mass = 0.0;
    for (int i = 0; i < n; ++i) {
      if (!(w[i] > 0.01)) continue;
      PositivePair p{i, j, w[i], false};
      if (in_topk[static_cast<std::size_t>(i)] && best_word[static_cast<std::size_t>(i)] == j) {
        p.confirmed = true;
        p.weight = 1.0;
        ++confirmed;
      } else {
        unconfirmed_mass += p.weight;
      }
      column.push_back(p);
    }
    const double room = static_cast<double>(k - confirmed);
    if (confirmed + unconfirmed_mass > static_cast<double>(k) && unconfirmed_mass > 0.0) {
      for (auto& p : column) {
        if (!p.confirmed) p.weight *= room / unconfirmed_mass;
      }
    }
    for (const auto& p : column) {
      if (p.confirmed || p.weight > 0.0) out.push_back(p);
    }
  }
  return out;
}

std::string pairs_to_json(std::span<const PositivePair> pairs) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& p : pairs) j.push_back({{"region", p.region}, {"word", p.word}, {"weight", p.weight}});
  return j.dump();
}

}  // namespace scenefuse
