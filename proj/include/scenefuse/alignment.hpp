#pragma once

#include <span>
#include <string>
#include <vector>

#include "scenefuse/embeddings.hpp"

namespace scenefuse {

struct SceneCaption {
  std::string text;
  Embedding embedding;
};

inline constexpr const char* kCaptionTemplate = "a room containing {}";

// Names are sorted and de-duplicated, then joined as "a", "a and b" or
// "a, b and c" and substituted for "{}" in the template.
std::string caption_text(std::vector<std::string> class_names, const std::string& templ = kCaptionTemplate);
SceneCaption caption_scene(const std::vector<std::string>& class_names, const EmbeddingProvider& provider,
                           const std::string& templ = kCaptionTemplate);

double global_match(std::span<const Embedding> views, const Embedding& caption);

struct MatchMatrix {
  MatX scores;  // regions x words
  std::vector<int> regions;
  std::vector<std::string> words;
};

MatchMatrix local_match(std::span<const Embedding> regions, std::span<const Embedding> words);

// Global cosine plus the mean cosine over matched local pairs.
double aggregate_similarity(const Embedding& global_v, const Embedding& global_l, std::span<const Embedding> local_v,
                            std::span<const Embedding> local_l);

inline constexpr double kDefaultTopkReg = 0.05;

// Entropic optimal transport of unit masses onto a "selected" bin of capacity
// k and an "unselected" bin of capacity n - k, cost -score for selected and 0
// otherwise. The Sinkhorn fixed point reduces to one threshold t with
// selected mass sigmoid((s_i - t) / reg), found by safeguarded Newton to a
// marginal violation below 1e-9. Returns each element's selected mass.
VecX soft_topk(const VecX& scores, int k, double reg = kDefaultTopkReg, int* iterations = nullptr);

struct PositivePair {
  int region = 0;
  int word = 0;
  double weight = 0.0;
  bool confirmed = false;  // in the word's top k and the region's best word
};

inline constexpr int kDefaultTopk = 3;

// Per word column: soft top-k, pairs above weight 0.01 kept. A pair is
// confirmed when the region is among the word's k heaviest and the word is
// the region's row argmax; confirmed pairs get weight 1 and the remaining
// weights of that word are scaled so the column total stays at most k.
// Ordered word-major, then by region. `column_weights` receives each word's
// soft top-k weights when given.
std::vector<PositivePair> select_positive_pairs(const MatchMatrix& match, int k = kDefaultTopk,
                                                double reg = kDefaultTopkReg,
                                                std::vector<VecX>* column_weights = nullptr);

std::string pairs_to_json(std::span<const PositivePair> pairs);

}  // namespace scenefuse
