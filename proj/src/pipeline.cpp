#include "scenefuse/pipeline.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>
#include <random>
#include <set>

#include "hashing.hpp"
#include "parallel.hpp"
#include "scenefuse/bridge.hpp"
#include "scenefuse/error.hpp"
#include "scenefuse/ply.hpp"
#include "scenefuse/proposals.hpp"
#include "scenefuse/renderer.hpp"

#include "json.hpp"

namespace scenefuse {

using nlohmann::json;

std::vector<int> SceneSet::ids(const std::string& split) const {
  std::vector<int> out;
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    if (scenes[i].split == split) out.push_back(static_cast<int>(i));
  }
  return out;
}

SceneSet scenes_from_dataset(const Dataset& dataset) {
  SceneSet set;
  set.manifest = dataset.manifest;
  for (std::size_t i = 0; i < dataset.scenes.size(); ++i) {
    const GeneratedScene& g = dataset.scenes[i];
    const ManifestScene& m = dataset.manifest.scenes.at(i);
    set.scenes.push_back({m.file, m.split, g.cloud, g.classes, g.boxes, g.has_adjacent_pair});
  }
  return set;
}

SceneSet load_scenes(const Manifest& manifest) {
  SceneSet set;
  set.manifest = manifest;
  for (const ManifestScene& m : manifest.scenes) {
    set.scenes.push_back({m.file, m.split, read_ply(manifest.root / m.file), m.classes, m.boxes, m.has_adjacent_pair});
  }
  return set;
}

namespace {

template <typename C, typename F>
void visit_fields(C& c, F&& f) {
  f("epochs", c.epochs);
  f("lr", c.lr);
  f("lambda_kl", c.lambda_kl);
  f("distill_temp", c.distill_temp);
  f("tau", c.tau);
  f("gamma", c.gamma);
  f("margin", c.margin);
  f("alpha", c.alpha);
  f("beta", c.beta);
  f("lambda_u", c.lambda_u);
  f("k", c.k);
  f("reg", c.reg);
  f("seed", c.seed);
  f("views", c.views);
  f("resolution", c.resolution);
  f("elevation", c.elevation);
  f("hidden", c.hidden);
  f("max_region_points", c.max_region_points);
  f("bpn_epochs", c.bpn_epochs);
  f("mask_novel", c.mask_novel);
  f("transductive", c.transductive);
  f("toy_sigma", c.toy_sigma);
  f("toy_seed", c.toy_seed);
  f("batch_scenes", c.batch_scenes);
  f("augment", c.augment);
  f("jobs", c.jobs);
}

template <typename T>
void assign_field(const std::string& key, const json& v, T& out) {
  if constexpr (std::is_same_v<T, bool>) {
    if (!v.is_boolean()) throw Error(ErrorCode::kConfig, key + " must be a boolean");
    out = v.get<bool>();
  } else if constexpr (std::is_same_v<T, double>) {
    if (!v.is_number()) throw Error(ErrorCode::kConfig, key + " must be a number");
    out = v.get<double>();
  } else if constexpr (std::is_same_v<T, std::uint64_t>) {
    if (!v.is_number_unsigned()) throw Error(ErrorCode::kConfig, key + " must be a non-negative integer");
    out = v.get<std::uint64_t>();
  } else {
    if (!v.is_number_integer()) throw Error(ErrorCode::kConfig, key + " must be an integer");
    out = v.get<int>();
  }
}

void apply_key(TrainConfig& c, const std::string& key, const json& v) {
  bool found = false;
  visit_fields(c, [&](const char* name, auto& field) {
    if (key == name) {
      assign_field(key, v, field);
      found = true;
    }
  });
  if (!found) throw Error(ErrorCode::kConfig, "unknown config key " + key);
}

}  // namespace

TrainConfig TrainConfig::from_json(const std::string& text) { return from_json(text, TrainConfig{}); }

TrainConfig TrainConfig::from_json(const std::string& text, TrainConfig base) {
  const json j = json::parse(text, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw Error(ErrorCode::kConfig, "config must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) apply_key(base, it.key(), it.value());
  return base;
}

void TrainConfig::set(const std::string& key, const std::string& value) {
  const json v = json::parse(value, nullptr, false);
  if (v.is_discarded()) throw Error(ErrorCode::kConfig, "cannot parse value for " + key);
  apply_key(*this, key, v);
}

std::string TrainConfig::to_json() const {
  nlohmann::ordered_json j;
  visit_fields(*this, [&](const char* name, const auto& field) { j[name] = field; });
  return j.dump();
}

void TrainConfig::validate() const {
  auto need = [](bool ok, const char* what) {
    if (!ok) throw Error(ErrorCode::kConfig, what);
  };
  need(epochs >= 0, "epochs must be >= 0");
  need(lr > 0.0, "lr must be positive");
  need(lambda_kl >= 0.0, "lambda_kl must be >= 0");
  need(tau > 0.0, "tau must be positive");
  need(distill_temp > 0.0, "distill_temp must be positive");
  need(gamma > 0.5 && gamma < 1.0, "gamma must lie in (0.5, 1)");
  need(margin > 0.0, "margin must be positive");
  need(alpha >= 0.0 && beta >= 0.0 && lambda_u >= 0.0, "alpha, beta and lambda_u must be >= 0");
  need(k >= 1, "k must be >= 1");
  need(reg > 0.0, "reg must be positive");
  need(views >= 1, "views must be >= 1");
  need(resolution >= 16, "resolution must be >= 16");
  need(hidden >= 1, "hidden must be >= 1");
  need(max_region_points >= 1, "max_region_points must be >= 1");
  need(bpn_epochs >= 0, "bpn_epochs must be >= 0");
  need(toy_sigma >= 0.0, "toy_sigma must be >= 0");
  need(batch_scenes >= 1, "batch_scenes must be >= 1");
  need(jobs >= 1, "jobs must be >= 1");
}

std::unique_ptr<EmbeddingProvider> make_provider(const std::string& spec, const Manifest& manifest,
                                                 const TrainConfig& config) {
  if (spec == "toy") {
    ToyProviderParams p;
    p.seed = config.toy_seed;
    p.noise_sigma = config.toy_sigma;
    return std::make_unique<ToyProvider>(manifest.vocabulary, manifest.colors, p);
  }
  return std::make_unique<BridgeProvider>(resolve_bridge_url(spec));
}

bool LabelPartition::point_labeled(int scene, const Vec3& p) const {
  if (std::find(labeled.begin(), labeled.end(), scene) != labeled.end()) return true;
  return scene == split_scene && p[split_axis] < split_value;
}

LabelPartition partition_labels(const SceneSet& data, std::span<const int> scene_ids, double ratio,
                                std::uint64_t seed) {
  static constexpr double kRatios[] = {0.01, 0.05, 0.10, 0.15, 0.20, 0.25, 0.30, 0.40, 0.50, 1.0};
  if (std::none_of(std::begin(kRatios), std::end(kRatios), [&](double r) { return std::abs(r - ratio) < 1e-9; })) {
    throw Error(ErrorCode::kBadParam, "unsupported label ratio");
  }
  if (scene_ids.empty()) throw Error(ErrorCode::kDegenerateInput, "no scenes to partition");
  LabelPartition out;
  out.ratio = ratio;
  out.seed = seed;
  double total = 0.0;
  for (int s : scene_ids) total += static_cast<double>(data.scenes.at(static_cast<std::size_t>(s)).cloud.size());
  if (ratio == 1.0) {
    out.labeled.assign(scene_ids.begin(), scene_ids.end());
    out.realized = 1.0;
    return out;
  }
  std::vector<int> order(scene_ids.begin(), scene_ids.end());
  std::mt19937_64 rng(mix64(seed ^ 0x7061727469ull));
  for (std::size_t i = order.size(); i > 1; --i) {
    std::swap(order[i - 1], order[std::uniform_int_distribution<std::size_t>(0, i - 1)(rng)]);
  }
  const double target = ratio * total, tol = kPartitionTolerance * total;
  double acc = 0.0;
  std::vector<int> rest;
  for (int s : order) {
    const double n = static_cast<double>(data.scenes[static_cast<std::size_t>(s)].cloud.size());
    if (acc + n <= target + tol) {
      out.labeled.push_back(s);
      acc += n;
    } else {
      rest.push_back(s);
    }
  }
  if (std::abs(acc - target) > tol) {
    const double remainder = target - acc;
    const auto want = static_cast<std::size_t>(std::llround(remainder));
    for (std::size_t r = 0; r < rest.size() && out.split_scene < 0; ++r) {
      const auto& pos = data.scenes[static_cast<std::size_t>(rest[r])].cloud.positions;
      if (want == 0 || want >= pos.size()) continue;
      const Vec3 extent = Aabb3::of(pos).extent();
      std::array<int, 3> axes{0, 1, 2};
      std::stable_sort(axes.begin(), axes.end(), [&](int a, int b) { return extent[a] > extent[b]; });
      for (int axis : axes) {
        std::vector<double> coord;
        for (const Vec3& p : pos) coord.push_back(p[axis]);
        std::sort(coord.begin(), coord.end());
        // Snap to the tie block around `want`.
        const auto lo = static_cast<std::size_t>(std::lower_bound(coord.begin(), coord.end(), coord[want]) - coord.begin());
        const auto hi = static_cast<std::size_t>(std::upper_bound(coord.begin(), coord.end(), coord[want]) - coord.begin());
        std::size_t cut = 0;
        for (std::size_t c : {lo, hi}) {
          if (c == 0 || c >= coord.size()) continue;
          if (cut == 0 || std::abs(static_cast<double>(c) - remainder) < std::abs(static_cast<double>(cut) - remainder)) cut = c;
        }
        if (cut == 0 || std::abs(acc + static_cast<double>(cut) - target) > tol) continue;
        out.split_scene = rest[r];
        out.split_axis = axis;
        out.split_value = 0.5 * (coord[cut - 1] + coord[cut]);
        acc += static_cast<double>(cut);
        rest.erase(rest.begin() + static_cast<long>(r));
        break;
      }
    }
    if (out.split_scene < 0) throw Error(ErrorCode::kPartitionInfeasible, "cannot meet the label ratio tolerance");
  }
  std::sort(out.labeled.begin(), out.labeled.end());
  std::sort(rest.begin(), rest.end());
  out.unlabeled = rest;
  out.realized = acc / total;
  return out;
}

SceneRegions prepare_regions(const PointCloud& cloud, const TrainConfig& config, std::uint64_t scene_key) {
  SceneRegions out;
  out.normals = estimate_normals(cloud.positions, 10);
  out.regions = oversegment(cloud, out.normals, SegParams{});
  out.edge_features = edge_features(cloud, out.normals, out.regions);
  out.majority = region_majority_labels(out.regions, cloud.sem_label);
  const auto members = out.regions.members();
  for (std::size_t r = 0; r < members.size(); ++r) {
    std::vector<int> ids = members[r];
    if (static_cast<int>(ids.size()) > config.max_region_points) {
      std::mt19937_64 rng(mix64(scene_key ^ mix64(r)));
      std::shuffle(ids.begin(), ids.end(), rng);
      ids.resize(static_cast<std::size_t>(config.max_region_points));
      std::sort(ids.begin(), ids.end());
    }
    out.features.push_back(point_features(cloud, out.normals.normals, ids));
  }
  return out;
}

std::string epoch_log_json(const EpochLog& log) {
  nlohmann::ordered_json j;
  j["phase"] = log.phase;
  j["epoch"] = log.epoch;
  j["step"] = log.step;
  j["lr"] = log.lr;
  j["loss"] = log.loss;
  nlohmann::ordered_json c = nlohmann::ordered_json::object();
  for (const auto& [k, v] : log.components) c[k] = v;
  j["components"] = c;
  return j.dump();
}

namespace {

std::uint64_t scene_key(const SceneRecord& s) { return fnv1a(s.name); }

std::vector<Embedding> embed_words(const std::vector<int>& classes, const Manifest& manifest,
                                   const EmbeddingProvider& provider) {
  std::vector<Embedding> out;
  for (int c : classes) out.push_back(provider.embed_text(manifest.vocabulary.at(static_cast<std::size_t>(c))));
  return out;
}

// Returns the masked patch of `members` in the view that sees most of them,
// or an empty image when no view does.
RgbImage region_patch(std::span<const RenderedView> views, const std::vector<char>& in_region) {
  int best = -1;
  long best_hits = 0;
  for (std::size_t v = 0; v < views.size(); ++v) {
    long hits = 0;
    for (int c : views[v].framebuffer.correspondence) hits += c >= 0 && in_region[static_cast<std::size_t>(c)];
    if (hits > best_hits) {
      best_hits = hits;
      best = static_cast<int>(v);
    }
  }
  if (best < 0) return {};
  const Framebuffer& fb = views[static_cast<std::size_t>(best)].framebuffer;
  int x0 = fb.width, y0 = fb.height, x1 = -1, y1 = -1;
  auto kept = [&](int x, int y) {
    const int c = fb.correspondence[fb.index(x, y)];
    return c >= 0 && in_region[static_cast<std::size_t>(c)];
  };
  for (int y = 0; y < fb.height; ++y) {
    for (int x = 0; x < fb.width; ++x) {
      if (!kept(x, y)) continue;
      x0 = std::min(x0, x);
      y0 = std::min(y0, y);
      x1 = std::max(x1, x);
      y1 = std::max(y1, y);
    }
  }
  RgbImage patch(x1 - x0 + 1, y1 - y0 + 1);
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      if (kept(x, y)) patch.set(x - x0, y - y0, fb.color.at(x, y));
    }
  }
  return patch;
}

std::vector<int> subsample(std::vector<int> ids, int max_points, std::uint64_t key) {
  if (static_cast<int>(ids.size()) <= max_points) return ids;
  std::mt19937_64 rng(mix64(key));
  std::shuffle(ids.begin(), ids.end(), rng);
  ids.resize(static_cast<std::size_t>(max_points));
  std::sort(ids.begin(), ids.end());
  return ids;
}

// Unique row argmax, -1 on ties.
int unique_argmax(const MatX& scores, int row) {
  int best = 0;
  bool tie = false;
  for (int j = 1; j < scores.cols(); ++j) {
    if (scores(row, j) > scores(row, best)) {
      best = j;
      tie = false;
    } else if (scores(row, j) == scores(row, best)) {
      tie = true;
    }
  }
  return tie ? -1 : best;
}

std::vector<int> top_indices(const VecX& v, int k) {
  std::vector<int> idx(static_cast<std::size_t>(v.size()));
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return v[a] > v[b]; });
  idx.resize(static_cast<std::size_t>(std::min<Eigen::Index>(k, v.size())));
  std::sort(idx.begin(), idx.end());
  return idx;
}

// True when `chosen` is a valid hard top-k of `scores`, treating scores
// within 1e-12 as tied.
bool is_hard_topk(const VecX& scores, const std::vector<int>& chosen) {
  std::vector<char> in(static_cast<std::size_t>(scores.size()), 0);
  double lo = std::numeric_limits<double>::infinity(), hi = -std::numeric_limits<double>::infinity();
  for (int i : chosen) {
    in[static_cast<std::size_t>(i)] = 1;
    lo = std::min(lo, scores[i]);
  }
  for (Eigen::Index i = 0; i < scores.size(); ++i) {
    if (!in[static_cast<std::size_t>(i)]) hi = std::max(hi, scores[i]);
  }
  return lo >= hi - 1e-12;
}

// Rotation of the offset and normal columns about the vertical axis.
MatX rotate_z(const MatX& features, double angle) {
  const double c = std::cos(angle), sn = std::sin(angle);
  MatX out = features;
  for (int col : {0, 6}) {
    out.col(col) = c * features.col(col) - sn * features.col(col + 1);
    out.col(col + 1) = sn * features.col(col) + c * features.col(col + 1);
  }
  return out;
}

// Per-epoch seeded augmentation; identity when disabled.
MatX augmented(const MatX& features, const TrainConfig& config, int epoch, std::uint64_t scene, std::size_t region) {
  if (!config.augment) return features;
  const std::uint64_t h = mix64(config.seed ^ mix64(scene ^ mix64(static_cast<std::uint64_t>(epoch) * 0x9e37ull + region)));
  const double angle = static_cast<double>(h >> 11) * 0x1.0p-53 * 2.0 * 3.14159265358979323846;
  return rotate_z(features, angle);
}

struct PretrainScene {
  std::uint64_t key = 0;
  std::vector<MatX> features;      // 3D region features
  std::vector<VecX> teacher;       // frozen 2D region embeddings
  std::vector<VecX> words;         // word text embeddings
  std::vector<std::vector<int>> positives;  // per word
  std::vector<std::vector<int>> negatives;  // per word
  int pairs = 0;
  int confirmed = 0;
  double global = 0.0;
  TopkAudit audit;
};

PretrainScene prepare_pretrain_scene(const SceneRecord& scene, const Manifest& manifest,
                                     const EmbeddingProvider& provider, const TrainConfig& config) {
  PretrainScene out;
  out.key = scene_key(scene);
  const PointCloud& cloud = scene.cloud;
  const NormalEstimate normals = estimate_normals(cloud.positions, 10);
  const TriangleMesh mesh = mesh_scene(cloud);
  const auto cams = camera_ring(Aabb3::of(cloud.positions), config.views, config.elevation,
                                RingParams{config.resolution, config.resolution});
  const auto views = render_views(mesh, cams);
  const SceneProposals props = propose_scene(cloud, views);

  std::set<int> word_classes(scene.classes.begin(), scene.classes.end());
  word_classes.insert(0);
  word_classes.insert(1);
  const std::vector<int> word_ids(word_classes.begin(), word_classes.end());
  std::vector<std::string> names;
  for (int c : word_ids) names.push_back(manifest.vocabulary.at(static_cast<std::size_t>(c)));
  const std::vector<Embedding> words = embed_words(word_ids, manifest, provider);
  for (const auto& w : words) out.words.push_back(w.values);

  std::vector<Embedding> view_emb;
  for (const auto& v : views) view_emb.push_back(provider.embed_image(v.framebuffer.color));
  out.global = global_match(view_emb, caption_scene(names, provider).embedding);

  std::vector<Embedding> region_emb;
  std::vector<char> in_region(cloud.size(), 0);
  const std::uint64_t key = scene_key(scene);
  for (std::size_t b = 0; b < props.united.size(); ++b) {
    const auto& members = props.united[b].members;
    if (members.empty()) continue;
    for (int p : members) in_region[static_cast<std::size_t>(p)] = 1;
    const RgbImage patch = region_patch(views, in_region);
    for (int p : members) in_region[static_cast<std::size_t>(p)] = 0;
    if (patch.width == 0) continue;
    region_emb.push_back(provider.embed_image(patch));
    const auto ids = subsample(members, config.max_region_points, key ^ mix64(b + 1));
    out.features.push_back(point_features(cloud, normals.normals, ids));
    out.teacher.push_back(region_emb.back().values);
  }
  const int n = static_cast<int>(region_emb.size());
  out.positives.resize(words.size());
  out.negatives.resize(words.size());
  if (n == 0) return out;

  const MatchMatrix match = local_match(region_emb, words);
  std::vector<VecX> columns;
  const int k = std::min(config.k, n);
  const auto pairs = select_positive_pairs(match, k, config.reg, &columns);
  for (std::size_t j = 0; j < columns.size(); ++j) {
    ++out.audit.calls;
    if (!is_hard_topk(match.scores.col(static_cast<Eigen::Index>(j)), top_indices(columns[j], k))) {
      ++out.audit.mismatches;
    }
  }
  out.pairs = static_cast<int>(pairs.size());
  for (const auto& p : pairs) {
    if (!p.confirmed) continue;
    ++out.confirmed;
    out.positives[static_cast<std::size_t>(p.word)].push_back(p.region);
  }
  for (int r = 0; r < n; ++r) {
    const int best = unique_argmax(match.scores, r);
    if (best < 0) continue;
    for (std::size_t j = 0; j < words.size(); ++j) {
      if (static_cast<int>(j) != best) out.negatives[j].push_back(r);
    }
  }
  return out;
}

struct SceneGrad {
  double loss = 0.0;
  std::map<std::string, double> components;
  VecX grad;
  bool active = false;
};

SceneGrad pretrain_scene_grad(const EncoderParams& params, const PretrainScene& s, const TrainConfig& config,
                              int epoch) {
  SceneGrad out;
  const std::size_t n = s.features.size();
  if (n == 0) return out;
  std::vector<RegionEncoding> enc;
  for (std::size_t r = 0; r < n; ++r) {
    enc.push_back(encode_points(params, augmented(s.features[r], config, epoch, s.key, r)));
  }
  std::vector<VecX> grad_out(n, VecX::Zero(params.dim()));

  double pos_total = 0.0;
  for (const auto& p : s.positives) pos_total += static_cast<double>(p.size());
  double ctr = 0.0;
  for (std::size_t j = 0; j < s.words.size() && pos_total > 0; ++j) {
    const auto& pos = s.positives[j];
    if (pos.empty()) continue;
    std::vector<VecX> pv, nv;
    for (int r : pos) pv.push_back(enc[static_cast<std::size_t>(r)].output.values);
    for (int r : s.negatives[j]) nv.push_back(enc[static_cast<std::size_t>(r)].output.values);
    const LossReport l = loss_contrastive(s.words[j], pv, nv, config.tau);
    const double w = static_cast<double>(pos.size()) / pos_total;
    ctr += w * l.value;
    for (std::size_t i = 0; i < pos.size(); ++i) grad_out[static_cast<std::size_t>(pos[i])] += w * l.input_grads[i];
    for (std::size_t i = 0; i < s.negatives[j].size(); ++i) {
      grad_out[static_cast<std::size_t>(s.negatives[j][i])] += w * l.input_grads[pos.size() + i];
    }
  }
  double dist = 0.0;
  const double inv = 1.0 / static_cast<double>(n);
  for (std::size_t r = 0; r < n; ++r) {
    const LossReport l = loss_distill(s.teacher[r], enc[r].output.values, config.distill_temp);
    dist += inv * l.value;
    grad_out[r] += config.lambda_kl * inv * l.input_grads[0];
  }
  out.loss = ctr + config.lambda_kl * dist;
  out.components = {{"ctr", ctr}, {"dist", dist}};
  out.grad = region_grads(params, enc, grad_out);
  out.active = true;
  return out;
}

// Seeded per-epoch order of `items`, cut into batches of `size`.
std::vector<std::vector<int>> epoch_batches(std::vector<int> items, int size, std::uint64_t seed, int epoch) {
  std::mt19937_64 rng(mix64(seed ^ mix64(static_cast<std::uint64_t>(epoch) + 0x62617463ull)));
  for (std::size_t i = items.size(); i > 1; --i) {
    std::swap(items[i - 1], items[std::uniform_int_distribution<std::size_t>(0, i - 1)(rng)]);
  }
  std::vector<std::vector<int>> out;
  for (std::size_t i = 0; i < items.size(); i += static_cast<std::size_t>(size)) {
    out.emplace_back(items.begin() + static_cast<long>(i),
                     items.begin() + static_cast<long>(std::min(items.size(), i + static_cast<std::size_t>(size))));
  }
  return out;
}

void emit(std::ostream* log, const EpochLog& entry) {
  if (log != nullptr) *log << epoch_log_json(entry) << '\n';
}

}  // namespace

PretrainResult pretrain(const SceneSet& data, std::span<const int> scene_ids, const EmbeddingProvider& provider,
                        const TrainConfig& config, std::ostream* log) {
  config.validate();
  const int n = static_cast<int>(scene_ids.size());
  std::vector<PretrainScene> scenes(static_cast<std::size_t>(n));
  std::vector<SceneRegions> eval_regions(static_cast<std::size_t>(n));
  parallel_for(n, config.jobs, [&](int i) {
    const SceneRecord& s = data.scenes.at(static_cast<std::size_t>(scene_ids[static_cast<std::size_t>(i)]));
    scenes[static_cast<std::size_t>(i)] = prepare_pretrain_scene(s, data.manifest, provider, config);
    eval_regions[static_cast<std::size_t>(i)] = prepare_regions(s.cloud, config, scene_key(s));
  });
  const std::vector<VecX> class_text = class_text_embeddings(data.manifest, provider);

  PretrainResult result;
  for (int i = 0; i < n; ++i) {
    const PretrainScene& s = scenes[static_cast<std::size_t>(i)];
    result.topk.calls += s.audit.calls;
    result.topk.mismatches += s.audit.mismatches;
    if (log != nullptr) {
      nlohmann::ordered_json j;
      j["phase"] = "pretrain_scene";
      j["scene"] = data.scenes[static_cast<std::size_t>(scene_ids[static_cast<std::size_t>(i)])].name;
      j["regions"] = s.features.size();
      j["pairs"] = s.pairs;
      j["confirmed"] = s.confirmed;
      j["global_match"] = s.global;
      *log << j.dump() << '\n';
    }
  }

  EncoderParams params = EncoderParams::init(config.seed, config.hidden, provider.dim());
  round_to_float(params);
  VecX flat = params.flatten();
  OptimizerState opt = OptimizerState::adam(config.lr);
  std::vector<int> active;
  for (int i = 0; i < n; ++i) {
    if (!scenes[static_cast<std::size_t>(i)].features.empty()) active.push_back(i);
  }
  if (active.empty()) throw Error(ErrorCode::kDegenerateInput, "no training scene produced region proposals");
  long step = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    result.alignment.push_back(alignment_score(params, eval_regions, class_text));
    begin_epoch(opt, epoch);
    for (const auto& batch : epoch_batches(active, config.batch_scenes, config.seed, epoch)) {
      std::vector<SceneGrad> grads(batch.size());
      parallel_for(static_cast<int>(batch.size()), config.jobs, [&](int i) {
        grads[static_cast<std::size_t>(i)] =
            pretrain_scene_grad(params, scenes[static_cast<std::size_t>(batch[static_cast<std::size_t>(i)])], config, epoch);
      });
      EpochLog entry{"pretrain", epoch, step++, opt.lr, 0.0, {{"ctr", 0.0}, {"dist", 0.0}}};
      VecX total = VecX::Zero(flat.size());
      for (const SceneGrad& g : grads) {
        total += g.grad;
        entry.loss += g.loss;
        for (const auto& [k, v] : g.components) entry.components[k] += v;
      }
      const double inv = 1.0 / static_cast<double>(grads.size());
      total *= inv;
      entry.loss *= inv;
      for (auto& [k, v] : entry.components) v *= inv;
      entry.components["alignment"] = result.alignment.back();
      emit(log, entry);
      result.log.push_back(entry);
      optimizer_step(opt, flat, total);
      params.assign(flat);
    }
  }
  round_to_float(params);
  result.alignment.push_back(alignment_score(params, eval_regions, class_text));
  result.params = params;
  return result;
}

double alignment_score(const EncoderParams& params, std::span<const SceneRegions> scenes,
                       std::span<const VecX> class_text) {
  double sum = 0.0;
  long count = 0;
  for (const SceneRegions& s : scenes) {
    for (std::size_t r = 0; r < s.features.size(); ++r) {
      const int c = s.majority[r];
      if (c == kUnlabeled) continue;
      ++count;
      try {
        sum += cosine(encode_points(params, s.features[r]).output.values, class_text[static_cast<std::size_t>(c)]);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::kDegenerateNorm) throw;
      }
    }
  }
  return count == 0 ? 0.0 : sum / static_cast<double>(count);
}

std::vector<Tensor> model_tensors(const Model& model) {
  std::vector<Tensor> out = encoder_tensors(model.encoder);
  if (model.head) {
    out.push_back(matrix_tensor("head.w", model.head->w));
    out.push_back(matrix_tensor("head.b", model.head->b));
    out.back().dims.resize(1);
  }
  if (model.bpn) {
    const EdgeClassifier& b = *model.bpn;
    out.push_back(matrix_tensor("bpn.weights", b.weights));
    out.push_back(matrix_tensor("bpn.bias", MatX::Constant(1, 1, b.bias)));
    out.push_back(matrix_tensor("bpn.mean", b.feature_mean));
    out.push_back(matrix_tensor("bpn.scale", b.feature_scale));
    for (std::size_t i = out.size() - 4; i < out.size(); ++i) out[i].dims.resize(1);
  }
  return out;
}

Model model_from_tensors(std::span<const Tensor> tensors) {
  Model m;
  m.encoder = encoder_from_tensors(tensors);
  const Tensor* hw = find_tensor(tensors, "head.w");
  const Tensor* hb = find_tensor(tensors, "head.b");
  if ((hw == nullptr) != (hb == nullptr)) throw Error(ErrorCode::kFormat, "head tensors must come together");
  if (hw != nullptr) {
    LinearHead h{tensor_matrix(*hw), tensor_matrix(*hb).col(0)};
    if (h.w.rows() != h.b.size() || h.w.cols() != m.encoder.dim()) {
      throw Error(ErrorCode::kFormat, "head shape does not match the encoder");
    }
    m.head = h;
  }
  const char* names[] = {"bpn.weights", "bpn.bias", "bpn.mean", "bpn.scale"};
  int present = 0;
  for (const char* n : names) present += find_tensor(tensors, n) != nullptr;
  if (present != 0 && present != 4) throw Error(ErrorCode::kFormat, "incomplete boundary classifier tensors");
  if (present == 4) {
    auto vec = [&](const char* name, Eigen::Index size) {
      const MatX v = tensor_matrix(*find_tensor(tensors, name));
      if (v.size() != size) throw Error(ErrorCode::kFormat, std::string("bad size for ") + name);
      return VecX(v.col(0));
    };
    EdgeClassifier b;
    b.weights = vec("bpn.weights", kEdgeFeatureDim);
    b.bias = vec("bpn.bias", 1)[0];
    b.feature_mean = vec("bpn.mean", kEdgeFeatureDim);
    b.feature_scale = vec("bpn.scale", kEdgeFeatureDim);
    m.bpn = b;
  }
  return m;
}

void write_model(const std::filesystem::path& path, const Model& model) { write_tnsr(path, model_tensors(model)); }

Model read_model(const std::filesystem::path& path) {
  const auto t = read_tnsr(path);
  return model_from_tensors(t);
}

std::vector<VecX> class_text_embeddings(const Manifest& manifest, const EmbeddingProvider& provider) {
  std::vector<VecX> out;
  for (const auto& name : manifest.vocabulary) out.push_back(provider.embed_text(name).values);
  return out;
}

namespace {

struct FinetuneScene {
  std::uint64_t key = 0;
  SceneRegions regions;
  std::vector<int> labels;  // per region, kUnlabeled where not supervised
  bool unlabeled_pool = false;
  int labeled_regions = 0;
  bool contrast = false;  // at least two labeled classes
  std::vector<ConfidentEdge> confident;
};

std::vector<int> finetune_labels(const SceneRecord& scene, int id, const SceneRegions& regions,
                                 const LabelPartition& partition, const std::vector<char>& novel) {
  std::vector<int> out(static_cast<std::size_t>(regions.regions.region_count), kUnlabeled);
  const bool whole = std::find(partition.labeled.begin(), partition.labeled.end(), id) != partition.labeled.end();
  if (whole) {
    out = regions.majority;
  } else if (id == partition.split_scene) {
    const auto members = regions.regions.members();
    for (std::size_t r = 0; r < members.size(); ++r) {
      std::map<int, int> votes;
      int on_side = 0;
      for (int p : members[r]) {
        if (!partition.point_labeled(id, scene.cloud.positions[static_cast<std::size_t>(p)])) continue;
        ++on_side;
        const int l = scene.cloud.sem_label[static_cast<std::size_t>(p)];
        if (l != kUnlabeled) ++votes[l];
      }
      if (2 * on_side <= static_cast<int>(members[r].size()) || votes.empty()) continue;
      int best = votes.begin()->first;
      for (const auto& [l, v] : votes) {
        if (v > votes[best]) best = l;
      }
      out[r] = best;
    }
  }
  for (int& l : out) {
    if (l != kUnlabeled && l < static_cast<int>(novel.size()) && novel[static_cast<std::size_t>(l)]) l = kUnlabeled;
  }
  return out;
}

VecX softmax(const VecX& z) {
  const VecX e = (z.array() - z.maxCoeff()).exp();
  return e / e.sum();
}

struct FinetuneGrad {
  double sup_ce = 0.0, sup_ctr = 0.0, energy = 0.0, unsup_ctr = 0.0;
  VecX grad;  // encoder then head
};

}  // namespace

FinetuneResult finetune(const SceneSet& data, const LabelPartition& partition, const EncoderParams& init,
                        const EmbeddingProvider& provider, const TrainConfig& config, std::ostream* log) {
  config.validate();
  const Manifest& manifest = data.manifest;
  const int classes = static_cast<int>(manifest.vocabulary.size());
  std::vector<char> novel(static_cast<std::size_t>(classes), 0);
  if (config.mask_novel) {
    for (int c : manifest.novel_ids()) novel[static_cast<std::size_t>(c)] = 1;
  }

  std::vector<int> ids(partition.labeled);
  if (partition.split_scene >= 0) ids.push_back(partition.split_scene);
  ids.insert(ids.end(), partition.unlabeled.begin(), partition.unlabeled.end());
  std::vector<int> pool(partition.unlabeled);
  if (config.transductive) {
    for (int t : data.ids("test")) {
      ids.push_back(t);
      pool.push_back(t);
    }
  }
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  const int n = static_cast<int>(ids.size());

  std::vector<FinetuneScene> scenes(static_cast<std::size_t>(n));
  parallel_for(n, config.jobs, [&](int i) {
    const int id = ids[static_cast<std::size_t>(i)];
    const SceneRecord& s = data.scenes.at(static_cast<std::size_t>(id));
    FinetuneScene& f = scenes[static_cast<std::size_t>(i)];
    f.key = scene_key(s);
    f.regions = prepare_regions(s.cloud, config, f.key);
    f.labels = finetune_labels(s, id, f.regions, partition, novel);
    f.unlabeled_pool = std::find(pool.begin(), pool.end(), id) != pool.end();
    std::set<int> distinct;
    for (int l : f.labels) {
      if (l == kUnlabeled) continue;
      ++f.labeled_regions;
      distinct.insert(l);
    }
    f.contrast = f.labeled_regions >= 2 && distinct.size() >= 2;
  });

  // Boundary classifier on edges whose two regions are both labeled.
  std::vector<std::array<double, kEdgeFeatureDim>> rows;
  std::vector<int> edge_labels;
  for (const FinetuneScene& f : scenes) {
    for (std::size_t e = 0; e < f.regions.regions.edges.size(); ++e) {
      const RegionEdge& edge = f.regions.regions.edges[e];
      const int a = f.labels[static_cast<std::size_t>(edge.a)], b = f.labels[static_cast<std::size_t>(edge.b)];
      if (a == kUnlabeled || b == kUnlabeled) continue;
      std::array<double, kEdgeFeatureDim> row;
      for (int k = 0; k < kEdgeFeatureDim; ++k) row[static_cast<std::size_t>(k)] = f.regions.edge_features(static_cast<Eigen::Index>(e), k);
      rows.push_back(row);
      edge_labels.push_back(a != b ? 1 : 0);
    }
  }
  FinetuneResult result;
  EdgeClassifier bpn;
  if (!rows.empty()) {
    EdgeFeatures feats(static_cast<Eigen::Index>(rows.size()), kEdgeFeatureDim);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      for (int k = 0; k < kEdgeFeatureDim; ++k) feats(static_cast<Eigen::Index>(i), k) = rows[i][static_cast<std::size_t>(k)];
    }
    const EdgeTrainResult trained = train_boundary_classifier(feats, edge_labels, EdgeLoss::kFocal, config.bpn_epochs);
    bpn = trained.model;
    if (!trained.loss_history.empty()) {
      EpochLog entry{"bpn", config.bpn_epochs, 0, 0.0, trained.loss_history.back(), {{"edges", static_cast<double>(rows.size())}}};
      emit(log, entry);
      result.log.push_back(entry);
    }
  }
  for (FinetuneScene& f : scenes) {
    if (f.unlabeled_pool && !f.regions.regions.edges.empty()) {
      f.confident = filter_confident(bpn.predict_labels(f.regions.edge_features), config.gamma);
    }
  }

  int total_labeled = 0, contrast_scenes = 0, pool_scenes = 0;
  for (const FinetuneScene& f : scenes) {
    total_labeled += f.labeled_regions;
    contrast_scenes += f.contrast;
    pool_scenes += f.unlabeled_pool;
  }
  if (total_labeled == 0) throw Error(ErrorCode::kDegenerateLabels, "no labeled region to fine-tune on");

  EncoderParams params = init;
  LinearHead head{MatX(classes, init.dim()), VecX::Zero(classes)};
  const std::vector<VecX> class_text = class_text_embeddings(manifest, provider);
  for (int c = 0; c < classes; ++c) head.w.row(c) = class_text[static_cast<std::size_t>(c)].transpose() / kDefaultTau;
  const Eigen::Index enc_size = static_cast<Eigen::Index>(params.size());
  const Eigen::Index head_size = head.w.size() + head.b.size();
  VecX flat(enc_size + head_size);
  flat.head(enc_size) = params.flatten();
  flat.segment(enc_size, head.w.size()) = Eigen::Map<const VecX>(head.w.data(), head.w.size());
  flat.tail(head.b.size()) = head.b;
  auto unpack = [&] {
    params.assign(flat.head(enc_size));
    head.w = Eigen::Map<const MatX>(flat.data() + enc_size, classes, init.dim());
    head.b = flat.tail(classes);
  };

  std::vector<int> seen, seen_index(static_cast<std::size_t>(classes), -1);
  for (int c = 0; c < classes; ++c) {
    if (novel[static_cast<std::size_t>(c)]) continue;
    seen_index[static_cast<std::size_t>(c)] = static_cast<int>(seen.size());
    seen.push_back(c);
  }
  auto seen_head = [&] {
    LinearHead h{MatX(seen.size(), head.w.cols()), VecX(seen.size())};
    for (std::size_t j = 0; j < seen.size(); ++j) {
      h.w.row(static_cast<Eigen::Index>(j)) = head.w.row(seen[j]);
      h.b(static_cast<Eigen::Index>(j)) = head.b(seen[j]);
    }
    return h;
  };

  const FinetuneWeights weights{config.alpha, config.beta, config.lambda_u};
  OptimizerState opt = OptimizerState::adam(config.lr);
  std::vector<FinetuneGrad> grads(static_cast<std::size_t>(n));
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    begin_epoch(opt, epoch);
    parallel_for(n, config.jobs, [&](int i) {
      const FinetuneScene& f = scenes[static_cast<std::size_t>(i)];
      FinetuneGrad& g = grads[static_cast<std::size_t>(i)];
      g = FinetuneGrad{};
      g.grad = VecX::Zero(flat.size());
      const std::size_t r_count = f.regions.features.size();
      std::vector<RegionEncoding> enc;
      std::vector<VecX> out, hidden;
      bool hidden_ok = true;
      for (std::size_t r = 0; r < r_count; ++r) {
        enc.push_back(encode_points(params, augmented(f.regions.features[r], config, epoch, f.key, r)));
        out.push_back(enc.back().output.values);
        hidden.push_back(enc.back().hidden.values);
        hidden_ok = hidden_ok && enc.back().hidden.normalized;
      }
      std::vector<VecX> go(r_count, VecX::Zero(params.dim())), gh(r_count, VecX::Zero(params.hidden()));
      const LinearHead sub = seen_head();
      if (f.labeled_regions > 0) {
        std::vector<int> local(f.labels.size());
        for (std::size_t r = 0; r < local.size(); ++r) {
          const int l = f.labels[r];
          local[r] = l == kUnlabeled ? kUnlabeled : seen_index[static_cast<std::size_t>(l)];
        }
        HeadGrads hg;
        const LossReport ce = loss_cross_entropy(sub, out, local, &hg);
        const double scale = static_cast<double>(f.labeled_regions) / total_labeled;
        g.sup_ce = scale * ce.value;
        for (std::size_t r = 0; r < r_count; ++r) go[r] += scale * ce.input_grads[r];
        MatX gw = MatX::Zero(classes, head.w.cols());
        for (std::size_t j = 0; j < seen.size(); ++j) {
          gw.row(seen[j]) = hg.w.row(static_cast<Eigen::Index>(j));
          g.grad(enc_size + head.w.size() + seen[j]) += scale * hg.b(static_cast<Eigen::Index>(j));
        }
        g.grad.segment(enc_size, head.w.size()) += scale * Eigen::Map<const VecX>(gw.data(), gw.size());
      }
      if (f.contrast) {
        const LossReport ctr = loss_region_contrast_sup(out, f.labels, config.tau);
        const double scale = 1.0 / contrast_scenes;
        g.sup_ctr = scale * ctr.value;
        for (std::size_t r = 0; r < r_count; ++r) go[r] += scale * ctr.input_grads[r];
      }
      if (f.unlabeled_pool) {
        const double scale = 1.0 / pool_scenes;
        const LossReport en = loss_boundary_energy(out, f.regions.regions.edges, f.confident, config.margin);
        g.energy = scale * en.value;
        const double we = scale * weights.lambda_u * weights.alpha;
        for (std::size_t r = 0; r < r_count; ++r) go[r] += we * en.input_grads[r];
        std::vector<int> pseudo(r_count);
        std::vector<double> conf(r_count);
        for (std::size_t r = 0; r < r_count; ++r) {
          const VecX p = softmax(sub.logits(out[r]));
          Eigen::Index arg = 0;
          conf[r] = p.maxCoeff(&arg);
          pseudo[r] = seen[static_cast<std::size_t>(arg)];
        }
        const LossReport un = loss_region_contrast_unsup({hidden_ok ? hidden : out, out}, pseudo, conf, config.gamma,
                                                         config.tau);
        g.unsup_ctr = scale * un.value;
        const double wu = scale * weights.lambda_u * weights.beta;
        for (std::size_t r = 0; r < r_count; ++r) {
          if (hidden_ok) {
            gh[r] += wu * un.input_grads[r];
          } else {
            go[r] += wu * un.input_grads[r];
          }
          go[r] += wu * un.input_grads[r_count + r];
        }
      }
      g.grad.head(enc_size) = region_grads(params, enc, go, gh);
    });
    LossReport ce, sctr, en, un;
    VecX total = VecX::Zero(flat.size());
    for (const FinetuneGrad& g : grads) {
      ce.value += g.sup_ce;
      sctr.value += g.sup_ctr;
      en.value += g.energy;
      un.value += g.unsup_ctr;
      total += g.grad;
    }
    const LossReport sum = loss_finetune_total(ce, sctr, en, un, weights);
    EpochLog entry{"finetune", epoch, epoch, opt.lr, sum.value, sum.components};
    emit(log, entry);
    result.log.push_back(entry);
    optimizer_step(opt, flat, total);
    unpack();
  }
  for (auto& v : flat) v = static_cast<double>(static_cast<float>(v));
  unpack();
  result.model.encoder = params;
  result.model.head = head;
  result.model.bpn = bpn;
  return result;
}

namespace {

// Normalized region outputs; zero where the encoding is degenerate.
std::vector<VecX> region_outputs(const EncoderParams& params, const SceneRegions& regions) {
  std::vector<VecX> out;
  for (const MatX& f : regions.features) {
    try {
      out.push_back(encode_points(params, f).output.values);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kDegenerateNorm) throw;
      out.push_back(VecX::Zero(params.dim()));
    }
  }
  return out;
}

template <typename T>
std::vector<T> broadcast(const SceneRegions& regions, const std::vector<T>& per_region) {
  std::vector<T> out;
  for (int r : regions.regions.region_of) out.push_back(per_region[static_cast<std::size_t>(r)]);
  return out;
}

int nearest_text(const VecX& v, std::span<const VecX> class_text, double* best_cos = nullptr) {
  int best = 0;
  double best_v = -std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < class_text.size(); ++c) {
    const double s = v.dot(class_text[c]) / std::max(class_text[c].norm(), 1e-12);
    if (s > best_v) {
      best_v = s;
      best = static_cast<int>(c);
    }
  }
  if (best_cos != nullptr) *best_cos = best_v;
  return best;
}

}  // namespace

std::vector<int> classify_open_vocab(const EncoderParams& params, const PointCloud& cloud, const SceneRegions& regions,
                                     std::span<const VecX> class_text) {
  if (cloud.size() != regions.regions.region_of.size()) {
    throw Error(ErrorCode::kShapeMismatch, "regions do not match the cloud");
  }
  if (class_text.empty()) throw Error(ErrorCode::kDegenerateInput, "no class text");
  std::vector<int> per_region;
  for (const VecX& v : region_outputs(params, regions)) per_region.push_back(nearest_text(v, class_text));
  return broadcast(regions, per_region);
}

std::vector<double> query_activation(const EncoderParams& params, const PointCloud& cloud,
                                     const SceneRegions& regions, const std::string& text,
                                     const EmbeddingProvider& provider) {
  if (cloud.size() != regions.regions.region_of.size()) {
    throw Error(ErrorCode::kShapeMismatch, "regions do not match the cloud");
  }
  const VecX q = provider.embed_text(text).values;
  std::vector<double> per_region;
  for (const VecX& v : region_outputs(params, regions)) per_region.push_back(std::clamp(v.dot(q), -1.0, 1.0));
  return broadcast(regions, per_region);
}

ScenePrediction predict_scene(const Model& model, const PointCloud& cloud, const SceneRegions& regions,
                              std::span<const VecX> class_text) {
  if (cloud.size() != regions.regions.region_of.size()) {
    throw Error(ErrorCode::kShapeMismatch, "regions do not match the cloud");
  }
  std::vector<int> labels;
  std::vector<double> conf;
  for (const VecX& v : region_outputs(model.encoder, regions)) {
    VecX logits;
    if (model.head) {
      logits = model.head->logits(v);
    } else {
      logits.resize(static_cast<Eigen::Index>(class_text.size()));
      for (std::size_t c = 0; c < class_text.size(); ++c) {
        logits[static_cast<Eigen::Index>(c)] = v.dot(class_text[c]) / kDefaultTau;
      }
    }
    const VecX p = softmax(logits);
    Eigen::Index arg = 0;
    conf.push_back(p.maxCoeff(&arg));
    labels.push_back(static_cast<int>(arg));
  }
  return {broadcast(regions, labels), broadcast(regions, conf)};
}

namespace {

// Connected components of adjacent regions sharing a predicted class.
std::vector<std::pair<int, InstancePrediction>> predicted_instances(const SceneRegions& regions,
                                                                    const ScenePrediction& pred, int offset) {
  const int n = regions.regions.region_count;
  std::vector<int> region_label(static_cast<std::size_t>(n), kUnlabeled);
  for (std::size_t p = 0; p < regions.regions.region_of.size(); ++p) {
    region_label[static_cast<std::size_t>(regions.regions.region_of[p])] = pred.labels[p];
  }
  std::vector<int> parent(static_cast<std::size_t>(n));
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](int x) {
    while (parent[static_cast<std::size_t>(x)] != x) x = parent[static_cast<std::size_t>(x)] = parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(x)])];
    return x;
  };
  for (const RegionEdge& e : regions.regions.edges) {
    if (region_label[static_cast<std::size_t>(e.a)] != region_label[static_cast<std::size_t>(e.b)]) continue;
    const int a = find(e.a), b = find(e.b);
    if (a != b) parent[static_cast<std::size_t>(std::max(a, b))] = std::min(a, b);
  }
  std::map<int, std::pair<int, InstancePrediction>> comps;
  std::map<int, double> conf_sum;
  for (std::size_t p = 0; p < regions.regions.region_of.size(); ++p) {
    const int label = pred.labels[p];
    if (label <= 1) continue;
    const int root = find(regions.regions.region_of[p]);
    auto& c = comps[root];
    c.first = label;
    c.second.points.push_back(offset + static_cast<int>(p));
    conf_sum[root] += pred.confidence[p];
  }
  std::vector<std::pair<int, InstancePrediction>> out;
  for (auto& [root, c] : comps) {
    c.second.score = conf_sum[root] / static_cast<double>(c.second.points.size());
    out.push_back(std::move(c));
  }
  return out;
}

struct SceneEval {
  std::vector<int> pred;
  std::vector<int> gt;
  std::vector<std::pair<int, InstancePrediction>> instances;
  std::vector<std::pair<int, std::vector<int>>> gt_instances;
  std::vector<double> boundary_pred;
  std::vector<double> boundary_gt;
};

}  // namespace

RatioMetrics evaluate(const SceneSet& data, std::span<const int> scene_ids, const Model& model,
                      const EmbeddingProvider& provider, const TrainConfig& config) {
  const int classes = static_cast<int>(data.manifest.vocabulary.size());
  const std::vector<VecX> class_text = class_text_embeddings(data.manifest, provider);
  const int n = static_cast<int>(scene_ids.size());
  std::vector<SceneEval> evals(static_cast<std::size_t>(n));
  parallel_for(n, config.jobs, [&](int i) {
    const SceneRecord& s = data.scenes.at(static_cast<std::size_t>(scene_ids[static_cast<std::size_t>(i)]));
    const SceneRegions regions = prepare_regions(s.cloud, config, scene_key(s));
    const ScenePrediction pred = predict_scene(model, s.cloud, regions, class_text);
    SceneEval& e = evals[static_cast<std::size_t>(i)];
    e.pred = pred.labels;
    e.gt = s.cloud.sem_label;
    e.instances = predicted_instances(regions, pred, 0);
    std::map<std::pair<int, int>, std::vector<int>> gt_inst;
    for (std::size_t p = 0; p < s.cloud.size(); ++p) {
      const int sem = s.cloud.sem_label[p], inst = s.cloud.inst_label[p];
      if (sem <= 1 || inst == kNoInstance) continue;
      gt_inst[{sem, inst}].push_back(static_cast<int>(p));
    }
    for (auto& [key, pts] : gt_inst) e.gt_instances.emplace_back(key.first, std::move(pts));
    if (model.bpn && !regions.regions.edges.empty()) {
      e.boundary_pred = model.bpn->predict(regions.edge_features);
      e.boundary_gt = ground_truth_boundaries(regions.regions, s.cloud.sem_label).prob;
    }
  });

  std::vector<int> pred, gt;
  std::map<int, std::vector<InstancePrediction>> inst_pred;
  std::map<int, std::vector<std::vector<int>>> inst_gt;
  BoundaryLabels bp, bg;
  bg.source = LabelSource::kGroundTruth;
  int offset = 0;
  for (SceneEval& e : evals) {
    pred.insert(pred.end(), e.pred.begin(), e.pred.end());
    gt.insert(gt.end(), e.gt.begin(), e.gt.end());
    for (auto& [c, inst] : e.instances) {
      for (int& p : inst.points) p += offset;
      inst_pred[c].push_back(std::move(inst));
    }
    for (auto& [c, pts] : e.gt_instances) {
      for (int& p : pts) p += offset;
      inst_gt[c].push_back(std::move(pts));
    }
    bp.prob.insert(bp.prob.end(), e.boundary_pred.begin(), e.boundary_pred.end());
    bg.prob.insert(bg.prob.end(), e.boundary_gt.begin(), e.boundary_gt.end());
    offset += static_cast<int>(e.pred.size());
  }

  RatioMetrics m;
  const MiouResult iou = miou(pred, gt, classes);
  m.miou = iou.mean;
  const auto base = data.manifest.base_ids(), nov = data.manifest.novel_ids();
  m.miou_base = iou.mean_over(base);
  m.miou_novel = iou.mean_over(nov);
  m.hiou = hiou(m.miou_base, m.miou_novel);
  double ap = 0.0;
  int ap_classes = 0;
  for (const auto& [c, g] : inst_gt) {
    ++ap_classes;
    const auto it = inst_pred.find(c);
    if (it != inst_pred.end()) ap += ap50_instances(it->second, g);
  }
  m.ap50 = ap_classes == 0 ? 0.0 : ap / ap_classes;
  if (!bp.prob.empty()) {
    try {
      m.boundary_ap = boundary_ap(bp, bg);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kDegenerateLabels) throw;
    }
  }
  return m;
}

OpenVocabAccuracy open_vocab_accuracy(const SceneSet& data, std::span<const int> scene_ids,
                                      const EncoderParams& params, const EmbeddingProvider& provider,
                                      const TrainConfig& config) {
  const int classes = static_cast<int>(data.manifest.vocabulary.size());
  const std::vector<VecX> class_text = class_text_embeddings(data.manifest, provider);
  const int n = static_cast<int>(scene_ids.size());
  std::vector<std::vector<int>> preds(static_cast<std::size_t>(n));
  parallel_for(n, config.jobs, [&](int i) {
    const SceneRecord& s = data.scenes.at(static_cast<std::size_t>(scene_ids[static_cast<std::size_t>(i)]));
    const SceneRegions regions = prepare_regions(s.cloud, config, scene_key(s));
    preds[static_cast<std::size_t>(i)] = classify_open_vocab(params, s.cloud, regions, class_text);
  });
  std::vector<char> is_novel(static_cast<std::size_t>(classes), 0);
  for (int c : data.manifest.novel_ids()) is_novel[static_cast<std::size_t>(c)] = 1;
  std::vector<int> pred, gt;
  long hit[2] = {0, 0}, count[2] = {0, 0};
  for (int i = 0; i < n; ++i) {
    const auto& cloud = data.scenes[static_cast<std::size_t>(scene_ids[static_cast<std::size_t>(i)])].cloud;
    const auto& p = preds[static_cast<std::size_t>(i)];
    for (std::size_t j = 0; j < p.size(); ++j) {
      const int g = cloud.sem_label[j];
      if (g == kUnlabeled) continue;
      const int group = is_novel[static_cast<std::size_t>(g)];
      ++count[group];
      hit[group] += p[j] == g;
    }
    pred.insert(pred.end(), p.begin(), p.end());
    gt.insert(gt.end(), cloud.sem_label.begin(), cloud.sem_label.end());
  }
  OpenVocabAccuracy out;
  out.base = count[0] == 0 ? 0.0 : static_cast<double>(hit[0]) / count[0];
  out.novel = count[1] == 0 ? 0.0 : static_cast<double>(hit[1]) / count[1];
  out.overall = count[0] + count[1] == 0 ? 0.0 : static_cast<double>(hit[0] + hit[1]) / (count[0] + count[1]);
  const MiouResult iou = miou(pred, gt, classes);
  out.miou_base = iou.mean_over(data.manifest.base_ids());
  out.miou_novel = iou.mean_over(data.manifest.novel_ids());
  out.hiou = hiou(out.miou_base, out.miou_novel);
  return out;
}

}  // namespace scenefuse
