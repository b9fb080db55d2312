#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "scenefuse/alignment.hpp"
#include "scenefuse/datagen.hpp"
#include "scenefuse/embeddings.hpp"
#include "scenefuse/losses.hpp"
#include "scenefuse/metrics.hpp"
#include "scenefuse/regions.hpp"

namespace scenefuse {

struct SceneRecord {
  std::string name;
  std::string split;  // "train" or "test"
  PointCloud cloud;
  std::vector<int> classes;  // object class multiset
  std::vector<Box3D> boxes;
  bool has_adjacent_pair = false;
};

struct SceneSet {
  Manifest manifest;
  std::vector<SceneRecord> scenes;

  std::vector<int> ids(const std::string& split) const;
};

SceneSet scenes_from_dataset(const Dataset& dataset);
SceneSet load_scenes(const Manifest& manifest);

struct TrainConfig {
  int epochs = 200;
  double lr = 0.05;
  double lambda_kl = kDefaultLambdaKl;
  double distill_temp = 0.1;
  double tau = 0.3;
  double gamma = kDefaultGamma;
  double margin = kDefaultMargin;
  double alpha = 1.0;
  double beta = 1.0;
  double lambda_u = 0.1;
  int k = kDefaultTopk;
  double reg = kDefaultTopkReg;
  std::uint64_t seed = 0;
  int views = 6;
  int resolution = 128;
  double elevation = 0.5;

  int hidden = kDefaultHiddenDim;
  int max_region_points = 64;
  int bpn_epochs = 300;
  bool mask_novel = false;    // treat novel-class labels as unlabeled while fine-tuning
  bool transductive = false;  // add test scenes to the unlabeled pool
  double toy_sigma = 0.0;
  std::uint64_t toy_seed = 0;
  int batch_scenes = 1;  // scenes per optimizer step
  bool augment = true;   // random rotation about the vertical axis while training
  int jobs = 1;

  // Flat JSON object; unknown keys raise kConfig.
  static TrainConfig from_json(const std::string& text);
  static TrainConfig from_json(const std::string& text, TrainConfig base);
  void set(const std::string& key, const std::string& value);
  std::string to_json() const;
  void validate() const;
};

// "toy" or "bridge:URL" (empty URL falls back to SCENEFUSE_BRIDGE_URL).
std::unique_ptr<EmbeddingProvider> make_provider(const std::string& spec, const Manifest& manifest,
                                                 const TrainConfig& config);

struct LabelPartition {
  double ratio = 1.0;
  std::uint64_t seed = 0;
  std::vector<int> labeled;    // whole scenes
  std::vector<int> unlabeled;  // whole scenes
  int split_scene = -1;        // scene labeled only where coordinate[split_axis] < split_value
  int split_axis = 0;
  double split_value = 0.0;
  double realized = 0.0;  // labeled point fraction

  bool point_labeled(int scene, const Vec3& p) const;
};

inline constexpr double kPartitionTolerance = 0.005;

// Throws kBadParam when the ratio is not one of 0.01, 0.05, 0.10, 0.15, 0.20,
// 0.25, 0.30, 0.40, 0.50, 1.0, and kPartitionInfeasible when the tolerance cannot
// be met.
LabelPartition partition_labels(const SceneSet& data, std::span<const int> scene_ids, double ratio,
                                std::uint64_t seed);

// Per-scene region features shared by training and inference.
struct SceneRegions {
  RegionSet regions;
  NormalEstimate normals;
  EdgeFeatures edge_features;
  std::vector<MatX> features;  // one subsampled feature matrix per region
  std::vector<int> majority;   // majority ground-truth label per region
};

SceneRegions prepare_regions(const PointCloud& cloud, const TrainConfig& config, std::uint64_t scene_key);

struct EpochLog {
  std::string phase;
  int epoch = 0;
  long step = 0;
  double lr = 0.0;
  double loss = 0.0;
  std::map<std::string, double> components;
};

std::string epoch_log_json(const EpochLog& log);

struct TopkAudit {
  long calls = 0;
  long mismatches = 0;
};

struct PretrainResult {
  EncoderParams params;
  std::vector<EpochLog> log;
  std::vector<double> alignment;  // mean own-class cosine before each epoch, then after the last
  TopkAudit topk;
};

PretrainResult pretrain(const SceneSet& data, std::span<const int> scene_ids, const EmbeddingProvider& provider,
                        const TrainConfig& config, std::ostream* log = nullptr);

// Mean cosine between each over-segmentation region's embedding and the text
// of its majority ground-truth class.
double alignment_score(const EncoderParams& params, std::span<const SceneRegions> scenes,
                       std::span<const VecX> class_text);

struct Model {
  EncoderParams encoder;
  std::optional<LinearHead> head;
  std::optional<EdgeClassifier> bpn;
};

std::vector<Tensor> model_tensors(const Model& model);
Model model_from_tensors(std::span<const Tensor> tensors);
void write_model(const std::filesystem::path& path, const Model& model);
Model read_model(const std::filesystem::path& path);

struct FinetuneResult {
  Model model;
  std::vector<EpochLog> log;
};

FinetuneResult finetune(const SceneSet& data, const LabelPartition& partition, const EncoderParams& init,
                        const EmbeddingProvider& provider, const TrainConfig& config, std::ostream* log = nullptr);

std::vector<VecX> class_text_embeddings(const Manifest& manifest, const EmbeddingProvider& provider);

// Per region, argmax of cosine(region embedding, text); ties go to the lower
// class index. Broadcast to points.
std::vector<int> classify_open_vocab(const EncoderParams& params, const PointCloud& cloud, const SceneRegions& regions,
                                     std::span<const VecX> class_text);

std::vector<double> query_activation(const EncoderParams& params, const PointCloud& cloud,
                                     const SceneRegions& regions, const std::string& text,
                                     const EmbeddingProvider& provider);

struct ScenePrediction {
  std::vector<int> labels;
  std::vector<double> confidence;  // per point
};

// Head predictions when the model has a head, open-vocabulary otherwise.
ScenePrediction predict_scene(const Model& model, const PointCloud& cloud, const SceneRegions& regions,
                              std::span<const VecX> class_text);

RatioMetrics evaluate(const SceneSet& data, std::span<const int> scene_ids, const Model& model,
                      const EmbeddingProvider& provider, const TrainConfig& config);

// Per-point accuracy of open-vocabulary classification split by base and
// novel classes.
struct OpenVocabAccuracy {
  double base = 0.0;
  double novel = 0.0;
  double overall = 0.0;
  double miou_base = 0.0;
  double miou_novel = 0.0;
  double hiou = 0.0;
};

OpenVocabAccuracy open_vocab_accuracy(const SceneSet& data, std::span<const int> scene_ids,
                                      const EncoderParams& params, const EmbeddingProvider& provider,
                                      const TrainConfig& config);

}  // namespace scenefuse
