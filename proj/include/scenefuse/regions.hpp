#pragma once

#include <Eigen/Core>

#include <filesystem>
#include <span>
#include <vector>

#include "scenefuse/geometry.hpp"
#include "scenefuse/spatial.hpp"

namespace scenefuse {

struct RegionEdge {
  int a = 0;  // a < b
  int b = 0;
  int border = 0;  // point pairs within the adjacency radius straddling the edge
};

struct RegionSet {
  std::vector<int> region_of;
  int region_count = 0;
  std::vector<RegionEdge> edges;  // sorted by (a, b)

  std::vector<std::vector<int>> members() const;
  std::vector<int> sizes() const;
  // Throws kDegenerateInput if ids are not dense or the edge list is malformed.
  void validate() const;
};

struct SegParams {
  double radius = 0.08;
  double normal_angle_deg = 20.0;
  double color_threshold = 0.15;
  int min_size = 10;
  int normal_k = 10;
  // Points above this curvature join a region but do not extend it.
  double curvature_threshold = 0.05;
};

RegionSet oversegment(const PointCloud& cloud, const SegParams& params = {});
RegionSet oversegment(const PointCloud& cloud, const NormalEstimate& normals, const SegParams& params);

// Rebuilds the adjacency list for an arbitrary per-point region assignment.
RegionSet make_region_set(std::span<const Vec3> positions, std::vector<int> region_of, double radius);

// Ids renumbered in order of first appearance along the position order.
std::vector<int> canonical_relabel(std::span<const Vec3> positions, std::span<const int> region_of);

inline constexpr int kEdgeFeatureDim = 4;
using EdgeFeatures = Eigen::Matrix<double, Eigen::Dynamic, kEdgeFeatureDim, Eigen::RowMajor>;

// Rows follow regions.edges: |d centroid|, |d mean color|, 1 - |n_i . n_j|,
// border / min(size_i, size_j).
EdgeFeatures edge_features(const PointCloud& cloud, const RegionSet& regions);
EdgeFeatures edge_features(const PointCloud& cloud, const NormalEstimate& normals,
                           const RegionSet& regions);

// Majority semantic label per region (kUnlabeled if the region has none).
std::vector<int> region_majority_labels(const RegionSet& regions, std::span<const int> labels);

enum class LabelSource { kPredicted, kGroundTruth };

struct BoundaryLabels {
  std::vector<double> prob;  // aligned with RegionSet::edges
  LabelSource source = LabelSource::kPredicted;
};

// 1 where the two regions' majority labels differ.
BoundaryLabels ground_truth_boundaries(const RegionSet& regions, std::span<const int> sem_labels);

enum class EdgeLoss { kFocal, kBce };

struct EdgeClassifier {
  Eigen::Vector<double, kEdgeFeatureDim> weights = Eigen::Vector<double, kEdgeFeatureDim>::Zero();
  double bias = 0.0;
  // Standardization applied before the linear map.
  Eigen::Vector<double, kEdgeFeatureDim> feature_mean = Eigen::Vector<double, kEdgeFeatureDim>::Zero();
  Eigen::Vector<double, kEdgeFeatureDim> feature_scale = Eigen::Vector<double, kEdgeFeatureDim>::Ones();

  std::vector<double> predict(const EdgeFeatures& features) const;
  BoundaryLabels predict_labels(const EdgeFeatures& features) const;
};

struct EdgeLossGrad {
  Eigen::Vector<double, kEdgeFeatureDim> weights = Eigen::Vector<double, kEdgeFeatureDim>::Zero();
  double bias = 0.0;
};

inline constexpr double kFocalGamma = 2.0;
inline constexpr double kFocalAlpha = 0.25;

// Mean loss over edges; labels are hard 0/1.
double edge_loss(const EdgeClassifier& model, const EdgeFeatures& features, std::span<const int> labels,
                 EdgeLoss kind, EdgeLossGrad* grad = nullptr);

struct EdgeTrainResult {
  EdgeClassifier model;
  std::vector<double> loss_history;  // one entry per epoch, before the step
};

EdgeTrainResult train_boundary_classifier(const EdgeFeatures& features, std::span<const int> labels,
                                          EdgeLoss kind, int epochs);

struct ConfidentEdge {
  int edge = 0;
  int label = 0;  // 1 boundary, 0 non-boundary
  double prob = 0.0;
};

std::vector<ConfidentEdge> filter_confident(const BoundaryLabels& labels, double gamma);

double boundary_ap(const BoundaryLabels& pred, const BoundaryLabels& gt);

// "REGS" dump; probabilities optional (written as 0 when absent).
void write_regions(const std::filesystem::path& path, const RegionSet& regions,
                   const BoundaryLabels* labels = nullptr);
RegionSet read_regions(const std::filesystem::path& path, BoundaryLabels* labels = nullptr);

}  // namespace scenefuse
