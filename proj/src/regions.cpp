#include "scenefuse/regions.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <map>
#include <numbers>
#include <numeric>

#include "binary_io.hpp"
#include "scenefuse/error.hpp"

namespace scenefuse {

namespace {

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

std::vector<int> compress_ids(const std::vector<int>& ids, int* count) {
  std::map<int, int> remap;
  for (int id : ids) remap.emplace(id, 0);
  int next = 0;
  for (auto& [id, dense] : remap) dense = next++;
  std::vector<int> out(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) out[i] = remap[ids[i]];
  *count = next;
  return out;
}

// Merges each region below min_size into the adjacent region with the most
// similar mean color, or into the region of the nearest foreign point when
// nothing lies within the adjacency radius.
void merge_small_regions(const PointCloud& cloud, const PointGrid& grid, std::vector<int>& region_of,
                         int min_size, double radius) {
  const auto& pos = cloud.positions;
  for (;;) {
    std::map<int, std::vector<int>> members;
    for (std::size_t i = 0; i < region_of.size(); ++i) members[region_of[i]].push_back(static_cast<int>(i));
    if (members.size() <= 1) return;
    int victim = -1;
    std::size_t victim_size = std::numeric_limits<std::size_t>::max();
    Vec3 victim_key;
    for (const auto& [id, pts] : members) {
      if (static_cast<int>(pts.size()) >= min_size) continue;
      Vec3 key = pos[pts[0]];
      for (int p : pts) {
        if (position_less(pos[p], key)) key = pos[p];
      }
      if (pts.size() < victim_size || (pts.size() == victim_size && position_less(key, victim_key))) {
        victim = id;
        victim_size = pts.size();
        victim_key = key;
      }
    }
    if (victim < 0) return;

    auto mean_color = [&](int id) {
      Vec3 sum = Vec3::Zero();
      for (int p : members[id]) sum += cloud.colors[p];
      return Vec3(sum / static_cast<double>(members[id].size()));
    };
    const Vec3 own = mean_color(victim);
    std::map<int, int> contacts;
    for (int p : members[victim]) {
      for (int q : grid.radius(pos[p], radius)) {
        if (region_of[q] != victim) ++contacts[region_of[q]];
      }
    }
    int target = -1;
    double best = std::numeric_limits<double>::infinity();
    int best_contacts = 0;
    for (const auto& [id, count] : contacts) {
      const double d = (mean_color(id) - own).norm();
      if (d < best || (d == best && count > best_contacts)) {
        best = d;
        best_contacts = count;
        target = id;
      }
    }
    if (target < 0) {
      Vec3 best_pos;
      for (int p : members[victim]) {
        for (std::size_t q = 0; q < pos.size(); ++q) {
          if (region_of[q] == victim) continue;
          const double d = (pos[q] - pos[p]).squaredNorm();
          if (d < best || (d == best && position_less(pos[q], best_pos))) {
            best = d;
            best_pos = pos[q];
            target = region_of[q];
          }
        }
      }
    }
    for (int p : members[victim]) region_of[p] = target;
  }
}

}  // namespace

std::vector<std::vector<int>> RegionSet::members() const {
  std::vector<std::vector<int>> out(region_count);
  for (std::size_t i = 0; i < region_of.size(); ++i) out[region_of[i]].push_back(static_cast<int>(i));
  return out;
}

std::vector<int> RegionSet::sizes() const {
  std::vector<int> out(region_count, 0);
  for (int r : region_of) ++out[r];
  return out;
}

void RegionSet::validate() const {
  std::vector<char> seen(region_count, 0);
  for (int r : region_of) {
    if (r < 0 || r >= region_count) throw Error(ErrorCode::kDegenerateInput, "region id out of range");
    seen[r] = 1;
  }
  if (std::find(seen.begin(), seen.end(), 0) != seen.end()) {
    throw Error(ErrorCode::kDegenerateInput, "region ids are not dense");
  }
  for (std::size_t e = 0; e < edges.size(); ++e) {
    const auto& edge = edges[e];
    if (edge.a >= edge.b || edge.a < 0 || edge.b >= region_count) {
      throw Error(ErrorCode::kDegenerateInput, "malformed region edge");
    }
    if (e > 0 && std::tie(edges[e - 1].a, edges[e - 1].b) >= std::tie(edge.a, edge.b)) {
      throw Error(ErrorCode::kDegenerateInput, "region edges not sorted or duplicated");
    }
  }
}

RegionSet make_region_set(std::span<const Vec3> positions, std::vector<int> region_of, double radius) {
  if (region_of.size() != positions.size()) throw Error(ErrorCode::kShapeMismatch, "region ids vs points");
  RegionSet out;
  out.region_of = compress_ids(region_of, &out.region_count);
  const PointGrid grid(positions, radius);
  std::map<std::pair<int, int>, int> border;
  for (std::size_t i = 0; i < positions.size(); ++i) {
    for (int j : grid.radius(positions[i], radius)) {
      if (j <= static_cast<int>(i)) continue;
      const int a = out.region_of[i], b = out.region_of[j];
      if (a == b) continue;
      ++border[{std::min(a, b), std::max(a, b)}];
    }
  }
  for (const auto& [key, count] : border) out.edges.push_back({key.first, key.second, count});
  out.validate();
  return out;
}

RegionSet oversegment(const PointCloud& cloud, const SegParams& params) {
  if (cloud.empty()) throw Error(ErrorCode::kDegenerateInput, "cannot segment an empty cloud");
  return oversegment(cloud, estimate_normals(cloud.positions, params.normal_k), params);
}

RegionSet oversegment(const PointCloud& cloud, const NormalEstimate& normals, const SegParams& params) {
  if (cloud.empty()) throw Error(ErrorCode::kDegenerateInput, "cannot segment an empty cloud");
  if (normals.normals.size() != cloud.size()) throw Error(ErrorCode::kShapeMismatch, "normals vs points");
  const auto& pos = cloud.positions;
  const std::size_t n = cloud.size();
  const PointGrid grid(pos, params.radius);
  const double cos_limit = std::cos(params.normal_angle_deg * std::numbers::pi / 180.0);

  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (normals.curvature[a] != normals.curvature[b]) return normals.curvature[a] < normals.curvature[b];
    if (pos[a] != pos[b]) return position_less(pos[a], pos[b]);
    return a < b;
  });

  std::vector<int> region_of(n, -1);
  int next = 0;
  std::deque<int> queue;
  for (int seed : order) {
    if (region_of[seed] >= 0) continue;
    const int id = next++;
    region_of[seed] = id;
    Vec3 color_sum = cloud.colors[seed];
    int count = 1;
    queue.assign(1, seed);
    while (!queue.empty()) {
      const int i = queue.front();
      queue.pop_front();
      if (i != seed && normals.curvature[i] > params.curvature_threshold) continue;
      for (int j : grid.radius(pos[i], params.radius)) {
        if (region_of[j] >= 0) continue;
        if (std::abs(normals.normals[i].dot(normals.normals[j])) < cos_limit) continue;
        if ((cloud.colors[j] - color_sum / count).norm() >= params.color_threshold) continue;
        region_of[j] = id;
        color_sum += cloud.colors[j];
        ++count;
        queue.push_back(j);
      }
    }
  }
  if (params.min_size > 1) merge_small_regions(cloud, grid, region_of, params.min_size, params.radius);
  return make_region_set(pos, std::move(region_of), params.radius);
}

std::vector<int> canonical_relabel(std::span<const Vec3> positions, std::span<const int> region_of) {
  std::vector<int> order(positions.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (positions[a] != positions[b]) return position_less(positions[a], positions[b]);
    return region_of[a] < region_of[b];
  });
  std::map<int, int> remap;
  for (int i : order) remap.emplace(region_of[i], static_cast<int>(remap.size()));
  std::vector<int> out(region_of.size());
  for (std::size_t i = 0; i < region_of.size(); ++i) out[i] = remap[region_of[i]];
  return out;
}

EdgeFeatures edge_features(const PointCloud& cloud, const RegionSet& regions) {
  return edge_features(cloud, estimate_normals(cloud.positions, 10), regions);
}

EdgeFeatures edge_features(const PointCloud& cloud, const NormalEstimate& normals,
                           const RegionSet& regions) {
  if (regions.region_of.size() != cloud.size()) throw Error(ErrorCode::kShapeMismatch, "regions vs cloud");
  const int r = regions.region_count;
  std::vector<Vec3> centroid(r, Vec3::Zero()), color(r, Vec3::Zero());
  std::vector<Mat3> scatter(r, Mat3::Zero());
  const std::vector<int> size = regions.sizes();
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const int id = regions.region_of[i];
    centroid[id] += cloud.positions[i];
    color[id] += cloud.colors[i];
    scatter[id] += normals.normals[i] * normals.normals[i].transpose();
  }
  std::vector<Vec3> normal(r);
  for (int id = 0; id < r; ++id) {
    centroid[id] /= size[id];
    color[id] /= size[id];
    Eigen::SelfAdjointEigenSolver<Mat3> eig(scatter[id]);
    normal[id] = eig.eigenvectors().col(2).normalized();
  }
  EdgeFeatures f(regions.edges.size(), kEdgeFeatureDim);
  for (std::size_t e = 0; e < regions.edges.size(); ++e) {
    const auto& edge = regions.edges[e];
    f(e, 0) = (centroid[edge.a] - centroid[edge.b]).norm();
    f(e, 1) = (color[edge.a] - color[edge.b]).norm();
    f(e, 2) = 1.0 - std::min(1.0, std::abs(normal[edge.a].dot(normal[edge.b])));
    f(e, 3) = static_cast<double>(edge.border) / std::min(size[edge.a], size[edge.b]);
  }
  return f;
}

std::vector<int> region_majority_labels(const RegionSet& regions, std::span<const int> labels) {
  if (labels.size() != regions.region_of.size()) throw Error(ErrorCode::kShapeMismatch, "labels vs regions");
  std::vector<std::map<int, int>> votes(regions.region_count);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != kUnlabeled) ++votes[regions.region_of[i]][labels[i]];
  }
  std::vector<int> out(regions.region_count, kUnlabeled);
  for (int id = 0; id < regions.region_count; ++id) {
    int best = 0;
    for (const auto& [label, count] : votes[id]) {
      if (count > best) {
        best = count;
        out[id] = label;
      }
    }
  }
  return out;
}

BoundaryLabels ground_truth_boundaries(const RegionSet& regions, std::span<const int> sem_labels) {
  const auto major = region_majority_labels(regions, sem_labels);
  BoundaryLabels out;
  out.source = LabelSource::kGroundTruth;
  for (const auto& e : regions.edges) out.prob.push_back(major[e.a] != major[e.b] ? 1.0 : 0.0);
  return out;
}

std::vector<double> EdgeClassifier::predict(const EdgeFeatures& features) const {
  std::vector<double> out(features.rows());
  for (Eigen::Index e = 0; e < features.rows(); ++e) {
    const auto x = (features.row(e).transpose() - feature_mean).cwiseQuotient(feature_scale);
    out[e] = sigmoid(weights.dot(x) + bias);
  }
  return out;
}

BoundaryLabels EdgeClassifier::predict_labels(const EdgeFeatures& features) const {
  return {predict(features), LabelSource::kPredicted};
}

double edge_loss(const EdgeClassifier& model, const EdgeFeatures& features, std::span<const int> labels,
                 EdgeLoss kind, EdgeLossGrad* grad) {
  if (static_cast<Eigen::Index>(labels.size()) != features.rows()) {
    throw Error(ErrorCode::kShapeMismatch, "edge labels vs features");
  }
  if (labels.empty()) throw Error(ErrorCode::kDegenerateLabels, "no edges");
  if (grad) *grad = {};
  double total = 0.0;
  const double inv_n = 1.0 / static_cast<double>(labels.size());
  for (Eigen::Index e = 0; e < features.rows(); ++e) {
    const Eigen::Vector<double, kEdgeFeatureDim> x =
        (features.row(e).transpose() - model.feature_mean).cwiseQuotient(model.feature_scale);
    const double z = model.weights.dot(x) + model.bias;
    const double p = sigmoid(z);
    const double log_p = -softplus(-z);
    const double log_q = -softplus(z);
    const bool positive = labels[e] != 0;
    double loss, dz;
    if (kind == EdgeLoss::kBce) {
      loss = positive ? -log_p : -log_q;
      dz = p - (positive ? 1.0 : 0.0);
    } else if (positive) {
      const double m = std::pow(1.0 - p, kFocalGamma);
      loss = -kFocalAlpha * m * log_p;
      dz = kFocalAlpha * m * (kFocalGamma * p * log_p - (1.0 - p));
    } else {
      const double m = std::pow(p, kFocalGamma);
      loss = -(1.0 - kFocalAlpha) * m * log_q;
      dz = -(1.0 - kFocalAlpha) * m * (kFocalGamma * (1.0 - p) * log_q - p);
    }
    total += loss;
    if (grad) {
      grad->weights += dz * inv_n * x;
      grad->bias += dz * inv_n;
    }
  }
  return total * inv_n;
}

EdgeTrainResult train_boundary_classifier(const EdgeFeatures& features, std::span<const int> labels,
                                          EdgeLoss kind, int epochs) {
  if (static_cast<Eigen::Index>(labels.size()) != features.rows()) {
    throw Error(ErrorCode::kShapeMismatch, "edge labels vs features");
  }
  const auto positives = std::count_if(labels.begin(), labels.end(), [](int y) { return y != 0; });
  if (positives == 0 || positives == static_cast<long>(labels.size())) {
    throw Error(ErrorCode::kDegenerateLabels, "boundary classifier needs both classes");
  }
  if (epochs < 0) throw Error(ErrorCode::kBadParam, "epochs must be non-negative");

  EdgeTrainResult out;
  EdgeClassifier& model = out.model;
  model.feature_mean = features.colwise().mean().transpose();
  for (int c = 0; c < kEdgeFeatureDim; ++c) {
    const double var = (features.col(c).array() - model.feature_mean[c]).square().mean();
    model.feature_scale[c] = var > 1e-24 ? std::sqrt(var) : 1.0;
  }

  double step = 1.0;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    EdgeLossGrad g;
    const double loss = edge_loss(model, features, labels, kind, &g);
    out.loss_history.push_back(loss);
    const double g2 = g.weights.squaredNorm() + g.bias * g.bias;
    if (g2 < 1e-30) continue;
    step = std::min(step * 2.0, 64.0);
    bool accepted = false;
    for (int tries = 0; tries < 60; ++tries) {
      EdgeClassifier trial = model;
      trial.weights -= step * g.weights;
      trial.bias -= step * g.bias;
      if (edge_loss(trial, features, labels, kind) <= loss - 1e-4 * step * g2) {
        model = trial;
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) step = 1.0;
  }
  return out;
}

std::vector<ConfidentEdge> filter_confident(const BoundaryLabels& labels, double gamma) {
  if (!(gamma > 0.5 && gamma < 1.0)) throw Error(ErrorCode::kBadParam, "gamma must lie in (0.5, 1)");
  std::vector<ConfidentEdge> out;
  for (std::size_t e = 0; e < labels.prob.size(); ++e) {
    const double p = labels.prob[e];
    if (p >= gamma) {
      out.push_back({static_cast<int>(e), 1, p});
    } else if (p <= 1.0 - gamma) {
      out.push_back({static_cast<int>(e), 0, p});
    }
  }
  return out;
}

double boundary_ap(const BoundaryLabels& pred, const BoundaryLabels& gt) {
  if (pred.prob.size() != gt.prob.size()) throw Error(ErrorCode::kShapeMismatch, "edge sets differ");
  std::vector<int> order(pred.prob.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return pred.prob[a] > pred.prob[b]; });
  const auto positives = std::count_if(gt.prob.begin(), gt.prob.end(), [](double p) { return p >= 0.5; });
  if (positives == 0) throw Error(ErrorCode::kDegenerateLabels, "no positive boundary edges");

  double area = 0.0, prev_recall = 0.0, prev_precision = -1.0;
  int tp = 0;
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    if (gt.prob[order[rank]] < 0.5) continue;
    ++tp;
    const double recall = static_cast<double>(tp) / positives;
    const double precision = static_cast<double>(tp) / (rank + 1);
    if (prev_precision < 0.0) prev_precision = precision;
    area += 0.5 * (recall - prev_recall) * (precision + prev_precision);
    prev_recall = recall;
    prev_precision = precision;
  }
  return area;
}

void write_regions(const std::filesystem::path& path, const RegionSet& regions, const BoundaryLabels* labels) {
  if (labels && labels->prob.size() != regions.edges.size()) {
    throw Error(ErrorCode::kShapeMismatch, "boundary labels vs edges");
  }
  std::string out = "REGS";
  io::put_u32(out, static_cast<std::uint32_t>(regions.region_of.size()));
  for (int r : regions.region_of) io::put_i32(out, r);
  io::put_u32(out, static_cast<std::uint32_t>(regions.edges.size()));
  for (std::size_t e = 0; e < regions.edges.size(); ++e) {
    io::put_u32(out, static_cast<std::uint32_t>(regions.edges[e].a));
    io::put_u32(out, static_cast<std::uint32_t>(regions.edges[e].b));
    io::put_f32(out, static_cast<float>(regions.edges[e].border));
    io::put_f32(out, labels ? static_cast<float>(labels->prob[e]) : 0.0f);
  }
  io::write_file(path, out);
}

RegionSet read_regions(const std::filesystem::path& path, BoundaryLabels* labels) {
  const std::string bytes = io::read_file(path);
  io::Reader in(bytes);
  in.expect_magic("REGS");
  RegionSet out;
  const std::uint32_t n = in.u32();
  out.region_of.resize(n);
  for (auto& r : out.region_of) {
    r = in.i32();
    out.region_count = std::max(out.region_count, r + 1);
  }
  const std::uint32_t m = in.u32();
  if (labels) *labels = {};
  for (std::uint32_t e = 0; e < m; ++e) {
    RegionEdge edge;
    edge.a = static_cast<int>(in.u32());
    edge.b = static_cast<int>(in.u32());
    edge.border = static_cast<int>(std::lround(in.f32()));
    const float p = in.f32();
    if (labels) labels->prob.push_back(p);
    out.edges.push_back(edge);
  }
  if (!in.done()) throw Error(ErrorCode::kFormat, "trailing bytes in region dump");
  out.validate();
  return out;
}

}  // namespace scenefuse
