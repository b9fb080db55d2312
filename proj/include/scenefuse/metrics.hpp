#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "scenefuse/geometry.hpp"

namespace scenefuse {

// Rows are ground truth, columns predictions.
struct ConfusionMatrix {
  int classes = 0;
  std::vector<long> counts;
  std::vector<long> unassigned;  // per ground-truth class, predictions outside the class range

  long at(int gt, int pred) const { return counts[static_cast<std::size_t>(gt) * classes + pred]; }
};

// Points whose ground truth equals `ignore` are skipped; predictions outside
// [0, n_classes) count only as misses.
ConfusionMatrix confusion_matrix(std::span<const int> pred, std::span<const int> gt, int n_classes,
                                 int ignore = kUnlabeled);

struct MiouResult {
  std::vector<double> iou;    // 0 for absent classes
  std::vector<char> present;  // class occurs in prediction or ground truth
  double mean = 0.0;          // over present classes, 0 when none is present

  // Mean over the present classes among `ids`, 0 when none is present.
  double mean_over(std::span<const int> ids) const;
};

MiouResult miou(const ConfusionMatrix& cm);
MiouResult miou(std::span<const int> pred, std::span<const int> gt, int n_classes, int ignore = kUnlabeled);

// Harmonic mean 2ab / (a + b), 0 when a + b = 0.
double hiou(double miou_base, double miou_novel);

struct InstancePrediction {
  std::vector<int> points;  // sorted, unique
  double score = 0.0;
};

double point_set_iou(std::span<const int> a, std::span<const int> b);

// Greedy matching in descending score order (stable), each ground-truth
// instance used once, IoU >= iou_thresh; all-point interpolated AP.
double ap50_instances(std::span<const InstancePrediction> preds, std::span<const std::vector<int>> gt,
                      double iou_thresh = 0.5);

struct RatioMetrics {
  double miou = 0.0;
  double hiou = 0.0;
  double miou_base = 0.0;
  double miou_novel = 0.0;
  double ap50 = 0.0;
  double boundary_ap = 0.0;

  bool operator==(const RatioMetrics&) const = default;
};

using EvalReport = std::map<double, RatioMetrics>;

// Keys are the ratios printed with %g, in ascending numeric order.
std::string eval_report_json(const EvalReport& report);
EvalReport parse_eval_report(const std::string& text);

}  // namespace scenefuse
