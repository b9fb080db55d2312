#include "scenefuse/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>

#include "json.hpp"
#include "scenefuse/error.hpp"

namespace scenefuse {

ConfusionMatrix confusion_matrix(std::span<const int> pred, std::span<const int> gt, int n_classes, int ignore) {
  if (pred.size() != gt.size()) throw Error(ErrorCode::kShapeMismatch, "prediction and ground truth lengths differ");
  if (n_classes < 1) throw Error(ErrorCode::kBadParam, "need at least one class");
  ConfusionMatrix cm{n_classes, std::vector<long>(static_cast<std::size_t>(n_classes) * n_classes, 0),
                     std::vector<long>(static_cast<std::size_t>(n_classes), 0)};
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (gt[i] == ignore) continue;
    if (gt[i] < 0 || gt[i] >= n_classes) throw Error(ErrorCode::kBadParam, "ground-truth label out of range");
    if (pred[i] < 0 || pred[i] >= n_classes) {
      ++cm.unassigned[static_cast<std::size_t>(gt[i])];
    } else {
      ++cm.counts[static_cast<std::size_t>(gt[i]) * n_classes + pred[i]];
    }
  }
  return cm;
}

MiouResult miou(const ConfusionMatrix& cm) {
  const int c = cm.classes;
  MiouResult out;
  out.iou.assign(static_cast<std::size_t>(c), 0.0);
  out.present.assign(static_cast<std::size_t>(c), 0);
  int present = 0;
  for (int k = 0; k < c; ++k) {
    long gt_total = cm.unassigned[static_cast<std::size_t>(k)], pred_total = 0;
    for (int j = 0; j < c; ++j) {
      gt_total += cm.at(k, j);
      pred_total += cm.at(j, k);
    }
    const long tp = cm.at(k, k);
    const long denom = gt_total + pred_total - tp;
    if (denom == 0) continue;
    out.present[static_cast<std::size_t>(k)] = 1;
    out.iou[static_cast<std::size_t>(k)] = static_cast<double>(tp) / static_cast<double>(denom);
    out.mean += out.iou[static_cast<std::size_t>(k)];
    ++present;
  }
  if (present > 0) out.mean /= present;
  return out;
}

MiouResult miou(std::span<const int> pred, std::span<const int> gt, int n_classes, int ignore) {
  return miou(confusion_matrix(pred, gt, n_classes, ignore));
}

double MiouResult::mean_over(std::span<const int> ids) const {
  double sum = 0.0;
  int n = 0;
  for (int id : ids) {
    if (id < 0 || id >= static_cast<int>(iou.size())) throw Error(ErrorCode::kBadParam, "class id out of range");
    if (!present[static_cast<std::size_t>(id)]) continue;
    sum += iou[static_cast<std::size_t>(id)];
    ++n;
  }
  return n > 0 ? sum / n : 0.0;
}

double hiou(double a, double b) {
  if (!(a >= 0.0 && a <= 1.0 && b >= 0.0 && b <= 1.0)) throw Error(ErrorCode::kBadParam, "hiou inputs must lie in [0,1]");
  if (a + b == 0.0) return 0.0;
  return 2.0 * a * b / (a + b);
}

double point_set_iou(std::span<const int> a, std::span<const int> b) {
  std::size_t i = 0, j = 0, inter = 0;
  while (i < a.size() && j < b.size()) {
    if (a[i] == b[j]) {
      ++inter;
      ++i;
      ++j;
    } else if (a[i] < b[j]) {
      ++i;
    } else {
      ++j;
    }
  }
  const std::size_t uni = a.size() + b.size() - inter;
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

double ap50_instances(std::span<const InstancePrediction> preds, std::span<const std::vector<int>> gt,
                      double iou_thresh) {
  if (gt.empty()) throw Error(ErrorCode::kDegenerateLabels, "AP needs at least one ground-truth instance");
  std::vector<std::size_t> order(preds.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return preds[a].score > preds[b].score; });
  std::vector<char> used(gt.size(), 0);
  std::vector<double> precision, recall;
  int tp = 0;
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    const auto& p = preds[order[rank]];
    int best = -1;
    double best_iou = 0.0;
    for (std::size_t g = 0; g < gt.size(); ++g) {
      if (used[g]) continue;
      const double iou = point_set_iou(p.points, gt[g]);
      if (iou >= iou_thresh && iou > best_iou) {
        best = static_cast<int>(g);
        best_iou = iou;
      }
    }
    if (best >= 0) {
      used[static_cast<std::size_t>(best)] = 1;
      ++tp;
    }
    precision.push_back(static_cast<double>(tp) / static_cast<double>(rank + 1));
    recall.push_back(static_cast<double>(tp) / static_cast<double>(gt.size()));
  }
  for (std::size_t i = precision.size(); i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
  double ap = 0.0, prev = 0.0;
  for (std::size_t i = 0; i < recall.size(); ++i) {
    ap += (recall[i] - prev) * precision[i];
    prev = recall[i];
  }
  return ap;
}

namespace {

std::string ratio_key(double r) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", r);
  return buf;
}

}  // namespace

std::string eval_report_json(const EvalReport& report) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (const auto& [ratio, m] : report) {
    j[ratio_key(ratio)] = {{"miou", m.miou},           {"hiou", m.hiou}, {"miou_base", m.miou_base},
                           {"miou_novel", m.miou_novel}, {"ap50", m.ap50}, {"boundary_ap", m.boundary_ap}};
  }
  return j.dump(2) + "\n";
}

EvalReport parse_eval_report(const std::string& text) {
  EvalReport out;
  try {
    const auto j = nlohmann::json::parse(text);
    for (const auto& [key, v] : j.items()) {
      RatioMetrics m;
      m.miou = v.at("miou").get<double>();
      m.hiou = v.at("hiou").get<double>();
      m.miou_base = v.at("miou_base").get<double>();
      m.miou_novel = v.at("miou_novel").get<double>();
      m.ap50 = v.at("ap50").get<double>();
      m.boundary_ap = v.at("boundary_ap").get<double>();
      out[std::stod(key)] = m;
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kFormat, std::string("bad eval report: ") + e.what());
  } catch (const std::invalid_argument&) {
    throw Error(ErrorCode::kFormat, "bad ratio key in eval report");
  }
  return out;
}

}  // namespace scenefuse
