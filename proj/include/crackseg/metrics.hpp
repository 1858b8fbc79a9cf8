#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "crackseg/tensor.hpp"

namespace crackseg {

struct Confusion {
  long long tp = 0, fp = 0, fn = 0, tn = 0;

  Confusion& operator+=(const Confusion& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    tn += o.tn;
    return *this;
  }
  long long total() const { return tp + fp + fn + tn; }
};

/// Exact pixel counts between two binary masks of equal shape.
inline Confusion confusion(const Tensor& pred, const Tensor& gt) {
  detail::require_same_shape("confusion", pred, gt);
  Confusion c;
  const auto& pd = pred.data();
  const auto& gd = gt.data();
  for (size_t i = 0; i < pd.size(); ++i) {
    double p = pd[i], g = gd[i];
    if ((p != 0.0 && p != 1.0) || (g != 0.0 && g != 1.0))
      throw UsageError("confusion: inputs must be binary {0,1}");
    if (p == 1.0 && g == 1.0)
      ++c.tp;
    else if (p == 1.0)
      ++c.fp;
    else if (g == 1.0)
      ++c.fn;
    else
      ++c.tn;
  }
  return c;
}

inline double precision_of(const Confusion& c) {
  return (c.tp + c.fp) > 0 ? static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp) : 0.0;
}

inline double recall_of(const Confusion& c) {
  return (c.tp + c.fn) > 0 ? static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn) : 0.0;
}

inline double f1_of(const Confusion& c) {
  double p = precision_of(c), r = recall_of(c);
  return (p + r) > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
}

/// Per-image F1 with the empty/empty convention: no positives anywhere is a
/// perfect score, not a zero.
inline double f1_per_image(const Confusion& c) {
  if (c.tp + c.fp + c.fn == 0) return 1.0;
  return f1_of(c);
}

inline double iou_fg(const Confusion& c) {
  long long d = c.tp + c.fp + c.fn;
  return d > 0 ? static_cast<double>(c.tp) / static_cast<double>(d) : 1.0;
}

inline double iou_bg(const Confusion& c) {
  long long d = c.tn + c.fp + c.fn;
  return d > 0 ? static_cast<double>(c.tn) / static_cast<double>(d) : 1.0;
}

inline std::vector<double> default_threshold_grid() {
  std::vector<double> t;
  t.reserve(99);
  for (int i = 1; i <= 99; ++i) t.push_back(i / 100.0);
  return t;
}

/// Threshold-sweep evaluation report.
struct EvalReport {
  std::vector<double> thresholds;
  std::vector<Confusion> pooled;     // one per threshold, summed over images
  std::vector<double> per_image_best_f1;
  double ods = 0.0;
  double ods_threshold = 0.0;
  double ois = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double miou = 0.0;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["ods"] = ods;
    j["ods_threshold"] = ods_threshold;
    j["ois"] = ois;
    j["precision"] = precision;
    j["recall"] = recall;
    j["f1"] = f1;
    j["miou"] = miou;
    j["thresholds"] = thresholds;
    nlohmann::json counts = nlohmann::json::array();
    for (const Confusion& c : pooled)
      counts.push_back({{"tp", c.tp}, {"fp", c.fp}, {"fn", c.fn}, {"tn", c.tn}});
    j["pooled_counts"] = counts;
    return j;
  }
};

/// Sweeps the threshold grid over probability maps.
///   ODS: best pooled F1 over one shared threshold (ties -> lowest threshold).
///   OIS: mean over images of each image's best-threshold F1.
///   P/R/F1 at the ODS threshold from pooled counts; mIoU = (IoU_fg+IoU_bg)/2
///   at the ODS threshold.
inline EvalReport evaluate(const std::vector<Tensor>& probs, const std::vector<Tensor>& gts,
                           const std::vector<double>& thresholds = default_threshold_grid()) {
  if (probs.empty()) throw UsageError("evaluate: empty dataset");
  if (probs.size() != gts.size())
    throw UsageError("evaluate: " + std::to_string(probs.size()) + " predictions vs " +
                     std::to_string(gts.size()) + " ground-truth masks");
  if (thresholds.empty()) throw UsageError("evaluate: empty threshold grid");
  for (double t : thresholds)
    if (!(t > 0.0 && t < 1.0)) throw ConfigError("evaluate: thresholds must lie in (0,1)");

  const size_t n_img = probs.size();
  const size_t n_thr = thresholds.size();
  EvalReport rep;
  rep.thresholds = thresholds;
  rep.pooled.assign(n_thr, Confusion{});
  rep.per_image_best_f1.assign(n_img, 0.0);

  for (size_t i = 0; i < n_img; ++i) {
    detail::require_same_shape("evaluate", probs[i], gts[i]);
    for (double g : gts[i].data())
      if (g != 0.0 && g != 1.0) throw UsageError("evaluate: ground truth must be binary {0,1}");
  }

  // per-image counting is independent; the pooled reduction below runs in
  // index order so the report does not depend on scheduling
  std::vector<std::vector<Confusion>> per_image(n_img, std::vector<Confusion>(n_thr));
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic)
#endif
  for (long long i = 0; i < static_cast<long long>(n_img); ++i) {
    const auto& pd = probs[i].data();
    const auto& gd = gts[i].data();
    for (size_t ti = 0; ti < n_thr; ++ti) {
      double thr = thresholds[ti];
      Confusion c;
      for (size_t px = 0; px < pd.size(); ++px) {
        bool pos = pd[px] > thr;
        if (pos && gd[px] == 1.0)
          ++c.tp;
        else if (pos)
          ++c.fp;
        else if (gd[px] == 1.0)
          ++c.fn;
        else
          ++c.tn;
      }
      per_image[i][ti] = c;
    }
  }
  for (size_t i = 0; i < n_img; ++i) {
    double best = -1.0;
    for (size_t ti = 0; ti < n_thr; ++ti) {
      rep.pooled[ti] += per_image[i][ti];
      double f = f1_per_image(per_image[i][ti]);
      if (f > best) best = f;
    }
    rep.per_image_best_f1[i] = best;
  }

  size_t best_ti = 0;
  double best_f1 = -1.0;
  for (size_t ti = 0; ti < n_thr; ++ti) {
    double f = f1_of(rep.pooled[ti]);
    if (f > best_f1) {
      best_f1 = f;
      best_ti = ti;
    }
  }
  rep.ods = best_f1;
  rep.ods_threshold = thresholds[best_ti];
  double sum = 0.0;
  for (double f : rep.per_image_best_f1) sum += f;
  rep.ois = sum / static_cast<double>(n_img);
  const Confusion& at = rep.pooled[best_ti];
  rep.precision = precision_of(at);
  rep.recall = recall_of(at);
  rep.f1 = f1_of(at);
  rep.miou = 0.5 * (iou_fg(at) + iou_bg(at));
  return rep;
}

}  // namespace crackseg
