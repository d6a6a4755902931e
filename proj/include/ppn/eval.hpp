#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "ppn/dataset.hpp"
#include "ppn/detector.hpp"

namespace ppn {

struct EvalDetection {
  int image = 0;
  Detection det;
  bool true_positive = false;
};

// Runs inference over the whole dataset; true-positive flags are not yet
// assigned.
inline std::vector<EvalDetection> collect_detections(
    const Detector& det, const WeightStore& weights, const Dataset& data,
    const PostprocessParams& pp) {
  std::vector<EvalDetection> all;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const Tensor img = image_to_tensor(data.images[i], data.image_size);
    for (const Detection& d : run_inference(det, weights, img, pp)) {
      all.push_back({static_cast<int>(i), d, false});
    }
  }
  return all;
}

// Standard greedy true-positive assignment: detections ranked by score, each
// matched to the free same-image, same-class groundtruth with the highest
// IoU >= threshold; each groundtruth is claimable once.
inline void mark_true_positives(std::vector<EvalDetection>& all,
                                const Dataset& data, float iou_threshold) {
  std::vector<int> order(all.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return all[a].det.score > all[b].det.score;
  });

  std::vector<std::vector<bool>> used(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    used[i].assign(data.annotations[i].size(), false);
  }
  for (int oi : order) {
    EvalDetection& ed = all[oi];
    ed.true_positive = false;
    const std::vector<Annotation>& anns = data.annotations[ed.image];
    int best_gt = -1;
    float best = 0.0f;
    for (std::size_t g = 0; g < anns.size(); ++g) {
      if (used[ed.image][g] || anns[g].cls != ed.det.cls) continue;
      const float v = iou(anns[g].box, ed.det.box);
      if (v >= iou_threshold && v > best) {
        best = v;
        best_gt = static_cast<int>(g);
      }
    }
    if (best_gt >= 0) {
      used[ed.image][best_gt] = true;
      ed.true_positive = true;
    }
  }
}

namespace detail {

inline std::vector<EvalDetection> collect_and_mark(
    const Detector& det, const WeightStore& weights, const Dataset& data,
    float iou_threshold, const PostprocessParams& pp) {
  std::vector<EvalDetection> all = collect_detections(det, weights, data, pp);
  mark_true_positives(all, data, iou_threshold);
  return all;
}

}  // namespace detail

struct EvalResult {
  std::vector<double> ap_per_class;   // NaN-free: classes without groundtruth get 0 and are excluded from the mean
  std::vector<int> gt_per_class;
  double mean_ap = 0.0;
  int total_detections = 0;
};

// Average precision from already-marked detections, all-points interpolation
// (area under the precision envelope). Rank-based, so any strictly monotone
// rescoring leaves it unchanged.
inline EvalResult ap_from_detections(const std::vector<EvalDetection>& all,
                                     const Dataset& data, int num_classes) {
  const int k = num_classes;
  EvalResult res;
  res.ap_per_class.assign(k, 0.0);
  res.gt_per_class.assign(k, 0);
  for (const auto& anns : data.annotations) {
    for (const Annotation& a : anns) {
      if (a.cls >= 0 && a.cls < k) ++res.gt_per_class[a.cls];
    }
  }
  res.total_detections = static_cast<int>(all.size());

  int classes_with_gt = 0;
  double ap_sum = 0.0;
  for (int c = 0; c < k; ++c) {
    if (res.gt_per_class[c] == 0) continue;
    ++classes_with_gt;

    std::vector<const EvalDetection*> dets;
    for (const EvalDetection& ed : all) {
      if (ed.det.cls == c) dets.push_back(&ed);
    }
    std::stable_sort(dets.begin(), dets.end(),
                     [](const EvalDetection* a, const EvalDetection* b) {
                       return a->det.score > b->det.score;
                     });
    if (dets.empty()) continue;

    std::vector<double> precision(dets.size()), recall(dets.size());
    int tp = 0;
    for (std::size_t i = 0; i < dets.size(); ++i) {
      if (dets[i]->true_positive) ++tp;
      precision[i] = double(tp) / double(i + 1);
      recall[i] = double(tp) / double(res.gt_per_class[c]);
    }
    for (int i = static_cast<int>(precision.size()) - 2; i >= 0; --i) {
      precision[i] = std::max(precision[i], precision[i + 1]);
    }
    double ap = 0.0;
    double prev_recall = 0.0;
    for (std::size_t i = 0; i < dets.size(); ++i) {
      ap += (recall[i] - prev_recall) * precision[i];
      prev_recall = recall[i];
    }
    res.ap_per_class[c] = ap;
    ap_sum += ap;
  }
  res.mean_ap = classes_with_gt > 0 ? ap_sum / classes_with_gt : 0.0;
  return res;
}

inline EvalResult evaluate_ap(const Detector& det, const WeightStore& weights,
                              const Dataset& data, float iou_threshold = 0.5f,
                              PostprocessParams pp = {}) {
  const std::vector<EvalDetection> all =
      detail::collect_and_mark(det, weights, data, iou_threshold, pp);
  return ap_from_detections(all, data, det.config.num_classes);
}

struct LevelCalibration {
  int level = 0;
  int tp_count = 0;
  double mean_score = 0.0;
  double std_score = 0.0;
};

struct CalibrationReport {
  std::vector<LevelCalibration> levels;
  double spread = 0.0;  // max - min of mean TP score over levels with >= 10 TPs
  int total_tp = 0;
};

inline constexpr int kCalibrationMinTp = 10;

// Groups true-positive detections by the pyramid level that produced them and
// measures how far apart the per-level mean scores sit. A shared predictor
// should keep this spread small; independent per-scale predictors drift.
inline CalibrationReport calibration_report(const Detector& det,
                                            const WeightStore& weights,
                                            const Dataset& data,
                                            float iou_threshold = 0.5f,
                                            PostprocessParams pp = {}) {
  const std::vector<EvalDetection> all =
      detail::collect_and_mark(det, weights, data, iou_threshold, pp);

  const int num_levels = static_cast<int>(det.levels.size());
  std::vector<double> sum(num_levels, 0.0), sum_sq(num_levels, 0.0);
  std::vector<int> count(num_levels, 0);
  for (const EvalDetection& ed : all) {
    if (!ed.true_positive) continue;
    const int level = det.level_of_anchor(ed.det.anchor_index);
    sum[level] += ed.det.score;
    sum_sq[level] += double(ed.det.score) * ed.det.score;
    ++count[level];
  }

  CalibrationReport report;
  double lo = 0.0, hi = 0.0;
  bool any = false;
  for (int l = 0; l < num_levels; ++l) {
    LevelCalibration lc;
    lc.level = l;
    lc.tp_count = count[l];
    if (count[l] > 0) {
      lc.mean_score = sum[l] / count[l];
      const double var = std::max(sum_sq[l] / count[l] - lc.mean_score * lc.mean_score, 0.0);
      lc.std_score = std::sqrt(var);
    }
    report.total_tp += count[l];
    if (count[l] >= kCalibrationMinTp) {
      if (!any) {
        lo = hi = lc.mean_score;
        any = true;
      } else {
        lo = std::min(lo, lc.mean_score);
        hi = std::max(hi, lc.mean_score);
      }
    }
    report.levels.push_back(lc);
  }
  report.spread = any ? hi - lo : 0.0;
  return report;
}

}  // namespace ppn
