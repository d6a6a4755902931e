#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace ppn {

// Axis-aligned box in normalized [0,1] image coordinates.
struct Box {
  float ymin = 0.0f;
  float xmin = 0.0f;
  float ymax = 0.0f;
  float xmax = 0.0f;

  float height() const { return ymax - ymin; }
  float width() const { return xmax - xmin; }
  float area() const { return std::max(height(), 0.0f) * std::max(width(), 0.0f); }
  float cy() const { return 0.5f * (ymin + ymax); }
  float cx() const { return 0.5f * (xmin + xmax); }
};

using BoxList = std::vector<Box>;

struct AnchorConfig {
  float min_scale = 0.2f;
  float max_scale = 0.95f;
  std::vector<float> aspect_ratios = {1.0f, 2.0f, 3.0f, 1.0f / 2.0f, 1.0f / 3.0f};
  bool interpolated_scale_anchor = true;

  int anchors_per_cell() const {
    return static_cast<int>(aspect_ratios.size()) +
           (interpolated_scale_anchor ? 1 : 0);
  }
};

struct LevelShape {
  int h = 0;
  int w = 0;
};

// SSD anchor grid. Level k (1-based, L levels) uses scale
// s_k = min + (max-min)*(k-1)/(L-1); each cell gets one anchor per aspect
// ratio plus, when enabled, a ratio-1 anchor at sqrt(s_k * s_{k+1}) with
// s_{L+1} = 1. Anchors are clipped to the unit square. The per-cell order
// (config ratios first, interpolated last) matches the predictor's channel
// layout.
inline BoxList generate_anchors(const AnchorConfig& cfg,
                                const std::vector<LevelShape>& level_shapes) {
  if (level_shapes.empty()) {
    throw std::invalid_argument("generate_anchors: no levels");
  }
  if (!(cfg.min_scale > 0.0f && cfg.min_scale <= cfg.max_scale &&
        cfg.max_scale <= 1.0f)) {
    throw std::invalid_argument("generate_anchors: invalid scale range");
  }
  const int levels = static_cast<int>(level_shapes.size());
  auto scale_at = [&](int k) {  // 1-based; s_{L+1} = 1
    if (k > levels) return 1.0f;
    if (levels == 1) return cfg.min_scale;
    return cfg.min_scale +
           (cfg.max_scale - cfg.min_scale) * float(k - 1) / float(levels - 1);
  };

  BoxList anchors;
  for (int k = 1; k <= levels; ++k) {
    const LevelShape& ls = level_shapes[k - 1];
    const float s = scale_at(k);
    const float s_next = std::sqrt(s * scale_at(k + 1));
    for (int i = 0; i < ls.h; ++i) {
      for (int j = 0; j < ls.w; ++j) {
        const float cy = (i + 0.5f) / float(ls.h);
        const float cx = (j + 0.5f) / float(ls.w);
        auto push = [&](float scale, float ratio) {
          const float r = std::sqrt(ratio);
          const float w = scale * r;
          const float h = scale / r;
          anchors.push_back(Box{std::clamp(cy - 0.5f * h, 0.0f, 1.0f),
                                std::clamp(cx - 0.5f * w, 0.0f, 1.0f),
                                std::clamp(cy + 0.5f * h, 0.0f, 1.0f),
                                std::clamp(cx + 0.5f * w, 0.0f, 1.0f)});
        };
        for (float ratio : cfg.aspect_ratios) push(s, ratio);
        if (cfg.interpolated_scale_anchor) push(s_next, 1.0f);
      }
    }
  }
  return anchors;
}

inline float iou(const Box& a, const Box& b) {
  const float iy = std::min(a.ymax, b.ymax) - std::max(a.ymin, b.ymin);
  const float ix = std::min(a.xmax, b.xmax) - std::max(a.xmin, b.xmin);
  if (iy <= 0.0f || ix <= 0.0f) return 0.0f;
  const float inter = iy * ix;
  const float uni = a.area() + b.area() - inter;
  return uni > 0.0f ? inter / uni : 0.0f;
}

// Faster-RCNN style box coder with the standard SSD scale constants
// (10, 10, 5, 5).
inline std::array<float, 4> encode(const Box& box, const Box& anchor) {
  const float ha = anchor.height();
  const float wa = anchor.width();
  if (ha <= 0.0f || wa <= 0.0f) {
    throw std::invalid_argument("encode: anchor has non-positive extent");
  }
  return {(box.cy() - anchor.cy()) / ha * 10.0f,
          (box.cx() - anchor.cx()) / wa * 10.0f,
          std::log(box.height() / ha) * 5.0f,
          std::log(box.width() / wa) * 5.0f};
}

inline Box decode(const std::array<float, 4>& t, const Box& anchor) {
  const float ha = anchor.height();
  const float wa = anchor.width();
  const float cy = t[0] / 10.0f * ha + anchor.cy();
  const float cx = t[1] / 10.0f * wa + anchor.cx();
  const float h = std::exp(std::clamp(t[2], -20.0f, 20.0f) / 5.0f) * ha;
  const float w = std::exp(std::clamp(t[3], -20.0f, 20.0f) / 5.0f) * wa;
  Box b{cy - 0.5f * h, cx - 0.5f * w, cy + 0.5f * h, cx + 0.5f * w};
  b.ymin = std::clamp(b.ymin, 0.0f, 1.0f);
  b.xmin = std::clamp(b.xmin, 0.0f, 1.0f);
  b.ymax = std::clamp(b.ymax, 0.0f, 1.0f);
  b.xmax = std::clamp(b.xmax, 0.0f, 1.0f);
  return b;
}

// Anchor -> groundtruth assignment. gt_index[i] is the groundtruth matched to
// anchor i, or -1 for negatives.
struct Matching {
  std::vector<int> gt_index;
  float threshold = 0.5f;

  bool is_matched(int anchor) const { return gt_index[anchor] >= 0; }
  int matched_count() const {
    int n = 0;
    for (int g : gt_index) n += g >= 0 ? 1 : 0;
    return n;
  }
};

// Each anchor takes its argmax-IoU groundtruth when IoU >= threshold; on top
// of that each groundtruth force-claims its single best anchor even below
// threshold. Force matches win conflicts; all ties break toward the lower
// groundtruth (then anchor) index.
inline Matching match(const BoxList& anchors, const BoxList& groundtruth,
                      float threshold = 0.5f) {
  Matching m;
  m.threshold = threshold;
  m.gt_index.assign(anchors.size(), -1);
  if (groundtruth.empty()) return m;

  std::vector<float> anchor_best(anchors.size(), 0.0f);
  std::vector<float> gt_best(groundtruth.size(), 0.0f);
  std::vector<int> gt_best_anchor(groundtruth.size(), -1);
  for (std::size_t a = 0; a < anchors.size(); ++a) {
    for (std::size_t g = 0; g < groundtruth.size(); ++g) {
      const float v = iou(anchors[a], groundtruth[g]);
      if (v > anchor_best[a]) {
        anchor_best[a] = v;
        if (v >= threshold) m.gt_index[a] = static_cast<int>(g);
      }
      if (v > gt_best[g]) {
        gt_best[g] = v;
        gt_best_anchor[g] = static_cast<int>(a);
      }
    }
  }

  // Force matches require positive overlap; a zero-IoU claim would hand the
  // groundtruth a regression target it does not touch.
  std::vector<bool> forced(anchors.size(), false);
  for (std::size_t g = 0; g < groundtruth.size(); ++g) {
    const int a = gt_best_anchor[g];
    if (a >= 0 && gt_best[g] > 0.0f && !forced[a]) {
      m.gt_index[a] = static_cast<int>(g);
      forced[a] = true;
    }
  }
  return m;
}

struct Detection {
  Box box;
  float score = 0.0f;
  int cls = 0;
  int anchor_index = -1;
};

// Greedy per-class NMS followed by a global top-max_out cut. Suppression is
// strict (IoU > threshold); ties in score break toward the earlier candidate.
inline std::vector<Detection> nms(const std::vector<Detection>& candidates,
                                  float iou_threshold = 0.6f,
                                  int max_out = 100) {
  std::vector<int> order(candidates.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return candidates[a].score > candidates[b].score;
  });

  std::vector<Detection> kept;
  std::vector<int> kept_idx;
  for (int i : order) {
    const Detection& d = candidates[i];
    bool suppressed = false;
    for (std::size_t j = 0; j < kept.size(); ++j) {
      if (kept[j].cls != d.cls) continue;
      if (iou(kept[j].box, d.box) > iou_threshold) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) {
      kept.push_back(d);
      kept_idx.push_back(i);
    }
  }
  if (static_cast<int>(kept.size()) > max_out) {
    kept.resize(max_out);
  }
  return kept;
}

}  // namespace ppn
