#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include "ppn/boxes.hpp"

namespace ppn {

struct FocalParams {
  float alpha = 0.25f;
  float gamma = 2.0f;

  void validate() const {
    if (alpha < 0.0f || alpha > 1.0f) {
      throw std::invalid_argument("FocalParams: alpha must be in [0,1]");
    }
    if (gamma < 0.0f) {
      throw std::invalid_argument("FocalParams: gamma must be >= 0");
    }
  }
};

namespace detail {

inline double stable_sigmoid(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// log(sigmoid(x)) without underflow; equals -softplus(-x).
inline double log_sigmoid(double x) {
  return x >= 0.0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x));
}

}  // namespace detail

// Sigmoid focal loss, summed over all elements. Targets must be exactly 0 or
// 1 (one column per class, no background column). For a positive element with
// probability p the term is -alpha * (1-p)^gamma * log(p); negatives mirror
// with 1-alpha and 1-p.
inline double focal_loss(std::span<const float> logits,
                         std::span<const float> targets,
                         const FocalParams& p = {}) {
  p.validate();
  if (logits.size() != targets.size()) {
    throw std::invalid_argument("focal_loss: shape mismatch");
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const float t = targets[i];
    if (t != 0.0f && t != 1.0f) {
      throw std::invalid_argument("focal_loss: targets must be binary");
    }
    // z folds the target in: p_t = sigmoid(z).
    const double z = t == 1.0f ? logits[i] : -double(logits[i]);
    const double alpha_t = t == 1.0f ? p.alpha : 1.0 - p.alpha;
    const double one_minus_pt = detail::stable_sigmoid(-z);
    const double log_pt = detail::log_sigmoid(z);
    const double focus = p.gamma == 0.0f ? 1.0 : std::pow(one_minus_pt, p.gamma);
    sum += -alpha_t * focus * log_pt;
  }
  return sum;
}

// dL/dlogit for the summed focal loss.
inline std::vector<float> focal_loss_grad(std::span<const float> logits,
                                          std::span<const float> targets,
                                          const FocalParams& p = {}) {
  p.validate();
  if (logits.size() != targets.size()) {
    throw std::invalid_argument("focal_loss_grad: shape mismatch");
  }
  std::vector<float> grad(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const float t = targets[i];
    if (t != 0.0f && t != 1.0f) {
      throw std::invalid_argument("focal_loss_grad: targets must be binary");
    }
    const double z = t == 1.0f ? logits[i] : -double(logits[i]);
    const double alpha_t = t == 1.0f ? p.alpha : 1.0 - p.alpha;
    const double pt = detail::stable_sigmoid(z);
    const double one_minus_pt = 1.0 - pt;
    const double log_pt = detail::log_sigmoid(z);
    const double focus = p.gamma == 0.0f ? 1.0 : std::pow(one_minus_pt, p.gamma);
    // d/dz of -alpha_t*(1-pt)^gamma*log(pt); pt*log(pt) -> 0 keeps it stable.
    const double dz = alpha_t * focus * (p.gamma * pt * log_pt - one_minus_pt);
    grad[i] = static_cast<float>(t == 1.0f ? dz : -dz);
  }
  return grad;
}

// Piecewise box regression loss, summed: 0.5*x^2 below |x| = 1, |x| - 0.5
// above.
inline double smooth_l1(std::span<const float> pred,
                        std::span<const float> target) {
  if (pred.size() != target.size()) {
    throw std::invalid_argument("smooth_l1: shape mismatch");
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double x = double(pred[i]) - double(target[i]);
    const double a = std::abs(x);
    sum += a < 1.0 ? 0.5 * x * x : a - 0.5;
  }
  return sum;
}

inline std::vector<float> smooth_l1_grad(std::span<const float> pred,
                                         std::span<const float> target) {
  if (pred.size() != target.size()) {
    throw std::invalid_argument("smooth_l1_grad: shape mismatch");
  }
  std::vector<float> grad(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double x = double(pred[i]) - double(target[i]);
    grad[i] = static_cast<float>(std::abs(x) < 1.0 ? x : (x > 0.0 ? 1.0 : -1.0));
  }
  return grad;
}

struct LossBreakdown {
  double classification = 0.0;
  double localization = 0.0;
  double total = 0.0;
  int normalizer = 0;  // matched anchor count
};

// Builds the dense focal targets for one image's matching: matched anchors
// get a one-hot row for their groundtruth class, negatives stay all-zero.
inline std::vector<float> classification_targets(
    const Matching& m, std::span<const int> gt_classes, int num_classes) {
  std::vector<float> targets(m.gt_index.size() * num_classes, 0.0f);
  for (std::size_t a = 0; a < m.gt_index.size(); ++a) {
    const int g = m.gt_index[a];
    if (g < 0) continue;
    const int cls = gt_classes[g];
    if (cls < 0 || cls >= num_classes) {
      throw std::invalid_argument("classification_targets: class out of range");
    }
    targets[a * num_classes + cls] = 1.0f;
  }
  return targets;
}

// Focal classification over all anchors plus smooth-L1 over matched anchors
// (on coder-encoded targets), both normalized by max(1, matched count).
inline LossBreakdown total_loss(std::span<const float> class_logits,
                                std::span<const float> box_preds,
                                const Matching& m, const BoxList& anchors,
                                const BoxList& gt_boxes,
                                std::span<const int> gt_classes,
                                int num_classes, const FocalParams& p = {}) {
  const std::size_t n = anchors.size();
  if (m.gt_index.size() != n || class_logits.size() != n * num_classes ||
      box_preds.size() != n * 4) {
    throw std::invalid_argument("total_loss: inconsistent sizes");
  }
  const std::vector<float> targets =
      classification_targets(m, gt_classes, num_classes);
  const int matched = m.matched_count();
  const double norm = std::max(1, matched);

  LossBreakdown out;
  out.normalizer = matched;
  out.classification = focal_loss(class_logits, targets, p) / norm;

  double loc = 0.0;
  for (std::size_t a = 0; a < n; ++a) {
    const int g = m.gt_index[a];
    if (g < 0) continue;
    const std::array<float, 4> enc = encode(gt_boxes[g], anchors[a]);
    loc += smooth_l1(box_preds.subspan(a * 4, 4), enc);
  }
  out.localization = loc / norm;
  out.total = out.classification + out.localization;
  return out;
}

struct TotalLossGrads {
  LossBreakdown breakdown;
  std::vector<float> d_class_logits;
  std::vector<float> d_box_preds;
};

inline TotalLossGrads total_loss_grad(std::span<const float> class_logits,
                                      std::span<const float> box_preds,
                                      const Matching& m, const BoxList& anchors,
                                      const BoxList& gt_boxes,
                                      std::span<const int> gt_classes,
                                      int num_classes,
                                      const FocalParams& p = {}) {
  TotalLossGrads out;
  out.breakdown = total_loss(class_logits, box_preds, m, anchors, gt_boxes,
                             gt_classes, num_classes, p);
  const double norm = std::max(1, out.breakdown.normalizer);
  const std::vector<float> targets =
      classification_targets(m, gt_classes, num_classes);

  out.d_class_logits = focal_loss_grad(class_logits, targets, p);
  for (float& v : out.d_class_logits) v = static_cast<float>(v / norm);

  out.d_box_preds.assign(box_preds.size(), 0.0f);
  for (std::size_t a = 0; a < anchors.size(); ++a) {
    const int g = m.gt_index[a];
    if (g < 0) continue;
    const std::array<float, 4> enc = encode(gt_boxes[g], anchors[a]);
    const std::vector<float> gr = smooth_l1_grad(box_preds.subspan(a * 4, 4), enc);
    for (int k = 0; k < 4; ++k) {
      out.d_box_preds[a * 4 + k] = static_cast<float>(gr[k] / norm);
    }
  }
  return out;
}

}  // namespace ppn
