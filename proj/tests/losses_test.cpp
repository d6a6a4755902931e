#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "ppn/boxes.hpp"
#include "ppn/losses.hpp"
#include "ppn/rng.hpp"
#include "test_util.hpp"

using namespace ppn;

namespace {

double sigmoid_d(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Independent alpha-weighted sigmoid cross entropy.
double weighted_bce(std::span<const float> logits,
                    std::span<const float> targets, double alpha) {
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double p = sigmoid_d(logits[i]);
    if (targets[i] == 1.0f) {
      sum += -alpha * std::log(p);
    } else {
      sum += -(1.0 - alpha) * std::log(1.0 - p);
    }
  }
  return sum;
}

}  // namespace

TEST(FocalLoss, ClosedFormPositiveAtPointNine) {
  // logit = ln(0.9/0.1) gives p = 0.9; loss = 0.25 * 0.1^2 * (-ln 0.9).
  const float logit = std::log(0.9f / 0.1f);
  const std::vector<float> logits = {logit};
  const std::vector<float> targets = {1.0f};
  const double want = 0.25 * 0.01 * -std::log(0.9);
  EXPECT_NEAR(focal_loss(logits, targets, {0.25f, 2.0f}), want, 1e-7);
}

TEST(FocalLoss, GammaZeroIsAlphaWeightedCrossEntropy) {
  Pcg32 rng(30);
  const std::vector<float> logits = ppn::testing::random_vector(rng, 64, -5, 5);
  std::vector<float> targets(64);
  for (auto& t : targets) t = rng.next_float() < 0.5f ? 1.0f : 0.0f;
  const double got = focal_loss(logits, targets, {0.25f, 0.0f});
  const double want = weighted_bce(logits, targets, 0.25);
  EXPECT_NEAR(got, want, 1e-6 * std::max(1.0, std::abs(want)));
}

TEST(FocalLoss, ConfidentCorrectPredictionVanishes) {
  const std::vector<float> logits = {30.0f};
  const std::vector<float> targets = {1.0f};
  EXPECT_LT(focal_loss(logits, targets), 1e-9);
  const std::vector<float> neg_logits = {-30.0f};
  const std::vector<float> neg_targets = {0.0f};
  EXPECT_LT(focal_loss(neg_logits, neg_targets), 1e-9);
}

TEST(FocalLoss, NonNegativeAndMonotoneInConfidence) {
  Pcg32 rng(31);
  for (int i = 0; i < 200; ++i) {
    const float x = rng.uniform(-6.0f, 6.0f);
    const float t = rng.next_float() < 0.5f ? 1.0f : 0.0f;
    const std::vector<float> l1 = {x};
    const std::vector<float> tt = {t};
    const double loss = focal_loss(l1, tt);
    EXPECT_GE(loss, 0.0);
    // Raising p_t (moving the logit toward the target sign) lowers the loss.
    const float better = t == 1.0f ? x + 0.5f : x - 0.5f;
    const std::vector<float> l2 = {better};
    EXPECT_LT(focal_loss(l2, tt), loss + 1e-12);
  }
}

TEST(FocalLoss, GammaDownweightsWellClassifiedElements) {
  Pcg32 rng(32);
  for (int i = 0; i < 200; ++i) {
    const float t = rng.next_float() < 0.5f ? 1.0f : 0.0f;
    // p_t > 0.5 means the logit already points at the target.
    const float mag = rng.uniform(0.05f, 6.0f);
    const float x = t == 1.0f ? mag : -mag;
    const std::vector<float> l = {x};
    const std::vector<float> tt = {t};
    const double at_gamma0 = focal_loss(l, tt, {0.25f, 0.0f});
    const double at_gamma2 = focal_loss(l, tt, {0.25f, 2.0f});
    const double at_gamma4 = focal_loss(l, tt, {0.25f, 4.0f});
    EXPECT_LE(at_gamma2, at_gamma0 + 1e-12);
    EXPECT_LE(at_gamma4, at_gamma2 + 1e-12);
  }
}

TEST(FocalLoss, RejectsNonBinaryTargets) {
  const std::vector<float> logits = {0.0f};
  const std::vector<float> bad = {0.5f};
  EXPECT_THROW(focal_loss(logits, bad), std::invalid_argument);
}

TEST(SmoothL1, KnownValues) {
  const std::vector<float> target = {0.0f, 0.0f, 0.0f};
  const std::vector<float> pred = {0.0f, 0.5f, 2.0f};
  const std::vector<float> zero3 = {0.0f, 0.0f, 0.0f};
  EXPECT_NEAR(smooth_l1(zero3, target), 0.0, 1e-12);
  EXPECT_NEAR(smooth_l1(pred, target), 0.0 + 0.125 + 1.5, 1e-6);
}

TEST(SmoothL1, ContinuousValueAndSlopeAtTransition) {
  const std::vector<float> target = {0.0f};
  const std::vector<float> below = {1.0f - 1e-6f};
  const std::vector<float> above = {1.0f + 1e-6f};
  EXPECT_NEAR(smooth_l1(below, target), smooth_l1(above, target), 3e-6);
  EXPECT_NEAR(smooth_l1_grad(below, target)[0], smooth_l1_grad(above, target)[0],
              2e-6);
}

TEST(TotalLoss, NoMatchesMeansClassificationOnly) {
  BoxList anchors = {{0.1f, 0.1f, 0.3f, 0.3f}, {0.5f, 0.5f, 0.9f, 0.9f}};
  Matching m;
  m.gt_index = {-1, -1};
  const int k = 3;
  const std::vector<float> logits(anchors.size() * k, 0.0f);
  const std::vector<float> preds(anchors.size() * 4, 0.0f);
  const std::vector<int> no_classes;
  const LossBreakdown lb =
      total_loss(logits, preds, m, anchors, {}, no_classes, k);
  EXPECT_DOUBLE_EQ(lb.localization, 0.0);
  EXPECT_EQ(lb.normalizer, 0);
  // All-negative anchors at logit 0: per element -(1-alpha)*0.5^gamma*ln(0.5).
  const double per = 0.75 * 0.25 * -std::log(0.5);
  EXPECT_NEAR(lb.classification, per * anchors.size() * k, 1e-9);
  EXPECT_DOUBLE_EQ(lb.total, lb.classification + lb.localization);
}

TEST(TotalLoss, PerfectPredictionsVanish) {
  BoxList anchors = {{0.1f, 0.1f, 0.4f, 0.4f}, {0.5f, 0.5f, 0.9f, 0.9f}};
  BoxList gt = {{0.12f, 0.12f, 0.42f, 0.42f}};
  std::vector<int> gt_cls = {1};
  const Matching m = match(anchors, gt);
  ASSERT_EQ(m.gt_index[0], 0);
  const int k = 3;
  std::vector<float> logits(anchors.size() * k, -40.0f);
  logits[0 * k + 1] = 40.0f;  // saturated correct class on the matched anchor
  std::vector<float> preds(anchors.size() * 4, 0.0f);
  const auto enc = encode(gt[0], anchors[0]);
  for (int q = 0; q < 4; ++q) preds[q] = enc[q];
  const LossBreakdown lb = total_loss(logits, preds, m, anchors, gt, gt_cls, k);
  EXPECT_LT(lb.total, 1e-9);
}

TEST(TotalLoss, MatchesStraightLineReimplementation) {
  Pcg32 rng(33);
  for (int inst = 0; inst < 20; ++inst) {
    BoxList anchors, gt;
    std::vector<int> gt_cls;
    const int na = 6 + rng.next_below(10);
    const int ng = 1 + rng.next_below(3);
    for (int i = 0; i < na; ++i) {
      const float cy = rng.uniform(0.2f, 0.8f), cx = rng.uniform(0.2f, 0.8f);
      const float s = rng.uniform(0.05f, 0.2f);
      anchors.push_back({cy - s, cx - s, cy + s, cx + s});
    }
    for (int i = 0; i < ng; ++i) {
      const float cy = rng.uniform(0.25f, 0.75f), cx = rng.uniform(0.25f, 0.75f);
      const float s = rng.uniform(0.08f, 0.22f);
      gt.push_back({cy - s, cx - s, cy + s, cx + s});
      gt_cls.push_back(rng.next_below(4));
    }
    const Matching m = match(anchors, gt);
    const int k = 4;
    const std::vector<float> logits =
        ppn::testing::random_vector(rng, na * k, -3, 3);
    const std::vector<float> preds =
        ppn::testing::random_vector(rng, na * 4, -2, 2);
    const FocalParams fp{0.25f, 2.0f};
    const LossBreakdown got =
        total_loss(logits, preds, m, anchors, gt, gt_cls, k, fp);

    // Straight-line re-derivation, scalar math only.
    double cls = 0.0, loc = 0.0;
    int matched = 0;
    for (int a = 0; a < na; ++a) {
      for (int c = 0; c < k; ++c) {
        const bool on = m.gt_index[a] >= 0 && gt_cls[m.gt_index[a]] == c;
        const double p = sigmoid_d(logits[a * k + c]);
        const double pt = on ? p : 1.0 - p;
        const double at = on ? fp.alpha : 1.0 - fp.alpha;
        cls += -at * std::pow(1.0 - pt, fp.gamma) * std::log(pt);
      }
      if (m.gt_index[a] >= 0) {
        ++matched;
        const auto enc = encode(gt[m.gt_index[a]], anchors[a]);
        for (int q = 0; q < 4; ++q) {
          const double x = double(preds[a * 4 + q]) - enc[q];
          loc += std::abs(x) < 1.0 ? 0.5 * x * x : std::abs(x) - 0.5;
        }
      }
    }
    const double norm = std::max(1, matched);
    EXPECT_NEAR(got.classification, cls / norm, 1e-6 * std::max(1.0, cls));
    EXPECT_NEAR(got.localization, loc / norm, 1e-5 * std::max(1.0, loc));
    EXPECT_EQ(got.normalizer, matched);
  }
}
