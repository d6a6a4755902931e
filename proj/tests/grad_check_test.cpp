// Central finite-difference verification of every differentiable op and both
// losses, 20 random instances each.

#include <gtest/gtest.h>

#include <cmath>
#include <span>
#include <vector>

#include "ppn/boxes.hpp"
#include "ppn/losses.hpp"
#include "ppn/nn_ops.hpp"
#include "ppn/rng.hpp"
#include "test_util.hpp"

using namespace ppn;
using ppn::testing::fd_check;
using ppn::testing::random_tensor;
using ppn::testing::random_vector;

namespace {

constexpr double kTol = 1e-3;
constexpr int kInstances = 20;

double weighted_sum(const Tensor& out, const Tensor& cot) {
  double s = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) s += double(out[i]) * cot[i];
  return s;
}

// Keeps a value at least `margin` away from each kink in `kinks`.
float away_from(float x, std::initializer_list<float> kinks, float margin) {
  for (float k : kinks) {
    if (std::abs(x - k) < margin) return k + (x >= k ? margin : -margin) * 2.0f;
  }
  return x;
}

}  // namespace

TEST(GradCheck, Conv2d) {
  for (int inst = 0; inst < kInstances; ++inst) {
    Pcg32 rng(100 + inst);
    const int ci = 1 + rng.next_below(4);
    const int co = 1 + rng.next_below(5);
    const int k = 1 + rng.next_below(3);
    const int stride = 1 + rng.next_below(2);
    Tensor in = random_tensor(rng, 1 + rng.next_below(2), k + rng.next_below(5),
                              k + rng.next_below(5), ci);
    ConvParams p;
    p.weights = random_tensor(rng, k, k, ci, co);
    p.bias = random_vector(rng, co);
    p.stride = stride;
    p.padding = inst % 2 == 0 ? Padding::kSame : Padding::kValid;
    const Tensor cot = random_tensor(
        rng, in.n(), out_extent(in.h(), k, stride, p.padding),
        out_extent(in.w(), k, stride, p.padding), co);

    const ConvGrads grads = conv2d_vjp(in, p, cot);
    auto loss = [&] { return weighted_sum(conv2d(in, p), cot); };

    auto r1 = fd_check(in.values(), grads.d_input.values(), loss, 1e-3f, 120);
    auto r2 = fd_check(p.weights.values(), grads.d_weights.values(), loss, 1e-3f, 120);
    auto r3 = fd_check(p.bias, grads.d_bias, loss, 1e-3f, 120);
    EXPECT_LT(r1.max_rel_error, kTol) << "d_input, instance " << inst;
    EXPECT_LT(r2.max_rel_error, kTol) << "d_weights, instance " << inst;
    EXPECT_LT(r3.max_rel_error, kTol) << "d_bias, instance " << inst;
  }
}

TEST(GradCheck, DepthwiseConv2d) {
  for (int inst = 0; inst < kInstances; ++inst) {
    Pcg32 rng(200 + inst);
    const int ci = 1 + rng.next_below(5);
    const int k = 1 + rng.next_below(3);
    const int stride = 1 + rng.next_below(2);
    Tensor in = random_tensor(rng, 1 + rng.next_below(2), k + rng.next_below(5),
                              k + rng.next_below(5), ci);
    ConvParams p;
    p.weights = random_tensor(rng, k, k, ci, 1);
    p.bias = random_vector(rng, ci);
    p.stride = stride;
    p.padding = inst % 2 == 0 ? Padding::kSame : Padding::kValid;
    const Tensor cot = random_tensor(
        rng, in.n(), out_extent(in.h(), k, stride, p.padding),
        out_extent(in.w(), k, stride, p.padding), ci);

    const ConvGrads grads = depthwise_conv2d_vjp(in, p, cot);
    auto loss = [&] { return weighted_sum(depthwise_conv2d(in, p), cot); };

    EXPECT_LT(fd_check(in.values(), grads.d_input.values(), loss).max_rel_error,
              kTol) << inst;
    EXPECT_LT(fd_check(p.weights.values(), grads.d_weights.values(), loss)
                  .max_rel_error, kTol) << inst;
    EXPECT_LT(fd_check(p.bias, grads.d_bias, loss).max_rel_error, kTol) << inst;
  }
}

TEST(GradCheck, MaxPool2d) {
  for (int inst = 0; inst < kInstances; ++inst) {
    Pcg32 rng(300 + inst);
    const int h = 2 + rng.next_below(5);
    const int w = 2 + rng.next_below(5);
    const int c = 1 + rng.next_below(3);
    // Distinct, well-separated values per channel plane so no max flips
    // within the finite-difference step.
    Tensor in(1, h, w, c);
    for (int ch = 0; ch < c; ++ch) {
      std::vector<float> levels(static_cast<std::size_t>(h) * w);
      for (std::size_t i = 0; i < levels.size(); ++i) {
        levels[i] = -1.0f + 0.013f * static_cast<float>(i);
      }
      for (std::size_t i = levels.size(); i > 1; --i) {
        std::swap(levels[i - 1], levels[rng.next_below(static_cast<int>(i))]);
      }
      std::size_t li = 0;
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) in.at(0, y, x, ch) = levels[li++];
      }
    }
    PoolParams p{1 + rng.next_below(3), 1 + rng.next_below(2),
                 inst % 2 == 0 ? Padding::kSame : Padding::kValid};
    if (out_extent(h, p.kernel, p.stride, p.padding) < 1 ||
        out_extent(w, p.kernel, p.stride, p.padding) < 1) {
      p.padding = Padding::kSame;
    }
    const Tensor cot = random_tensor(
        rng, 1, out_extent(h, p.kernel, p.stride, p.padding),
        out_extent(w, p.kernel, p.stride, p.padding), c);

    const Tensor grad = maxpool2d_vjp(in, p, cot);
    auto loss = [&] { return weighted_sum(maxpool2d(in, p), cot); };
    EXPECT_LT(fd_check(in.values(), grad.values(), loss).max_rel_error, kTol)
        << inst;
  }
}

TEST(GradCheck, Relu6) {
  for (int inst = 0; inst < kInstances; ++inst) {
    Pcg32 rng(400 + inst);
    Tensor in = random_tensor(rng, 1, 4, 4, 3, -3.0f, 9.0f);
    for (auto& v : in.values()) v = away_from(v, {0.0f, 6.0f}, 0.01f);
    const Tensor cot = random_tensor(rng, 1, 4, 4, 3);
    const Tensor grad = relu6_vjp(in, cot);
    auto loss = [&] { return weighted_sum(relu6(in), cot); };
    EXPECT_LT(fd_check(in.values(), grad.values(), loss).max_rel_error, kTol)
        << inst;
  }
}

TEST(GradCheck, AffineChannel) {
  for (int inst = 0; inst < kInstances; ++inst) {
    Pcg32 rng(500 + inst);
    const int c = 1 + rng.next_below(5);
    Tensor in = random_tensor(rng, 1 + rng.next_below(2), 2 + rng.next_below(4),
                              2 + rng.next_below(4), c);
    std::vector<float> scale = random_vector(rng, c, 0.5f, 1.5f);
    std::vector<float> offset = random_vector(rng, c);
    const Tensor cot =
        random_tensor(rng, in.n(), in.h(), in.w(), c);

    const AffineGrads grads = affine_channel_vjp(in, scale, cot);
    auto loss = [&] { return weighted_sum(affine_channel(in, scale, offset), cot); };
    EXPECT_LT(fd_check(in.values(), grads.d_input.values(), loss).max_rel_error,
              kTol) << inst;
    EXPECT_LT(fd_check(scale, grads.d_scale, loss).max_rel_error, kTol) << inst;
    EXPECT_LT(fd_check(offset, grads.d_offset, loss).max_rel_error, kTol) << inst;
  }
}

TEST(GradCheck, FocalLoss) {
  for (int inst = 0; inst < kInstances; ++inst) {
    Pcg32 rng(600 + inst);
    const int n = 4 + rng.next_below(40);
    std::vector<float> logits = random_vector(rng, n, -4.0f, 4.0f);
    std::vector<float> targets(n);
    for (auto& t : targets) t = rng.next_float() < 0.3f ? 1.0f : 0.0f;
    const FocalParams p{0.25f, inst % 3 == 0 ? 0.0f : 2.0f};

    const std::vector<float> grad = focal_loss_grad(logits, targets, p);
    auto loss = [&] { return focal_loss(logits, targets, p); };
    EXPECT_LT(fd_check(logits, grad, loss).max_rel_error, kTol) << inst;
  }
}

TEST(GradCheck, SmoothL1) {
  for (int inst = 0; inst < kInstances; ++inst) {
    Pcg32 rng(700 + inst);
    const int n = 4 + rng.next_below(32);
    std::vector<float> target = random_vector(rng, n, -2.0f, 2.0f);
    std::vector<float> pred = random_vector(rng, n, -2.0f, 2.0f);
    for (std::size_t i = 0; i < pred.size(); ++i) {
      const float x = pred[i] - target[i];
      pred[i] = target[i] + away_from(x, {-1.0f, 1.0f}, 0.01f);
    }
    const std::vector<float> grad = smooth_l1_grad(pred, target);
    auto loss = [&] { return smooth_l1(pred, target); };
    EXPECT_LT(fd_check(pred, grad, loss).max_rel_error, kTol) << inst;
  }
}

TEST(GradCheck, TotalLossEndToEnd) {
  for (int inst = 0; inst < kInstances; ++inst) {
    Pcg32 rng(800 + inst);
    // A small anchor grid plus random groundtruth.
    BoxList anchors;
    for (int i = 0; i < 4; ++i) {
      for (int j = 0; j < 4; ++j) {
        const float cy = (i + 0.5f) / 4.0f, cx = (j + 0.5f) / 4.0f;
        const float s = 0.2f + 0.05f * rng.next_float();
        anchors.push_back({cy - s, cx - s, cy + s, cx + s});
      }
    }
    BoxList gt;
    std::vector<int> gt_cls;
    const int num_gt = 1 + rng.next_below(3);
    for (int g = 0; g < num_gt; ++g) {
      const float cy = rng.uniform(0.3f, 0.7f), cx = rng.uniform(0.3f, 0.7f);
      const float hh = rng.uniform(0.1f, 0.3f), hw = rng.uniform(0.1f, 0.3f);
      gt.push_back({cy - hh, cx - hw, cy + hh, cx + hw});
      gt_cls.push_back(rng.next_below(3));
    }
    const Matching m = match(anchors, gt);
    const int k = 3;
    std::vector<float> logits = random_vector(rng, anchors.size() * k, -3.0f, 3.0f);
    std::vector<float> preds = random_vector(rng, anchors.size() * 4, -2.0f, 2.0f);
    // Keep matched regression residuals away from the smooth-L1 kink.
    for (std::size_t a = 0; a < anchors.size(); ++a) {
      if (m.gt_index[a] < 0) continue;
      const auto enc = encode(gt[m.gt_index[a]], anchors[a]);
      for (int q = 0; q < 4; ++q) {
        const float x = preds[a * 4 + q] - enc[q];
        preds[a * 4 + q] = enc[q] + away_from(x, {-1.0f, 1.0f}, 0.01f);
      }
    }
    const FocalParams p{0.25f, 2.0f};
    const TotalLossGrads grads =
        total_loss_grad(logits, preds, m, anchors, gt, gt_cls, k, p);
    auto loss = [&] {
      return total_loss(logits, preds, m, anchors, gt, gt_cls, k, p).total;
    };
    EXPECT_LT(fd_check(logits, grads.d_class_logits, loss).max_rel_error, kTol)
        << inst;
    EXPECT_LT(fd_check(preds, grads.d_box_preds, loss).max_rel_error, kTol)
        << inst;
  }
}
