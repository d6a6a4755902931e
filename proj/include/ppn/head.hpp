#pragma once

#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "ppn/nn_ops.hpp"
#include "ppn/tensor.hpp"

namespace ppn {

struct PyramidLevel {
  int index = 0;
  Tensor feature;

  int spatial_h() const { return feature.h(); }
  int spatial_w() const { return feature.w(); }
};

// Number of pyramid levels reachable from a base map before it stalls at 1x1
// (a 1x1 map pools to itself and may appear only once).
inline int max_pyramid_levels(int h, int w) {
  int count = 1;
  while (h > 1 || w > 1) {
    h = (h + 1) / 2;
    w = (w + 1) / 2;
    ++count;
  }
  return count;
}

// Level 0 is the base map (callers apply the optional 1x1 transform conv
// first); each further level is a stride-2 SAME max pool of the previous one.
inline std::vector<PyramidLevel> build_max_pool_pyramid(const Tensor& base,
                                                        int num_levels) {
  if (num_levels < 1) {
    throw std::invalid_argument("build_max_pool_pyramid: need at least one level");
  }
  if (base.h() < 1 || base.w() < 1) {
    throw std::invalid_argument("build_max_pool_pyramid: empty base map");
  }
  if (num_levels > max_pyramid_levels(base.h(), base.w())) {
    throw std::invalid_argument(
        "build_max_pool_pyramid: " + std::to_string(num_levels) +
        " levels exceed what a " + std::to_string(base.h()) + "x" +
        std::to_string(base.w()) + " base can provide");
  }
  std::vector<PyramidLevel> levels;
  levels.push_back({0, base});
  const PoolParams pool{2, 2, Padding::kSame};
  for (int i = 1; i < num_levels; ++i) {
    levels.push_back({i, maxpool2d(levels.back().feature, pool)});
  }
  return levels;
}

// One vanilla-SSD extra stage: 1x1 bottleneck then 3x3 stride-2 conv, each
// followed by affine + relu6.
struct ExtraStageParams {
  ConvParams bottleneck;
  std::vector<float> bottleneck_scale;
  std::vector<float> bottleneck_offset;
  ConvParams reduce;
  std::vector<float> reduce_scale;
  std::vector<float> reduce_offset;
};

inline std::vector<Tensor> build_ssd_extra_layers(
    const Tensor& c13, std::span<const ExtraStageParams> stages) {
  std::vector<Tensor> maps;
  const Tensor* prev = &c13;
  for (const ExtraStageParams& s : stages) {
    Tensor x = conv2d(*prev, s.bottleneck);
    x = relu6(affine_channel(x, s.bottleneck_scale, s.bottleneck_offset));
    x = conv2d(x, s.reduce);
    x = relu6(affine_channel(x, s.reduce_scale, s.reduce_offset));
    maps.push_back(std::move(x));
    prev = &maps.back();
  }
  return maps;
}

enum class PredictorMode { kShared, kPerScale };

// The box predictor: an optional 1x1 transform conv (+relu6) feeding two 1x1
// heads for class logits and box encodings. Shared mode applies one parameter
// set at every level; per-scale mode holds one set per level.
struct PredictorHead {
  std::optional<ConvParams> pre_conv;
  ConvParams cls;
  ConvParams box;
};

struct PredictorParams {
  PredictorMode mode = PredictorMode::kShared;
  std::vector<PredictorHead> heads;  // size 1 when shared, one per level otherwise
  int anchors_per_cell = 6;
  int num_classes = 90;
};

struct LevelPrediction {
  Tensor class_logits;    // h x w x (A*K)
  Tensor box_encodings;   // h x w x (A*4)
};

inline std::vector<LevelPrediction> predict(
    const std::vector<PyramidLevel>& levels, const PredictorParams& params) {
  if (params.mode == PredictorMode::kShared) {
    if (params.heads.size() != 1) {
      throw std::invalid_argument("predict: shared mode takes one head");
    }
    for (const PyramidLevel& l : levels) {
      if (l.feature.c() != levels.front().feature.c()) {
        throw std::invalid_argument(
            "predict: shared mode requires a uniform channel count; "
            "the pyramid is mis-built");
      }
    }
  } else if (params.heads.size() != levels.size()) {
    throw std::invalid_argument("predict: per-scale mode needs one head per level");
  }

  std::vector<LevelPrediction> out;
  out.reserve(levels.size());
  for (std::size_t i = 0; i < levels.size(); ++i) {
    const PredictorHead& head =
        params.mode == PredictorMode::kShared ? params.heads[0] : params.heads[i];
    const Tensor* feat = &levels[i].feature;
    Tensor pre;
    if (head.pre_conv) {
      pre = relu6(conv2d(*feat, *head.pre_conv));
      feat = &pre;
    }
    LevelPrediction p;
    p.class_logits = conv2d(*feat, head.cls);
    p.box_encodings = conv2d(*feat, head.box);
    const int a = params.anchors_per_cell;
    if (p.class_logits.c() != a * params.num_classes ||
        p.box_encodings.c() != a * 4) {
      throw std::invalid_argument("predict: head output channels do not match A*K / A*4");
    }
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace ppn
