#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "ppn/backbone.hpp"
#include "ppn/boxes.hpp"
#include "ppn/config.hpp"
#include "ppn/graph.hpp"
#include "ppn/head.hpp"
#include "ppn/losses.hpp"

namespace ppn {

struct LevelInfo {
  int index = 0;
  int h = 0;
  int w = 0;
  std::string feature_layer;  // graph layer producing this level's map
  std::string cls_layer;
  std::string box_layer;
  int anchor_offset = 0;
  int anchor_count = 0;
};

// A fully assembled detection model: one graph covering backbone, feature
// pyramid (or SSD extra convolutions) and predictor heads, plus the anchor
// grid that matches the head outputs.
struct Detector {
  RunConfig config;
  GraphSpec graph;
  std::vector<LevelInfo> levels;
  BoxList anchors;

  int num_anchors() const { return static_cast<int>(anchors.size()); }

  int level_of_anchor(int anchor_index) const {
    for (const LevelInfo& l : levels) {
      if (anchor_index < l.anchor_offset + l.anchor_count) return l.index;
    }
    return static_cast<int>(levels.size()) - 1;
  }
};

namespace detail {

struct BackboneInfo {
  GraphSpec graph;
  std::string base_alias;        // where the head attaches (PPN base map)
  std::string second_alias;      // second SSD feature map, empty if none
  std::vector<int> extra_channels;  // SSD extra stage output channels
};

inline BackboneInfo make_backbone(const RunConfig& cfg) {
  BackboneInfo info;
  if (cfg.backbone == "mobilenet_v1") {
    info.graph = build_mobilenet_v1(cfg.depth_multiplier, cfg.input_size);
    info.base_alias = "Conv2d_11_pointwise";
    info.second_alias = "Conv2d_13_pointwise";
    info.extra_channels = {512, 256, 256, 128};
  } else {
    // The head attaches at stage2 (input/4), not the last stage, mirroring
    // how the 300-input model attaches at Conv2d_11: a finer base grid so
    // small boxes can still reach the matching threshold.
    info.graph = build_tiny_backbone(cfg.input_size, cfg.tiny_base_channels);
    info.base_alias = "stage2";
    info.second_alias = "stage3";
    info.extra_channels.assign(8, 4 * cfg.tiny_base_channels);
  }
  return info;
}

// Appends the two 1x1 prediction convs for one level. In shared mode all
// levels reference the same weight keys, so the parameters exist once.
inline void add_head(GraphSpec& g, int level, const std::string& input,
                     int c_in, const RunConfig& cfg, bool shared) {
  const std::string prefix = "head/L" + std::to_string(level);
  std::string feed = input;
  if (shared) {
    LayerSpec pre;
    pre.name = prefix + "/shared";
    pre.kind = LayerKind::kConv;
    pre.conv = ConvGeometry{1, 1, c_in, cfg.head_depth, 1, Padding::kSame};
    pre.input = feed;
    pre.weight_key = "head/shared";
    pre.stage = "head";
    g.layers.push_back(pre);

    LayerSpec act;
    act.name = prefix + "/shared/relu6";
    act.kind = LayerKind::kRelu6;
    act.input = pre.name;
    act.stage = "head";
    g.layers.push_back(act);
    feed = act.name;
    c_in = cfg.head_depth;
  }

  LayerSpec cls;
  cls.name = prefix + "/cls";
  cls.kind = LayerKind::kConv;
  cls.conv = ConvGeometry{1, 1, c_in,
                          cfg.anchors_per_location * cfg.num_classes, 1,
                          Padding::kSame};
  cls.input = feed;
  cls.weight_key = shared ? "head/cls" : "";
  cls.stage = "head";
  g.layers.push_back(cls);

  LayerSpec box;
  box.name = prefix + "/box";
  box.kind = LayerKind::kConv;
  box.conv = ConvGeometry{1, 1, c_in, cfg.anchors_per_location * 4, 1,
                          Padding::kSame};
  box.input = feed;
  box.weight_key = shared ? "head/box" : "";
  box.stage = "head";
  g.layers.push_back(box);

  g.endpoints["cls" + std::to_string(level)] = cls.name;
  g.endpoints["box" + std::to_string(level)] = box.name;
}

}  // namespace detail

// Builds the full detector graph for a config.
//
// ppn:  backbone -> 1x1 transform conv -> stride-2 max-pool pyramid -> one
//       shared predictor (1x1 depth conv + class/box heads) at every level.
// ssd:  backbone endpoints + conv-built extra maps -> an independent
//       predictor per level.
inline Detector build_detector(const RunConfig& cfg) {
  cfg.validate();
  detail::BackboneInfo bb = detail::make_backbone(cfg);
  GraphSpec g = std::move(bb.graph);

  const std::vector<Shape3> bb_shapes = infer_shapes(g);
  const int base_idx = g.resolve(bb.base_alias);
  const Shape3 base_shape = bb_shapes[base_idx];
  const std::string base_layer = g.endpoints.at(bb.base_alias);

  std::vector<std::string> feature_layers;

  if (cfg.mode == "ppn") {
    // Optional 1x1 transform conv; defines the shared embedding space.
    const std::string t = detail::add_conv_block(
        g, "transform", LayerKind::kConv,
        ConvGeometry{1, 1, base_shape.c, cfg.head_depth, 1, Padding::kSame},
        base_layer, "transform");
    if (cfg.num_levels > max_pyramid_levels(base_shape.h, base_shape.w)) {
      throw ConfigError("model.num_levels = " + std::to_string(cfg.num_levels) +
                        " exceeds what a " + std::to_string(base_shape.h) + "x" +
                        std::to_string(base_shape.w) +
                        " base map can provide before stalling at 1x1");
    }
    feature_layers.push_back(t);
    for (int i = 1; i < cfg.num_levels; ++i) {
      LayerSpec pool;
      pool.name = "pyramid/pool" + std::to_string(i);
      pool.kind = LayerKind::kMaxPool;
      pool.pool = PoolGeometry{2, 2, Padding::kSame};
      pool.input = feature_layers.back();
      pool.stage = "pyramid";
      g.layers.push_back(pool);
      feature_layers.push_back(pool.name);
    }
  } else {
    feature_layers.push_back(base_layer);
    if (cfg.num_levels >= 2) {
      feature_layers.push_back(g.endpoints.at(bb.second_alias));
    }
    const int num_extras = cfg.num_levels - 2;
    if (num_extras > static_cast<int>(bb.extra_channels.size())) {
      throw ConfigError("model.num_levels too large for the ssd extra-layer schedule");
    }
    std::string prev = feature_layers.back();
    int prev_c = bb_shapes[g.resolve(bb.second_alias)].c;
    for (int j = 0; j < num_extras; ++j) {
      const int out_c = bb.extra_channels[j];
      const int mid_c = out_c / 2;
      const std::string name = "extra" + std::to_string(j + 1);
      std::string x = detail::add_conv_block(
          g, name + "/pointwise", LayerKind::kConv,
          ConvGeometry{1, 1, prev_c, mid_c, 1, Padding::kSame}, prev, "extra");
      x = detail::add_conv_block(
          g, name + "/reduce", LayerKind::kConv,
          ConvGeometry{3, 3, mid_c, out_c, 2, Padding::kSame}, x, "extra");
      feature_layers.push_back(x);
      prev = x;
      prev_c = out_c;
    }
  }

  // Heads, one per level; weights shared in ppn mode.
  {
    const std::vector<Shape3> shapes = infer_shapes(g);
    const bool shared = cfg.mode == "ppn";
    for (int i = 0; i < cfg.num_levels; ++i) {
      const int c = shapes[g.layer_index(feature_layers[i])].c;
      detail::add_head(g, i, feature_layers[i], c, cfg, shared);
      g.endpoints["feature" + std::to_string(i)] = feature_layers[i];
    }
  }

  // Drop trunk layers nothing depends on (e.g. Conv2d_12/13 in ppn mode).
  std::vector<std::string> wanted;
  for (int i = 0; i < cfg.num_levels; ++i) {
    wanted.push_back("cls" + std::to_string(i));
    wanted.push_back("box" + std::to_string(i));
  }
  Detector det;
  det.config = cfg;
  det.graph = prune_to_endpoints(g, wanted);
  det.graph.validate();

  const std::vector<Shape3> shapes = infer_shapes(det.graph);
  std::vector<LevelShape> level_shapes;
  int offset = 0;
  for (int i = 0; i < cfg.num_levels; ++i) {
    LevelInfo info;
    info.index = i;
    info.feature_layer = feature_layers[i];
    info.cls_layer = det.graph.endpoints.at("cls" + std::to_string(i));
    info.box_layer = det.graph.endpoints.at("box" + std::to_string(i));
    const Shape3 s = shapes[det.graph.layer_index(info.feature_layer)];
    info.h = s.h;
    info.w = s.w;
    info.anchor_offset = offset;
    info.anchor_count = s.h * s.w * cfg.anchors_per_location;
    offset += info.anchor_count;
    det.levels.push_back(info);
    level_shapes.push_back({s.h, s.w});
  }
  det.anchors = generate_anchors(cfg.anchor, level_shapes);
  if (det.num_anchors() != offset) {
    throw std::logic_error("build_detector: anchor bookkeeping mismatch");
  }
  return det;
}

struct DetectorForward {
  ForwardTrace trace;
  std::vector<Tensor> cls;  // per level, (N, h, w, A*K)
  std::vector<Tensor> box;  // per level, (N, h, w, A*4)
};

inline DetectorForward detector_forward(const Detector& det,
                                        const WeightStore& weights,
                                        const Tensor& input) {
  DetectorForward out;
  out.trace = forward_all(det.graph, weights, input);
  for (const LevelInfo& l : det.levels) {
    out.cls.push_back(out.trace.outputs[det.graph.layer_index(l.cls_layer)]);
    out.box.push_back(out.trace.outputs[det.graph.layer_index(l.box_layer)]);
  }
  return out;
}

// Flattens one image's per-level head outputs into per-anchor rows of width
// `row` (K for logits, 4 for boxes). Level tensors are NHWC with channels
// laid out anchor-major, so rows come out in anchor-index order.
inline std::vector<float> flatten_levels(const Detector& det,
                                         const std::vector<Tensor>& per_level,
                                         int image, int row) {
  std::vector<float> out(static_cast<std::size_t>(det.num_anchors()) * row);
  for (std::size_t li = 0; li < per_level.size(); ++li) {
    const Tensor& t = per_level[li];
    const LevelInfo& info = det.levels[li];
    const std::size_t plane = static_cast<std::size_t>(t.h()) * t.w() * t.c();
    const float* src = t.data() + static_cast<std::size_t>(image) * plane;
    float* dst = out.data() + static_cast<std::size_t>(info.anchor_offset) * row;
    std::copy(src, src + plane, dst);
  }
  return out;
}

// Inverse of flatten_levels: scatter per-anchor rows into batched per-level
// tensors (adding to whatever is already there at batch slot `image`).
inline void unflatten_levels(const Detector& det, std::span<const float> rows,
                             int row, int image, std::vector<Tensor>& per_level) {
  for (std::size_t li = 0; li < per_level.size(); ++li) {
    Tensor& t = per_level[li];
    const LevelInfo& info = det.levels[li];
    const std::size_t plane = static_cast<std::size_t>(t.h()) * t.w() * t.c();
    float* dst = t.data() + static_cast<std::size_t>(image) * plane;
    const float* src = rows.data() + static_cast<std::size_t>(info.anchor_offset) * row;
    for (std::size_t i = 0; i < plane; ++i) dst[i] += src[i];
  }
}

struct PostprocessParams {
  float score_threshold = 0.3f;
  float nms_iou = 0.6f;
  int max_detections = 100;
};

// Single-image inference: forward, sigmoid scores, threshold, decode against
// anchors, per-class NMS. Output is sorted by descending score.
inline std::vector<Detection> run_inference(const Detector& det,
                                            const WeightStore& weights,
                                            const Tensor& image,
                                            const PostprocessParams& pp) {
  if (image.n() != 1) {
    throw std::invalid_argument("run_inference: expects a single-image batch");
  }
  const DetectorForward fwd = detector_forward(det, weights, image);
  const int k = det.config.num_classes;
  const std::vector<float> logits = flatten_levels(det, fwd.cls, 0, k);
  const std::vector<float> boxes = flatten_levels(det, fwd.box, 0, 4);

  std::vector<Detection> candidates;
  const int n = det.num_anchors();
  for (int a = 0; a < n; ++a) {
    for (int c = 0; c < k; ++c) {
      const float score = static_cast<float>(
          detail::stable_sigmoid(logits[static_cast<std::size_t>(a) * k + c]));
      if (score <= pp.score_threshold) continue;
      const std::array<float, 4> t = {
          boxes[a * 4 + 0], boxes[a * 4 + 1], boxes[a * 4 + 2], boxes[a * 4 + 3]};
      candidates.push_back({decode(t, det.anchors[a]), score, c, a});
    }
  }
  return nms(candidates, pp.nms_iou, pp.max_detections);
}

}  // namespace ppn
