#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "ppn/graph.hpp"

namespace ppn {

namespace detail {

// conv -> affine -> relu6; returns the name of the block output (the relu6).
inline std::string add_conv_block(GraphSpec& g, const std::string& name,
                                  LayerKind kind, ConvGeometry geom,
                                  const std::string& input,
                                  const std::string& stage) {
  LayerSpec conv;
  conv.name = name;
  conv.kind = kind;
  conv.conv = geom;
  conv.input = input;
  conv.stage = stage;
  g.layers.push_back(conv);

  LayerSpec affine;
  affine.name = name + "/affine";
  affine.kind = LayerKind::kAffine;
  affine.conv.c_in = kind == LayerKind::kDepthwiseConv ? geom.c_in : geom.c_out;
  affine.conv.c_out = affine.conv.c_in;
  affine.input = name;
  affine.stage = stage;
  g.layers.push_back(affine);

  LayerSpec act;
  act.name = name + "/relu6";
  act.kind = LayerKind::kRelu6;
  act.input = affine.name;
  act.stage = stage;
  g.layers.push_back(act);
  return act.name;
}

}  // namespace detail

// Standard channel-multiplier rounding: never below 8 channels.
inline int scaled_channels(int c, float depth_multiplier) {
  return std::max(8, static_cast<int>(std::lround(c * depth_multiplier)));
}

// MobileNet-v1 trunk: stride-2 3x3 stem plus 13 depthwise-separable blocks.
// Endpoints are exposed for every pointwise block output; the detector uses
// Conv2d_11_pointwise and Conv2d_13_pointwise.
inline GraphSpec build_mobilenet_v1(float depth_multiplier, int input_size) {
  if (depth_multiplier <= 0.0f) {
    throw std::invalid_argument("build_mobilenet_v1: depth multiplier must be positive");
  }
  if (input_size < 1) {
    throw std::invalid_argument("build_mobilenet_v1: input size must be positive");
  }
  static constexpr int kPointwise[13] = {64,  128, 128, 256, 256, 512, 512,
                                         512, 512, 512, 512, 1024, 1024};
  static constexpr int kStride[13] = {1, 2, 1, 2, 1, 2, 1, 1, 1, 1, 1, 2, 1};

  GraphSpec g;
  g.input_h = input_size;
  g.input_w = input_size;
  g.input_c = 3;

  int ch = scaled_channels(32, depth_multiplier);
  std::string prev = detail::add_conv_block(
      g, "Conv2d_0", LayerKind::kConv,
      ConvGeometry{3, 3, 3, ch, 2, Padding::kSame}, GraphSpec::kInputName,
      "backbone");
  g.endpoints["Conv2d_0"] = prev;

  for (int i = 0; i < 13; ++i) {
    const std::string base = "Conv2d_" + std::to_string(i + 1);
    prev = detail::add_conv_block(
        g, base + "_depthwise", LayerKind::kDepthwiseConv,
        ConvGeometry{3, 3, ch, ch, kStride[i], Padding::kSame}, prev,
        "backbone");
    int out_ch = scaled_channels(kPointwise[i], depth_multiplier);
    prev = detail::add_conv_block(
        g, base + "_pointwise", LayerKind::kConv,
        ConvGeometry{1, 1, ch, out_ch, 1, Padding::kSame}, prev, "backbone");
    g.endpoints[base + "_pointwise"] = prev;
    ch = out_ch;
  }
  g.validate();
  return g;
}

// Small trunk for desk-scale training: four stride-2 conv blocks with
// channels (c, 2c, 4c, 4c), ending at spatial input/16. Endpoints exposed
// per stage; the detector attaches its head at stage2 (input/4). The 5x5
// kernels buy receptive field a four-layer trunk cannot otherwise
// accumulate; scale-aware anchor scoring depends on it.
inline GraphSpec build_tiny_backbone(int input_size, int base_channels) {
  if (input_size % 16 != 0) {
    throw std::invalid_argument("build_tiny_backbone: input size must be divisible by 16");
  }
  if (base_channels < 1) {
    throw std::invalid_argument("build_tiny_backbone: base channels must be positive");
  }
  const int chans[4] = {base_channels, 2 * base_channels, 4 * base_channels,
                        4 * base_channels};
  GraphSpec g;
  g.input_h = input_size;
  g.input_w = input_size;
  g.input_c = 3;

  std::string prev = GraphSpec::kInputName;
  int in_ch = 3;
  for (int i = 0; i < 4; ++i) {
    const std::string name = "stage" + std::to_string(i + 1);
    prev = detail::add_conv_block(
        g, name, LayerKind::kConv,
        ConvGeometry{5, 5, in_ch, chans[i], 2, Padding::kSame}, prev,
        "backbone");
    g.endpoints[name] = prev;
    in_ch = chans[i];
  }
  g.validate();
  return g;
}

}  // namespace ppn
