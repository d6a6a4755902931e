#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "ppn/nn_ops.hpp"
#include "ppn/tensor.hpp"

namespace ppn {

enum class LayerKind { kConv, kDepthwiseConv, kAffine, kRelu6, kMaxPool };

// Declarative convolution geometry; the actual weights live in a WeightStore
// keyed by the layer's weight key, so two layers can share parameters.
struct ConvGeometry {
  int kh = 1;
  int kw = 1;
  int c_in = 0;
  int c_out = 0;
  int stride = 1;
  Padding padding = Padding::kSame;
};

struct PoolGeometry {
  int kernel = 2;
  int stride = 2;
  Padding padding = Padding::kSame;
};

struct LayerSpec {
  std::string name;
  LayerKind kind = LayerKind::kConv;
  ConvGeometry conv;   // conv & depthwise; affine uses c_in == c_out == channels
  PoolGeometry pool;   // maxpool only
  std::string input;   // producing layer name, or GraphSpec::kInputName
  std::string weight_key;  // empty means "own parameters named after the layer"
  std::string stage;   // backbone | transform | pyramid | extra | head

  const std::string& key() const { return weight_key.empty() ? name : weight_key; }
  bool has_params() const {
    return kind == LayerKind::kConv || kind == LayerKind::kDepthwiseConv ||
           kind == LayerKind::kAffine;
  }
};

struct GraphSpec {
  inline static const std::string kInputName = "input";

  int input_h = 0;
  int input_w = 0;
  int input_c = 0;
  std::vector<LayerSpec> layers;
  std::map<std::string, std::string> endpoints;  // alias -> layer name

  int layer_index(const std::string& name) const {
    for (std::size_t i = 0; i < layers.size(); ++i) {
      if (layers[i].name == name) return static_cast<int>(i);
    }
    return -1;
  }

  // Resolves an endpoint alias or plain layer name to a layer index.
  int resolve(const std::string& name) const {
    auto it = endpoints.find(name);
    return layer_index(it != endpoints.end() ? it->second : name);
  }

  void validate() const {
    std::set<std::string> seen;
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const LayerSpec& l = layers[i];
      if (!seen.insert(l.name).second) {
        throw std::invalid_argument("GraphSpec: duplicate layer name " + l.name);
      }
      if (l.input != kInputName) {
        int j = layer_index(l.input);
        if (j < 0 || j >= static_cast<int>(i)) {
          throw std::invalid_argument("GraphSpec: layer " + l.name +
               " reads from " + l.input + " which is not an earlier layer");
        }
      }
    }
    for (const auto& [alias, target] : endpoints) {
      if (layer_index(target) < 0) {
        throw std::invalid_argument("GraphSpec: endpoint " + alias +
                                    " refers to unknown layer " + target);
      }
    }
  }
};

struct Shape3 {
  int h = 0;
  int w = 0;
  int c = 0;
  bool operator==(const Shape3&) const = default;
};

// Pure shape arithmetic over the spec; no weights or tensors involved.
inline std::vector<Shape3> infer_shapes(const GraphSpec& g) {
  g.validate();
  std::vector<Shape3> shapes(g.layers.size());
  auto input_shape = [&](const LayerSpec& l) -> Shape3 {
    if (l.input == GraphSpec::kInputName) {
      return {g.input_h, g.input_w, g.input_c};
    }
    return shapes[g.layer_index(l.input)];
  };
  for (std::size_t i = 0; i < g.layers.size(); ++i) {
    const LayerSpec& l = g.layers[i];
    const Shape3 in = input_shape(l);
    switch (l.kind) {
      case LayerKind::kConv:
      case LayerKind::kDepthwiseConv: {
        if (in.c != l.conv.c_in) {
          throw std::invalid_argument("infer_shapes: layer " + l.name +
                                      " expects " + std::to_string(l.conv.c_in) +
                                      " channels, gets " + std::to_string(in.c));
        }
        int oc = l.kind == LayerKind::kDepthwiseConv ? l.conv.c_in : l.conv.c_out;
        shapes[i] = {out_extent(in.h, l.conv.kh, l.conv.stride, l.conv.padding),
                     out_extent(in.w, l.conv.kw, l.conv.stride, l.conv.padding),
                     oc};
        break;
      }
      case LayerKind::kAffine:
        if (in.c != l.conv.c_in) {
          throw std::invalid_argument("infer_shapes: affine " + l.name +
                                      " channel mismatch");
        }
        shapes[i] = in;
        break;
      case LayerKind::kRelu6:
        shapes[i] = in;
        break;
      case LayerKind::kMaxPool:
        shapes[i] = {out_extent(in.h, l.pool.kernel, l.pool.stride, l.pool.padding),
                     out_extent(in.w, l.pool.kernel, l.pool.stride, l.pool.padding),
                     in.c};
        break;
    }
  }
  return shapes;
}

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

// A named parameter array with its natural rank (conv weights are rank 4,
// biases and affine scales rank 1).
struct Param {
  std::vector<std::uint32_t> dims;
  std::vector<float> data;

  std::size_t count() const {
    std::size_t n = 1;
    for (auto d : dims) n *= d;
    return n;
  }
};

class WeightStore {
 public:
  bool has(const std::string& name) const { return params_.count(name) > 0; }

  const Param& at(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) {
      throw std::invalid_argument("WeightStore: missing parameter " + name);
    }
    return it->second;
  }

  Param& at(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) {
      throw std::invalid_argument("WeightStore: missing parameter " + name);
    }
    return it->second;
  }

  void put(const std::string& name, Param p) { params_[name] = std::move(p); }

  std::size_t total_values() const {
    std::size_t n = 0;
    for (const auto& [k, p] : params_) n += p.data.size();
    return n;
  }

  const std::map<std::string, Param>& entries() const { return params_; }
  std::map<std::string, Param>& entries() { return params_; }

 private:
  std::map<std::string, Param> params_;
};

// Expected parameter set for a graph, deduplicated by weight key in first
// occurrence order. fan_in drives the initializer scale.
struct ParamSpec {
  std::string name;
  std::vector<std::uint32_t> dims;
  enum class Role { kWeight, kBias, kScale, kOffset } role = Role::kWeight;
  int fan_in = 1;
};

inline std::vector<ParamSpec> param_specs(const GraphSpec& g) {
  std::vector<ParamSpec> out;
  std::set<std::string> seen;
  for (const LayerSpec& l : g.layers) {
    if (!l.has_params() || !seen.insert(l.key()).second) continue;
    const std::string& k = l.key();
    using Role = ParamSpec::Role;
    if (l.kind == LayerKind::kConv) {
      const auto& c = l.conv;
      out.push_back({k + "/w",
                     {std::uint32_t(c.kh), std::uint32_t(c.kw),
                      std::uint32_t(c.c_in), std::uint32_t(c.c_out)},
                     Role::kWeight, c.kh * c.kw * c.c_in});
      out.push_back({k + "/b", {std::uint32_t(c.c_out)}, Role::kBias, 1});
    } else if (l.kind == LayerKind::kDepthwiseConv) {
      const auto& c = l.conv;
      out.push_back({k + "/w",
                     {std::uint32_t(c.kh), std::uint32_t(c.kw),
                      std::uint32_t(c.c_in), 1u},
                     Role::kWeight, c.kh * c.kw});
      out.push_back({k + "/b", {std::uint32_t(c.c_in)}, Role::kBias, 1});
    } else {  // affine
      out.push_back({k + "/scale", {std::uint32_t(l.conv.c_in)}, Role::kScale, 1});
      out.push_back({k + "/offset", {std::uint32_t(l.conv.c_in)}, Role::kOffset, 1});
    }
  }
  return out;
}

namespace detail {

inline Tensor param_as_tensor4(const Param& p, const std::string& name) {
  if (p.dims.size() != 4) {
    throw std::invalid_argument("parameter " + name + " is not rank 4");
  }
  return Tensor({int(p.dims[0]), int(p.dims[1]), int(p.dims[2]), int(p.dims[3])},
                p.data);
}

inline ConvParams bind_conv(const LayerSpec& l, const WeightStore& w) {
  const std::string& k = l.key();
  const Param& pw = w.at(k + "/w");
  const Param& pb = w.at(k + "/b");
  ConvParams p{param_as_tensor4(pw, k + "/w"), pb.data, l.conv.stride,
               l.conv.padding};
  int want_co = l.kind == LayerKind::kDepthwiseConv ? 1 : l.conv.c_out;
  if (p.kh() != l.conv.kh || p.kw() != l.conv.kw || p.c_in() != l.conv.c_in ||
      p.c_out() != want_co) {
    throw std::invalid_argument("layer " + l.name + ": weight " + k +
                                "/w shape does not match geometry");
  }
  return p;
}

}  // namespace detail

// Applies one layer to its input tensor, pulling parameters from the store.
inline Tensor apply_layer(const LayerSpec& l, const WeightStore& w,
                          const Tensor& input) {
  switch (l.kind) {
    case LayerKind::kConv:
      return conv2d(input, detail::bind_conv(l, w));
    case LayerKind::kDepthwiseConv:
      return depthwise_conv2d(input, detail::bind_conv(l, w));
    case LayerKind::kAffine: {
      const std::string& k = l.key();
      return affine_channel(input, w.at(k + "/scale").data,
                            w.at(k + "/offset").data);
    }
    case LayerKind::kRelu6:
      return relu6(input);
    case LayerKind::kMaxPool:
      return maxpool2d(input, PoolParams{l.pool.kernel, l.pool.stride,
                                         l.pool.padding});
  }
  throw std::logic_error("apply_layer: unknown kind");
}

struct ForwardTrace {
  Tensor input;
  std::vector<Tensor> outputs;  // one per layer, in graph order
};

inline ForwardTrace forward_all(const GraphSpec& g, const WeightStore& w,
                                const Tensor& input) {
  g.validate();
  if (input.h() != g.input_h || input.w() != g.input_w ||
      input.c() != g.input_c) {
    throw std::invalid_argument("forward_all: input dims " + input.dims_str() +
                                " do not match graph input");
  }
  ForwardTrace t;
  t.input = input;
  t.outputs.reserve(g.layers.size());
  for (const LayerSpec& l : g.layers) {
    const Tensor& src = l.input == GraphSpec::kInputName
                            ? t.input
                            : t.outputs[g.layer_index(l.input)];
    t.outputs.push_back(apply_layer(l, w, src));
  }
  return t;
}

// Deterministic forward pass returning the named endpoints.
inline std::map<std::string, Tensor> execute(const GraphSpec& g,
                                             const WeightStore& w,
                                             const Tensor& input) {
  ForwardTrace t = forward_all(g, w, input);
  std::map<std::string, Tensor> out;
  for (const auto& [alias, target] : g.endpoints) {
    out[alias] = t.outputs[g.layer_index(target)];
  }
  return out;
}

// Per-parameter gradients, accumulated in double. Shared weight keys receive
// contributions from every layer that uses them.
class GradientStore {
 public:
  std::vector<double>& slot(const std::string& name, std::size_t size) {
    auto [it, inserted] = grads_.try_emplace(name);
    if (inserted) it->second.assign(size, 0.0);
    return it->second;
  }
  const std::map<std::string, std::vector<double>>& entries() const {
    return grads_;
  }
  std::map<std::string, std::vector<double>>& entries() { return grads_; }

 private:
  std::map<std::string, std::vector<double>> grads_;
};

namespace detail {

inline void add_into(Tensor& dst, const Tensor& src) {
  if (dst.empty()) {
    dst = src;
    return;
  }
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

inline void axpy(std::vector<double>& dst, const Tensor& src) {
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] += src[i];
}

inline void axpy(std::vector<double>& dst, const std::vector<float>& src) {
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] += src[i];
}

}  // namespace detail

// Reverse pass over a recorded forward. `cotangents` is keyed by layer name
// or endpoint alias. Returns parameter gradients; optionally the gradient
// w.r.t. the graph input.
inline GradientStore backward(const GraphSpec& g, const WeightStore& w,
                              const ForwardTrace& trace,
                              const std::map<std::string, Tensor>& cotangents,
                              Tensor* d_input = nullptr) {
  std::vector<Tensor> cot(g.layers.size());
  for (const auto& [name, c] : cotangents) {
    int idx = g.resolve(name);
    if (idx < 0) {
      throw std::invalid_argument("backward: unknown cotangent target " + name);
    }
    detail::add_into(cot[idx], c);
  }

  GradientStore grads;
  Tensor input_grad;
  for (int i = static_cast<int>(g.layers.size()) - 1; i >= 0; --i) {
    if (cot[i].empty()) continue;
    const LayerSpec& l = g.layers[i];
    const Tensor& src = l.input == GraphSpec::kInputName
                            ? trace.input
                            : trace.outputs[g.layer_index(l.input)];
    Tensor d_src;
    switch (l.kind) {
      case LayerKind::kConv: {
        ConvGrads cg = conv2d_vjp(src, detail::bind_conv(l, w), cot[i]);
        detail::axpy(grads.slot(l.key() + "/w", cg.d_weights.size()),
                     cg.d_weights);
        detail::axpy(grads.slot(l.key() + "/b", cg.d_bias.size()), cg.d_bias);
        d_src = std::move(cg.d_input);
        break;
      }
      case LayerKind::kDepthwiseConv: {
        ConvGrads cg = depthwise_conv2d_vjp(src, detail::bind_conv(l, w), cot[i]);
        detail::axpy(grads.slot(l.key() + "/w", cg.d_weights.size()),
                     cg.d_weights);
        detail::axpy(grads.slot(l.key() + "/b", cg.d_bias.size()), cg.d_bias);
        d_src = std::move(cg.d_input);
        break;
      }
      case LayerKind::kAffine: {
        const std::string& k = l.key();
        AffineGrads ag = affine_channel_vjp(src, w.at(k + "/scale").data, cot[i]);
        detail::axpy(grads.slot(k + "/scale", ag.d_scale.size()), ag.d_scale);
        detail::axpy(grads.slot(k + "/offset", ag.d_offset.size()), ag.d_offset);
        d_src = std::move(ag.d_input);
        break;
      }
      case LayerKind::kRelu6:
        d_src = relu6_vjp(src, cot[i]);
        break;
      case LayerKind::kMaxPool:
        d_src = maxpool2d_vjp(
            src, PoolParams{l.pool.kernel, l.pool.stride, l.pool.padding},
            cot[i]);
        break;
    }
    cot[i] = Tensor();  // release activation-sized cotangent early
    if (l.input == GraphSpec::kInputName) {
      detail::add_into(input_grad, d_src);
    } else {
      detail::add_into(cot[g.layer_index(l.input)], d_src);
    }
  }
  if (d_input != nullptr) *d_input = std::move(input_grad);
  return grads;
}

// Keeps only the ancestors of the given endpoint aliases; endpoint entries
// whose target survives are preserved. Used to drop unused trunk layers
// (e.g. everything past the PPN base feature map).
inline GraphSpec prune_to_endpoints(const GraphSpec& g,
                                    const std::vector<std::string>& aliases) {
  g.validate();
  std::set<int> keep;
  std::vector<int> work;
  for (const std::string& a : aliases) {
    int idx = g.resolve(a);
    if (idx < 0) {
      throw std::invalid_argument("prune_to_endpoints: unknown endpoint " + a);
    }
    work.push_back(idx);
  }
  while (!work.empty()) {
    int i = work.back();
    work.pop_back();
    if (!keep.insert(i).second) continue;
    const LayerSpec& l = g.layers[i];
    if (l.input != GraphSpec::kInputName) {
      work.push_back(g.layer_index(l.input));
    }
  }
  GraphSpec out;
  out.input_h = g.input_h;
  out.input_w = g.input_w;
  out.input_c = g.input_c;
  for (std::size_t i = 0; i < g.layers.size(); ++i) {
    if (keep.count(static_cast<int>(i))) out.layers.push_back(g.layers[i]);
  }
  for (const auto& [alias, target] : g.endpoints) {
    if (out.layer_index(target) >= 0) out.endpoints[alias] = target;
  }
  return out;
}

}  // namespace ppn
