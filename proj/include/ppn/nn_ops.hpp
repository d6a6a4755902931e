#pragma once

#include <algorithm>
#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

#include "ppn/tensor.hpp"

namespace ppn {

enum class Padding { kSame, kValid };

// Output extent for one spatial axis. SAME is ceil(in/stride); VALID is
// floor((in - k)/stride) + 1.
inline int out_extent(int in, int kernel, int stride, Padding padding) {
  if (padding == Padding::kSame) {
    return (in + stride - 1) / stride;
  }
  return (in - kernel) / stride + 1;
}

// Leading pad for SAME. Total pad splits floor/ceil with the extra row or
// column on the bottom/right, which is what makes 19 -> 10 -> 5 -> 3 -> 2 -> 1
// hold under stride-2 kernels.
inline int pad_before(int in, int kernel, int stride, Padding padding) {
  if (padding == Padding::kValid) return 0;
  int out = out_extent(in, kernel, stride, padding);
  int total = std::max((out - 1) * stride + kernel - in, 0);
  return total / 2;
}

// Convolution parameters. Weights are (kh, kw, c_in, c_out) stored in a rank-4
// tensor; depthwise convolutions use c_out == 1 per input channel.
struct ConvParams {
  Tensor weights;
  std::vector<float> bias;
  int stride = 1;
  Padding padding = Padding::kSame;

  int kh() const { return weights.n(); }
  int kw() const { return weights.h(); }
  int c_in() const { return weights.w(); }
  int c_out() const { return weights.c(); }

  void validate() const {
    if (kh() < 1 || kw() < 1 || c_in() < 1 || c_out() < 1) {
      throw std::invalid_argument("ConvParams: kernel dims must be >= 1");
    }
    if (stride < 1) {
      throw std::invalid_argument("ConvParams: stride must be positive");
    }
  }
};

struct PoolParams {
  int kernel = 2;
  int stride = 2;
  Padding padding = Padding::kSame;

  void validate() const {
    if (kernel < 1 || stride < 1) {
      throw std::invalid_argument("PoolParams: kernel and stride must be >= 1");
    }
  }
};

// ---------------------------------------------------------------------------
// Forward ops. All reductions accumulate in double and store float.
// ---------------------------------------------------------------------------

inline Tensor conv2d(const Tensor& input, const ConvParams& p) {
  p.validate();
  if (input.c() != p.c_in()) {
    throw std::invalid_argument("conv2d: input has " +
                                std::to_string(input.c()) +
                                " channels, weights expect " +
                                std::to_string(p.c_in()));
  }
  if (p.bias.size() != static_cast<std::size_t>(p.c_out())) {
    throw std::invalid_argument("conv2d: bias length != c_out");
  }
  const int kh = p.kh(), kw = p.kw(), ci = p.c_in(), co = p.c_out();
  const int oh = out_extent(input.h(), kh, p.stride, p.padding);
  const int ow = out_extent(input.w(), kw, p.stride, p.padding);
  const int pt = pad_before(input.h(), kh, p.stride, p.padding);
  const int pl = pad_before(input.w(), kw, p.stride, p.padding);

  Tensor out(input.n(), oh, ow, co);
  std::vector<double> acc(co);
  const float* in = input.data();
  const float* w = p.weights.data();
  float* o = out.data();
  const int ih = input.h(), iw = input.w();

  for (int b = 0; b < input.n(); ++b) {
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        for (int k = 0; k < co; ++k) acc[k] = p.bias[k];
        const int y0 = oy * p.stride - pt;
        const int x0 = ox * p.stride - pl;
        for (int ky = 0; ky < kh; ++ky) {
          const int iy = y0 + ky;
          if (iy < 0 || iy >= ih) continue;
          for (int kx = 0; kx < kw; ++kx) {
            const int ix = x0 + kx;
            if (ix < 0 || ix >= iw) continue;
            const float* in_px =
                in + ((static_cast<std::size_t>(b) * ih + iy) * iw + ix) * ci;
            const float* w_k =
                w + (static_cast<std::size_t>(ky) * kw + kx) * ci * co;
            for (int c = 0; c < ci; ++c) {
              const double v = in_px[c];
              const float* w_row = w_k + static_cast<std::size_t>(c) * co;
              for (int k = 0; k < co; ++k) acc[k] += v * w_row[k];
            }
          }
        }
        float* o_px =
            o + ((static_cast<std::size_t>(b) * oh + oy) * ow + ox) * co;
        for (int k = 0; k < co; ++k) o_px[k] = static_cast<float>(acc[k]);
      }
    }
  }
  return out;
}

// Depthwise convolution with channel multiplier 1: weights (kh, kw, c_in, 1),
// each channel convolved with its own kernel. Shape rule matches conv2d.
inline Tensor depthwise_conv2d(const Tensor& input, const ConvParams& p) {
  p.validate();
  if (p.c_out() != 1) {
    throw std::invalid_argument("depthwise_conv2d: weights must be (kh,kw,c,1)");
  }
  if (input.c() != p.c_in()) {
    throw std::invalid_argument("depthwise_conv2d: channel mismatch");
  }
  const int ci = p.c_in();
  if (p.bias.size() != static_cast<std::size_t>(ci)) {
    throw std::invalid_argument("depthwise_conv2d: bias length != channels");
  }
  const int kh = p.kh(), kw = p.kw();
  const int oh = out_extent(input.h(), kh, p.stride, p.padding);
  const int ow = out_extent(input.w(), kw, p.stride, p.padding);
  const int pt = pad_before(input.h(), kh, p.stride, p.padding);
  const int pl = pad_before(input.w(), kw, p.stride, p.padding);

  Tensor out(input.n(), oh, ow, ci);
  std::vector<double> acc(ci);
  const float* in = input.data();
  const float* w = p.weights.data();
  float* o = out.data();
  const int ih = input.h(), iw = input.w();

  for (int b = 0; b < input.n(); ++b) {
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        for (int c = 0; c < ci; ++c) acc[c] = p.bias[c];
        const int y0 = oy * p.stride - pt;
        const int x0 = ox * p.stride - pl;
        for (int ky = 0; ky < kh; ++ky) {
          const int iy = y0 + ky;
          if (iy < 0 || iy >= ih) continue;
          for (int kx = 0; kx < kw; ++kx) {
            const int ix = x0 + kx;
            if (ix < 0 || ix >= iw) continue;
            const float* in_px =
                in + ((static_cast<std::size_t>(b) * ih + iy) * iw + ix) * ci;
            const float* w_px =
                w + (static_cast<std::size_t>(ky) * kw + kx) * ci;
            for (int c = 0; c < ci; ++c) acc[c] += double(in_px[c]) * w_px[c];
          }
        }
        float* o_px =
            o + ((static_cast<std::size_t>(b) * oh + oy) * ow + ox) * ci;
        for (int c = 0; c < ci; ++c) o_px[c] = static_cast<float>(acc[c]);
      }
    }
  }
  return out;
}

// Max over each (possibly padded) window. Padded positions act as -inf and
// are never selected.
inline Tensor maxpool2d(const Tensor& input, const PoolParams& p) {
  p.validate();
  const int k = p.kernel;
  const int oh = out_extent(input.h(), k, p.stride, p.padding);
  const int ow = out_extent(input.w(), k, p.stride, p.padding);
  const int pt = pad_before(input.h(), k, p.stride, p.padding);
  const int pl = pad_before(input.w(), k, p.stride, p.padding);
  const int ci = input.c();

  Tensor out(input.n(), oh, ow, ci);
  const float* in = input.data();
  float* o = out.data();
  const int ih = input.h(), iw = input.w();

  for (int b = 0; b < input.n(); ++b) {
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        float* o_px =
            o + ((static_cast<std::size_t>(b) * oh + oy) * ow + ox) * ci;
        for (int c = 0; c < ci; ++c) {
          o_px[c] = -std::numeric_limits<float>::infinity();
        }
        const int y0 = oy * p.stride - pt;
        const int x0 = ox * p.stride - pl;
        for (int ky = 0; ky < k; ++ky) {
          const int iy = y0 + ky;
          if (iy < 0 || iy >= ih) continue;
          for (int kx = 0; kx < k; ++kx) {
            const int ix = x0 + kx;
            if (ix < 0 || ix >= iw) continue;
            const float* in_px =
                in + ((static_cast<std::size_t>(b) * ih + iy) * iw + ix) * ci;
            for (int c = 0; c < ci; ++c) {
              o_px[c] = std::max(o_px[c], in_px[c]);
            }
          }
        }
      }
    }
  }
  return out;
}

inline Tensor relu6(const Tensor& input) {
  Tensor out = input;
  for (float& v : out.values()) v = std::min(std::max(v, 0.0f), 6.0f);
  return out;
}

// Per-channel x * scale[c] + offset[c]; stands in for folded batch norm.
inline Tensor affine_channel(const Tensor& input, std::span<const float> scale,
                             std::span<const float> offset) {
  const int ci = input.c();
  if (scale.size() != static_cast<std::size_t>(ci) ||
      offset.size() != static_cast<std::size_t>(ci)) {
    throw std::invalid_argument("affine_channel: scale/offset length mismatch");
  }
  Tensor out(input.n(), input.h(), input.w(), ci);
  const float* in = input.data();
  float* o = out.data();
  const std::size_t px = input.size() / ci;
  for (std::size_t i = 0; i < px; ++i) {
    const float* s = in + i * ci;
    float* d = o + i * ci;
    for (int c = 0; c < ci; ++c) d[c] = s[c] * scale[c] + offset[c];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reverse-mode VJPs. The cotangent has the forward output's shape; returned
// gradients match the corresponding forward inputs. Accumulation in double.
// ---------------------------------------------------------------------------

struct ConvGrads {
  Tensor d_input;
  Tensor d_weights;
  std::vector<float> d_bias;
};

namespace detail {

inline void check_cotangent(const Tensor& cot, const std::array<int, 4>& want,
                            const char* op) {
  if (cot.dims() != want) {
    throw std::invalid_argument(std::string(op) +
                                ": cotangent shape mismatch");
  }
}

}  // namespace detail

inline ConvGrads conv2d_vjp(const Tensor& input, const ConvParams& p,
                            const Tensor& cotangent) {
  p.validate();
  if (input.c() != p.c_in()) {
    throw std::invalid_argument("conv2d_vjp: channel mismatch");
  }
  const int kh = p.kh(), kw = p.kw(), ci = p.c_in(), co = p.c_out();
  const int oh = out_extent(input.h(), kh, p.stride, p.padding);
  const int ow = out_extent(input.w(), kw, p.stride, p.padding);
  detail::check_cotangent(cotangent, {input.n(), oh, ow, co}, "conv2d_vjp");
  const int pt = pad_before(input.h(), kh, p.stride, p.padding);
  const int pl = pad_before(input.w(), kw, p.stride, p.padding);

  std::vector<double> dw(p.weights.size(), 0.0);
  std::vector<double> din(input.size(), 0.0);
  std::vector<double> db(co, 0.0);
  const float* in = input.data();
  const float* w = p.weights.data();
  const float* g = cotangent.data();
  const int ih = input.h(), iw = input.w();

  for (int b = 0; b < input.n(); ++b) {
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        const float* g_px =
            g + ((static_cast<std::size_t>(b) * oh + oy) * ow + ox) * co;
        for (int k = 0; k < co; ++k) db[k] += g_px[k];
        const int y0 = oy * p.stride - pt;
        const int x0 = ox * p.stride - pl;
        for (int ky = 0; ky < kh; ++ky) {
          const int iy = y0 + ky;
          if (iy < 0 || iy >= ih) continue;
          for (int kx = 0; kx < kw; ++kx) {
            const int ix = x0 + kx;
            if (ix < 0 || ix >= iw) continue;
            const std::size_t in_off =
                ((static_cast<std::size_t>(b) * ih + iy) * iw + ix) * ci;
            const std::size_t w_off =
                (static_cast<std::size_t>(ky) * kw + kx) * ci * co;
            for (int c = 0; c < ci; ++c) {
              const double v = in[in_off + c];
              const float* w_row = w + w_off + static_cast<std::size_t>(c) * co;
              double* dw_row = dw.data() + w_off + static_cast<std::size_t>(c) * co;
              double s = 0.0;
              for (int k = 0; k < co; ++k) {
                const double cv = g_px[k];
                dw_row[k] += v * cv;
                s += w_row[k] * cv;
              }
              din[in_off + c] += s;
            }
          }
        }
      }
    }
  }

  ConvGrads out;
  out.d_input = Tensor(input.dims(), std::vector<float>(din.begin(), din.end()));
  out.d_weights =
      Tensor(p.weights.dims(), std::vector<float>(dw.begin(), dw.end()));
  out.d_bias.assign(db.begin(), db.end());
  return out;
}

inline ConvGrads depthwise_conv2d_vjp(const Tensor& input, const ConvParams& p,
                                      const Tensor& cotangent) {
  p.validate();
  if (p.c_out() != 1 || input.c() != p.c_in()) {
    throw std::invalid_argument("depthwise_conv2d_vjp: shape mismatch");
  }
  const int kh = p.kh(), kw = p.kw(), ci = p.c_in();
  const int oh = out_extent(input.h(), kh, p.stride, p.padding);
  const int ow = out_extent(input.w(), kw, p.stride, p.padding);
  detail::check_cotangent(cotangent, {input.n(), oh, ow, ci},
                          "depthwise_conv2d_vjp");
  const int pt = pad_before(input.h(), kh, p.stride, p.padding);
  const int pl = pad_before(input.w(), kw, p.stride, p.padding);

  std::vector<double> dw(p.weights.size(), 0.0);
  std::vector<double> din(input.size(), 0.0);
  std::vector<double> db(ci, 0.0);
  const float* in = input.data();
  const float* w = p.weights.data();
  const float* g = cotangent.data();
  const int ih = input.h(), iw = input.w();

  for (int b = 0; b < input.n(); ++b) {
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        const float* g_px =
            g + ((static_cast<std::size_t>(b) * oh + oy) * ow + ox) * ci;
        for (int c = 0; c < ci; ++c) db[c] += g_px[c];
        const int y0 = oy * p.stride - pt;
        const int x0 = ox * p.stride - pl;
        for (int ky = 0; ky < kh; ++ky) {
          const int iy = y0 + ky;
          if (iy < 0 || iy >= ih) continue;
          for (int kx = 0; kx < kw; ++kx) {
            const int ix = x0 + kx;
            if (ix < 0 || ix >= iw) continue;
            const std::size_t in_off =
                ((static_cast<std::size_t>(b) * ih + iy) * iw + ix) * ci;
            const std::size_t w_off =
                (static_cast<std::size_t>(ky) * kw + kx) * ci;
            for (int c = 0; c < ci; ++c) {
              const double cv = g_px[c];
              dw[w_off + c] += double(in[in_off + c]) * cv;
              din[in_off + c] += double(w[w_off + c]) * cv;
            }
          }
        }
      }
    }
  }

  ConvGrads out;
  out.d_input = Tensor(input.dims(), std::vector<float>(din.begin(), din.end()));
  out.d_weights =
      Tensor(p.weights.dims(), std::vector<float>(dw.begin(), dw.end()));
  out.d_bias.assign(db.begin(), db.end());
  return out;
}

// Gradient routes to the argmax element of each window; ties go to the first
// occurrence in row-major scan order so results are deterministic.
inline Tensor maxpool2d_vjp(const Tensor& input, const PoolParams& p,
                            const Tensor& cotangent) {
  p.validate();
  const int k = p.kernel;
  const int oh = out_extent(input.h(), k, p.stride, p.padding);
  const int ow = out_extent(input.w(), k, p.stride, p.padding);
  detail::check_cotangent(cotangent, {input.n(), oh, ow, input.c()},
                          "maxpool2d_vjp");
  const int pt = pad_before(input.h(), k, p.stride, p.padding);
  const int pl = pad_before(input.w(), k, p.stride, p.padding);
  const int ci = input.c();

  Tensor din(input.n(), input.h(), input.w(), ci);
  const float* in = input.data();
  const float* g = cotangent.data();
  float* d = din.data();
  const int ih = input.h(), iw = input.w();

  for (int b = 0; b < input.n(); ++b) {
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        const float* g_px =
            g + ((static_cast<std::size_t>(b) * oh + oy) * ow + ox) * ci;
        const int y0 = oy * p.stride - pt;
        const int x0 = ox * p.stride - pl;
        for (int c = 0; c < ci; ++c) {
          float best = -std::numeric_limits<float>::infinity();
          std::size_t best_off = 0;
          bool found = false;
          for (int ky = 0; ky < k; ++ky) {
            const int iy = y0 + ky;
            if (iy < 0 || iy >= ih) continue;
            for (int kx = 0; kx < k; ++kx) {
              const int ix = x0 + kx;
              if (ix < 0 || ix >= iw) continue;
              const std::size_t off =
                  ((static_cast<std::size_t>(b) * ih + iy) * iw + ix) * ci + c;
              if (!found || in[off] > best) {
                best = in[off];
                best_off = off;
                found = true;
              }
            }
          }
          if (found) d[best_off] += g_px[c];
        }
      }
    }
  }
  return din;
}

// Slope 1 on (0, 6), 0 elsewhere (subgradient 0 at the kinks).
inline Tensor relu6_vjp(const Tensor& input, const Tensor& cotangent) {
  detail::check_cotangent(cotangent, input.dims(), "relu6_vjp");
  Tensor din(input.n(), input.h(), input.w(), input.c());
  for (std::size_t i = 0; i < input.size(); ++i) {
    din[i] = (input[i] > 0.0f && input[i] < 6.0f) ? cotangent[i] : 0.0f;
  }
  return din;
}

struct AffineGrads {
  Tensor d_input;
  std::vector<float> d_scale;
  std::vector<float> d_offset;
};

inline AffineGrads affine_channel_vjp(const Tensor& input,
                                      std::span<const float> scale,
                                      const Tensor& cotangent) {
  detail::check_cotangent(cotangent, input.dims(), "affine_channel_vjp");
  const int ci = input.c();
  if (scale.size() != static_cast<std::size_t>(ci)) {
    throw std::invalid_argument("affine_channel_vjp: scale length mismatch");
  }
  AffineGrads out;
  out.d_input = Tensor(input.n(), input.h(), input.w(), ci);
  std::vector<double> ds(ci, 0.0), doff(ci, 0.0);
  const float* in = input.data();
  const float* g = cotangent.data();
  float* d = out.d_input.data();
  const std::size_t px = input.size() / ci;
  for (std::size_t i = 0; i < px; ++i) {
    const std::size_t base = i * ci;
    for (int c = 0; c < ci; ++c) {
      d[base + c] = g[base + c] * scale[c];
      ds[c] += double(in[base + c]) * g[base + c];
      doff[c] += g[base + c];
    }
  }
  out.d_scale.assign(ds.begin(), ds.end());
  out.d_offset.assign(doff.begin(), doff.end());
  return out;
}

}  // namespace ppn
