#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace ppn {

// Dense rank-4 float tensor in NHWC layout (batch, height, width, channels).
// Every feature map, image batch and convolution weight in the library is one
// of these; value semantics throughout.
class Tensor {
 public:
  Tensor() : dims_{0, 0, 0, 0} {}

  Tensor(int n, int h, int w, int c, float fill = 0.0f)
      : dims_{n, h, w, c} {
    if (n < 0 || h < 0 || w < 0 || c < 0) {
      throw std::invalid_argument("Tensor: negative dimension");
    }
    data_.assign(static_cast<std::size_t>(n) * h * w * c, fill);
  }

  Tensor(const std::array<int, 4>& dims, std::vector<float> data)
      : dims_(dims), data_(std::move(data)) {
    if (data_.size() != count(dims_)) {
      throw std::invalid_argument("Tensor: data length does not match dims");
    }
  }

  int n() const { return dims_[0]; }
  int h() const { return dims_[1]; }
  int w() const { return dims_[2]; }
  int c() const { return dims_[3]; }
  const std::array<int, 4>& dims() const { return dims_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  float& at(int b, int y, int x, int ch) {
    return data_[index(b, y, x, ch)];
  }
  float at(int b, int y, int x, int ch) const {
    return data_[index(b, y, x, ch)];
  }

  float* data() { return data_.data(); }
  const float* data() const { return data_.data(); }
  std::vector<float>& values() { return data_; }
  const std::vector<float>& values() const { return data_; }

  float& operator[](std::size_t i) { return data_[i]; }
  float operator[](std::size_t i) const { return data_[i]; }

  bool same_dims(const Tensor& o) const { return dims_ == o.dims_; }

  bool all_finite() const {
    for (float v : data_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  std::string dims_str() const {
    return std::to_string(dims_[0]) + "x" + std::to_string(dims_[1]) + "x" +
           std::to_string(dims_[2]) + "x" + std::to_string(dims_[3]);
  }

  static std::size_t count(const std::array<int, 4>& d) {
    return static_cast<std::size_t>(d[0]) * d[1] * d[2] * d[3];
  }

 private:
  std::size_t index(int b, int y, int x, int ch) const {
    return ((static_cast<std::size_t>(b) * dims_[1] + y) * dims_[2] + x) *
               dims_[3] +
           ch;
  }

  std::array<int, 4> dims_;
  std::vector<float> data_;
};

}  // namespace ppn
