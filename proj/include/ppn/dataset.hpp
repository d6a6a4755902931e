#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ppn/boxes.hpp"
#include "ppn/config.hpp"
#include "ppn/ppm.hpp"
#include "ppn/rng.hpp"
#include "ppn/tensor.hpp"

namespace ppn {

struct SyntheticSceneConfig {
  int image_size = 64;
  int num_images = 500;
  int num_classes = 3;  // at most 5 (one distinct color per class)
  std::vector<SizeBucket> scale_distribution = {{0.15f, 0.85f, 1.0f}};
  std::uint64_t seed = 1;

  void validate() const {
    if (image_size < 8) throw std::invalid_argument("SyntheticSceneConfig: image too small");
    if (num_images < 1) throw std::invalid_argument("SyntheticSceneConfig: need images");
    if (num_classes < 1 || num_classes > 5) {
      throw std::invalid_argument("SyntheticSceneConfig: 1..5 classes supported");
    }
    float p = 0.0f;
    for (const SizeBucket& b : scale_distribution) {
      if (!(b.lo > 0.0f && b.lo < b.hi && b.hi < 1.0f)) {
        throw std::invalid_argument("SyntheticSceneConfig: bad size range");
      }
      p += b.prob;
    }
    if (std::abs(p - 1.0f) > 1e-5f) {
      throw std::invalid_argument("SyntheticSceneConfig: probabilities must sum to 1");
    }
  }
};

struct Annotation {
  Box box;
  int cls = 0;
};

struct Dataset {
  int image_size = 0;
  std::vector<std::vector<std::uint8_t>> images;  // rgb bytes per image
  std::vector<std::vector<Annotation>> annotations;

  std::size_t size() const { return images.size(); }
};

// One saturated fill color per class.
inline const std::array<std::array<std::uint8_t, 3>, 5>& class_palette() {
  static const std::array<std::array<std::uint8_t, 3>, 5> palette = {{
      {220, 40, 40},
      {40, 200, 40},
      {50, 70, 230},
      {230, 210, 40},
      {210, 50, 210},
  }};
  return palette;
}

// Uniform-noise background plus 1..4 solid colored rectangles, class = color.
// Deterministic for a given seed; each image draws from its own PCG stream so
// the content of image i never depends on how many images precede it.
inline Dataset generate_dataset(const SyntheticSceneConfig& cfg) {
  cfg.validate();
  Dataset ds;
  ds.image_size = cfg.image_size;
  const int sz = cfg.image_size;

  for (int idx = 0; idx < cfg.num_images; ++idx) {
    Pcg32 rng(cfg.seed, 0x5CE11E5ULL + static_cast<std::uint64_t>(idx));
    std::vector<std::uint8_t> img(static_cast<std::size_t>(sz) * sz * 3);
    // Mid-gray uniform noise; a narrower band than full range keeps random
    // background patches from impersonating the saturated class colors.
    for (auto& b : img) {
      b = static_cast<std::uint8_t>(88 + (rng.next_u32() % 80));
    }

    // Sample every rectangle's size up front so the bucket mixture is exact,
    // position-retry against overlaps, then draw larger boxes first:
    // rectangles are opaque, and big-over-small overdraw would contradict
    // the smaller box's label.
    std::vector<Annotation> anns;
    const int count = 1 + rng.next_below(4);
    for (int r = 0; r < count; ++r) {
      float pick = rng.next_float();
      const SizeBucket* bucket = &cfg.scale_distribution.back();
      for (const SizeBucket& b : cfg.scale_distribution) {
        if (pick < b.prob) {
          bucket = &b;
          break;
        }
        pick -= b.prob;
      }
      const float size = rng.uniform(bucket->lo, bucket->hi);
      const float jitter = std::exp(rng.uniform(-0.09f, 0.09f));
      const float w = std::clamp(size * jitter, 2.0f / sz, 0.98f);
      const float h = std::clamp(size / jitter, 2.0f / sz, 0.98f);
      Box box;
      for (int attempt = 0; attempt < 20; ++attempt) {
        const float cy = rng.uniform(0.5f * h, 1.0f - 0.5f * h);
        const float cx = rng.uniform(0.5f * w, 1.0f - 0.5f * w);
        box = Box{cy - 0.5f * h, cx - 0.5f * w, cy + 0.5f * h, cx + 0.5f * w};
        bool crowded = false;
        for (const Annotation& a : anns) {
          if (iou(a.box, box) > 0.4f) {
            crowded = true;
            break;
          }
        }
        if (!crowded) break;  // the last attempt is accepted regardless
      }
      const int cls = rng.next_below(cfg.num_classes);
      anns.push_back({box, cls});
    }

    std::vector<int> draw_order(anns.size());
    for (std::size_t i = 0; i < anns.size(); ++i) draw_order[i] = int(i);
    std::stable_sort(draw_order.begin(), draw_order.end(), [&](int a, int b) {
      return anns[a].box.area() > anns[b].box.area();
    });
    for (int ai : draw_order) {
      const Box& box = anns[ai].box;
      const auto& color = class_palette()[anns[ai].cls];
      const int y0 = std::clamp(int(std::lround(box.ymin * sz)), 0, sz - 1);
      const int y1 = std::clamp(int(std::lround(box.ymax * sz)), y0 + 1, sz);
      const int x0 = std::clamp(int(std::lround(box.xmin * sz)), 0, sz - 1);
      const int x1 = std::clamp(int(std::lround(box.xmax * sz)), x0 + 1, sz);
      for (int y = y0; y < y1; ++y) {
        for (int x = x0; x < x1; ++x) {
          const std::size_t off = (static_cast<std::size_t>(y) * sz + x) * 3;
          img[off + 0] = color[0];
          img[off + 1] = color[1];
          img[off + 2] = color[2];
        }
      }
    }
    ds.images.push_back(std::move(img));
    ds.annotations.push_back(std::move(anns));
  }
  return ds;
}

// Pixel normalization used everywhere: byte x maps to 2x/255 - 1.
inline Tensor image_to_tensor(const std::vector<std::uint8_t>& rgb, int size) {
  Tensor t(1, size, size, 3);
  for (std::size_t i = 0; i < rgb.size(); ++i) {
    t[i] = 2.0f * rgb[i] / 255.0f - 1.0f;
  }
  return t;
}

inline Tensor batch_to_tensor(const Dataset& ds, std::span<const int> indices) {
  const int sz = ds.image_size;
  Tensor t(static_cast<int>(indices.size()), sz, sz, 3);
  const std::size_t plane = static_cast<std::size_t>(sz) * sz * 3;
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const std::vector<std::uint8_t>& img = ds.images[indices[i]];
    for (std::size_t j = 0; j < plane; ++j) {
      t[i * plane + j] = 2.0f * img[j] / 255.0f - 1.0f;
    }
  }
  return t;
}

// On-disk layout: img_00000.ppm ... plus groundtruth.txt with one line per
// box: image_index class ymin xmin ymax xmax.
inline std::string dataset_image_name(int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "img_%05d.ppm", index);
  return buf;
}

inline void save_dataset(const Dataset& ds, const std::string& dir) {
  std::filesystem::create_directories(dir);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    PpmImage img;
    img.width = ds.image_size;
    img.height = ds.image_size;
    img.rgb = ds.images[i];
    write_ppm(dir + "/" + dataset_image_name(static_cast<int>(i)), img);
  }
  std::ofstream gt(dir + "/groundtruth.txt", std::ios::binary);
  if (!gt) throw std::runtime_error("cannot write " + dir + "/groundtruth.txt");
  char line[160];
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (const Annotation& a : ds.annotations[i]) {
      std::snprintf(line, sizeof(line), "%zu %d %.6f %.6f %.6f %.6f\n", i,
                    a.cls, a.box.ymin, a.box.xmin, a.box.ymax, a.box.xmax);
      gt << line;
    }
  }
}

inline Dataset load_dataset(const std::string& dir) {
  Dataset ds;
  for (int i = 0;; ++i) {
    const std::string path = dir + "/" + dataset_image_name(i);
    if (!std::filesystem::exists(path)) break;
    PpmImage img = read_ppm(path);
    if (img.width != img.height) {
      throw std::runtime_error("dataset images must be square: " + path);
    }
    if (ds.image_size == 0) {
      ds.image_size = img.width;
    } else if (img.width != ds.image_size) {
      throw std::runtime_error("dataset images have mixed sizes in " + dir);
    }
    ds.images.push_back(std::move(img.rgb));
  }
  if (ds.images.empty()) {
    throw std::runtime_error("no img_*.ppm files found in " + dir);
  }
  ds.annotations.resize(ds.images.size());
  std::ifstream gt(dir + "/groundtruth.txt", std::ios::binary);
  if (!gt) throw std::runtime_error("missing groundtruth.txt in " + dir);
  std::string line;
  int lineno = 0;
  while (std::getline(gt, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::size_t img_index = 0;
    Annotation a;
    if (!(ss >> img_index >> a.cls >> a.box.ymin >> a.box.xmin >> a.box.ymax >>
          a.box.xmax)) {
      throw std::runtime_error("groundtruth.txt line " + std::to_string(lineno) +
                               " is malformed");
    }
    if (img_index >= ds.images.size()) {
      throw std::runtime_error("groundtruth.txt line " + std::to_string(lineno) +
                               " references missing image");
    }
    ds.annotations[img_index].push_back(a);
  }
  return ds;
}

}  // namespace ppn
