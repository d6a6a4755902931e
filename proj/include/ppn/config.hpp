#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ppn/boxes.hpp"

namespace ppn {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SizeBucket {
  float lo = 0.15f;
  float hi = 0.85f;
  float prob = 1.0f;
};

// Everything a run needs, parsed from a key=value config file. Unknown keys
// are rejected; the model.* core keys are mandatory, the rest have defaults.
struct RunConfig {
  std::string mode;                     // ppn | ssd
  std::string backbone;                 // mobilenet_v1 | tiny
  float depth_multiplier = 1.0f;
  int input_size = 0;
  int num_levels = 0;
  int anchors_per_location = 6;
  int num_classes = 0;
  int head_depth = 512;
  int tiny_base_channels = 16;

  AnchorConfig anchor;

  float loss_alpha = 0.25f;
  float loss_gamma = 2.0f;

  int train_steps = 100;
  float train_lr = 0.05f;
  std::uint64_t train_seed = 1;
  int train_batch = 4;

  float nms_iou = 0.6f;
  float score_threshold = 0.3f;
  int max_detections = 100;

  int data_num_images = 500;
  std::uint64_t data_seed = 1;
  std::vector<SizeBucket> data_scale_distribution = {{0.15f, 0.85f, 1.0f}};

  void validate() const {
    if (mode != "ppn" && mode != "ssd") {
      throw ConfigError("model.mode must be ppn or ssd");
    }
    if (backbone != "mobilenet_v1" && backbone != "tiny") {
      throw ConfigError("model.backbone must be mobilenet_v1 or tiny");
    }
    if (depth_multiplier <= 0.0f) {
      throw ConfigError("model.depth_multiplier must be positive");
    }
    if (input_size < 16) throw ConfigError("model.input_size must be >= 16");
    if (num_levels < 1) throw ConfigError("model.num_levels must be >= 1");
    if (num_classes < 1) throw ConfigError("model.num_classes must be >= 1");
    if (head_depth < 1) throw ConfigError("model.head_depth must be >= 1");
    if (tiny_base_channels < 1) {
      throw ConfigError("model.tiny_base_channels must be >= 1");
    }
    if (!(anchor.min_scale > 0.0f && anchor.min_scale <= anchor.max_scale &&
          anchor.max_scale <= 1.0f)) {
      throw ConfigError("anchor scales must satisfy 0 < min <= max <= 1");
    }
    if (anchor.aspect_ratios.empty()) {
      throw ConfigError("anchor.aspect_ratios must not be empty");
    }
    for (float r : anchor.aspect_ratios) {
      if (r <= 0.0f) throw ConfigError("anchor.aspect_ratios must be positive");
    }
    if (anchors_per_location != anchor.anchors_per_cell()) {
      throw ConfigError(
          "model.anchors_per_location must equal the anchor config's count (" +
          std::to_string(anchor.anchors_per_cell()) + ")");
    }
    if (loss_alpha < 0.0f || loss_alpha > 1.0f) {
      throw ConfigError("loss.alpha must be in [0,1]");
    }
    if (loss_gamma < 0.0f) throw ConfigError("loss.gamma must be >= 0");
    if (train_steps < 0) throw ConfigError("train.steps must be >= 0");
    if (train_lr <= 0.0f) throw ConfigError("train.lr must be positive");
    if (train_batch < 1) throw ConfigError("train.batch must be >= 1");
    if (nms_iou < 0.0f || nms_iou > 1.0f) {
      throw ConfigError("postprocess.nms_iou must be in [0,1]");
    }
    if (score_threshold < 0.0f || score_threshold >= 1.0f) {
      throw ConfigError("postprocess.score_threshold must be in [0,1)");
    }
    if (max_detections < 1) {
      throw ConfigError("postprocess.max_detections must be >= 1");
    }
    if (data_num_images < 1) throw ConfigError("data.num_images must be >= 1");
    float prob_sum = 0.0f;
    for (const SizeBucket& b : data_scale_distribution) {
      if (!(b.lo > 0.0f && b.lo < b.hi && b.hi < 1.0f)) {
        throw ConfigError("data.scale_distribution ranges must satisfy 0 < lo < hi < 1");
      }
      if (b.prob < 0.0f) throw ConfigError("data.scale_distribution probabilities must be >= 0");
      prob_sum += b.prob;
    }
    if (std::abs(prob_sum - 1.0f) > 1e-5f) {
      throw ConfigError("data.scale_distribution probabilities must sum to 1");
    }
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

inline float parse_float(const std::string& key, const std::string& v) {
  // Accept simple fractions so aspect ratios can be written as 1/3.
  std::size_t slash = v.find('/');
  try {
    std::size_t pos = 0;
    if (slash != std::string::npos) {
      float num = std::stof(v.substr(0, slash));
      float den = std::stof(v.substr(slash + 1), &pos);
      if (pos != v.size() - slash - 1 || den == 0.0f) throw std::invalid_argument("");
      return num / den;
    }
    float x = std::stof(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("");
    return x;
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + ": cannot parse number '" + v + "'");
  }
}

inline int parse_int(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    long x = std::stol(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("");
    return static_cast<int>(x);
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + ": cannot parse integer '" + v + "'");
  }
}

inline std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    unsigned long long x = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("");
    return x;
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + ": cannot parse integer '" + v + "'");
  }
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "on") return true;
  if (v == "false" || v == "0" || v == "off") return false;
  throw ConfigError("config key " + key + ": cannot parse boolean '" + v + "'");
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace detail

// One `key = value` pair per line; `#` starts a comment. Every malformed
// input yields a ConfigError with the offending line, never a crash.
inline RunConfig parse_config_text(const std::string& text) {
  RunConfig cfg;
  std::set<std::string> present;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    std::size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) +
                        ": expected key = value, got '" + line + "'");
    }
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    if (key.empty() || value.empty()) {
      throw ConfigError("config line " + std::to_string(lineno) +
                        ": empty key or value");
    }
    present.insert(key);

    using namespace detail;
    if (key == "model.mode") {
      cfg.mode = value;
    } else if (key == "model.backbone") {
      cfg.backbone = value;
    } else if (key == "model.depth_multiplier") {
      cfg.depth_multiplier = parse_float(key, value);
    } else if (key == "model.input_size") {
      cfg.input_size = parse_int(key, value);
    } else if (key == "model.num_levels") {
      cfg.num_levels = parse_int(key, value);
    } else if (key == "model.anchors_per_location") {
      cfg.anchors_per_location = parse_int(key, value);
    } else if (key == "model.num_classes") {
      cfg.num_classes = parse_int(key, value);
    } else if (key == "model.head_depth") {
      cfg.head_depth = parse_int(key, value);
    } else if (key == "model.tiny_base_channels") {
      cfg.tiny_base_channels = parse_int(key, value);
    } else if (key == "anchor.min_scale") {
      cfg.anchor.min_scale = parse_float(key, value);
    } else if (key == "anchor.max_scale") {
      cfg.anchor.max_scale = parse_float(key, value);
    } else if (key == "anchor.aspect_ratios") {
      cfg.anchor.aspect_ratios.clear();
      for (const std::string& part : split(value, ',')) {
        cfg.anchor.aspect_ratios.push_back(parse_float(key, detail::trim(part)));
      }
    } else if (key == "anchor.interpolated_scale_anchor") {
      cfg.anchor.interpolated_scale_anchor = parse_bool(key, value);
    } else if (key == "loss.alpha") {
      cfg.loss_alpha = parse_float(key, value);
    } else if (key == "loss.gamma") {
      cfg.loss_gamma = parse_float(key, value);
    } else if (key == "train.steps") {
      cfg.train_steps = parse_int(key, value);
    } else if (key == "train.lr") {
      cfg.train_lr = parse_float(key, value);
    } else if (key == "train.seed") {
      cfg.train_seed = parse_u64(key, value);
    } else if (key == "train.batch") {
      cfg.train_batch = parse_int(key, value);
    } else if (key == "postprocess.nms_iou") {
      cfg.nms_iou = parse_float(key, value);
    } else if (key == "postprocess.score_threshold") {
      cfg.score_threshold = parse_float(key, value);
    } else if (key == "postprocess.max_detections") {
      cfg.max_detections = parse_int(key, value);
    } else if (key == "data.num_images") {
      cfg.data_num_images = parse_int(key, value);
    } else if (key == "data.seed") {
      cfg.data_seed = parse_u64(key, value);
    } else if (key == "data.scale_distribution") {
      cfg.data_scale_distribution.clear();
      for (const std::string& part : split(value, ',')) {
        const std::vector<std::string> f = split(detail::trim(part), ':');
        if (f.size() != 3) {
          throw ConfigError("config key " + key +
                            ": buckets must be lo:hi:prob, got '" + part + "'");
        }
        cfg.data_scale_distribution.push_back(
            {parse_float(key, detail::trim(f[0])),
             parse_float(key, detail::trim(f[1])),
             parse_float(key, detail::trim(f[2]))});
      }
    } else {
      throw ConfigError("config line " + std::to_string(lineno) +
                        ": unknown key '" + key + "'");
    }
  }

  for (const char* required :
       {"model.mode", "model.backbone", "model.input_size", "model.num_levels",
        "model.num_classes"}) {
    if (!present.count(required)) {
      throw ConfigError(std::string("config: missing required key ") + required);
    }
  }
  cfg.validate();
  return cfg;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

}  // namespace ppn
