#pragma once

#include <iomanip>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "ppn/graph.hpp"

namespace ppn {

struct LayerStat {
  std::string name;
  std::string stage;
  long long params = 0;
  long long flops = 0;
};

struct ModelStats {
  std::vector<LayerStat> layers;
  long long total_params = 0;
  long long total_flops = 0;

  long long stage_params(const std::string& stage) const {
    long long n = 0;
    for (const auto& l : layers) {
      if (l.stage == stage) n += l.params;
    }
    return n;
  }
  long long stage_flops(const std::string& stage) const {
    long long n = 0;
    for (const auto& l : layers) {
      if (l.stage == stage) n += l.flops;
    }
    return n;
  }
};

// Static parameter and FLOP accounting over a graph; pure shape arithmetic,
// no weights or tensor allocation.
//
// Conventions: one multiply-accumulate costs 2 FLOPs; bias adds, affine,
// activations and pooling cost 0. Parameters shared across layers (same
// weight key) are counted once, at the first layer that uses them, while
// FLOPs are charged to every layer instance.
inline ModelStats analyze_graph(const GraphSpec& g) {
  const std::vector<Shape3> shapes = infer_shapes(g);
  ModelStats stats;
  std::set<std::string> counted;
  for (std::size_t i = 0; i < g.layers.size(); ++i) {
    const LayerSpec& l = g.layers[i];
    const Shape3& out = shapes[i];
    LayerStat s;
    s.name = l.name;
    s.stage = l.stage;
    const bool first_use = l.has_params() && counted.insert(l.key()).second;
    switch (l.kind) {
      case LayerKind::kConv:
        if (first_use) {
          s.params = 1LL * l.conv.kh * l.conv.kw * l.conv.c_in * l.conv.c_out +
                     l.conv.c_out;
        }
        s.flops = 2LL * out.h * out.w * l.conv.kh * l.conv.kw * l.conv.c_in *
                  l.conv.c_out;
        break;
      case LayerKind::kDepthwiseConv:
        if (first_use) {
          s.params = 1LL * l.conv.kh * l.conv.kw * l.conv.c_in + l.conv.c_in;
        }
        s.flops = 2LL * out.h * out.w * l.conv.kh * l.conv.kw * l.conv.c_in;
        break;
      case LayerKind::kAffine:
        if (first_use) s.params = 2LL * l.conv.c_in;
        break;
      case LayerKind::kRelu6:
      case LayerKind::kMaxPool:
        break;  // zero parameters, zero FLOPs (max pool has no multiply-adds)
    }
    stats.total_params += s.params;
    stats.total_flops += s.flops;
    stats.layers.push_back(std::move(s));
  }
  return stats;
}

inline ModelStats count_params(const GraphSpec& g) { return analyze_graph(g); }
inline ModelStats count_flops(const GraphSpec& g) { return analyze_graph(g); }

struct CompareRow {
  std::string name;
  long long params_a = 0;
  long long params_b = 0;
  long long flops_a = 0;
  long long flops_b = 0;
};

struct CompareReport {
  double param_ratio = 0.0;  // a over b
  double flop_ratio = 0.0;
  std::vector<CompareRow> rows;
};

inline CompareReport compare(const ModelStats& a, const ModelStats& b) {
  CompareReport r;
  r.param_ratio = b.total_params > 0
                      ? double(a.total_params) / double(b.total_params)
                      : (a.total_params > 0 ? 0.0 : 1.0);
  r.flop_ratio = b.total_flops > 0
                     ? double(a.total_flops) / double(b.total_flops)
                     : (a.total_flops > 0 ? 0.0 : 1.0);
  std::map<std::string, CompareRow> rows;
  std::vector<std::string> order;
  for (const LayerStat& l : a.layers) {
    if (!rows.count(l.name)) order.push_back(l.name);
    CompareRow& row = rows[l.name];
    row.name = l.name;
    row.params_a += l.params;
    row.flops_a += l.flops;
  }
  for (const LayerStat& l : b.layers) {
    if (!rows.count(l.name)) order.push_back(l.name);
    CompareRow& row = rows[l.name];
    row.name = l.name;
    row.params_b += l.params;
    row.flops_b += l.flops;
  }
  for (const std::string& n : order) r.rows.push_back(rows[n]);
  return r;
}

inline std::string format_stats(const ModelStats& stats) {
  std::ostringstream os;
  os << std::left << std::setw(36) << "layer" << std::right << std::setw(12)
     << "params" << std::setw(16) << "flops" << "\n";
  for (const LayerStat& l : stats.layers) {
    if (l.params == 0 && l.flops == 0) continue;
    os << std::left << std::setw(36) << l.name << std::right << std::setw(12)
       << l.params << std::setw(16) << l.flops << "\n";
  }
  os << std::left << std::setw(36) << "TOTAL" << std::right << std::setw(12)
     << stats.total_params << std::setw(16) << stats.total_flops << "\n";
  os << "param_total=" << stats.total_params << "\n";
  os << "flop_total=" << stats.total_flops << "\n";
  return os.str();
}

inline std::string format_compare(const ModelStats& a, const ModelStats& b) {
  const CompareReport r = compare(a, b);
  std::ostringstream os;
  os << std::left << std::setw(36) << "layer" << std::right << std::setw(12)
     << "params_a" << std::setw(12) << "params_b" << std::setw(16) << "flops_a"
     << std::setw(16) << "flops_b" << "\n";
  for (const CompareRow& row : r.rows) {
    if (row.params_a == 0 && row.params_b == 0 && row.flops_a == 0 &&
        row.flops_b == 0) {
      continue;
    }
    os << std::left << std::setw(36) << row.name << std::right << std::setw(12)
       << row.params_a << std::setw(12) << row.params_b << std::setw(16)
       << row.flops_a << std::setw(16) << row.flops_b << "\n";
  }
  os << std::setprecision(6) << "param_ratio=" << r.param_ratio << "\n"
     << "flop_ratio=" << r.flop_ratio << "\n";
  return os.str();
}

}  // namespace ppn
