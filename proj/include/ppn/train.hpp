#pragma once

#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "ppn/dataset.hpp"
#include "ppn/detector.hpp"
#include "ppn/graph.hpp"
#include "ppn/losses.hpp"
#include "ppn/rng.hpp"

namespace ppn {

// Fan-in-scaled uniform init; biases and affine offsets start at zero, affine
// scales at one. Each parameter draws from its own PCG stream keyed by name,
// so initialization does not depend on iteration order.
inline WeightStore init_weights(const GraphSpec& g, std::uint64_t seed) {
  WeightStore store;
  for (const ParamSpec& spec : param_specs(g)) {
    Param p;
    p.dims = spec.dims;
    std::size_t n = 1;
    for (auto d : spec.dims) n *= d;
    p.data.assign(n, 0.0f);
    switch (spec.role) {
      case ParamSpec::Role::kWeight: {
        Pcg32 rng(seed, fnv1a(spec.name.c_str()));
        const float limit = std::sqrt(6.0f / static_cast<float>(spec.fan_in));
        for (float& v : p.data) v = rng.uniform(-limit, limit);
        break;
      }
      case ParamSpec::Role::kScale:
        for (float& v : p.data) v = 1.0f;
        break;
      case ParamSpec::Role::kBias:
      case ParamSpec::Role::kOffset:
        break;  // zero
    }
    store.put(spec.name, std::move(p));
  }
  return store;
}

// Classification-head biases start at -ln((1-p)/p), p = 0.01, so an untrained
// model emits ~1% scores everywhere instead of flooding the focal loss.
inline constexpr float kClassBiasPrior = -4.59511985f;

inline WeightStore init_detector_weights(const Detector& det,
                                         std::uint64_t seed) {
  WeightStore store = init_weights(det.graph, seed);
  for (const LevelInfo& l : det.levels) {
    const int idx = det.graph.layer_index(l.cls_layer);
    const std::string key = det.graph.layers[idx].key() + "/b";
    for (float& v : store.at(key).data) v = kClassBiasPrior;
  }
  return store;
}

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(int step, const std::string& what)
      : std::runtime_error("training diverged at step " + std::to_string(step) +
                           ": " + what),
        step(step) {}
  int step;
};

struct TrainResult {
  WeightStore weights;
  std::vector<LossBreakdown> curve;  // one entry per step
};

inline constexpr float kMomentum = 0.9f;
inline constexpr double kGradClipNorm = 10.0;

// Momentum SGD over random minibatches. Deterministic for a given
// (config, seed): fixed init streams, fixed batch sampling stream,
// single-threaded fixed-order math. Pass `initial` to resume from existing
// weights instead of the seeded initialization.
inline TrainResult train(const Detector& det, const Dataset& data, int steps,
                         std::uint64_t seed,
                         const WeightStore* initial = nullptr) {
  if (data.size() == 0) throw std::invalid_argument("train: empty dataset");
  if (data.image_size != det.config.input_size) {
    throw std::invalid_argument("train: dataset image size does not match model input");
  }
  const RunConfig& cfg = det.config;
  const int k = cfg.num_classes;
  const FocalParams focal{cfg.loss_alpha, cfg.loss_gamma};

  TrainResult result;
  result.weights = initial != nullptr ? *initial : init_detector_weights(det, seed);

  // Anchors and groundtruth are fixed, so matchings are computed once.
  std::vector<Matching> matchings;
  std::vector<std::vector<int>> gt_classes(data.size());
  std::vector<BoxList> gt_boxes(data.size());
  matchings.reserve(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    for (const Annotation& a : data.annotations[i]) {
      gt_boxes[i].push_back(a.box);
      gt_classes[i].push_back(a.cls);
    }
    matchings.push_back(match(det.anchors, gt_boxes[i]));
  }

  std::map<std::string, std::vector<double>> velocity;
  for (const auto& [name, p] : result.weights.entries()) {
    velocity[name].assign(p.data.size(), 0.0);
  }

  Pcg32 batch_rng(seed, fnv1a("minibatch"));
  const int batch = std::min<int>(cfg.train_batch, static_cast<int>(data.size()));

  for (int step = 0; step < steps; ++step) {
    std::vector<int> idx(batch);
    for (int& i : idx) i = batch_rng.next_below(static_cast<int>(data.size()));
    const Tensor input = batch_to_tensor(data, idx);

    DetectorForward fwd = detector_forward(det, result.weights, input);

    std::vector<Tensor> cot_cls, cot_box;
    for (std::size_t li = 0; li < fwd.cls.size(); ++li) {
      const Tensor& c = fwd.cls[li];
      const Tensor& b = fwd.box[li];
      cot_cls.emplace_back(c.n(), c.h(), c.w(), c.c());
      cot_box.emplace_back(b.n(), b.h(), b.w(), b.c());
    }

    LossBreakdown mean;
    for (int bi = 0; bi < batch; ++bi) {
      const int image = idx[bi];
      const std::vector<float> logits = flatten_levels(det, fwd.cls, bi, k);
      const std::vector<float> preds = flatten_levels(det, fwd.box, bi, 4);
      TotalLossGrads g =
          total_loss_grad(logits, preds, matchings[image], det.anchors,
                          gt_boxes[image], gt_classes[image], k, focal);
      mean.classification += g.breakdown.classification / batch;
      mean.localization += g.breakdown.localization / batch;
      mean.normalizer += g.breakdown.normalizer;
      for (float& v : g.d_class_logits) v /= batch;
      for (float& v : g.d_box_preds) v /= batch;
      unflatten_levels(det, g.d_class_logits, k, bi, cot_cls);
      unflatten_levels(det, g.d_box_preds, 4, bi, cot_box);
    }
    mean.total = mean.classification + mean.localization;
    if (!std::isfinite(mean.total)) {
      throw TrainingDiverged(step, "non-finite loss");
    }
    result.curve.push_back(mean);

    std::map<std::string, Tensor> cotangents;
    for (std::size_t li = 0; li < det.levels.size(); ++li) {
      cotangents[det.levels[li].cls_layer] = std::move(cot_cls[li]);
      cotangents[det.levels[li].box_layer] = std::move(cot_box[li]);
    }
    GradientStore grads =
        backward(det.graph, result.weights, fwd.trace, cotangents);

    double sq_norm = 0.0;
    for (const auto& [name, g] : grads.entries()) {
      for (double v : g) sq_norm += v * v;
    }
    if (!std::isfinite(sq_norm)) {
      throw TrainingDiverged(step, "non-finite gradient");
    }
    const double norm = std::sqrt(sq_norm);
    const double clip = norm > kGradClipNorm ? kGradClipNorm / norm : 1.0;

    for (auto& [name, g] : grads.entries()) {
      std::vector<double>& v = velocity.at(name);
      std::vector<float>& w = result.weights.at(name).data;
      for (std::size_t i = 0; i < g.size(); ++i) {
        v[i] = kMomentum * v[i] + g[i] * clip;
        w[i] = static_cast<float>(w[i] - cfg.train_lr * v[i]);
      }
    }
  }
  return result;
}

}  // namespace ppn
