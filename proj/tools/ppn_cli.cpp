// Command-line front end: analyze | train | eval | infer | bench | dataset.
// Exit codes: 0 ok, 2 input error, 3 runtime failure.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "ppn/analyzer.hpp"
#include "ppn/config.hpp"
#include "ppn/dataset.hpp"
#include "ppn/detector.hpp"
#include "ppn/eval.hpp"
#include "ppn/ppm.hpp"
#include "ppn/rng.hpp"
#include "ppn/train.hpp"
#include "ppn/weights_io.hpp"

namespace {

using nlohmann::json;

ppn::SyntheticSceneConfig scene_config(const ppn::RunConfig& cfg) {
  if (cfg.num_classes > 5) {
    throw ppn::ConfigError(
        "synthetic data supports at most 5 classes; pass --dataset instead");
  }
  ppn::SyntheticSceneConfig sc;
  sc.image_size = cfg.input_size;
  sc.num_images = cfg.data_num_images;
  sc.num_classes = cfg.num_classes;
  sc.scale_distribution = cfg.data_scale_distribution;
  sc.seed = cfg.data_seed;
  return sc;
}

ppn::PostprocessParams postprocess(const ppn::RunConfig& cfg) {
  return {cfg.score_threshold, cfg.nms_iou, cfg.max_detections};
}

int cmd_analyze(const std::string& config_path, const std::string& compare_path) {
  const ppn::Detector det = ppn::build_detector(ppn::load_config(config_path));
  const ppn::ModelStats stats = ppn::analyze_graph(det.graph);
  if (compare_path.empty()) {
    std::cout << ppn::format_stats(stats);
    return 0;
  }
  const ppn::Detector other = ppn::build_detector(ppn::load_config(compare_path));
  const ppn::ModelStats other_stats = ppn::analyze_graph(other.graph);
  std::cout << "== " << config_path << " ==\n" << ppn::format_stats(stats);
  std::cout << "== " << compare_path << " ==\n" << ppn::format_stats(other_stats);
  std::cout << "== comparison (first over second) ==\n"
            << ppn::format_compare(stats, other_stats);
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& out_path,
              const std::string& dataset_dir) {
  const ppn::RunConfig cfg = ppn::load_config(config_path);
  const ppn::Detector det = ppn::build_detector(cfg);
  const ppn::Dataset data = dataset_dir.empty()
                                ? ppn::generate_dataset(scene_config(cfg))
                                : ppn::load_dataset(dataset_dir);

  const ppn::TrainResult result =
      ppn::train(det, data, cfg.train_steps, cfg.train_seed);
  ppn::save_weights(out_path, result.weights);

  const std::string csv_path = out_path + ".loss.csv";
  std::ofstream csv(csv_path, std::ios::binary);
  if (!csv) throw std::runtime_error("cannot write " + csv_path);
  csv << "step,classification,localization,total,matched\n";
  char line[160];
  for (std::size_t s = 0; s < result.curve.size(); ++s) {
    const ppn::LossBreakdown& l = result.curve[s];
    std::snprintf(line, sizeof(line), "%zu,%.6f,%.6f,%.6f,%d\n", s,
                  l.classification, l.localization, l.total, l.normalizer);
    csv << line;
  }
  std::cout << "weights=" << out_path << "\n"
            << "loss_csv=" << csv_path << "\n"
            << "steps=" << result.curve.size() << "\n";
  if (!result.curve.empty()) {
    std::cout << "final_loss=" << result.curve.back().total << "\n";
  }
  return 0;
}

int cmd_eval(const std::string& config_path, const std::string& weights_path,
             const std::string& dataset_dir) {
  const ppn::RunConfig cfg = ppn::load_config(config_path);
  const ppn::Detector det = ppn::build_detector(cfg);
  const ppn::WeightStore weights = ppn::load_weights(weights_path);
  const ppn::Dataset data = ppn::load_dataset(dataset_dir);
  if (data.image_size != cfg.input_size) {
    throw ppn::ConfigError("dataset image size does not match model.input_size");
  }

  const ppn::PostprocessParams pp = postprocess(cfg);
  const ppn::EvalResult ap = ppn::evaluate_ap(det, weights, data, 0.5f, pp);
  const ppn::CalibrationReport cal =
      ppn::calibration_report(det, weights, data, 0.5f, pp);

  json out;
  out["map"] = ap.mean_ap;
  out["ap_per_class"] = ap.ap_per_class;
  out["gt_per_class"] = ap.gt_per_class;
  out["num_images"] = data.size();
  out["total_detections"] = ap.total_detections;
  json levels = json::array();
  for (const ppn::LevelCalibration& lc : cal.levels) {
    levels.push_back({{"level", lc.level},
                      {"tp_count", lc.tp_count},
                      {"mean_score", lc.mean_score},
                      {"std_score", lc.std_score}});
  }
  out["calibration"] = {{"spread", cal.spread},
                        {"total_tp", cal.total_tp},
                        {"levels", levels}};
  std::cout << out.dump(2) << "\n";
  return 0;
}

int cmd_infer(const std::string& config_path, const std::string& weights_path,
              const std::string& image_path) {
  const ppn::RunConfig cfg = ppn::load_config(config_path);
  const ppn::Detector det = ppn::build_detector(cfg);
  const ppn::WeightStore weights = ppn::load_weights(weights_path);
  const ppn::PpmImage img = ppn::read_ppm(image_path);
  if (img.width != cfg.input_size || img.height != cfg.input_size) {
    throw ppn::ConfigError("image is " + std::to_string(img.width) + "x" +
                           std::to_string(img.height) + ", model expects " +
                           std::to_string(cfg.input_size) + " square");
  }
  const ppn::Tensor input = ppn::image_to_tensor(img.rgb, cfg.input_size);
  const std::vector<ppn::Detection> dets =
      ppn::run_inference(det, weights, input, postprocess(cfg));
  for (const ppn::Detection& d : dets) {
    json row;
    row["box"] = {d.box.ymin, d.box.xmin, d.box.ymax, d.box.xmax};
    row["score"] = d.score;
    row["class"] = d.cls;
    row["level"] = det.level_of_anchor(d.anchor_index);
    std::cout << row.dump() << "\n";
  }
  return 0;
}

int cmd_bench(const std::string& config_path, int repeat) {
  if (repeat < 1) throw ppn::ConfigError("--repeat must be >= 1");
  const ppn::RunConfig cfg = ppn::load_config(config_path);
  const ppn::Detector det = ppn::build_detector(cfg);
  const ppn::WeightStore weights = ppn::init_detector_weights(det, cfg.train_seed);

  ppn::Pcg32 rng(cfg.train_seed, ppn::fnv1a("bench-input"));
  ppn::Tensor input(1, cfg.input_size, cfg.input_size, 3);
  for (auto& v : input.values()) v = rng.uniform(-1.0f, 1.0f);

  const auto& layers = det.graph.layers;
  std::vector<std::vector<double>> samples(layers.size());

  auto timed_pass = [&](bool record) {
    std::vector<ppn::Tensor> outputs;
    outputs.reserve(layers.size());
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const ppn::LayerSpec& l = layers[i];
      const ppn::Tensor& src = l.input == ppn::GraphSpec::kInputName
                                   ? input
                                   : outputs[det.graph.layer_index(l.input)];
      const auto t0 = std::chrono::steady_clock::now();
      outputs.push_back(ppn::apply_layer(l, weights, src));
      const auto t1 = std::chrono::steady_clock::now();
      if (record) {
        samples[i].push_back(
            std::chrono::duration<double, std::milli>(t1 - t0).count());
      }
    }
  };

  timed_pass(false);  // warmup
  for (int r = 0; r < repeat; ++r) timed_pass(true);

  auto median = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
  };

  std::map<std::string, double> stage_ms;
  double total = 0.0;
  std::printf("%-36s %-10s %12s\n", "layer", "stage", "median_ms");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const double ms = median(samples[i]);
    std::printf("%-36s %-10s %12.4f\n", layers[i].name.c_str(),
                layers[i].stage.c_str(), ms);
    stage_ms[layers[i].stage] += ms;
    total += ms;
  }
  for (const auto& [stage, ms] : stage_ms) {
    std::printf("stage_%s_ms=%.4f\n", stage.c_str(), ms);
  }
  std::printf("total_ms=%.4f\n", total);
  std::printf("repeat=%d\n", repeat);
  return 0;
}

int cmd_dataset(const std::string& config_path, const std::string& out_dir) {
  const ppn::RunConfig cfg = ppn::load_config(config_path);
  const ppn::Dataset data = ppn::generate_dataset(scene_config(cfg));
  ppn::save_dataset(data, out_dir);
  std::size_t boxes = 0;
  for (const auto& anns : data.annotations) boxes += anns.size();
  std::cout << "dir=" << out_dir << "\n"
            << "images=" << data.size() << "\n"
            << "boxes=" << boxes << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"PPN / SSD object-detection micro-framework"};
  app.require_subcommand(1);

  std::string config_path, compare_path, out_path, dataset_dir, weights_path,
      image_path;
  int repeat = 30;

  CLI::App* analyze = app.add_subcommand("analyze", "Parameter and FLOP report");
  analyze->add_option("--config", config_path, "model config")->required();
  analyze->add_option("--compare", compare_path, "second config to compare against");

  CLI::App* train = app.add_subcommand("train", "Train on synthetic or saved data");
  train->add_option("--config", config_path, "model config")->required();
  train->add_option("--out", out_path, "output weights file")->required();
  train->add_option("--dataset", dataset_dir, "dataset directory (default: generate)");

  CLI::App* eval = app.add_subcommand("eval", "AP and calibration report (JSON)");
  eval->add_option("--config", config_path, "model config")->required();
  eval->add_option("--weights", weights_path, "weights file")->required();
  eval->add_option("--dataset", dataset_dir, "dataset directory")->required();

  CLI::App* infer = app.add_subcommand("infer", "Detect objects in one PPM image");
  infer->add_option("--config", config_path, "model config")->required();
  infer->add_option("--weights", weights_path, "weights file")->required();
  infer->add_option("--image", image_path, "P6 PPM image")->required();

  CLI::App* bench = app.add_subcommand("bench", "Per-layer forward timing");
  bench->add_option("--config", config_path, "model config")->required();
  bench->add_option("--repeat", repeat, "timed passes after one warmup");

  CLI::App* dataset = app.add_subcommand("dataset", "Generate and save a synthetic dataset");
  dataset->add_option("--config", config_path, "model config")->required();
  dataset->add_option("--out", out_path, "output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (analyze->parsed()) return cmd_analyze(config_path, compare_path);
    if (train->parsed()) return cmd_train(config_path, out_path, dataset_dir);
    if (eval->parsed()) return cmd_eval(config_path, weights_path, dataset_dir);
    if (infer->parsed()) return cmd_infer(config_path, weights_path, image_path);
    if (bench->parsed()) return cmd_bench(config_path, repeat);
    if (dataset->parsed()) return cmd_dataset(config_path, out_path);
  } catch (const ppn::TrainingDiverged& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const ppn::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::runtime_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
