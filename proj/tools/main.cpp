// crackseg: crack-segmentation toolkit CLI.
// Subcommands: scan, train, infer, eval, count, ablate.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "crackseg/config.hpp"
#include "crackseg/count.hpp"
#include "crackseg/data.hpp"
#include "crackseg/head.hpp"
#include "crackseg/metrics.hpp"
#include "crackseg/model.hpp"
#include "crackseg/png_io.hpp"
#include "crackseg/scan.hpp"
#include "crackseg/train.hpp"

namespace fs = std::filesystem;
using crackseg::json;

namespace {

constexpr int kExitUsage = 2;

// CRACKSEG_LOG = quiet | info (default) | debug
int log_level() {
  const char* v = std::getenv("CRACKSEG_LOG");
  if (!v) return 1;
  std::string s(v);
  if (s == "quiet") return 0;
  if (s == "debug") return 2;
  return 1;
}

bool log_info() { return log_level() >= 1; }
bool log_debug() { return log_level() >= 2; }

json scan_set_to_json(const crackseg::ScanPathSet& set) {
  json paths = json::array();
  for (const auto& p : set.paths) {
    json dirs = json::array();
    for (auto d : p.directions) dirs.push_back(crackseg::to_string(d));
    paths.push_back({{"order", p.order}, {"inverse", p.inverse}, {"directions", dirs}});
  }
  return json{{"strategy", crackseg::to_string(set.strategy)},
              {"H", set.height},
              {"W", set.width},
              {"paths", paths}};
}

crackseg::RunConfig load_run_config(const std::string& path) {
  if (path.empty()) return crackseg::RunConfig{};
  std::ifstream is(path);
  if (!is) throw crackseg::IoError("cannot open config '" + path + "'");
  json j;
  try {
    j = json::parse(is);
  } catch (const json::exception& e) {
    throw crackseg::ConfigError("config '" + path + "': " + e.what());
  }
  return crackseg::RunConfig::from_json(j);
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw crackseg::IoError("cannot write '" + path + "'");
  os << text;
}

int cmd_scan(const std::string& strategy, int height, int width, int num_paths,
             const std::string& out_path) {
  crackseg::ScanStrategy strat;
  try {
    strat = crackseg::scan_strategy_from_string(strategy);
  } catch (const crackseg::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n"
              << "usage: scan --strategy "
                 "{parallel|diagonal|parallel-snake|diagonal-snake|bidirectional|sass} "
                 "--height H --width W [--paths {2|4}] --out FILE\n";
    return kExitUsage;
  }
  if (num_paths != 2 && num_paths != 4) {
    std::cerr << "error: --paths must be 2 or 4\n";
    return kExitUsage;
  }
  if (height < 1 || width < 1) {
    std::cerr << "error: --height/--width must be >= 1\n";
    return kExitUsage;
  }
  auto set = crackseg::generate_scan_paths(strat, height, width, num_paths);
  std::string text = scan_set_to_json(set).dump(2) + "\n";
  if (out_path.empty())
    std::cout << text;
  else
    write_text_file(out_path, text);
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& data_dir, int synthetic,
              const std::string& out_path, std::string log_path, int steps_override,
              long long seed_override, const std::string& split_manifest_path) {
  crackseg::RunConfig cfg = load_run_config(config_path);
  if (steps_override >= 0) cfg.optim.steps = steps_override;
  if (seed_override >= 0) cfg.seed = static_cast<uint64_t>(seed_override);
  cfg.validate();

  std::vector<crackseg::Sample> samples;
  if (!data_dir.empty() && synthetic > 0) {
    std::cerr << "error: use either --data or --synthetic, not both\n";
    return kExitUsage;
  }
  if (!data_dir.empty()) {
    samples = crackseg::load_dataset(data_dir);
    for (const auto& s : samples) {
      if (s.image.dim(1) % cfg.network.patch_size != 0 || s.image.dim(2) % cfg.network.patch_size != 0) {
        std::cerr << "error: sample '" << s.id << "' dims " << s.image.dim(1) << "x" << s.image.dim(2)
                  << " must be multiples of patch size " << cfg.network.patch_size << "\n";
        return kExitUsage;
      }
    }
    if (!split_manifest_path.empty()) {
      // 7:1:2 split; the training run uses the train partition
      crackseg::SplitSpec spec;
      spec.seed = cfg.seed;
      crackseg::DatasetSplit split = crackseg::split_dataset(std::move(samples), spec);
      write_text_file(split_manifest_path, crackseg::split_manifest_json(split).dump(2) + "\n");
      samples = std::move(split.train);
    }
  } else {
    int n = synthetic > 0 ? synthetic : 8;
    samples = crackseg::synth_dataset(cfg.seed, n, cfg.network.image_size, cfg.network.image_size);
  }

  crackseg::Network net = crackseg::Network::init(cfg.network, cfg.seed);
  crackseg::TrainResult result = crackseg::train_network(net, samples, cfg.loss, cfg.optim, cfg.seed);
  net.save_file(out_path);
  if (log_path.empty()) log_path = out_path + ".log.json";
  json log = result.to_json();
  log["config"] = cfg.to_json();
  write_text_file(log_path, log.dump(2) + "\n");
  if (log_debug()) {
    for (const auto& e : result.log) {
      std::cout << "step " << e.step << "  loss " << e.loss << "  lr " << e.lr;
      if (e.train_f1) std::cout << "  train_f1 " << *e.train_f1;
      std::cout << "\n";
    }
  }
  if (log_info())
    std::cout << "steps " << result.steps_run << "  final_loss " << result.final_loss << "  final_f1 "
              << result.final_f1 << "\n";
  return 0;
}

int cmd_infer(const std::string& ckpt, const std::string& input, const std::string& out,
              const std::string& mask_out, double threshold) {
  crackseg::Network net = crackseg::Network::load_file(ckpt);
  crackseg::ImageU8 raw = crackseg::read_png(input);
  crackseg::ImageU8 rgb = raw;
  if (raw.channels == 1) {
    rgb.channels = 3;
    rgb.pixels.resize(rgb.size_bytes());
    for (long long i = 0; i < static_cast<long long>(raw.pixels.size()); ++i)
      for (int c = 0; c < 3; ++c) rgb.pixels[i * 3 + c] = raw.pixels[i];
  }
  int ps = net.cfg.patch_size;
  if (rgb.height % ps != 0 || rgb.width % ps != 0) {
    std::cerr << "error: input " << rgb.width << "x" << rgb.height
              << " is not divisible by the model patch size; both sides must be a multiple of " << ps
              << "\n";
    return kExitUsage;
  }
  crackseg::NoGradGuard ng;
  crackseg::Tensor img = crackseg::image_to_tensor(rgb);
  img = crackseg::reshape(img, {1, 3, rgb.height, rgb.width});
  crackseg::Tensor prob = crackseg::sigmoid(net.forward(img));
  crackseg::Tensor plane = crackseg::reshape(prob, {1, rgb.height, rgb.width});
  crackseg::write_png(out, crackseg::tensor_to_image(plane));
  if (!mask_out.empty()) {
    if (!(threshold > 0.0 && threshold < 1.0)) {
      std::cerr << "error: --threshold must lie in (0,1)\n";
      return kExitUsage;
    }
    crackseg::Tensor mask = crackseg::binarize(plane, threshold);
    crackseg::write_png(mask_out, crackseg::tensor_to_image(mask));
  }
  return 0;
}

int cmd_eval(const std::string& pred_dir, const std::string& gt_dir, const std::string& out_path) {
  auto list_pngs = [](const std::string& dir) {
    std::map<std::string, fs::path> out;
    if (!fs::is_directory(dir)) throw crackseg::IoError("'" + dir + "' is not a directory");
    for (const auto& e : fs::directory_iterator(dir))
      if (e.path().extension() == ".png") out[e.path().stem().string()] = e.path();
    return out;
  };
  auto preds = list_pngs(pred_dir);
  auto gts = list_pngs(gt_dir);
  std::vector<std::string> unmatched;
  for (const auto& [id, p] : preds)
    if (!gts.count(id)) unmatched.push_back(id + " (no ground truth)");
  for (const auto& [id, p] : gts)
    if (!preds.count(id)) unmatched.push_back(id + " (no prediction)");
  if (!unmatched.empty()) {
    std::cerr << "error: unmatched ids:";
    for (const auto& u : unmatched) std::cerr << " " << u;
    std::cerr << "\n";
    return 1;
  }
  if (preds.empty()) {
    std::cerr << "error: no prediction/ground-truth pairs found\n";
    return 1;
  }
  std::vector<crackseg::Tensor> prob_maps, gt_masks;
  for (const auto& [id, path] : preds) {
    crackseg::ImageU8 p = crackseg::read_png(path);
    if (p.channels != 1) {
      std::cerr << "error: prediction '" << id << "' must be 8-bit grayscale\n";
      return 1;
    }
    prob_maps.push_back(crackseg::image_to_tensor(p));
    crackseg::ImageU8 g = crackseg::read_png(gts.at(id));
    if (g.channels != 1) {
      crackseg::ImageU8 gray;
      gray.width = g.width;
      gray.height = g.height;
      gray.channels = 1;
      gray.pixels.resize(gray.size_bytes());
      for (long long i = 0; i < gray.size_bytes(); ++i) gray.pixels[i] = g.pixels[i * g.channels];
      g = std::move(gray);
    }
    gt_masks.push_back(crackseg::mask_to_tensor(g));
  }
  crackseg::EvalReport rep = crackseg::evaluate(prob_maps, gt_masks);
  std::string text = rep.to_json().dump(2) + "\n";
  if (out_path.empty())
    std::cout << text;
  else
    write_text_file(out_path, text);
  return 0;
}

int cmd_count(const std::string& config_path, int input_size, const std::string& out_path) {
  crackseg::RunConfig cfg = load_run_config(config_path);
  crackseg::ComplexityReport rep = crackseg::complexity_report(cfg.network, input_size);
  std::string text = rep.to_json().dump(2) + "\n";
  std::cout << text;
  if (!out_path.empty()) write_text_file(out_path, text);
  return 0;
}

struct AblateVariant {
  std::string name;
  crackseg::RunConfig cfg;
};

int cmd_ablate(const std::string& axis, const std::string& config_path, const std::string& out_path,
               const std::string& csv_path, int samples) {
  crackseg::RunConfig base = load_run_config(config_path);
  if (config_path.empty()) {
    // desk-scale defaults sized for quick sweeps
    base.network.image_size = 32;
    base.network.embed_dim = 8;
    base.network.state_dim = 4;
    base.network.num_layers = 2;
    base.optim.steps = 60;
    base.optim.batch_size = 2;
    base.optim.eval_every = 20;
    base.optim.stop_f1 = 0.0;
  }

  std::vector<AblateVariant> variants;
  if (axis == "scan") {
    for (const char* s : {"parallel", "diagonal", "parallel-snake", "diagonal-snake", "sass"}) {
      AblateVariant v{s, base};
      v.cfg.network.scan_strategy = s;
      variants.push_back(v);
    }
  } else if (axis == "layers") {
    for (int n : {2, 4, 8}) {
      AblateVariant v{"layers-" + std::to_string(n), base};
      v.cfg.network.num_layers = n;
      variants.push_back(v);
    }
  } else if (axis == "patch") {
    for (int ps : {4, 8, 16}) {
      if (base.network.image_size % ps != 0) continue;
      AblateVariant v{"patch-" + std::to_string(ps), base};
      v.cfg.network.patch_size = ps;
      variants.push_back(v);
    }
  } else if (axis == "loss-ratio") {
    const std::vector<std::pair<std::string, std::pair<double, double>>> ratios = {
        {"bce", {0.0, 1.0}}, {"dice", {1.0, 0.0}}, {"5:1", {5.0, 1.0}}, {"1:1", {1.0, 1.0}},
        {"1:5", {1.0, 5.0}}};
    for (const auto& [name, ab] : ratios) {
      AblateVariant v{name, base};
      v.cfg.loss.alpha = ab.first;
      v.cfg.loss.beta = ab.second;
      variants.push_back(v);
    }
  } else {
    std::cerr << "error: --axis must be one of scan|layers|patch|loss-ratio\n";
    return kExitUsage;
  }

  json rows = json::array();
  std::ostringstream csv;
  csv << "variant,ods,ois,precision,recall,f1,miou,params,steps_run,final_loss\n";
  for (const AblateVariant& v : variants) {
    v.cfg.validate();
    auto data = crackseg::synth_dataset(v.cfg.seed, samples, v.cfg.network.image_size,
                                        v.cfg.network.image_size);
    crackseg::Network net = crackseg::Network::init(v.cfg.network, v.cfg.seed);
    crackseg::TrainResult tr = crackseg::train_network(net, data, v.cfg.loss, v.cfg.optim, v.cfg.seed);
    std::vector<crackseg::Tensor> probs, gts;
    {
      crackseg::NoGradGuard ng;
      for (const auto& s : data) {
        crackseg::Tensor img =
            crackseg::reshape(s.image, {1, s.image.dim(0), s.image.dim(1), s.image.dim(2)});
        probs.push_back(crackseg::sigmoid(net.forward(img)));
        gts.push_back(crackseg::reshape(s.mask, {1, s.mask.dim(0), s.mask.dim(1), s.mask.dim(2)}));
      }
    }
    crackseg::EvalReport rep = crackseg::evaluate(probs, gts);
    long long params = net.param_count();
    rows.push_back({{"variant", v.name},
                    {"ods", rep.ods},
                    {"ois", rep.ois},
                    {"precision", rep.precision},
                    {"recall", rep.recall},
                    {"f1", rep.f1},
                    {"miou", rep.miou},
                    {"params", params},
                    {"steps_run", tr.steps_run},
                    {"final_loss", tr.final_loss}});
    csv << v.name << "," << rep.ods << "," << rep.ois << "," << rep.precision << "," << rep.recall
        << "," << rep.f1 << "," << rep.miou << "," << params << "," << tr.steps_run << ","
        << tr.final_loss << "\n";
    if (log_info())
      std::cout << "[ablate] " << axis << "/" << v.name << ": f1 " << rep.f1 << "  miou " << rep.miou
                << "\n";
  }
  json report{{"axis", axis}, {"base", base.to_json()}, {"samples", samples}, {"rows", rows}};
  if (!out_path.empty()) write_text_file(out_path, report.dump(2) + "\n");
  if (!csv_path.empty()) write_text_file(csv_path, csv.str());
  if (out_path.empty() && csv_path.empty()) std::cout << report.dump(2) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"crack segmentation toolkit: scanning-order dumps, toy training, inference, "
               "evaluation and complexity accounting"};
  app.require_subcommand(1);

  // scan
  auto* scan = app.add_subcommand("scan", "dump scan-path orders as JSON");
  std::string scan_strategy = "sass", scan_out;
  int scan_h = 8, scan_w = 8, scan_paths = 4;
  scan->add_option("--strategy", scan_strategy, "scan strategy");
  scan->add_option("--height", scan_h, "grid height")->required();
  scan->add_option("--width", scan_w, "grid width")->required();
  scan->add_option("--paths", scan_paths, "number of paths (2 or 4)");
  scan->add_option("--out", scan_out, "output JSON file (stdout when omitted)");

  // train
  auto* train = app.add_subcommand("train", "train on a dataset directory or synthetic data");
  std::string train_config, train_data, train_out, train_log, train_split;
  int train_synth = 0, train_steps = -1;
  long long train_seed = -1;
  train->add_option("--config", train_config, "run config JSON");
  train->add_option("--data", train_data, "dataset directory (root/{image,mask}/<id>.png)");
  train->add_option("--synthetic", train_synth, "train on N synthetic samples");
  train->add_option("--out", train_out, "checkpoint output path")->required();
  train->add_option("--log", train_log, "training log path (default: <out>.log.json)");
  train->add_option("--steps", train_steps, "override optim.steps");
  train->add_option("--seed", train_seed, "override config seed");
  train->add_option("--split-manifest", train_split,
                    "with --data: apply the 7:1:2 split, write the id->partition manifest here, "
                    "and train on the train partition");

  // infer
  auto* infer = app.add_subcommand("infer", "run a checkpoint on one image");
  std::string infer_ckpt, infer_input, infer_out, infer_mask;
  double infer_threshold = 0.5;
  infer->add_option("--ckpt", infer_ckpt, "checkpoint file")->required();
  infer->add_option("--input", infer_input, "input PNG")->required();
  infer->add_option("--out", infer_out, "probability-map PNG output")->required();
  infer->add_option("--mask", infer_mask, "optional binary-mask PNG output");
  infer->add_option("--threshold", infer_threshold, "mask threshold (default 0.5)");

  // eval
  auto* eval = app.add_subcommand("eval", "score predictions against ground truth");
  std::string eval_pred, eval_gt, eval_out;
  eval->add_option("--pred", eval_pred, "directory of grayscale probability PNGs")->required();
  eval->add_option("--gt", eval_gt, "directory of ground-truth mask PNGs")->required();
  eval->add_option("--out", eval_out, "report JSON path (stdout when omitted)");

  // count
  auto* count = app.add_subcommand("count", "parameter / FLOP / size accounting");
  std::string count_config, count_out;
  int count_input = 512;
  count->add_option("--config", count_config, "run config JSON");
  count->add_option("--input-size", count_input, "square input size for FLOPs (default 512)");
  count->add_option("--out", count_out, "report JSON path");

  // ablate
  auto* ablate = app.add_subcommand("ablate", "desk-scale sweeps over one architecture axis");
  std::string ablate_axis, ablate_config, ablate_out, ablate_csv;
  int ablate_samples = 6;
  ablate->add_option("--axis", ablate_axis, "scan|layers|patch|loss-ratio")->required();
  ablate->add_option("--config", ablate_config, "base run config JSON");
  ablate->add_option("--out", ablate_out, "comparison report JSON path");
  ablate->add_option("--csv", ablate_csv, "comparison report CSV path");
  ablate->add_option("--samples", ablate_samples, "synthetic sample count per run");

  CLI11_PARSE(app, argc, argv);

  try {
    if (scan->parsed()) return cmd_scan(scan_strategy, scan_h, scan_w, scan_paths, scan_out);
    if (train->parsed())
      return cmd_train(train_config, train_data, train_synth, train_out, train_log, train_steps,
                       train_seed, train_split);
    if (infer->parsed()) return cmd_infer(infer_ckpt, infer_input, infer_out, infer_mask, infer_threshold);
    if (eval->parsed()) return cmd_eval(eval_pred, eval_gt, eval_out);
    if (count->parsed()) return cmd_count(count_config, count_input, count_out);
    if (ablate->parsed())
      return cmd_ablate(ablate_axis, ablate_config, ablate_out, ablate_csv, ablate_samples);
  } catch (const crackseg::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 1;
  } catch (const crackseg::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const crackseg::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
