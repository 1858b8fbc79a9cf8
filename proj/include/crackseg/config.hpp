#pragma once

#include <cstdint>
#include <initializer_list>
#include <string>

#include <json.hpp>

#include "crackseg/error.hpp"
#include "crackseg/scan.hpp"

namespace crackseg {

using json = nlohmann::json;

namespace detail {

inline void reject_unknown_keys(const json& j, std::initializer_list<const char*> allowed,
                                const char* ctx) {
  if (!j.is_object()) throw ConfigError(std::string(ctx) + ": expected a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : allowed)
      if (it.key() == k) {
        ok = true;
        break;
      }
    if (!ok) throw ConfigError(std::string("unknown key '") + it.key() + "' in " + ctx);
  }
}

template <class T>
inline void get_if_present(const json& j, const char* key, T& out, const char* ctx) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(std::string(ctx) + ": bad value type for '" + key + "'");
  }
}

}  // namespace detail

/// Architecture knobs the source material leaves open.
struct NetworkConfig {
  int image_size = 64;     // training resolution; fixes the position table
  int embed_dim = 16;      // C
  int patch_size = 8;
  int num_layers = 4;
  int state_dim = 8;       // G
  std::string scan_strategy = "sass";
  int num_paths = 4;
  int rank_divisor = 4;    // BottConv rank = max(1, C / rank_divisor)
  int norm_groups = 4;
  bool stem_gbc = true;
  bool block_gbc = true;   // GBC refinement at every block entry
  bool share_scan_params = false;
  std::string upsampler = "bilinear";

  int grid_extent() const { return image_size / patch_size; }
  int seq_len() const { return grid_extent() * grid_extent(); }

  void validate() const {
    if (embed_dim < 1) throw ConfigError("network.embed_dim must be >= 1");
    if (patch_size < 1) throw ConfigError("network.patch_size must be >= 1");
    if (image_size < patch_size || image_size % patch_size != 0)
      throw ConfigError("network.image_size must be a positive multiple of patch_size " +
                        std::to_string(patch_size));
    if (num_layers < 1) throw ConfigError("network.num_layers must be >= 1");
    if (state_dim < 1) throw ConfigError("network.state_dim must be >= 1");
    if (num_paths != 2 && num_paths != 4) throw ConfigError("network.num_paths must be 2 or 4");
    if (rank_divisor < 1) throw ConfigError("network.rank_divisor must be >= 1");
    if (norm_groups < 1) throw ConfigError("network.norm_groups must be >= 1");
    if (upsampler != "bilinear")
      throw ConfigError("network.upsampler '" + upsampler + "' is not available (expected 'bilinear')");
    scan_strategy_from_string(scan_strategy);  // throws on bad name
  }

  json to_json() const {
    return json{{"image_size", image_size},
                {"embed_dim", embed_dim},
                {"patch_size", patch_size},
                {"num_layers", num_layers},
                {"state_dim", state_dim},
                {"scan_strategy", scan_strategy},
                {"num_paths", num_paths},
                {"rank_divisor", rank_divisor},
                {"norm_groups", norm_groups},
                {"stem_gbc", stem_gbc},
                {"block_gbc", block_gbc},
                {"share_scan_params", share_scan_params},
                {"upsampler", upsampler}};
  }

  static NetworkConfig from_json(const json& j) {
    detail::reject_unknown_keys(j,
                                {"image_size", "embed_dim", "patch_size", "num_layers", "state_dim",
                                 "scan_strategy", "num_paths", "rank_divisor", "norm_groups", "stem_gbc", "block_gbc",
                                 "share_scan_params", "upsampler"},
                                "network config");
    NetworkConfig c;
    detail::get_if_present(j, "image_size", c.image_size, "network config");
    detail::get_if_present(j, "embed_dim", c.embed_dim, "network config");
    detail::get_if_present(j, "patch_size", c.patch_size, "network config");
    detail::get_if_present(j, "num_layers", c.num_layers, "network config");
    detail::get_if_present(j, "state_dim", c.state_dim, "network config");
    detail::get_if_present(j, "scan_strategy", c.scan_strategy, "network config");
    detail::get_if_present(j, "num_paths", c.num_paths, "network config");
    detail::get_if_present(j, "rank_divisor", c.rank_divisor, "network config");
    detail::get_if_present(j, "norm_groups", c.norm_groups, "network config");
    detail::get_if_present(j, "stem_gbc", c.stem_gbc, "network config");
    detail::get_if_present(j, "block_gbc", c.block_gbc, "network config");
    detail::get_if_present(j, "share_scan_params", c.share_scan_params, "network config");
    detail::get_if_present(j, "upsampler", c.upsampler, "network config");
    c.validate();
    return c;
  }
};

/// Dice + BCE blend, defaulting to the 1:5 weighting.
struct LossConfig {
  double alpha = 1.0;      // Dice weight
  double beta = 5.0;       // BCE weight
  double dice_eps = 1.0;
  double bce_clamp = 1e-7;

  void validate() const {
    if (alpha < 0.0 || beta < 0.0) throw ConfigError("loss weights must be nonnegative");
    if (!(dice_eps > 0.0)) throw ConfigError("loss.dice_eps must be positive");
    if (!(bce_clamp > 0.0 && bce_clamp < 0.5)) throw ConfigError("loss.bce_clamp must be in (0, 0.5)");
  }

  json to_json() const {
    return json{{"alpha", alpha}, {"beta", beta}, {"dice_eps", dice_eps}, {"bce_clamp", bce_clamp}};
  }

  static LossConfig from_json(const json& j) {
    detail::reject_unknown_keys(j, {"alpha", "beta", "dice_eps", "bce_clamp"}, "loss config");
    LossConfig c;
    detail::get_if_present(j, "alpha", c.alpha, "loss config");
    detail::get_if_present(j, "beta", c.beta, "loss config");
    detail::get_if_present(j, "dice_eps", c.dice_eps, "loss config");
    detail::get_if_present(j, "bce_clamp", c.bce_clamp, "loss config");
    c.validate();
    return c;
  }
};

/// Decoupled-weight-decay adaptive moments with polynomial LR decay.
struct OptimConfig {
  double lr = 5e-4;
  double weight_decay = 0.01;
  double poly_power = 0.9;
  int steps = 500;
  int batch_size = 2;
  int eval_every = 20;
  double stop_f1 = 0.95;  // early stop once train F1 reaches this; <= 0 disables

  void validate() const {
    if (!(lr > 0.0)) throw ConfigError("optim.lr must be positive");
    if (weight_decay < 0.0) throw ConfigError("optim.weight_decay must be nonnegative");
    if (poly_power < 0.0) throw ConfigError("optim.poly_power must be nonnegative");
    if (steps < 0) throw ConfigError("optim.steps must be >= 0");
    if (batch_size < 1) throw ConfigError("optim.batch_size must be >= 1");
    if (eval_every < 1) throw ConfigError("optim.eval_every must be >= 1");
  }

  json to_json() const {
    return json{{"lr", lr},
                {"weight_decay", weight_decay},
                {"poly_power", poly_power},
                {"steps", steps},
                {"batch_size", batch_size},
                {"eval_every", eval_every},
                {"stop_f1", stop_f1}};
  }

  static OptimConfig from_json(const json& j) {
    detail::reject_unknown_keys(
        j, {"lr", "weight_decay", "poly_power", "steps", "batch_size", "eval_every", "stop_f1"},
        "optim config");
    OptimConfig c;
    detail::get_if_present(j, "lr", c.lr, "optim config");
    detail::get_if_present(j, "weight_decay", c.weight_decay, "optim config");
    detail::get_if_present(j, "poly_power", c.poly_power, "optim config");
    detail::get_if_present(j, "steps", c.steps, "optim config");
    detail::get_if_present(j, "batch_size", c.batch_size, "optim config");
    detail::get_if_present(j, "eval_every", c.eval_every, "optim config");
    detail::get_if_present(j, "stop_f1", c.stop_f1, "optim config");
    c.validate();
    return c;
  }
};

struct RunConfig {
  NetworkConfig network;
  LossConfig loss;
  OptimConfig optim;
  uint64_t seed = 42;

  void validate() const {
    network.validate();
    loss.validate();
    optim.validate();
  }

  json to_json() const {
    return json{{"network", network.to_json()},
                {"loss", loss.to_json()},
                {"optim", optim.to_json()},
                {"seed", seed}};
  }

  static RunConfig from_json(const json& j) {
    detail::reject_unknown_keys(j, {"network", "loss", "optim", "seed"}, "run config");
    RunConfig c;
    if (j.contains("network")) c.network = NetworkConfig::from_json(j.at("network"));
    if (j.contains("loss")) c.loss = LossConfig::from_json(j.at("loss"));
    if (j.contains("optim")) c.optim = OptimConfig::from_json(j.at("optim"));
    detail::get_if_present(j, "seed", c.seed, "run config");
    return c;
  }
};

}  // namespace crackseg
