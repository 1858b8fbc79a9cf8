#pragma once

#include <string>
#include <vector>

#include "crackseg/gbc.hpp"
#include "crackseg/model.hpp"

namespace crackseg {

struct ModuleCount {
  std::string name;
  long long params = 0;
};

/// Complexity bookkeeping. Parameters come from enumerating the weight store;
/// FLOPs are analytic at a given square input size, counted as 2 x
/// multiply-accumulates of the conv / matmul / scan work (normalizations,
/// activations and the transcendental part of the discretization are not
/// counted). Model file size is the exact checkpoint byte count.
struct ComplexityReport {
  int input_size = 0;
  long long total_params = 0;
  std::vector<ModuleCount> per_module;
  long long flops = 0;
  long long model_file_bytes = 0;

  json to_json() const {
    json mods = json::array();
    for (const auto& m : per_module) mods.push_back({{"name", m.name}, {"params", m.params}});
    return json{{"input_size", input_size},
                {"total_params", total_params},
                {"per_module", mods},
                {"flops", flops},
                {"model_file_bytes", model_file_bytes},
                {"flop_convention", "2*MAC over conv/matmul/scan"}};
  }
};

namespace detail {

inline long long bottconv_macs(int cin, int cout, int k, int r, long long pixels) {
  return pixels * (static_cast<long long>(r) * cin + static_cast<long long>(r) * k * k +
                   static_cast<long long>(cout) * r);
}

inline long long gbc_macs(int channels, int rank_divisor, long long pixels) {
  int r = bottconv_rank(channels, rank_divisor);
  return 4 * bottconv_macs(channels, channels, 3, r, pixels);
}

}  // namespace detail

/// Analytic forward MACs for one image of size input x input.
inline long long analytic_macs(const NetworkConfig& cfg, int input_size) {
  if (input_size % cfg.patch_size != 0)
    throw ConfigError("analytic_macs: input size " + std::to_string(input_size) +
                      " must be a multiple of patch size " + std::to_string(cfg.patch_size));
  const long long g = input_size / cfg.patch_size;
  const long long L = g * g;
  const long long S2 = static_cast<long long>(input_size) * input_size;
  const int c = cfg.embed_dim;
  const int gdim = cfg.state_dim;
  const int nc = cfg.num_layers * c;

  long long macs = 0;
  // patch embedding
  macs += L * static_cast<long long>(c) * 3 * cfg.patch_size * cfg.patch_size;
  if (cfg.stem_gbc) macs += detail::gbc_macs(c, cfg.rank_divisor, L);
  // SAVSS layers
  long long per_path = 0;
  per_path += L * static_cast<long long>(c) * c;         // delta projection
  per_path += 2 * L * static_cast<long long>(c) * gdim;  // q and r projections
  per_path += 3 * L * static_cast<long long>(gdim) * c;  // recurrence + output contraction
  per_path += L * c;                                     // skip term
  long long per_layer = (cfg.block_gbc ? detail::gbc_macs(c, cfg.rank_divisor, L) : 0) +
                        cfg.num_paths * per_path +
                        L * static_cast<long long>(c) * 2 * c;  // PAF gate conv
  macs += cfg.num_layers * per_layer;
  // head
  macs += cfg.num_layers * (2 * L * static_cast<long long>(c) * c);  // per-level MLPs
  macs += cfg.num_layers * (4 * S2 * static_cast<long long>(c));     // bilinear taps
  macs += detail::gbc_macs(nc, cfg.rank_divisor, S2);
  macs += S2 * static_cast<long long>(nc) * nc * 9;                        // 3x3 conv
  macs += S2 * (static_cast<long long>(nc) * c + static_cast<long long>(c));  // output MLP
  return macs;
}

/// Parameter count derived purely from the architecture formulas; must agree
/// with weight-store enumeration.
inline long long analytic_param_count(const NetworkConfig& cfg) {
  const int c = cfg.embed_dim;
  const int gdim = cfg.state_dim;
  const int nc = cfg.num_layers * c;
  const long long L = static_cast<long long>(cfg.seq_len());
  auto gbc_params = [&](int channels) {
    int r = bottconv_rank(channels, cfg.rank_divisor);
    long long bott = static_cast<long long>(r) * channels + static_cast<long long>(r) * 9 +
                     static_cast<long long>(channels) * r + r + channels;
    return 4 * bott + 8LL * channels;  // four BottConvs + four norm affines
  };
  long long total = 0;
  total += static_cast<long long>(c) * 3 * cfg.patch_size * cfg.patch_size + c;  // patch conv
  total += L * c;                                                                 // position table
  if (cfg.stem_gbc) total += gbc_params(c);
  long long scan_sets = cfg.share_scan_params ? 1 : cfg.num_paths;
  long long per_scan = static_cast<long long>(gdim) * c + c + 2LL * c * gdim +
                       static_cast<long long>(c) * c + c;  // log_p, skip, wq, wr, wd, bd
  long long per_layer = (cfg.block_gbc ? gbc_params(c) : 0) + scan_sets * per_scan +
                        static_cast<long long>(c) * 2 * c + c;  // PAF conv
  total += cfg.num_layers * per_layer;
  long long mlp_cc = 2LL * c * c + 2 * c;
  total += cfg.num_layers * mlp_cc;  // per-level MLPs
  total += gbc_params(nc);
  total += static_cast<long long>(nc) * nc * 9 + nc;  // 3x3 conv
  total += static_cast<long long>(nc) * c + c + static_cast<long long>(c) * 1 + 1;  // output MLP
  return total;
}

/// Builds the model, enumerates its weight store per module, computes FLOPs
/// and the exact checkpoint size.
inline ComplexityReport complexity_report(const NetworkConfig& cfg, int input_size) {
  cfg.validate();
  Network net = Network::init(cfg, 0);
  ComplexityReport rep;
  rep.input_size = input_size;
  auto module_of = [](const std::string& name) {
    // group "layers.3.gbc.bott1.pw_in.weight" -> "layers.3"
    size_t dot = name.find('.');
    if (dot == std::string::npos) return name;
    std::string head = name.substr(0, dot);
    if (head == "layers") {
      size_t dot2 = name.find('.', dot + 1);
      return name.substr(0, dot2 == std::string::npos ? name.size() : dot2);
    }
    return head;
  };
  for (auto& [name, t] : net.named_params()) {
    std::string mod = module_of(name);
    rep.total_params += t.numel();
    bool found = false;
    for (auto& m : rep.per_module)
      if (m.name == mod) {
        m.params += t.numel();
        found = true;
        break;
      }
    if (!found) rep.per_module.push_back({mod, t.numel()});
  }
  long long analytic = analytic_param_count(cfg);
  if (analytic != rep.total_params)
    throw ConfigError("complexity_report: analytic parameter count " + std::to_string(analytic) +
                      " disagrees with enumeration " + std::to_string(rep.total_params));
  rep.flops = 2 * analytic_macs(cfg, input_size);
  rep.model_file_bytes = net.checkpoint_size_bytes();
  return rep;
}

}  // namespace crackseg
