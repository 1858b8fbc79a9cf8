#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "crackseg/config.hpp"
#include "crackseg/conv.hpp"
#include "crackseg/gbc.hpp"
#include "crackseg/rng.hpp"
#include "crackseg/scan.hpp"
#include "crackseg/ssm.hpp"
#include "crackseg/tensor.hpp"

namespace crackseg {

/// [N,L,C] -> [N,C,h,w] with L = h*w.
inline Tensor seq_to_grid(const Tensor& seq, int h, int w) {
  detail::require_defined("seq_to_grid", seq);
  if (seq.ndim() != 3 || seq.dim(1) != h * w)
    throw ShapeError("seq_to_grid: expected [N," + std::to_string(h * w) + ",C], got " +
                     shape_str(seq.shape()));
  Tensor t = reshape(seq, {seq.dim(0), h, w, seq.dim(2)});
  return permute_axes(t, {0, 3, 1, 2});
}

/// [N,C,h,w] -> [N,L,C].
inline Tensor grid_to_seq(const Tensor& grid) {
  detail::require_defined("grid_to_seq", grid);
  if (grid.ndim() != 4)
    throw ShapeError("grid_to_seq: expected rank-4 grid, got " + shape_str(grid.shape()));
  Tensor t = permute_axes(grid, {0, 2, 3, 1});
  return reshape(t, {grid.dim(0), grid.dim(2) * grid.dim(3), grid.dim(1)});
}

/// Non-overlapping patch projection plus a learned additive position table.
/// The table is sized for the configured training resolution; other grid
/// sizes get a bilinear value-level resample of the table at inference.
struct PatchEmbed {
  int patch_size = 8;
  int grid_h = 0, grid_w = 0;  // table grid
  Tensor weight;               // [C, 3, ps, ps]
  Tensor bias;                 // [C]
  Tensor pos;                  // [L, C], zero-initialized

  static PatchEmbed init(int embed_dim, int patch_size, int grid_extent, Rng& rng) {
    PatchEmbed e;
    e.patch_size = patch_size;
    e.grid_h = e.grid_w = grid_extent;
    double bound = 1.0 / std::sqrt(3.0 * patch_size * patch_size);
    e.weight = detail::uniform_init({embed_dim, 3, patch_size, patch_size}, bound, rng);
    e.bias = detail::uniform_init({embed_dim}, bound, rng);
    e.pos = Tensor::zeros({grid_extent * grid_extent, embed_dim}, true);
    return e;
  }

  /// image [N,3,H,W] -> tokens [N, (H/ps)*(W/ps), C]
  Tensor forward(const Tensor& image) const {
    detail::require_defined("patch_embed", image);
    if (image.ndim() != 4 || image.dim(1) != 3)
      throw ShapeError("patch_embed: expected [N,3,H,W], got " + shape_str(image.shape()));
    if (image.dim(2) % patch_size != 0 || image.dim(3) % patch_size != 0)
      throw ConfigError("patch_embed: spatial dims " + std::to_string(image.dim(2)) + "x" +
                        std::to_string(image.dim(3)) + " must be multiples of patch size " +
                        std::to_string(patch_size));
    int gh = image.dim(2) / patch_size;
    int gw = image.dim(3) / patch_size;
    Tensor grid = conv2d(image, weight, bias, patch_size, 0);  // [N,C,gh,gw]
    Tensor seq = grid_to_seq(grid);
    if (gh == grid_h && gw == grid_w) return add_broadcast(seq, pos);
    return add_broadcast(seq, resampled_pos(gh, gw));
  }

  /// Value-level position table resample for off-size inputs (no gradient).
  Tensor resampled_pos(int gh, int gw) const {
    NoGradGuard ng;
    int c = pos.dim(1);
    Tensor table = permute_axes(reshape(pos, {1, grid_h, grid_w, c}), {0, 3, 1, 2});
    // integer-factor bilinear only; other ratios fall back to nearest
    if (gh % grid_h == 0 && gw % grid_w == 0 && gh / grid_h == gw / grid_w) {
      Tensor up = bilinear_upsample(table, gh / grid_h);
      return reshape(permute_axes(up, {0, 2, 3, 1}), {gh * gw, c});
    }
    std::vector<double> out(static_cast<size_t>(gh) * gw * c);
    const auto& src = pos.data();
    for (int y = 0; y < gh; ++y)
      for (int x = 0; x < gw; ++x) {
        int sy = std::min(grid_h - 1, y * grid_h / gh);
        int sx = std::min(grid_w - 1, x * grid_w / gw);
        const double* row = src.data() + (static_cast<size_t>(sy) * grid_w + sx) * c;
        double* dst = out.data() + (static_cast<size_t>(y) * gw + x) * c;
        std::copy_n(row, c, dst);
      }
    return Tensor::from_data({gh * gw, c}, std::move(out));
  }

  std::vector<std::pair<std::string, Tensor>> named_params() const {
    return {{"patch_embed.weight", weight}, {"patch_embed.bias", bias}, {"patch_embed.pos", pos}};
  }
};

/// Pixel-attention fusion: a 1x1 conv over the concatenated operands yields a
/// sigmoid gate; output = gate (.) a + (1 - gate) (.) b.
struct PafFusion {
  Tensor weight;  // [C, 2C, 1, 1]
  Tensor bias;    // [C]

  static PafFusion init(int channels, Rng& rng) {
    PafFusion p;
    double bound = 1.0 / std::sqrt(2.0 * channels);
    p.weight = detail::uniform_init({channels, 2 * channels, 1, 1}, bound, rng);
    p.bias = detail::uniform_init({channels}, bound, rng);
    return p;
  }

  Tensor fuse(const Tensor& a, const Tensor& b) const {
    detail::require_same_shape("paf", a, b);
    Tensor gate = sigmoid(pointwise_conv2d(concat({a, b}, 1), weight, bias));
    return add(mul(gate, a), mul(rsub_scalar(gate, 1.0), b));
  }

  std::vector<std::pair<std::string, Tensor>> named_params(const std::string& prefix) const {
    return {{prefix + ".weight", weight}, {prefix + ".bias", bias}};
  }
};

/// One backbone stage: GBC refinement, multi-path selective scan over the
/// refined sequence, pixel-attention fusion of the scan result with the GBC
/// branch contribution, then the block-input residual. With every branch
/// weight zeroed the block is the identity on its input.
struct SavssBlock {
  int channels = 0;
  bool share_scan_params = false;
  std::optional<GbcBlock> gbc;         // absent when the block GBC is ablated
  std::vector<SsmParams> scan_params;  // one per path, or one shared
  PafFusion paf;

  static SavssBlock init(const NetworkConfig& cfg, Rng& rng) {
    SavssBlock b;
    b.channels = cfg.embed_dim;
    b.share_scan_params = cfg.share_scan_params;
    if (cfg.block_gbc) b.gbc = GbcBlock::init(cfg.embed_dim, cfg.rank_divisor, cfg.norm_groups, rng);
    int owned = cfg.share_scan_params ? 1 : cfg.num_paths;
    for (int i = 0; i < owned; ++i)
      b.scan_params.push_back(SsmParams::init(cfg.state_dim, cfg.embed_dim, rng));
    b.paf = PafFusion::init(cfg.embed_dim, rng);
    return b;
  }

  std::vector<SsmParams> params_for_paths(size_t num_paths) const {
    if (!share_scan_params) {
      if (scan_params.size() != num_paths)
        throw ConfigError("savss block: " + std::to_string(scan_params.size()) +
                          " scan parameter sets but " + std::to_string(num_paths) + " paths");
      return scan_params;
    }
    return std::vector<SsmParams>(num_paths, scan_params.front());
  }

  Tensor forward(const Tensor& seq, const ScanPathSet& paths) const {
    detail::require_defined("savss_block", seq);
    if (seq.ndim() != 3 || seq.dim(2) != channels)
      throw ConfigError("savss_block: expected [N,L," + std::to_string(channels) + "], got " +
                        shape_str(seq.shape()));
    if (seq.dim(1) != paths.height * paths.width)
      throw ConfigError("savss_block: sequence length " + std::to_string(seq.dim(1)) +
                        " does not match cached " + std::to_string(paths.height) + "x" +
                        std::to_string(paths.width) + " paths");
    Tensor x_grid = seq_to_grid(seq, paths.height, paths.width);
    Tensor y = gbc ? gbc->branch(x_grid) : Tensor::zeros(x_grid.shape());  // GBC contribution
    Tensor refined = gbc ? add(y, x_grid) : x_grid;                        // full GBC output
    Tensor scanned = ss2d(grid_to_seq(refined), paths, params_for_paths(paths.paths.size()));
    Tensor fused = paf.fuse(seq_to_grid(scanned, paths.height, paths.width), y);
    return add(grid_to_seq(fused), seq);
  }

  std::vector<std::pair<std::string, Tensor>> named_params(const std::string& prefix) const {
    std::vector<std::pair<std::string, Tensor>> out;
    if (gbc) out = gbc->named_params(prefix + ".gbc");
    for (size_t i = 0; i < scan_params.size(); ++i) {
      std::string sp = share_scan_params ? prefix + ".scan.shared" : prefix + ".scan." + std::to_string(i);
      out.push_back({sp + ".log_p", scan_params[i].log_p});
      out.push_back({sp + ".skip", scan_params[i].skip});
      out.push_back({sp + ".wq", scan_params[i].wq});
      out.push_back({sp + ".wr", scan_params[i].wr});
      out.push_back({sp + ".wd", scan_params[i].wd});
      out.push_back({sp + ".bd", scan_params[i].bd});
    }
    for (auto& p : paf.named_params(prefix + ".paf")) out.push_back(std::move(p));
    return out;
  }
};

/// Patch embedding, optional stem GBC, and an isotropic stack of SAVSS
/// blocks; every layer's output is one feature map of the pyramid.
struct Backbone {
  NetworkConfig cfg;
  PatchEmbed embed;
  std::optional<GbcBlock> stem;
  std::vector<SavssBlock> blocks;

  static Backbone init(const NetworkConfig& cfg, Rng& rng) {
    cfg.validate();
    Backbone b;
    b.cfg = cfg;
    b.embed = PatchEmbed::init(cfg.embed_dim, cfg.patch_size, cfg.grid_extent(), rng);
    if (cfg.stem_gbc) b.stem = GbcBlock::init(cfg.embed_dim, cfg.rank_divisor, cfg.norm_groups, rng);
    for (int i = 0; i < cfg.num_layers; ++i) b.blocks.push_back(SavssBlock::init(cfg, rng));
    return b;
  }

  /// image [N,3,H,W] -> pyramid of num_layers maps [N,C,H/ps,W/ps].
  std::vector<Tensor> forward(const Tensor& image) const {
    int gh = image.dim(2) / cfg.patch_size;
    int gw = image.dim(3) / cfg.patch_size;
    Tensor seq = embed.forward(image);
    if (stem) {
      Tensor grid = stem->forward(seq_to_grid(seq, gh, gw));
      seq = grid_to_seq(grid);
    }
    const ScanPathSet& paths =
        cached_scan_paths(scan_strategy_from_string(cfg.scan_strategy), gh, gw, cfg.num_paths);
    std::vector<Tensor> pyramid;
    pyramid.reserve(blocks.size());
    for (const SavssBlock& block : blocks) {
      seq = block.forward(seq, paths);
      pyramid.push_back(seq_to_grid(seq, gh, gw));
    }
    return pyramid;
  }

  std::vector<std::pair<std::string, Tensor>> named_params() const {
    std::vector<std::pair<std::string, Tensor>> out = embed.named_params();
    if (stem)
      for (auto& p : stem->named_params("stem_gbc")) out.push_back(std::move(p));
    for (size_t i = 0; i < blocks.size(); ++i)
      for (auto& p : blocks[i].named_params("layers." + std::to_string(i))) out.push_back(std::move(p));
    return out;
  }
};

}  // namespace crackseg
