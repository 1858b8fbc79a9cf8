#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "crackseg/backbone.hpp"
#include "crackseg/conv.hpp"
#include "crackseg/gbc.hpp"
#include "crackseg/tensor.hpp"

namespace crackseg {

/// Per-pixel channel-mixing MLP: 1x1 projection, ReLU, 1x1 projection.
struct PixelMlp {
  Tensor w1, b1;  // [hidden, Cin, 1, 1], [hidden]
  Tensor w2, b2;  // [Cout, hidden, 1, 1], [Cout]

  static PixelMlp init(int cin, int hidden, int cout, Rng& rng) {
    PixelMlp m;
    double bi = 1.0 / std::sqrt(static_cast<double>(cin));
    double bh = 1.0 / std::sqrt(static_cast<double>(hidden));
    m.w1 = detail::uniform_init({hidden, cin, 1, 1}, bi, rng);
    m.b1 = detail::uniform_init({hidden}, bi, rng);
    m.w2 = detail::uniform_init({cout, hidden, 1, 1}, bh, rng);
    m.b2 = detail::uniform_init({cout}, bh, rng);
    return m;
  }

  Tensor forward(const Tensor& x) const {
    return pointwise_conv2d(relu(pointwise_conv2d(x, w1, b1)), w2, b2);
  }

  long long param_count() const {
    return static_cast<long long>(w1.numel()) + b1.numel() + w2.numel() + b2.numel();
  }

  std::vector<std::pair<std::string, Tensor>> named_params(const std::string& prefix) const {
    return {{prefix + ".fc1.weight", w1},
            {prefix + ".fc1.bias", b1},
            {prefix + ".fc2.weight", w2},
            {prefix + ".fc2.bias", b2}};
  }
};

/// Multi-scale segmentation head: per-level MLP + upsample to the output
/// resolution, channel concat, a fusion GBC over the stacked channels, a 3x3
/// spatial conv, and a final MLP down to one logit channel.
struct MfsHead {
  int levels = 0;
  int embed_dim = 0;
  std::string upsampler = "bilinear";
  std::vector<PixelMlp> level_mlps;  // C -> C each
  GbcBlock fuse_gbc;                 // over levels * C channels
  Tensor conv_w, conv_b;             // [nC, nC, 3, 3]
  PixelMlp out_mlp;                  // nC -> C -> 1

  static MfsHead init(const NetworkConfig& cfg, Rng& rng) {
    MfsHead h;
    h.levels = cfg.num_layers;
    h.embed_dim = cfg.embed_dim;
    h.upsampler = cfg.upsampler;
    int c = cfg.embed_dim;
    int nc = cfg.num_layers * c;
    for (int i = 0; i < cfg.num_layers; ++i) h.level_mlps.push_back(PixelMlp::init(c, c, c, rng));
    h.fuse_gbc = GbcBlock::init(nc, cfg.rank_divisor, cfg.norm_groups, rng);
    double bound = 1.0 / std::sqrt(9.0 * nc);
    h.conv_w = detail::uniform_init({nc, nc, 3, 3}, bound, rng);
    h.conv_b = detail::uniform_init({nc}, bound, rng);
    h.out_mlp = PixelMlp::init(nc, c, 1, rng);
    // foreground pixels are rare; start the output logit at a low prior so
    // early steps are not spent learning the base rate
    h.out_mlp.b2.raw_data()[0] = -2.0;
    return h;
  }

  /// pyramid of [N,C,h,w] -> logits [N,1,out_h,out_w].
  Tensor forward(const std::vector<Tensor>& pyramid, int out_h, int out_w) const {
    if (pyramid.empty()) throw UsageError("mfs head: empty feature pyramid");
    if (static_cast<int>(pyramid.size()) != levels)
      throw ConfigError("mfs head: expected " + std::to_string(levels) + " pyramid levels, got " +
                        std::to_string(pyramid.size()));
    const Tensor& f0 = pyramid.front();
    if (f0.ndim() != 4) throw ShapeError("mfs head: pyramid entries must be rank-4");
    int h = f0.dim(2), w = f0.dim(3);
    for (const Tensor& f : pyramid) detail::require_same_shape("mfs head pyramid", f0, f);
    if (out_h % h != 0 || out_w % w != 0 || out_h / h != out_w / w)
      throw ConfigError("mfs head: output " + std::to_string(out_h) + "x" + std::to_string(out_w) +
                        " is not an integer multiple of feature size " + std::to_string(h) + "x" +
                        std::to_string(w));
    int scale = out_h / h;
    std::vector<Tensor> ups;
    ups.reserve(pyramid.size());
    for (size_t i = 0; i < pyramid.size(); ++i) {
      Tensor m = level_mlps[i].forward(pyramid[i]);
      ups.push_back(scale == 1 ? m : bilinear_upsample(m, scale));
    }
    Tensor merged = concat(ups, 1);
    Tensor refined = fuse_gbc.forward(merged);
    Tensor conv = conv2d(refined, conv_w, conv_b, 1, 1);
    return out_mlp.forward(conv);
  }

  std::vector<std::pair<std::string, Tensor>> named_params() const {
    std::vector<std::pair<std::string, Tensor>> out;
    for (size_t i = 0; i < level_mlps.size(); ++i)
      for (auto& p : level_mlps[i].named_params("head.mlp" + std::to_string(i)))
        out.push_back(std::move(p));
    for (auto& p : fuse_gbc.named_params("head.fuse_gbc")) out.push_back(std::move(p));
    out.push_back({"head.conv.weight", conv_w});
    out.push_back({"head.conv.bias", conv_b});
    for (auto& p : out_mlp.named_params("head.out")) out.push_back(std::move(p));
    return out;
  }
};

/// Strict binarization: mask = prob > threshold.
inline Tensor binarize(const Tensor& prob, double threshold) {
  detail::require_defined("binarize", prob);
  if (!(threshold > 0.0 && threshold < 1.0))
    throw ConfigError("binarize: threshold must lie in (0,1)");
  std::vector<double> out(prob.data());
  for (double& v : out) v = v > threshold ? 1.0 : 0.0;
  return Tensor::from_data(prob.shape(), std::move(out));
}

}  // namespace crackseg
