#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "crackseg/conv.hpp"
#include "crackseg/rng.hpp"
#include "crackseg/tensor.hpp"

namespace crackseg {

/// Default rank rule for bottleneck convolutions.
inline int bottconv_rank(int channels, int rank_divisor) {
  return std::max(1, channels / std::max(1, rank_divisor));
}

/// Largest group count <= requested that divides the channel count.
inline int norm_groups_for(int channels, int requested) {
  int g = std::min(requested, channels);
  while (g > 1 && channels % g != 0) --g;
  return std::max(1, g);
}

namespace detail {

inline Tensor uniform_init(Shape shape, double bound, Rng& rng) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = rng.uniform(-bound, bound);
  return Tensor::from_data(std::move(shape), std::move(v), true);
}

}  // namespace detail

/// Low-rank factorized convolution: pointwise projection into a rank-r
/// subspace, depthwise spatial extraction there, pointwise projection out.
/// Pointwise stages carry biases; the depthwise stage is bias-free.
struct BottConv {
  int in_channels = 0;
  int out_channels = 0;
  int rank = 0;
  int ksize = 0;
  Tensor pw_in_w;   // [r, Cin, 1, 1]
  Tensor pw_in_b;   // [r]
  Tensor dw_w;      // [r, 1, k, k]
  Tensor pw_out_w;  // [Cout, r, 1, 1]
  Tensor pw_out_b;  // [Cout]

  static BottConv init(int cin, int cout, int k, int r, Rng& rng) {
    if (r < 1 || r > std::min(cin, cout))
      throw ConfigError("BottConv: rank " + std::to_string(r) + " violates 1 <= r <= min(Cin,Cout) = " +
                        std::to_string(std::min(cin, cout)));
    if (k < 1) throw ConfigError("BottConv: kernel size must be >= 1");
    BottConv b;
    b.in_channels = cin;
    b.out_channels = cout;
    b.rank = r;
    b.ksize = k;
    double bi = 1.0 / std::sqrt(static_cast<double>(cin));
    double bd = 1.0 / std::sqrt(static_cast<double>(k) * k);
    double bo = 1.0 / std::sqrt(static_cast<double>(r));
    b.pw_in_w = detail::uniform_init({r, cin, 1, 1}, bi, rng);
    b.pw_in_b = detail::uniform_init({r}, bi, rng);
    b.dw_w = detail::uniform_init({r, 1, k, k}, bd, rng);
    b.pw_out_w = detail::uniform_init({cout, r, 1, 1}, bo, rng);
    b.pw_out_b = detail::uniform_init({cout}, bo, rng);
    return b;
  }

  Tensor forward(const Tensor& x) const {
    if (x.ndim() != 4 || x.dim(1) != in_channels)
      throw ShapeError("BottConv: input channel axis 1 = " +
                       std::to_string(x.defined() && x.ndim() == 4 ? x.dim(1) : -1) +
                       " does not match Cin = " + std::to_string(in_channels));
    Tensor low = pointwise_conv2d(x, pw_in_w, pw_in_b);
    Tensor spatial = depthwise_conv2d(low, dw_w, Tensor(), 1, ksize / 2);
    return pointwise_conv2d(spatial, pw_out_w, pw_out_b);
  }

  /// Weight-only count: r*Cin + r*k^2 + Cout*r.
  long long weight_param_count() const {
    return static_cast<long long>(rank) * in_channels + static_cast<long long>(rank) * ksize * ksize +
           static_cast<long long>(out_channels) * rank;
  }

  /// Weights plus pointwise biases.
  long long param_count() const { return weight_param_count() + rank + out_channels; }

  std::vector<std::pair<std::string, Tensor>> named_params(const std::string& prefix) const {
    return {{prefix + ".pw_in.weight", pw_in_w},
            {prefix + ".pw_in.bias", pw_in_b},
            {prefix + ".dw.weight", dw_w},
            {prefix + ".pw_out.weight", pw_out_w},
            {prefix + ".pw_out.bias", pw_out_b}};
  }
};

/// Weight count of the dense convolution a BottConv replaces (bias-free).
inline long long full_conv_weight_count(int cin, int cout, int k) {
  return static_cast<long long>(cout) * cin * k * k;
}

struct GroupNormParams {
  int groups = 1;
  double eps = 1e-5;
  Tensor gamma;  // [C]
  Tensor beta;   // [C]

  static GroupNormParams init(int channels, int groups) {
    GroupNormParams p;
    p.groups = groups;
    p.gamma = Tensor::full({channels}, 1.0, true);
    p.beta = Tensor::zeros({channels}, true);
    return p;
  }

  Tensor forward(const Tensor& x) const { return group_norm(x, groups, gamma, beta, eps); }

  std::vector<std::pair<std::string, Tensor>> named_params(const std::string& prefix) const {
    return {{prefix + ".gamma", gamma}, {prefix + ".beta", beta}};
  }
};

/// Gated bottleneck block:
///   g1 = ReLU(N1(B1(x)));  x1 = ReLU(N2(B2(g1)));  g2 = ReLU(N3(B3(x)))
///   m  = x1 (.) g2;        y  = ReLU(N4(B4(m)));   out = y + x
/// Channel count is preserved so the residual is exact.
struct GbcBlock {
  int channels = 0;
  BottConv bott1, bott2, bott3, bott4;
  GroupNormParams norm1, norm2, norm3, norm4;

  static GbcBlock init(int channels, int rank_divisor, int norm_groups, Rng& rng, int ksize = 3) {
    GbcBlock b;
    b.channels = channels;
    int r = bottconv_rank(channels, rank_divisor);
    int g = norm_groups_for(channels, norm_groups);
    b.bott1 = BottConv::init(channels, channels, ksize, r, rng);
    b.bott2 = BottConv::init(channels, channels, ksize, r, rng);
    b.bott3 = BottConv::init(channels, channels, ksize, r, rng);
    b.bott4 = BottConv::init(channels, channels, ksize, r, rng);
    b.norm1 = GroupNormParams::init(channels, g);
    b.norm2 = GroupNormParams::init(channels, g);
    b.norm3 = GroupNormParams::init(channels, g);
    b.norm4 = GroupNormParams::init(channels, g);
    return b;
  }

  /// Gated branch output y (everything before the residual add).
  Tensor branch(const Tensor& x) const {
    if (x.ndim() != 4 || x.dim(1) != channels)
      throw ConfigError("GbcBlock: input channel axis 1 does not match block channels " +
                        std::to_string(channels));
    Tensor g1 = relu(norm1.forward(bott1.forward(x)));
    Tensor x1 = relu(norm2.forward(bott2.forward(g1)));
    Tensor g2 = relu(norm3.forward(bott3.forward(x)));
    Tensor m = mul(x1, g2);
    return relu(norm4.forward(bott4.forward(m)));
  }

  Tensor forward(const Tensor& x) const { return add(branch(x), x); }

  long long param_count() const {
    return bott1.param_count() + bott2.param_count() + bott3.param_count() + bott4.param_count() +
           4LL * 2 * channels;
  }

  std::vector<std::pair<std::string, Tensor>> named_params(const std::string& prefix) const {
    std::vector<std::pair<std::string, Tensor>> out;
    auto push = [&out](std::vector<std::pair<std::string, Tensor>> v) {
      for (auto& p : v) out.push_back(std::move(p));
    };
    push(bott1.named_params(prefix + ".bott1"));
    push(norm1.named_params(prefix + ".norm1"));
    push(bott2.named_params(prefix + ".bott2"));
    push(norm2.named_params(prefix + ".norm2"));
    push(bott3.named_params(prefix + ".bott3"));
    push(norm3.named_params(prefix + ".norm3"));
    push(bott4.named_params(prefix + ".bott4"));
    push(norm4.named_params(prefix + ".norm4"));
    return out;
  }
};

}  // namespace crackseg
