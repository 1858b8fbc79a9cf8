#pragma once

#include <cmath>
#include <vector>

#include "crackseg/tensor.hpp"

namespace crackseg {

namespace detail {

inline int conv_out_extent(int in, int k, int stride, int pad) {
  return (in + 2 * pad - k) / stride + 1;
}

// Unrolls one sample's receptive fields into cols[Cin*k*k][OH*OW].
inline void im2col(const double* x, int cin, int h, int w, int k, int stride, int pad,
                   int oh, int ow, double* cols) {
  for (int c = 0; c < cin; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        double* row = cols + ((static_cast<long long>(c) * k + ky) * k + kx) * (static_cast<long long>(oh) * ow);
        for (int oy = 0; oy < oh; ++oy) {
          int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) {
            std::fill(row + static_cast<long long>(oy) * ow, row + static_cast<long long>(oy + 1) * ow, 0.0);
            continue;
          }
          const double* xr = x + (static_cast<long long>(c) * h + iy) * w;
          for (int ox = 0; ox < ow; ++ox) {
            int ix = ox * stride - pad + kx;
            row[static_cast<long long>(oy) * ow + ox] = (ix >= 0 && ix < w) ? xr[ix] : 0.0;
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatters cols gradients back onto the input plane.
inline void col2im_acc(const double* cols, int cin, int h, int w, int k, int stride, int pad,
                       int oh, int ow, double* dx) {
  for (int c = 0; c < cin; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const double* row = cols + ((static_cast<long long>(c) * k + ky) * k + kx) * (static_cast<long long>(oh) * ow);
        for (int oy = 0; oy < oh; ++oy) {
          int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          double* xr = dx + (static_cast<long long>(c) * h + iy) * w;
          for (int ox = 0; ox < ow; ++ox) {
            int ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < w) xr[ix] += row[static_cast<long long>(oy) * ow + ox];
          }
        }
      }
    }
  }
}

inline void conv_check_args(const char* op, const Tensor& input, const Tensor& weight,
                            const Tensor& bias, int stride, int padding) {
  require_defined(op, input);
  require_defined(op, weight);
  if (input.ndim() != 4)
    throw ShapeError(std::string(op) + ": input must be rank-4 [N,C,H,W], got " + shape_str(input.shape()));
  if (weight.ndim() != 4)
    throw ShapeError(std::string(op) + ": weight must be rank-4, got " + shape_str(weight.shape()));
  if (weight.dim(2) != weight.dim(3))
    throw ShapeError(std::string(op) + ": kernel must be square (axis 2 = " + std::to_string(weight.dim(2)) +
                     ", axis 3 = " + std::to_string(weight.dim(3)) + ")");
  int k = weight.dim(2);
  if (k < 1) throw ConfigError(std::string(op) + ": kernel size must be >= 1");
  if (stride < 1) throw ConfigError(std::string(op) + ": stride must be >= 1");
  if (padding < 0) throw ConfigError(std::string(op) + ": padding must be >= 0");
  if (input.dim(2) + 2 * padding < k || input.dim(3) + 2 * padding < k)
    throw ShapeError(std::string(op) + ": padded spatial extent smaller than kernel (H axis 2 = " +
                     std::to_string(input.dim(2)) + ", W axis 3 = " + std::to_string(input.dim(3)) +
                     ", k = " + std::to_string(k) + ")");
  if (bias.defined()) {
    if (bias.ndim() != 1 || bias.dim(0) != weight.dim(0))
      throw ShapeError(std::string(op) + ": bias must be rank-1 [Cout] matching weight axis 0 (" +
                       std::to_string(weight.dim(0)) + "), got " + shape_str(bias.shape()));
  }
}

}  // namespace detail

/// Standard cross-correlation. Output H' = floor((H + 2p - k)/stride) + 1.
inline Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias = Tensor(),
                     int stride = 1, int padding = 0) {
  detail::conv_check_args("conv2d", input, weight, bias, stride, padding);
  if (input.dim(1) != weight.dim(1))
    throw ShapeError("conv2d: input channel axis 1 = " + std::to_string(input.dim(1)) +
                     " does not match weight axis 1 = " + std::to_string(weight.dim(1)));
  const int n = input.dim(0), cin = input.dim(1), h = input.dim(2), w = input.dim(3);
  const int cout = weight.dim(0), k = weight.dim(2);
  const int oh = detail::conv_out_extent(h, k, stride, padding);
  const int ow = detail::conv_out_extent(w, k, stride, padding);
  const long long plane = static_cast<long long>(oh) * ow;
  const long long kdim = static_cast<long long>(cin) * k * k;
  const bool direct = (k == 1 && stride == 1 && padding == 0);

  std::vector<double> out(static_cast<long long>(n) * cout * plane);
  std::vector<double> cols;
  if (!direct) cols.resize(kdim * plane);
  for (int ni = 0; ni < n; ++ni) {
    const double* xptr = input.data().data() + static_cast<long long>(ni) * cin * h * w;
    const double* cptr = xptr;
    if (!direct) {
      detail::im2col(xptr, cin, h, w, k, stride, padding, oh, ow, cols.data());
      cptr = cols.data();
    }
    detail::matmul_nn_raw(weight.data().data(), cptr,
                          out.data() + static_cast<long long>(ni) * cout * plane, cout, kdim, plane, false);
  }
  if (bias.defined()) {
    const auto& bd = bias.data();
    for (int ni = 0; ni < n; ++ni)
      for (int co = 0; co < cout; ++co) {
        double b = bd[co];
        double* o = out.data() + (static_cast<long long>(ni) * cout + co) * plane;
        for (long long i = 0; i < plane; ++i) o[i] += b;
      }
  }

  auto xn = detail::node_of(input);
  auto wn = detail::node_of(weight);
  auto bn = bias.defined() ? detail::node_of(bias) : nullptr;
  Shape out_shape{n, cout, oh, ow};
  auto bw = [xn, wn, bn, n, cin, h, w, cout, k, stride, padding, oh, ow, plane, kdim,
             direct](detail::Node& self) {
    std::vector<double> cols;
    if (!direct) cols.resize(kdim * plane);
    std::vector<double> dcols(xn->requires_grad ? kdim * plane : 0);
    for (int ni = 0; ni < n; ++ni) {
      const double* gy = self.grad.data() + static_cast<long long>(ni) * cout * plane;
      const double* xptr = xn->data.data() + static_cast<long long>(ni) * cin * h * w;
      if (wn->requires_grad) {
        const double* cptr = xptr;
        if (!direct) {
          detail::im2col(xptr, cin, h, w, k, stride, padding, oh, ow, cols.data());
          cptr = cols.data();
        }
        // dW[cout, kdim] += gy * cols^T
        detail::matmul_nt_raw(gy, cptr, wn->grad_buf().data(), cout, plane, kdim, true);
      }
      if (xn->requires_grad) {
        double* dx = xn->grad_buf().data() + static_cast<long long>(ni) * cin * h * w;
        if (direct) {
          detail::matmul_tn_raw(wn->data.data(), gy, dx, kdim, cout, plane, true);
        } else {
          detail::matmul_tn_raw(wn->data.data(), gy, dcols.data(), kdim, cout, plane, false);
          detail::col2im_acc(dcols.data(), cin, h, w, k, stride, padding, oh, ow, dx);
        }
      }
    }
    if (bn && bn->requires_grad) {
      auto& db = bn->grad_buf();
      for (int ni = 0; ni < n; ++ni)
        for (int co = 0; co < cout; ++co) {
          const double* gy = self.grad.data() + (static_cast<long long>(ni) * cout + co) * plane;
          double s = 0.0;
          for (long long i = 0; i < plane; ++i) s += gy[i];
          db[co] += s;
        }
    }
  };
  if (bias.defined())
    return detail::make_result("conv2d", out_shape, std::move(out), {input, weight, bias}, bw);
  return detail::make_result("conv2d", out_shape, std::move(out), {input, weight}, bw);
}

/// Per-channel spatial convolution (groups == C), weight [C,1,k,k].
inline Tensor depthwise_conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias = Tensor(),
                               int stride = 1, int padding = 0) {
  detail::conv_check_args("depthwise_conv2d", input, weight, bias, stride, padding);
  if (weight.dim(1) != 1)
    throw ShapeError("depthwise_conv2d: weight axis 1 must be 1 (per-channel kernels), got " +
                     std::to_string(weight.dim(1)));
  if (input.dim(1) != weight.dim(0))
    throw ShapeError("depthwise_conv2d: input channel axis 1 = " + std::to_string(input.dim(1)) +
                     " does not match weight axis 0 = " + std::to_string(weight.dim(0)));
  const int n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const int k = weight.dim(2);
  const int oh = detail::conv_out_extent(h, k, stride, padding);
  const int ow = detail::conv_out_extent(w, k, stride, padding);
  const long long nc = static_cast<long long>(n) * c;

  std::vector<double> out(nc * oh * ow);
  const auto& xd = input.data();
  const auto& wd = weight.data();
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (long long p = 0; p < nc; ++p) {
    int ci = static_cast<int>(p % c);
    const double* xp = xd.data() + p * h * w;
    const double* wp = wd.data() + static_cast<long long>(ci) * k * k;
    double* op = out.data() + p * oh * ow;
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox) {
        double s = 0.0;
        for (int ky = 0; ky < k; ++ky) {
          int iy = oy * stride - padding + ky;
          if (iy < 0 || iy >= h) continue;
          for (int kx = 0; kx < k; ++kx) {
            int ix = ox * stride - padding + kx;
            if (ix < 0 || ix >= w) continue;
            s += wp[ky * k + kx] * xp[iy * w + ix];
          }
        }
        op[oy * ow + ox] = s;
      }
  }
  if (bias.defined()) {
    const auto& bd = bias.data();
    for (long long p = 0; p < nc; ++p) {
      double b = bd[p % c];
      double* op = out.data() + p * oh * ow;
      for (long long i = 0; i < static_cast<long long>(oh) * ow; ++i) op[i] += b;
    }
  }

  auto xn = detail::node_of(input);
  auto wn = detail::node_of(weight);
  auto bn = bias.defined() ? detail::node_of(bias) : nullptr;
  Shape out_shape{n, c, oh, ow};
  auto bw = [xn, wn, bn, n, c, h, w, k, stride, padding, oh, ow](detail::Node& self) {
    const long long nc = static_cast<long long>(n) * c;
    if (xn->requires_grad) {
      auto& dx = xn->grad_buf();
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
      for (long long p = 0; p < nc; ++p) {
        int ci = static_cast<int>(p % c);
        const double* gp = self.grad.data() + p * oh * ow;
        const double* wp = wn->data.data() + static_cast<long long>(ci) * k * k;
        double* dxp = dx.data() + p * h * w;
        for (int oy = 0; oy < oh; ++oy)
          for (int ox = 0; ox < ow; ++ox) {
            double g = gp[oy * ow + ox];
            for (int ky = 0; ky < k; ++ky) {
              int iy = oy * stride - padding + ky;
              if (iy < 0 || iy >= h) continue;
              for (int kx = 0; kx < k; ++kx) {
                int ix = ox * stride - padding + kx;
                if (ix < 0 || ix >= w) continue;
                dxp[iy * w + ix] += g * wp[ky * k + kx];
              }
            }
          }
      }
    }
    if (wn->requires_grad) {
      auto& dw = wn->grad_buf();
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
      for (int ci = 0; ci < c; ++ci) {
        double* dwp = dw.data() + static_cast<long long>(ci) * k * k;
        for (int ni = 0; ni < n; ++ni) {
          long long p = static_cast<long long>(ni) * c + ci;
          const double* gp = self.grad.data() + p * oh * ow;
          const double* xp = xn->data.data() + p * h * w;
          for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox) {
              double g = gp[oy * ow + ox];
              for (int ky = 0; ky < k; ++ky) {
                int iy = oy * stride - padding + ky;
                if (iy < 0 || iy >= h) continue;
                for (int kx = 0; kx < k; ++kx) {
                  int ix = ox * stride - padding + kx;
                  if (ix < 0 || ix >= w) continue;
                  dwp[ky * k + kx] += g * xp[iy * w + ix];
                }
              }
            }
        }
      }
    }
    if (bn && bn->requires_grad) {
      auto& db = bn->grad_buf();
      for (long long p = 0; p < nc; ++p) {
        const double* gp = self.grad.data() + p * oh * ow;
        double s = 0.0;
        for (long long i = 0; i < static_cast<long long>(oh) * ow; ++i) s += gp[i];
        db[p % c] += s;
      }
    }
  };
  if (bias.defined())
    return detail::make_result("depthwise_conv2d", out_shape, std::move(out), {input, weight, bias}, bw);
  return detail::make_result("depthwise_conv2d", out_shape, std::move(out), {input, weight}, bw);
}

/// 1x1 convolution: per-pixel channel mixing. Equals conv2d with k=1, pad=0.
inline Tensor pointwise_conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias = Tensor()) {
  detail::require_defined("pointwise_conv2d", input);
  detail::require_defined("pointwise_conv2d", weight);
  if (weight.ndim() != 4 || weight.dim(2) != 1 || weight.dim(3) != 1)
    throw ShapeError("pointwise_conv2d: weight must be [Cout,Cin,1,1], got " + shape_str(weight.shape()));
  return conv2d(input, weight, bias, 1, 0);
}

/// Group normalization over [N,C,H,W]: per (sample, group) zero mean / unit
/// variance before the per-channel affine.
inline Tensor group_norm(const Tensor& input, int groups, const Tensor& gamma, const Tensor& beta,
                         double eps = 1e-5) {
  detail::require_defined("group_norm", input);
  detail::require_defined("group_norm", gamma);
  detail::require_defined("group_norm", beta);
  if (input.ndim() != 4)
    throw ShapeError("group_norm: input must be rank-4 [N,C,H,W], got " + shape_str(input.shape()));
  const int n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  if (groups < 1 || c % groups != 0)
    throw ConfigError("group_norm: channel count " + std::to_string(c) + " not divisible by groups " +
                      std::to_string(groups));
  if (!(eps > 0.0)) throw ConfigError("group_norm: eps must be positive");
  if (gamma.ndim() != 1 || gamma.dim(0) != c)
    throw ShapeError("group_norm: gamma must be rank-1 [C], got " + shape_str(gamma.shape()));
  if (beta.ndim() != 1 || beta.dim(0) != c)
    throw ShapeError("group_norm: beta must be rank-1 [C], got " + shape_str(beta.shape()));

  const int cg = c / groups;             // channels per group
  const long long m = static_cast<long long>(cg) * h * w;  // elements per group
  const long long plane = static_cast<long long>(h) * w;

  const auto& xd = input.data();
  const auto& gd = gamma.data();
  const auto& bd = beta.data();
  std::vector<double> out(xd.size());
  std::vector<double> means(static_cast<long long>(n) * groups);
  std::vector<double> inv_stds(static_cast<long long>(n) * groups);

  for (int ni = 0; ni < n; ++ni) {
    for (int g = 0; g < groups; ++g) {
      const double* base = xd.data() + (static_cast<long long>(ni) * c + static_cast<long long>(g) * cg) * plane;
      double mean = 0.0;
      for (long long i = 0; i < m; ++i) mean += base[i];
      mean /= static_cast<double>(m);
      double var = 0.0;
      for (long long i = 0; i < m; ++i) {
        double d = base[i] - mean;
        var += d * d;
      }
      var /= static_cast<double>(m);
      double inv_std = 1.0 / std::sqrt(var + eps);
      means[ni * groups + g] = mean;
      inv_stds[ni * groups + g] = inv_std;
      double* o = out.data() + (static_cast<long long>(ni) * c + static_cast<long long>(g) * cg) * plane;
      for (int cc = 0; cc < cg; ++cc) {
        double ga = gd[g * cg + cc];
        double be = bd[g * cg + cc];
        for (long long i = 0; i < plane; ++i) {
          double xhat = (base[cc * plane + i] - mean) * inv_std;
          o[cc * plane + i] = ga * xhat + be;
        }
      }
    }
  }

  auto xn = detail::node_of(input);
  auto gn = detail::node_of(gamma);
  auto betan = detail::node_of(beta);
  auto stats_mean = std::make_shared<std::vector<double>>(std::move(means));
  auto stats_istd = std::make_shared<std::vector<double>>(std::move(inv_stds));
  return detail::make_result(
      "group_norm", input.shape(), std::move(out), {input, gamma, beta},
      [xn, gn, betan, stats_mean, stats_istd, n, c, groups, cg, m, plane](detail::Node& self) {
        for (int ni = 0; ni < n; ++ni) {
          for (int g = 0; g < groups; ++g) {
            long long off = (static_cast<long long>(ni) * c + static_cast<long long>(g) * cg) * plane;
            const double* x = xn->data.data() + off;
            const double* gy = self.grad.data() + off;
            double mean = (*stats_mean)[ni * groups + g];
            double istd = (*stats_istd)[ni * groups + g];
            if (gn->requires_grad || betan->requires_grad) {
              for (int cc = 0; cc < cg; ++cc) {
                double dg = 0.0, db = 0.0;
                for (long long i = 0; i < plane; ++i) {
                  double xhat = (x[cc * plane + i] - mean) * istd;
                  dg += gy[cc * plane + i] * xhat;
                  db += gy[cc * plane + i];
                }
                if (gn->requires_grad) gn->grad_buf()[g * cg + cc] += dg;
                if (betan->requires_grad) betan->grad_buf()[g * cg + cc] += db;
              }
            }
            if (xn->requires_grad) {
              // dxhat = gy * gamma; dx = istd * (dxhat - mean(dxhat) - xhat * mean(dxhat*xhat))
              double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
              for (int cc = 0; cc < cg; ++cc) {
                double ga = gn->data[g * cg + cc];
                for (long long i = 0; i < plane; ++i) {
                  double d = gy[cc * plane + i] * ga;
                  double xhat = (x[cc * plane + i] - mean) * istd;
                  sum_dxhat += d;
                  sum_dxhat_xhat += d * xhat;
                }
              }
              double mu_d = sum_dxhat / static_cast<double>(m);
              double mu_dx = sum_dxhat_xhat / static_cast<double>(m);
              double* dx = xn->grad_buf().data() + off;
              for (int cc = 0; cc < cg; ++cc) {
                double ga = gn->data[g * cg + cc];
                for (long long i = 0; i < plane; ++i) {
                  double d = gy[cc * plane + i] * ga;
                  double xhat = (x[cc * plane + i] - mean) * istd;
                  dx[cc * plane + i] += istd * (d - mu_d - xhat * mu_dx);
                }
              }
            }
          }
        }
      });
}

/// Bilinear upsampling by an integer factor with half-pixel sample centers.
inline Tensor bilinear_upsample(const Tensor& input, int scale) {
  detail::require_defined("bilinear_upsample", input);
  if (input.ndim() != 4)
    throw ShapeError("bilinear_upsample: input must be rank-4 [N,C,H,W], got " + shape_str(input.shape()));
  if (scale < 1) throw ConfigError("bilinear_upsample: scale must be >= 1");
  const int n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const int oh = h * scale, ow = w * scale;

  // Per-axis source indices and weights, shared by forward and backward.
  auto make_axis = [scale](int in, int out) {
    std::vector<int> i0(out), i1(out);
    std::vector<double> w1(out);
    for (int o = 0; o < out; ++o) {
      double src = (o + 0.5) / scale - 0.5;
      double fl = std::floor(src);
      int a = static_cast<int>(fl);
      double frac = src - fl;
      int b = a + 1;
      if (a < 0) a = 0;
      if (b < 0) b = 0;
      if (a > in - 1) a = in - 1;
      if (b > in - 1) b = in - 1;
      i0[o] = a;
      i1[o] = b;
      w1[o] = frac;
    }
    return std::make_tuple(i0, i1, w1);
  };
  auto [y0, y1, wy] = make_axis(h, oh);
  auto [x0, x1, wx] = make_axis(w, ow);

  const auto& xd = input.data();
  std::vector<double> out(static_cast<long long>(n) * c * oh * ow);
  const long long nc = static_cast<long long>(n) * c;
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (long long p = 0; p < nc; ++p) {
    const double* xp = xd.data() + p * h * w;
    double* op = out.data() + p * oh * ow;
    for (int oy = 0; oy < oh; ++oy) {
      double fy = wy[oy];
      const double* r0 = xp + static_cast<long long>(y0[oy]) * w;
      const double* r1 = xp + static_cast<long long>(y1[oy]) * w;
      for (int ox = 0; ox < ow; ++ox) {
        double fx = wx[ox];
        double top = r0[x0[ox]] * (1.0 - fx) + r0[x1[ox]] * fx;
        double bot = r1[x0[ox]] * (1.0 - fx) + r1[x1[ox]] * fx;
        op[static_cast<long long>(oy) * ow + ox] = top * (1.0 - fy) + bot * fy;
      }
    }
  }

  auto xn = detail::node_of(input);
  Shape out_shape{n, c, oh, ow};
  auto ty0 = std::make_shared<std::vector<int>>(std::move(y0));
  auto ty1 = std::make_shared<std::vector<int>>(std::move(y1));
  auto twy = std::make_shared<std::vector<double>>(std::move(wy));
  auto tx0 = std::make_shared<std::vector<int>>(std::move(x0));
  auto tx1 = std::make_shared<std::vector<int>>(std::move(x1));
  auto twx = std::make_shared<std::vector<double>>(std::move(wx));
  return detail::make_result(
      "bilinear_upsample", out_shape, std::move(out), {input},
      [xn, ty0, ty1, twy, tx0, tx1, twx, nc, h, w, oh, ow](detail::Node& self) {
        if (!xn->requires_grad) return;
        auto& dx = xn->grad_buf();
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
        for (long long p = 0; p < nc; ++p) {
          const double* gp = self.grad.data() + p * oh * ow;
          double* dxp = dx.data() + p * h * w;
          for (int oy = 0; oy < oh; ++oy) {
            double fy = (*twy)[oy];
            double* r0 = dxp + static_cast<long long>((*ty0)[oy]) * w;
            double* r1 = dxp + static_cast<long long>((*ty1)[oy]) * w;
            for (int ox = 0; ox < ow; ++ox) {
              double fx = (*twx)[ox];
              double g = gp[static_cast<long long>(oy) * ow + ox];
              r0[(*tx0)[ox]] += g * (1.0 - fy) * (1.0 - fx);
              r0[(*tx1)[ox]] += g * (1.0 - fy) * fx;
              r1[(*tx0)[ox]] += g * fy * (1.0 - fx);
              r1[(*tx1)[ox]] += g * fy * fx;
            }
          }
        }
      });
}

}  // namespace crackseg
