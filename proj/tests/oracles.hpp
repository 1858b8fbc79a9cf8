// Independent reference implementations used as test oracles. Everything here
// is written as plain loops against the math, deliberately not sharing code
// with the library implementations it checks.
#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "crackseg/metrics.hpp"
#include "crackseg/rng.hpp"
#include "crackseg/ssm.hpp"
#include "crackseg/tensor.hpp"

namespace oracles {

inline crackseg::Tensor random_tensor(crackseg::Rng& rng, const crackseg::Shape& shape,
                                      double lo = -1.0, double hi = 1.0, bool requires_grad = false) {
  std::vector<double> v(crackseg::shape_numel(shape));
  for (double& x : v) x = rng.uniform(lo, hi);
  return crackseg::Tensor::from_data(shape, std::move(v), requires_grad);
}

// Direct nested-loop cross-correlation; groups=1 is a full conv, groups=C a
// depthwise conv with weight [C,1,k,k].
inline crackseg::Tensor conv2d_loop_ref(const crackseg::Tensor& x, const crackseg::Tensor& w,
                                        const crackseg::Tensor* bias, int stride, int pad,
                                        int groups = 1) {
  int n = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
  int cout = w.dim(0), k = w.dim(2);
  int cin_g = cin / groups;
  int cout_g = cout / groups;
  int oh = (h + 2 * pad - k) / stride + 1;
  int ow = (wd + 2 * pad - k) / stride + 1;
  std::vector<double> out(static_cast<size_t>(n) * cout * oh * ow, 0.0);
  for (int ni = 0; ni < n; ++ni)
    for (int co = 0; co < cout; ++co) {
      int g = co / cout_g;
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          double s = bias ? bias->data()[co] : 0.0;
          for (int ci = 0; ci < cin_g; ++ci)
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx) {
                int iy = oy * stride - pad + ky;
                int ix = ox * stride - pad + kx;
                if (iy < 0 || iy >= h || ix < 0 || ix >= wd) continue;
                double xv = x.at({ni, g * cin_g + ci, iy, ix});
                double wv = w.at({co, ci, ky, kx});
                s += xv * wv;
              }
          out[((static_cast<size_t>(ni) * cout + co) * oh + oy) * ow + ox] = s;
        }
    }
  return crackseg::Tensor::from_data({n, cout, oh, ow}, std::move(out));
}

// Per-pixel matrix multiply, the definition of a 1x1 convolution.
inline crackseg::Tensor pointwise_matmul_ref(const crackseg::Tensor& x, const crackseg::Tensor& w,
                                             const crackseg::Tensor* bias) {
  int n = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
  int cout = w.dim(0);
  std::vector<double> out(static_cast<size_t>(n) * cout * h * wd, 0.0);
  for (int ni = 0; ni < n; ++ni)
    for (int y = 0; y < h; ++y)
      for (int xx = 0; xx < wd; ++xx)
        for (int co = 0; co < cout; ++co) {
          double s = bias ? bias->data()[co] : 0.0;
          for (int ci = 0; ci < cin; ++ci) s += w.at({co, ci, 0, 0}) * x.at({ni, ci, y, xx});
          out[((static_cast<size_t>(ni) * cout + co) * h + y) * wd + xx] = s;
        }
  return crackseg::Tensor::from_data({n, cout, h, wd}, std::move(out));
}

// Two-pass mean/variance group normalization.
inline crackseg::Tensor group_norm_ref(const crackseg::Tensor& x, int groups,
                                       const crackseg::Tensor& gamma, const crackseg::Tensor& beta,
                                       double eps) {
  int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  int cg = c / groups;
  std::vector<double> out(x.numel());
  for (int ni = 0; ni < n; ++ni)
    for (int g = 0; g < groups; ++g) {
      double mean = 0.0;
      long long m = static_cast<long long>(cg) * h * w;
      for (int cc = 0; cc < cg; ++cc)
        for (int y = 0; y < h; ++y)
          for (int xx = 0; xx < w; ++xx) mean += x.at({ni, g * cg + cc, y, xx});
      mean /= static_cast<double>(m);
      double var = 0.0;
      for (int cc = 0; cc < cg; ++cc)
        for (int y = 0; y < h; ++y)
          for (int xx = 0; xx < w; ++xx) {
            double d = x.at({ni, g * cg + cc, y, xx}) - mean;
            var += d * d;
          }
      var /= static_cast<double>(m);
      for (int cc = 0; cc < cg; ++cc)
        for (int y = 0; y < h; ++y)
          for (int xx = 0; xx < w; ++xx) {
            double xhat = (x.at({ni, g * cg + cc, y, xx}) - mean) / std::sqrt(var + eps);
            out[((static_cast<size_t>(ni) * c + g * cg + cc) * h + y) * w + xx] =
                gamma.data()[g * cg + cc] * xhat + beta.data()[g * cg + cc];
          }
    }
  return crackseg::Tensor::from_data(x.shape(), std::move(out));
}

// Naive per-step recurrence with the hidden state materialized explicitly.
// The ZOH quotient is computed through expm1, an independent route to the
// same limit the implementation reaches with a series branch.
inline crackseg::Tensor selective_scan_ref(const crackseg::Tensor& seq, const crackseg::SsmParams& p) {
  int l = seq.dim(0), d_dim = seq.dim(1);
  int g_dim = p.state_dim;
  std::vector<double> delta(static_cast<size_t>(l) * d_dim);
  std::vector<double> q(static_cast<size_t>(l) * g_dim), r(static_cast<size_t>(l) * g_dim);
  for (int t = 0; t < l; ++t) {
    for (int d = 0; d < d_dim; ++d) {
      double s = p.bd.data()[d];
      for (int e = 0; e < d_dim; ++e) s += seq.at({t, e}) * p.wd.at({e, d});
      delta[t * d_dim + d] = s > 30.0 ? s : std::log1p(std::exp(s));
    }
    for (int g = 0; g < g_dim; ++g) {
      double sq = 0.0, sr = 0.0;
      for (int e = 0; e < d_dim; ++e) {
        sq += seq.at({t, e}) * p.wq.at({e, g});
        sr += seq.at({t, e}) * p.wr.at({e, g});
      }
      q[t * g_dim + g] = sq;
      r[t * g_dim + g] = sr;
    }
  }
  std::vector<double> z(static_cast<size_t>(g_dim) * d_dim, 0.0);
  std::vector<double> out(static_cast<size_t>(l) * d_dim, 0.0);
  for (int t = 0; t < l; ++t) {
    for (int g = 0; g < g_dim; ++g)
      for (int d = 0; d < d_dim; ++d) {
        double pv = -std::exp(p.log_p.at({g, d}));
        double dt = delta[t * d_dim + d];
        double pbar = std::exp(dt * pv);
        double qbar = (std::expm1(dt * pv) / pv) * q[t * g_dim + g];
        z[g * d_dim + d] = pbar * z[g * d_dim + d] + qbar * seq.at({t, d});
      }
    for (int d = 0; d < d_dim; ++d) {
      double u = p.skip.data()[d] * seq.at({t, d});
      for (int g = 0; g < g_dim; ++g) u += r[t * g_dim + g] * z[g * d_dim + d];
      out[t * d_dim + d] = u;
    }
  }
  return crackseg::Tensor::from_data({l, d_dim}, std::move(out));
}

inline double max_abs_diff(const crackseg::Tensor& a, const crackseg::Tensor& b) {
  double m = 0.0;
  const auto& ad = a.data();
  const auto& bd = b.data();
  for (size_t i = 0; i < ad.size(); ++i) m = std::max(m, std::fabs(ad[i] - bd[i]));
  return m;
}

// Central finite differences against analytic gradients. Returns the worst
// mixed absolute/relative error over all checked coordinates.
template <class F>
inline double fd_max_error(F&& f, const std::vector<crackseg::Tensor>& inputs, double h = 1e-5,
                           int max_coords_per_tensor = 0) {
  using namespace crackseg;
  Tensor loss = f();
  for (auto t : inputs) t.zero_grad();
  backward(loss);
  std::vector<std::vector<double>> analytic;
  for (const auto& t : inputs)
    analytic.push_back(t.has_grad() ? t.grad() : std::vector<double>(t.numel(), 0.0));

  NoGradGuard ng;
  Rng pick(987654321);
  double worst = 0.0;
  for (size_t ti = 0; ti < inputs.size(); ++ti) {
    Tensor t = inputs[ti];
    auto& data = t.raw_data();
    std::vector<size_t> coords;
    if (max_coords_per_tensor <= 0 || static_cast<long long>(data.size()) <= max_coords_per_tensor) {
      coords.resize(data.size());
      for (size_t j = 0; j < data.size(); ++j) coords[j] = j;
    } else {
      for (int j = 0; j < max_coords_per_tensor; ++j)
        coords.push_back(static_cast<size_t>(pick.uniform_int(0, static_cast<int>(data.size()) - 1)));
    }
    for (size_t j : coords) {
      double orig = data[j];
      data[j] = orig + h;
      double fp = f().value();
      data[j] = orig - h;
      double fm = f().value();
      data[j] = orig;
      double num = (fp - fm) / (2.0 * h);
      double ana = analytic[ti][j];
      double err = std::fabs(ana - num) / std::max({1.0, std::fabs(ana), std::fabs(num)});
      worst = std::max(worst, err);
    }
  }
  return worst;
}

// Brute-force metric recomputation on raw pixel arrays.
struct BruteMetrics {
  double ods = 0, ods_threshold = 0, ois = 0, precision = 0, recall = 0, f1 = 0, miou = 0;
};

inline BruteMetrics brute_evaluate(const std::vector<std::vector<double>>& probs,
                                   const std::vector<std::vector<double>>& gts,
                                   const std::vector<double>& thresholds) {
  size_t n_img = probs.size();
  size_t n_thr = thresholds.size();
  std::vector<long long> tp(n_thr, 0), fp(n_thr, 0), fn(n_thr, 0), tn(n_thr, 0);
  std::vector<double> best_img(n_img, -1.0);
  for (size_t i = 0; i < n_img; ++i) {
    for (size_t ti = 0; ti < n_thr; ++ti) {
      long long a = 0, b = 0, c = 0, d = 0;
      for (size_t px = 0; px < probs[i].size(); ++px) {
        bool pos = probs[i][px] > thresholds[ti];
        bool g = gts[i][px] == 1.0;
        if (pos && g)
          ++a;
        else if (pos)
          ++b;
        else if (g)
          ++c;
        else
          ++d;
      }
      tp[ti] += a;
      fp[ti] += b;
      fn[ti] += c;
      tn[ti] += d;
      double f;
      if (a + b + c == 0)
        f = 1.0;
      else {
        double p = (a + b) > 0 ? double(a) / double(a + b) : 0.0;
        double r = (a + c) > 0 ? double(a) / double(a + c) : 0.0;
        f = (p + r) > 0 ? 2 * p * r / (p + r) : 0.0;
      }
      if (f > best_img[i]) best_img[i] = f;
    }
  }
  BruteMetrics m;
  double best = -1.0;
  size_t best_ti = 0;
  for (size_t ti = 0; ti < n_thr; ++ti) {
    double p = (tp[ti] + fp[ti]) > 0 ? double(tp[ti]) / double(tp[ti] + fp[ti]) : 0.0;
    double r = (tp[ti] + fn[ti]) > 0 ? double(tp[ti]) / double(tp[ti] + fn[ti]) : 0.0;
    double f = (p + r) > 0 ? 2 * p * r / (p + r) : 0.0;
    if (f > best) {
      best = f;
      best_ti = ti;
    }
  }
  m.ods = best;
  m.ods_threshold = thresholds[best_ti];
  double s = 0;
  for (double f : best_img) s += f;
  m.ois = s / double(n_img);
  long long a = tp[best_ti], b = fp[best_ti], c = fn[best_ti], d = tn[best_ti];
  m.precision = (a + b) > 0 ? double(a) / double(a + b) : 0.0;
  m.recall = (a + c) > 0 ? double(a) / double(a + c) : 0.0;
  m.f1 = (m.precision + m.recall) > 0 ? 2 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
  double ifg = (a + b + c) > 0 ? double(a) / double(a + b + c) : 1.0;
  double ibg = (d + b + c) > 0 ? double(d) / double(d + b + c) : 1.0;
  m.miou = 0.5 * (ifg + ibg);
  return m;
}

}  // namespace oracles
