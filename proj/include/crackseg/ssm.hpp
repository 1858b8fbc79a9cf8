#pragma once

#include <cmath>
#include <memory>
#include <utility>
#include <vector>

#include "crackseg/rng.hpp"
#include "crackseg/scan.hpp"
#include "crackseg/tensor.hpp"

namespace crackseg {

namespace detail {

// Zero-order-hold factors for one (delta, p) pair:
//   pbar = exp(delta*p),  phi = (exp(delta*p) - 1) / p  so that qbar = phi * q.
// Near delta*p = 0 the exact quotient cancels catastrophically; a series
// branch keeps the limit qbar -> delta*q.
inline void zoh_factors(double p, double delta, double& pbar, double& phi) {
  double x = delta * p;
  pbar = std::exp(x);
  if (std::fabs(x) < 1e-6)
    phi = delta * (1.0 + x * 0.5 + x * x / 6.0);
  else
    phi = (pbar - 1.0) / p;
}

// d(phi)/d(delta) = exp(delta*p);  d(phi)/dp = (delta*exp(delta*p) - phi) / p,
// with the matching series branch.
inline double zoh_dphi_dp(double p, double delta, double pbar, double phi) {
  double x = delta * p;
  if (std::fabs(x) < 1e-6) return delta * delta * (0.5 + x / 3.0 + x * x * 0.125);
  return (delta * pbar - phi) / p;
}

}  // namespace detail

/// Per-block selective-scan parameters. The continuous state matrix is kept
/// as log-magnitudes so the effective entries -exp(log_p) stay strictly
/// negative (decay). Delta, Q and R are input-dependent projections of the
/// step input; the skip term is per-channel (diagonal).
struct SsmParams {
  int state_dim = 0;    // G
  int channel_dim = 0;  // D
  Tensor log_p;         // [G,D]
  Tensor skip;          // [D]
  Tensor wq;            // [D,G]
  Tensor wr;            // [D,G]
  Tensor wd;            // [D,D]
  Tensor bd;            // [D]

  static SsmParams init(int state_dim, int channel_dim, Rng& rng) {
    if (state_dim < 1 || channel_dim < 1)
      throw ConfigError("SsmParams: state and channel dims must be >= 1");
    SsmParams p;
    p.state_dim = state_dim;
    p.channel_dim = channel_dim;
    // S4D-real pattern: effective p[g,d] = -(g+1)
    std::vector<double> lp(static_cast<size_t>(state_dim) * channel_dim);
    for (int g = 0; g < state_dim; ++g)
      for (int d = 0; d < channel_dim; ++d)
        lp[static_cast<size_t>(g) * channel_dim + d] = std::log(static_cast<double>(g + 1));
    p.log_p = Tensor::from_data({state_dim, channel_dim}, std::move(lp), true);
    p.skip = Tensor::full({channel_dim}, 1.0, true);
    double bound = 1.0 / std::sqrt(static_cast<double>(channel_dim));
    auto uniform_tensor = [&rng](Shape shape, double b) {
      std::vector<double> v(shape_numel(shape));
      for (double& x : v) x = rng.uniform(-b, b);
      return Tensor::from_data(shape, std::move(v), true);
    };
    p.wq = uniform_tensor({channel_dim, state_dim}, bound);
    p.wr = uniform_tensor({channel_dim, state_dim}, bound);
    p.wd = uniform_tensor({channel_dim, channel_dim}, bound);
    // bias chosen so softplus(bd) lands in [1e-3, 1e-1]
    std::vector<double> bd(channel_dim);
    for (double& x : bd) {
      double dt = std::exp(rng.uniform(std::log(1e-3), std::log(1e-1)));
      x = std::log(std::expm1(dt));
    }
    p.bd = Tensor::from_data({channel_dim}, std::move(bd), true);
    return p;
  }

  /// Strictly negative continuous state matrix.
  Tensor effective_p() const { return neg(crackseg::exp(log_p)); }

  std::vector<Tensor> parameters() const { return {log_p, skip, wq, wr, wd, bd}; }
};

/// Exact ZOH discretization (value-level, no gradient tracking):
///   pbar[t,g,d] = exp(delta[t,d] * p[g,d])
///   qbar[t,g,d] = ((exp(delta[t,d]*p[g,d]) - 1) / p[g,d]) * q[t,g]
/// As p -> 0 the quotient tends to delta, so qbar -> delta * q.
inline std::pair<Tensor, Tensor> discretize(const Tensor& p, const Tensor& delta, const Tensor& q) {
  detail::require_defined("discretize", p);
  detail::require_defined("discretize", delta);
  detail::require_defined("discretize", q);
  if (p.ndim() != 2) throw ShapeError("discretize: p must be [G,D], got " + shape_str(p.shape()));
  if (delta.ndim() != 2) throw ShapeError("discretize: delta must be [L,D], got " + shape_str(delta.shape()));
  if (q.ndim() != 2) throw ShapeError("discretize: q must be [L,G], got " + shape_str(q.shape()));
  const int g_dim = p.dim(0), d_dim = p.dim(1);
  const int l_dim = delta.dim(0);
  if (delta.dim(1) != d_dim)
    throw ShapeError("discretize: delta axis 1 = " + std::to_string(delta.dim(1)) +
                     " does not match p axis 1 = " + std::to_string(d_dim));
  if (q.dim(0) != l_dim || q.dim(1) != g_dim)
    throw ShapeError("discretize: q must be [L,G] = [" + std::to_string(l_dim) + "," +
                     std::to_string(g_dim) + "], got " + shape_str(q.shape()));
  for (double dv : delta.data())
    if (!(dv > 0.0)) throw NumericError("discretize: delta must be strictly positive");

  std::vector<double> pbar(static_cast<size_t>(l_dim) * g_dim * d_dim);
  std::vector<double> qbar(pbar.size());
  const auto& pd = p.data();
  const auto& dd = delta.data();
  const auto& qd = q.data();
  for (int t = 0; t < l_dim; ++t)
    for (int g = 0; g < g_dim; ++g)
      for (int d = 0; d < d_dim; ++d) {
        double pb, phi;
        detail::zoh_factors(pd[g * d_dim + d], dd[t * d_dim + d], pb, phi);
        size_t i = (static_cast<size_t>(t) * g_dim + g) * d_dim + d;
        pbar[i] = pb;
        qbar[i] = phi * qd[t * g_dim + g];
      }
  return {Tensor::from_data({l_dim, g_dim, d_dim}, std::move(pbar)),
          Tensor::from_data({l_dim, g_dim, d_dim}, std::move(qbar))};
}

namespace detail {

/// Core recurrence over a batch of sequences with shared parameters:
///   z[g,d] <- pbar[t,g,d] * z[g,d] + qbar[t,g,d] * w[t,d]
///   u[t,d]  = sum_g r[t,g] * z[g,d] + s[d] * w[t,d]
/// Forward stores pbar/phi/z trajectories; backward runs the adjoint
/// recurrence in reverse time.
inline Tensor scan_core(const Tensor& w, const Tensor& p, const Tensor& delta, const Tensor& q,
                        const Tensor& r, const Tensor& s) {
  const int n = w.dim(0), l = w.dim(1), d_dim = w.dim(2);
  const int g_dim = p.dim(0);
  const size_t gd = static_cast<size_t>(g_dim) * d_dim;

  for (double dv : delta.data())
    if (!(dv > 0.0)) throw NumericError("selective_scan: discretization step must be strictly positive");

  auto pbar = std::make_shared<std::vector<double>>(static_cast<size_t>(n) * l * gd);
  auto phi = std::make_shared<std::vector<double>>(static_cast<size_t>(n) * l * gd);
  auto zs = std::make_shared<std::vector<double>>(static_cast<size_t>(n) * l * gd);

  const auto& wd_ = w.data();
  const auto& pd = p.data();
  const auto& dd = delta.data();
  const auto& qd = q.data();
  const auto& rd = r.data();
  const auto& sd = s.data();

  std::vector<double> out(static_cast<size_t>(n) * l * d_dim);
  std::vector<double> z(gd);
  for (int ni = 0; ni < n; ++ni) {
    std::fill(z.begin(), z.end(), 0.0);
    for (int t = 0; t < l; ++t) {
      size_t base = (static_cast<size_t>(ni) * l + t) * gd;
      const double* wt = wd_.data() + (static_cast<size_t>(ni) * l + t) * d_dim;
      const double* dt = dd.data() + (static_cast<size_t>(ni) * l + t) * d_dim;
      const double* qt = qd.data() + (static_cast<size_t>(ni) * l + t) * g_dim;
      const double* rt = rd.data() + (static_cast<size_t>(ni) * l + t) * g_dim;
      double* ut = out.data() + (static_cast<size_t>(ni) * l + t) * d_dim;
      for (int di = 0; di < d_dim; ++di) ut[di] = sd[di] * wt[di];
      for (int g = 0; g < g_dim; ++g) {
        double rg = rt[g];
        double qg = qt[g];
        for (int di = 0; di < d_dim; ++di) {
          size_t i = base + static_cast<size_t>(g) * d_dim + di;
          double pb, ph;
          zoh_factors(pd[g * d_dim + di], dt[di], pb, ph);
          (*pbar)[i] = pb;
          (*phi)[i] = ph;
          double znew = pb * z[static_cast<size_t>(g) * d_dim + di] + ph * qg * wt[di];
          z[static_cast<size_t>(g) * d_dim + di] = znew;
          (*zs)[i] = znew;
          ut[di] += rg * znew;
        }
      }
    }
  }

  auto wn = node_of(w);
  auto pn = node_of(p);
  auto dn = node_of(delta);
  auto qn = node_of(q);
  auto rn = node_of(r);
  auto sn = node_of(s);
  return make_result(
      "selective_scan", w.shape(), std::move(out), {w, p, delta, q, r, s},
      [wn, pn, dn, qn, rn, sn, pbar, phi, zs, n, l, d_dim, g_dim, gd](detail::Node& self) {
        std::vector<double> a(gd);  // adjoint of z_t
        auto* dwp = wn->requires_grad ? wn->grad_buf().data() : nullptr;
        auto* dpp = pn->requires_grad ? pn->grad_buf().data() : nullptr;
        auto* ddp = dn->requires_grad ? dn->grad_buf().data() : nullptr;
        auto* dqp = qn->requires_grad ? qn->grad_buf().data() : nullptr;
        auto* drp = rn->requires_grad ? rn->grad_buf().data() : nullptr;
        auto* dsp = sn->requires_grad ? sn->grad_buf().data() : nullptr;
        for (int ni = 0; ni < n; ++ni) {
          std::fill(a.begin(), a.end(), 0.0);
          for (int t = l - 1; t >= 0; --t) {
            size_t base = (static_cast<size_t>(ni) * l + t) * gd;
            size_t row = static_cast<size_t>(ni) * l + t;
            const double* gu = self.grad.data() + row * d_dim;
            const double* wt = wn->data.data() + row * d_dim;
            const double* dt = dn->data.data() + row * d_dim;
            const double* qt = qn->data.data() + row * g_dim;
            const double* rt = rn->data.data() + row * g_dim;
            // u_t = sum_g r_g z_t + s (.) w_t
            if (dsp || dwp) {
              for (int di = 0; di < d_dim; ++di) {
                if (dsp) dsp[di] += gu[di] * wt[di];
                if (dwp) dwp[row * d_dim + di] += gu[di] * sn->data[di];
              }
            }
            for (int g = 0; g < g_dim; ++g) {
              double rg = rt[g];
              double dr_acc = 0.0;
              for (int di = 0; di < d_dim; ++di) {
                size_t i = base + static_cast<size_t>(g) * d_dim + di;
                double zv = (*zs)[i];
                dr_acc += gu[di] * zv;
                a[static_cast<size_t>(g) * d_dim + di] += rg * gu[di];
              }
              if (drp) drp[row * g_dim + g] += dr_acc;
            }
            // z_t = pbar z_{t-1} + phi q w_t
            for (int g = 0; g < g_dim; ++g) {
              double qg = qt[g];
              double dq_acc = 0.0;
              for (int di = 0; di < d_dim; ++di) {
                size_t gi = static_cast<size_t>(g) * d_dim + di;
                size_t i = base + gi;
                double av = a[gi];
                if (av == 0.0) continue;
                double pb = (*pbar)[i];
                double ph = (*phi)[i];
                double zprev = (t > 0) ? (*zs)[i - gd] : 0.0;
                double dpbar = av * zprev;
                double dqbar = av * wt[di];
                if (dwp) dwp[row * d_dim + di] += av * ph * qg;
                dq_acc += dqbar * ph;
                double pv = pn->data[gi];
                double dv = dt[di];
                if (ddp || dpp) {
                  double dphi_dp = zoh_dphi_dp(pv, dv, pb, ph);
                  if (ddp) ddp[row * d_dim + di] += dpbar * pb * pv + dqbar * qg * pb;
                  if (dpp) dpp[gi] += dpbar * pb * dv + dqbar * qg * dphi_dp;
                }
                a[gi] = av * pb;
              }
              if (dqp) dqp[row * g_dim + g] += dq_acc;
            }
          }
        }
      });
}

}  // namespace detail

/// Input-selective scan along one already-ordered sequence. Accepts [L,D] or
/// a batch [N,L,D]; projections and the recurrence are differentiable.
inline Tensor selective_scan(const Tensor& seq, const SsmParams& params) {
  detail::require_defined("selective_scan", seq);
  const bool batched = seq.ndim() == 3;
  if (!batched && seq.ndim() != 2)
    throw ShapeError("selective_scan: sequence must be [L,D] or [N,L,D], got " + shape_str(seq.shape()));
  Tensor x = batched ? seq : reshape(seq, {1, seq.dim(0), seq.dim(1)});
  const int n = x.dim(0), l = x.dim(1), d_dim = x.dim(2);
  if (l < 1) throw UsageError("selective_scan: empty sequence");
  if (d_dim != params.channel_dim)
    throw ShapeError("selective_scan: channel axis = " + std::to_string(d_dim) +
                     " does not match params channel_dim = " + std::to_string(params.channel_dim));

  Tensor flat = reshape(x, {n * l, d_dim});
  // softplus is strictly positive in exact arithmetic but underflows to 0 for
  // inputs below about -745; the floor keeps the discretization valid
  Tensor delta = clamp(softplus(add_broadcast(matmul(flat, params.wd), params.bd)), 1e-9, 1e9);
  Tensor q = matmul(flat, params.wq);
  Tensor r = matmul(flat, params.wr);
  Tensor p = params.effective_p();
  Tensor u = detail::scan_core(x, p, reshape(delta, {n, l, d_dim}),
                               reshape(q, {n, l, params.state_dim}),
                               reshape(r, {n, l, params.state_dim}), params.skip);
  return batched ? u : reshape(u, {l, d_dim});
}

/// 2D selective scan: for every path, permute the flattened grid sequence
/// into visit order, scan, permute back; fuse per-path outputs by mean.
inline Tensor ss2d(const Tensor& grid_seq, const ScanPathSet& paths,
                   const std::vector<SsmParams>& params_per_path) {
  detail::require_defined("ss2d", grid_seq);
  if (paths.paths.empty()) throw ConfigError("ss2d: empty path set");
  if (params_per_path.size() != paths.paths.size())
    throw ConfigError("ss2d: " + std::to_string(paths.paths.size()) + " paths but " +
                      std::to_string(params_per_path.size()) + " parameter sets");
  const bool batched = grid_seq.ndim() == 3;
  if (!batched && grid_seq.ndim() != 2)
    throw ShapeError("ss2d: sequence must be [L,D] or [N,L,D], got " + shape_str(grid_seq.shape()));
  const int seq_axis = batched ? 1 : 0;
  const int l = grid_seq.dim(seq_axis);
  if (l != paths.height * paths.width)
    throw PathError("ss2d: sequence length " + std::to_string(l) + " does not match grid " +
                    std::to_string(paths.height) + "x" + std::to_string(paths.width));

  Tensor acc;
  for (size_t i = 0; i < paths.paths.size(); ++i) {
    const ScanPath& path = paths.paths[i];
    Tensor ordered = permute_axis(grid_seq, seq_axis, path.order);
    Tensor scanned = selective_scan(ordered, params_per_path[i]);
    Tensor restored = permute_axis(scanned, seq_axis, path.inverse);
    acc = acc.defined() ? add(acc, restored) : restored;
  }
  return mul_scalar(acc, 1.0 / static_cast<double>(paths.paths.size()));
}

}  // namespace crackseg
