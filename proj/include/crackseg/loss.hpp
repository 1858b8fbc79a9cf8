#pragma once

#include "crackseg/config.hpp"
#include "crackseg/tensor.hpp"

namespace crackseg {

namespace detail {

inline void require_binary(const char* op, const Tensor& t) {
  for (double v : t.data())
    if (v != 0.0 && v != 1.0)
      throw UsageError(std::string(op) + ": target must be binary {0,1}, found " + std::to_string(v));
}

}  // namespace detail

/// 1 - (2*sum(p*t) + eps) / (sum(p) + sum(t) + eps). The eps term makes the
/// empty-prediction/empty-target case resolve to zero loss.
inline Tensor dice_loss(const Tensor& prob, const Tensor& target, double eps = 1.0) {
  detail::require_same_shape("dice_loss", prob, target);
  detail::require_binary("dice_loss", target);
  if (!(eps > 0.0)) throw ConfigError("dice_loss: eps must be positive");
  Tensor inter = sum_all(mul(prob, target));
  Tensor denom = add(sum_all(prob), sum_all(target));
  Tensor ratio = div(add_scalar(mul_scalar(inter, 2.0), eps), add_scalar(denom, eps));
  return rsub_scalar(ratio, 1.0);
}

/// Mean negative log-likelihood over pixels, probabilities clamped away from
/// {0,1} so the logs stay finite.
inline Tensor bce_loss(const Tensor& prob, const Tensor& target, double clamp_eps = 1e-7) {
  detail::require_same_shape("bce_loss", prob, target);
  detail::require_binary("bce_loss", target);
  if (!(clamp_eps > 0.0 && clamp_eps < 0.5)) throw ConfigError("bce_loss: clamp must be in (0, 0.5)");
  Tensor pc = clamp(prob, clamp_eps, 1.0 - clamp_eps);
  Tensor pos = mul(target, log(pc));
  Tensor neg_term = mul(rsub_scalar(target, 1.0), log(rsub_scalar(pc, 1.0)));
  return neg(mean_all(add(pos, neg_term)));
}

/// alpha * Dice + beta * BCE.
inline Tensor combined_loss(const Tensor& prob, const Tensor& target, const LossConfig& cfg) {
  cfg.validate();
  Tensor d = dice_loss(prob, target, cfg.dice_eps);
  Tensor b = bce_loss(prob, target, cfg.bce_clamp);
  return add(mul_scalar(d, cfg.alpha), mul_scalar(b, cfg.beta));
}

}  // namespace crackseg
