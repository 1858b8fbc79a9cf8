#pragma once

#include <cmath>
#include <vector>

#include "crackseg/config.hpp"
#include "crackseg/tensor.hpp"

namespace crackseg {

/// lr * (1 - step/total)^power, the polynomial decay schedule.
inline double poly_lr(double base_lr, int step, int total_steps, double power) {
  if (total_steps <= 0) return base_lr;
  double frac = 1.0 - static_cast<double>(step) / static_cast<double>(total_steps);
  if (frac < 0.0) frac = 0.0;
  return base_lr * std::pow(frac, power);
}

/// Adaptive moments with decoupled weight decay. Updates tensors in place
/// from their accumulated gradients.
class AdamW {
 public:
  explicit AdamW(std::vector<Tensor> params, double beta1 = 0.9, double beta2 = 0.999,
                 double eps = 1e-8)
      : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps) {
    m_.resize(params_.size());
    v_.resize(params_.size());
    for (size_t i = 0; i < params_.size(); ++i) {
      m_[i].assign(params_[i].numel(), 0.0);
      v_[i].assign(params_[i].numel(), 0.0);
    }
  }

  void step(double lr, double weight_decay) {
    ++t_;
    double bc1 = 1.0 - std::pow(beta1_, t_);
    double bc2 = 1.0 - std::pow(beta2_, t_);
    for (size_t i = 0; i < params_.size(); ++i) {
      Tensor& p = params_[i];
      if (!p.has_grad()) continue;
      const auto& g = p.grad();
      auto& data = p.raw_data();
      auto& m = m_[i];
      auto& v = v_[i];
      for (size_t j = 0; j < data.size(); ++j) {
        m[j] = beta1_ * m[j] + (1.0 - beta1_) * g[j];
        v[j] = beta2_ * v[j] + (1.0 - beta2_) * g[j] * g[j];
        double mhat = m[j] / bc1;
        double vhat = v[j] / bc2;
        data[j] -= lr * (mhat / (std::sqrt(vhat) + eps_) + weight_decay * data[j]);
      }
    }
  }

  int steps_taken() const { return t_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_, v_;
  double beta1_, beta2_, eps_;
  int t_ = 0;
};

}  // namespace crackseg
