#pragma once

#include <cmath>
#include <vector>

#include "fclgan/tensor.hpp"

namespace fclgan {

/// Adam with bias correction. Moment buffers are exposed for checkpointing.
template <typename T>
class Adam {
 public:
  Adam(std::vector<Var<T>> params, double beta1 = 0.5, double beta2 = 0.999, double eps = 1e-8)
      : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const auto& p : params_) {
      m_.emplace_back(p.numel(), T(0));
      v_.emplace_back(p.numel(), T(0));
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  void step(double lr) {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    const T step_size = static_cast<T>(lr / c1);
    const T b1 = static_cast<T>(beta1_), b2 = static_cast<T>(beta2_);
    const T inv_c2 = static_cast<T>(1.0 / c2), eps = static_cast<T>(eps_);
    for (std::size_t k = 0; k < params_.size(); ++k) {
      auto& p = params_[k];
      const auto& g = p.grad();
      if (g.empty()) continue;
      auto& val = p.values();
      auto& m = m_[k];
      auto& v = v_[k];
      for (std::size_t i = 0; i < val.size(); ++i) {
        m[i] = b1 * m[i] + (T(1) - b1) * g[i];
        v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
        val[i] -= step_size * m[i] / (std::sqrt(v[i] * inv_c2) + eps);
      }
    }
  }

  std::uint64_t steps() const { return t_; }
  void set_steps(std::uint64_t t) { t_ = t; }
  std::vector<std::vector<T>>& first_moments() { return m_; }
  std::vector<std::vector<T>>& second_moments() { return v_; }
  const std::vector<Var<T>>& params() const { return params_; }

 private:
  std::vector<Var<T>> params_;
  std::vector<std::vector<T>> m_, v_;
  double beta1_, beta2_, eps_;
  std::uint64_t t_ = 0;
};

}  // namespace fclgan
