#pragma once

// Least-squares adversarial, L1 cycle-consistency and anisotropic TV losses,
// and their weighted generator-side composition.

#include <cmath>
#include <sstream>
#include <string>

#include "fclgan/tensor.hpp"

namespace fclgan {

struct LossWeights {
  double adv = 1.0;
  double cc = 10.0;
  double ctst = 0.1;
  double tv = 0.1;

  void validate() const {
    if (!(adv >= 0 && cc >= 0 && ctst >= 0 && tv >= 0))
      throw ConfigError("loss weights must be non-negative");
  }
};

/// Per-step scalar losses. `total` is the weighted generator objective.
struct LossReport {
  double adv_g = 0, adv_d_B = 0, adv_d_S = 0, cc = 0, ctst = 0, tv = 0, total = 0;

  bool all_finite() const {
    for (double v : {adv_g, adv_d_B, adv_d_S, cc, ctst, tv, total})
      if (!std::isfinite(v)) return false;
    return true;
  }
};

/// mean((D(fake) - 1)^2)
template <typename T>
Var<T> adversarial_g(const Var<T>& d_fake) {
  return mean(square(add_scalar(d_fake, T(-1))));
}

/// 0.5 mean((D(real) - 1)^2) + 0.5 mean(D(fake)^2)
template <typename T>
Var<T> adversarial_d(const Var<T>& d_real, const Var<T>& d_fake) {
  return scale(add(mean(square(add_scalar(d_real, T(-1)))), mean(square(d_fake))), T(0.5));
}

template <typename T>
Var<T> mean_abs_error(const Var<T>& a, const Var<T>& b) {
  detail::check_same_shape(a, b, "mean_abs_error");
  return mean(abs(sub(a, b)));
}

/// mean|B - B*| + mean|S - S*|
template <typename T>
Var<T> cycle_consistency(const Var<T>& b, const Var<T>& b_star, const Var<T>& s, const Var<T>& s_star) {
  return add(mean_abs_error(b, b_star), mean_abs_error(s, s_star));
}

/// mean |x[i+1, j] - x[i, j]| + mean |x[i, j+1] - x[i, j]| over an NCHW tensor.
/// A direction with a single row/column contributes 0.
template <typename T>
Var<T> total_variation(const Var<T>& x) {
  if (x.rank() != 4) throw ShapeError("total_variation: expected NCHW, got " + shape_str(x.shape()));
  const std::size_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t nv = planes * (h - 1) * w, nh = planes * h * (w - 1);
  const T inv_v = nv ? T(1) / static_cast<T>(nv) : T(0);
  const T inv_h = nh ? T(1) / static_cast<T>(nh) : T(0);
  const auto& v = x.values();
  T sv = 0, sh = 0;
  for (std::size_t p = 0; p < planes; ++p) {
    const T* a = v.data() + p * h * w;
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j) {
        if (i + 1 < h) {
          const T d = a[(i + 1) * w + j] - a[i * w + j];
          detail::trace_branch(d);
          sv += std::abs(d);
        }
        if (j + 1 < w) {
          const T d = a[i * w + j + 1] - a[i * w + j];
          detail::trace_branch(d);
          sh += std::abs(d);
        }
      }
  }
  auto xn = x.node_ptr();
  return detail::make_result<T>({1}, {sv * inv_v + sh * inv_h}, {x}, [=](Node<T>& self) {
    const T g = self.grad[0];
    auto& gx = xn->ensure_grad();
    const auto& a = xn->value;
    auto sgn = [](T d) { return d > 0 ? T(1) : (d < 0 ? T(-1) : T(0)); };
    for (std::size_t p = 0; p < planes; ++p) {
      const std::size_t base = p * h * w;
      for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j) {
          const std::size_t k = base + i * w + j;
          if (i + 1 < h) {
            const T s = g * inv_v * sgn(a[k + w] - a[k]);
            gx[k + w] += s;
            gx[k] -= s;
          }
          if (j + 1 < w) {
            const T s = g * inv_h * sgn(a[k + 1] - a[k]);
            gx[k + 1] += s;
            gx[k] -= s;
          }
        }
    }
  });
}

/// Unweighted generator-side terms. adv covers both generators, ctst both
/// streams, tv both restored sharp images.
template <typename T>
struct GeneratorLossParts {
  Var<T> adv, cc, ctst, tv;
};

template <typename T>
Var<T> total_generator_loss(const GeneratorLossParts<T>& p, const LossWeights& w) {
  return add(add(scale(p.adv, static_cast<T>(w.adv)), scale(p.cc, static_cast<T>(w.cc))),
             add(scale(p.ctst, static_cast<T>(w.ctst)), scale(p.tv, static_cast<T>(w.tv))));
}

inline double total_generator_loss(double adv, double cc, double ctst, double tv, const LossWeights& w) {
  return w.adv * adv + w.cc * cc + w.ctst * ctst + w.tv * tv;
}

}  // namespace fclgan
