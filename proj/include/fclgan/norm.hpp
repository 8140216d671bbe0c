#pragma once

#include <cmath>
#include <vector>

#include "fclgan/tensor.hpp"

namespace fclgan {

namespace detail {

/// Index helper over an NCHW tensor viewed as [N, C, H*W].
template <typename T>
struct NormLayout {
  std::size_t n, c, plane;

  template <typename F>
  void for_channel(std::size_t ch, F f) const {
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t base = (i * c + ch) * plane;
      for (std::size_t j = 0; j < plane; ++j) f(base + j);
    }
  }
  template <typename F>
  void for_instance(std::size_t img, std::size_t ch, F f) const {
    const std::size_t base = (img * c + ch) * plane;
    for (std::size_t j = 0; j < plane; ++j) f(base + j);
  }
};

}  // namespace detail

/// Batch normalization over (N, H, W) per channel.
/// Training mode normalizes with batch statistics and updates the running
/// estimates in place; evaluation mode uses the running estimates.
template <typename T>
Var<T> batch_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta,
                  std::vector<T>& running_mean, std::vector<T>& running_var, bool training,
                  T momentum = T(0.1), T eps = T(1e-5)) {
  if (x.rank() != 4 || gamma.numel() != x.dim(1))
    throw ShapeError("batch_norm: input " + shape_str(x.shape()) + " vs " +
                     std::to_string(gamma.numel()) + " channels");
  const detail::NormLayout<T> lay{x.dim(0), x.dim(1), x.dim(2) * x.dim(3)};
  const std::size_t count = lay.n * lay.plane;
  const auto& xv = x.values();
  std::vector<T> xhat(xv.size()), out(xv.size());
  std::vector<T> inv_std(lay.c);
  for (std::size_t ch = 0; ch < lay.c; ++ch) {
    T mu, var;
    if (training) {
      T s = 0;
      lay.for_channel(ch, [&](std::size_t i) { s += xv[i]; });
      mu = s / static_cast<T>(count);
      T ss = 0;
      lay.for_channel(ch, [&](std::size_t i) { ss += (xv[i] - mu) * (xv[i] - mu); });
      var = ss / static_cast<T>(count);
      const T unbiased = count > 1 ? ss / static_cast<T>(count - 1) : var;
      running_mean[ch] = (T(1) - momentum) * running_mean[ch] + momentum * mu;
      running_var[ch] = (T(1) - momentum) * running_var[ch] + momentum * unbiased;
    } else {
      mu = running_mean[ch];
      var = running_var[ch];
    }
    const T is = T(1) / std::sqrt(var + eps);
    inv_std[ch] = is;
    const T g = gamma.values()[ch], b = beta.values()[ch];
    lay.for_channel(ch, [&](std::size_t i) {
      xhat[i] = (xv[i] - mu) * is;
      out[i] = g * xhat[i] + b;
    });
  }
  auto xn = x.node_ptr(), gn = gamma.node_ptr(), bn = beta.node_ptr();
  return detail::make_result<T>(
      x.shape(), std::move(out), {x, gamma, beta},
      [=, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node<T>& self) {
        const auto& gy = self.grad;
        for (std::size_t ch = 0; ch < lay.c; ++ch) {
          T sum_g = 0, sum_gx = 0;
          lay.for_channel(ch, [&](std::size_t i) {
            sum_g += gy[i];
            sum_gx += gy[i] * xhat[i];
          });
          if (gn->requires_grad) gn->ensure_grad()[ch] += sum_gx;
          if (bn->requires_grad) bn->ensure_grad()[ch] += sum_g;
          if (xn->requires_grad) {
            auto& gx = xn->ensure_grad();
            const T k = gn->value[ch] * inv_std[ch];
            if (training) {
              const T mg = sum_g / static_cast<T>(count), mgx = sum_gx / static_cast<T>(count);
              lay.for_channel(ch, [&](std::size_t i) { gx[i] += k * (gy[i] - mg - xhat[i] * mgx); });
            } else {
              lay.for_channel(ch, [&](std::size_t i) { gx[i] += k * gy[i]; });
            }
          }
        }
      });
}

/// Instance normalization over (H, W) per image and channel, with a
/// per-channel affine map. Stateless.
template <typename T>
Var<T> instance_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps = T(1e-5)) {
  if (x.rank() != 4 || gamma.numel() != x.dim(1))
    throw ShapeError("instance_norm: input " + shape_str(x.shape()) + " vs " +
                     std::to_string(gamma.numel()) + " channels");
  const detail::NormLayout<T> lay{x.dim(0), x.dim(1), x.dim(2) * x.dim(3)};
  const auto& xv = x.values();
  std::vector<T> xhat(xv.size()), out(xv.size());
  std::vector<T> inv_std(lay.n * lay.c);
  for (std::size_t img = 0; img < lay.n; ++img)
    for (std::size_t ch = 0; ch < lay.c; ++ch) {
      T s = 0;
      lay.for_instance(img, ch, [&](std::size_t i) { s += xv[i]; });
      const T mu = s / static_cast<T>(lay.plane);
      T ss = 0;
      lay.for_instance(img, ch, [&](std::size_t i) { ss += (xv[i] - mu) * (xv[i] - mu); });
      const T is = T(1) / std::sqrt(ss / static_cast<T>(lay.plane) + eps);
      inv_std[img * lay.c + ch] = is;
      const T g = gamma.values()[ch], b = beta.values()[ch];
      lay.for_instance(img, ch, [&](std::size_t i) {
        xhat[i] = (xv[i] - mu) * is;
        out[i] = g * xhat[i] + b;
      });
    }
  auto xn = x.node_ptr(), gn = gamma.node_ptr(), bn = beta.node_ptr();
  return detail::make_result<T>(
      x.shape(), std::move(out), {x, gamma, beta},
      [=, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node<T>& self) {
        const auto& gy = self.grad;
        const T count = static_cast<T>(lay.plane);
        for (std::size_t img = 0; img < lay.n; ++img)
          for (std::size_t ch = 0; ch < lay.c; ++ch) {
            T sum_g = 0, sum_gx = 0;
            lay.for_instance(img, ch, [&](std::size_t i) {
              sum_g += gy[i];
              sum_gx += gy[i] * xhat[i];
            });
            if (gn->requires_grad) gn->ensure_grad()[ch] += sum_gx;
            if (bn->requires_grad) bn->ensure_grad()[ch] += sum_g;
            if (xn->requires_grad) {
              auto& gx = xn->ensure_grad();
              const T k = gn->value[ch] * inv_std[img * lay.c + ch];
              const T mg = sum_g / count, mgx = sum_gx / count;
              lay.for_instance(img, ch,
                               [&](std::size_t i) { gx[i] += k * (gy[i] - mg - xhat[i] * mgx); });
            }
          }
      });
}

}  // namespace fclgan
