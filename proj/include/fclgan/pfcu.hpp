#pragma once

// Parameter-free frequency-domain contrastive unit.
//
// image -> luminance in [0,1] -> 2-D DFT / (H*W) -> modulus -> zero frequency
// centered -> quantized magnitude m = quant_scale * |F| -> binarized
// (hard: m >= threshold, soft: sigmoid((m - threshold) / temperature))
// -> central crop. Black coverage per chunk compares two such maps.

#include <fftw3.h>

#include <array>
#include <cmath>
#include <complex>
#include <mutex>
#include <span>
#include <string>
#include <vector>

#include "fclgan/tensor.hpp"

namespace fclgan {

struct SpectralConfig {
  double crop_fraction = 0.5;
  int chunk = 8;
  double quant_scale = 255.0;
  double threshold = 0.5;
  double temperature = 0.1;
  std::array<double, 3> luminance_weights{0.299, 0.587, 0.114};

  void validate() const {
    if (!(crop_fraction > 0.0 && crop_fraction <= 1.0))
      throw ConfigError("spectral: crop_fraction must lie in (0, 1]");
    if (chunk <= 0) throw ConfigError("spectral: chunk must be positive");
    if (!(temperature > 0.0)) throw ConfigError("spectral: temperature must be positive");
    if (!(quant_scale > 0.0)) throw ConfigError("spectral: quant_scale must be positive");
  }

  /// Cropped extent of one spatial dimension, rounded down to a chunk multiple.
  std::size_t cropped(std::size_t n) const {
    const auto w = static_cast<std::size_t>(std::floor(crop_fraction * static_cast<double>(n)));
    return (w / static_cast<std::size_t>(chunk)) * static_cast<std::size_t>(chunk);
  }
};

enum class RepMode { hard, soft };

/// Binarized (hard) or relaxed (soft) centered spectrum; row-major h x w.
struct LatentSpectralRep {
  std::size_t height = 0, width = 0;
  std::vector<double> values;
  RepMode mode = RepMode::hard;

  double at(std::size_t r, std::size_t c) const { return values[r * width + c]; }
  double mean_coverage() const {
    double s = 0;
    for (double v : values) s += 1.0 - v;
    return values.empty() ? 0.0 : s / static_cast<double>(values.size());
  }
};

struct CoverageVector {
  std::vector<double> values;
};

/// Read-only CHW image view.
template <typename T>
struct ImageView {
  std::size_t channels, height, width;
  std::span<const T> data;
};

namespace detail {

inline std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

/// Unnormalized 2-D complex DFT in place; sign FFTW_FORWARD or FFTW_BACKWARD.
inline void dft2d(std::vector<std::complex<double>>& buf, std::size_t h, std::size_t w, int sign) {
  auto* p = reinterpret_cast<fftw_complex*>(buf.data());
  fftw_plan plan;
  {
    std::lock_guard lock(fftw_planner_mutex());
    plan = fftw_plan_dft_2d(static_cast<int>(h), static_cast<int>(w), p, p, sign, FFTW_ESTIMATE);
  }
  fftw_execute(plan);
  std::lock_guard lock(fftw_planner_mutex());
  fftw_destroy_plan(plan);
}

template <typename T>
std::vector<double> luminance(const ImageView<T>& img, const SpectralConfig& cfg) {
  const std::size_t plane = img.height * img.width;
  std::vector<double> y(plane, 0.0);
  if (img.channels == 1) {
    for (std::size_t i = 0; i < plane; ++i) y[i] = (static_cast<double>(img.data[i]) + 1.0) * 0.5;
    return y;
  }
  if (img.channels != 3) throw ShapeError("pfcu: expected 1 or 3 channels");
  for (std::size_t c = 0; c < 3; ++c) {
    const double wc = cfg.luminance_weights[c];
    for (std::size_t i = 0; i < plane; ++i)
      y[i] += wc * (static_cast<double>(img.data[c * plane + i]) + 1.0) * 0.5;
  }
  return y;
}

/// Geometry of the centered crop; maps crop pixel (r, c) to unshifted frequency index.
struct SpectralWindow {
  std::size_t h, w, crop_h, crop_w, top, left;
  std::size_t freq_index(std::size_t r, std::size_t c) const {
    // fftshift places frequency index (i + h/2) mod h at row i.
    const std::size_t sr = top + r, sc = left + c;
    const std::size_t fr = (sr + h - h / 2) % h;
    const std::size_t fc = (sc + w - w / 2) % w;
    return fr * w + fc;
  }
};

inline SpectralWindow spectral_window(std::size_t h, std::size_t w, const SpectralConfig& cfg) {
  cfg.validate();
  const double min_side = 2.0 * cfg.chunk / cfg.crop_fraction;
  if (static_cast<double>(h) < min_side || static_cast<double>(w) < min_side)
    throw ShapeError("pfcu: image " + std::to_string(h) + "x" + std::to_string(w) +
                     " smaller than 2*chunk/crop_fraction = " + std::to_string(min_side));
  const std::size_t ch = cfg.cropped(h), cw = cfg.cropped(w);
  return {h, w, ch, cw, h / 2 - ch / 2, w / 2 - cw / 2};
}

inline double binarize(double m, const SpectralConfig& cfg, RepMode mode) {
  if (mode == RepMode::hard) return m >= cfg.threshold ? 1.0 : 0.0;
  return 1.0 / (1.0 + std::exp(-(m - cfg.threshold) / cfg.temperature));
}

}  // namespace detail

/// Spectrum of the luminance, normalized by 1/(H*W), in natural (unshifted) order.
template <typename T>
std::vector<std::complex<double>> luminance_spectrum(const ImageView<T>& img, const SpectralConfig& cfg) {
  for (T v : img.data)
    if (!std::isfinite(static_cast<double>(v))) throw NumericError("pfcu: non-finite input pixel");
  const auto y = detail::luminance(img, cfg);
  std::vector<std::complex<double>> f(y.begin(), y.end());
  detail::dft2d(f, img.height, img.width, FFTW_FORWARD);
  const double norm = 1.0 / static_cast<double>(img.height * img.width);
  for (auto& v : f) v *= norm;
  return f;
}

/// Latent spectral representation of one image with pixel values in [-1, 1].
template <typename T>
LatentSpectralRep pfcu_forward(const ImageView<T>& img, const SpectralConfig& cfg, RepMode mode) {
  const auto win = detail::spectral_window(img.height, img.width, cfg);
  const auto f = luminance_spectrum(img, cfg);
  LatentSpectralRep rep{win.crop_h, win.crop_w, std::vector<double>(win.crop_h * win.crop_w), mode};
  for (std::size_t r = 0; r < win.crop_h; ++r)
    for (std::size_t c = 0; c < win.crop_w; ++c) {
      const double m = cfg.quant_scale * std::abs(f[win.freq_index(r, c)]);
      rep.values[r * win.crop_w + c] = detail::binarize(m, cfg, mode);
    }
  return rep;
}

/// Soft representation of a [1,C,H,W] image as a differentiable [h', w'] tensor.
template <typename T>
Var<T> spectral_rep(const Var<T>& image, const SpectralConfig& cfg) {
  if (image.rank() != 4 || image.dim(0) != 1)
    throw ShapeError("spectral_rep: expected a single [1,C,H,W] image, got " + shape_str(image.shape()));
  const std::size_t ch = image.dim(1), h = image.dim(2), w = image.dim(3);
  const ImageView<T> view{ch, h, w, image.data()};
  const auto win = detail::spectral_window(h, w, cfg);
  auto spec = std::make_shared<std::vector<std::complex<double>>>(luminance_spectrum(view, cfg));
  std::vector<T> out(win.crop_h * win.crop_w);
  for (std::size_t r = 0; r < win.crop_h; ++r)
    for (std::size_t c = 0; c < win.crop_w; ++c) {
      const double m = cfg.quant_scale * std::abs((*spec)[win.freq_index(r, c)]);
      out[r * win.crop_w + c] = static_cast<T>(detail::binarize(m, cfg, RepMode::soft));
    }
  auto xn = image.node_ptr();
  return detail::make_result<T>(
      {win.crop_h, win.crop_w}, std::move(out), {image}, [xn, spec, win, cfg, ch](Node<T>& self) {
        // Gradient w.r.t. Re F + i Im F, scattered to unshifted frequency positions.
        std::vector<std::complex<double>> g(win.h * win.w, {0.0, 0.0});
        for (std::size_t r = 0; r < win.crop_h; ++r)
          for (std::size_t c = 0; c < win.crop_w; ++c) {
            const std::size_t k = win.freq_index(r, c);
            const double mag = std::abs((*spec)[k]);
            if (mag == 0.0) continue;
            const double b = static_cast<double>(self.value[r * win.crop_w + c]);
            const double dm = static_cast<double>(self.grad[r * win.crop_w + c]) * b * (1.0 - b) /
                              cfg.temperature * cfg.quant_scale;
            g[k] += dm * (*spec)[k] / mag;
          }
        detail::dft2d(g, win.h, win.w, FFTW_BACKWARD);
        const std::size_t plane = win.h * win.w;
        const double norm = 1.0 / static_cast<double>(plane);
        auto& gx = xn->ensure_grad();
        for (std::size_t c = 0; c < ch; ++c) {
          const double wc = ch == 1 ? 1.0 : cfg.luminance_weights[c];
          for (std::size_t i = 0; i < plane; ++i)
            gx[c * plane + i] += static_cast<T>(g[i].real() * norm * wc * 0.5);
        }
      });
}

/// Mean of (1 - b) over each chunk x chunk block, blocks in row-major order.
inline CoverageVector black_coverage(const LatentSpectralRep& rep, int chunk) {
  if (chunk <= 0) throw ConfigError("black_coverage: chunk must be positive");
  const auto w = static_cast<std::size_t>(chunk);
  if (rep.height % w != 0 || rep.width % w != 0)
    throw ShapeError("black_coverage: " + std::to_string(rep.height) + "x" +
                     std::to_string(rep.width) + " not divisible by chunk " + std::to_string(chunk));
  const std::size_t br = rep.height / w, bc = rep.width / w;
  CoverageVector cov{std::vector<double>(br * bc, 0.0)};
  for (std::size_t r = 0; r < rep.height; ++r)
    for (std::size_t c = 0; c < rep.width; ++c)
      cov.values[(r / w) * bc + c / w] += 1.0 - rep.values[r * rep.width + c];
  for (auto& v : cov.values) v /= static_cast<double>(w * w);
  return cov;
}

/// 1 - MSE between the chunk coverages of two representations.
inline double similarity(const LatentSpectralRep& a, const LatentSpectralRep& b, int chunk) {
  if (a.height != b.height || a.width != b.width)
    throw ShapeError("similarity: representation shapes differ");
  const auto ca = black_coverage(a, chunk), cb = black_coverage(b, chunk);
  double mse = 0;
  for (std::size_t i = 0; i < ca.values.size(); ++i) {
    const double d = ca.values[i] - cb.values[i];
    mse += d * d;
  }
  return 1.0 - mse / static_cast<double>(ca.values.size());
}

struct ContrastSample {
  LatentSpectralRep anchor, positive;
  std::vector<LatentSpectralRep> negatives;
};

namespace detail {
inline void check_contrast_args(std::size_t negatives, double tau) {
  if (!(tau > 0.0)) throw ConfigError("contrastive loss: temperature must be positive");
  if (negatives == 0) throw ConfigError("contrastive loss: at least one negative is required");
}

/// -log(e^{s+/tau} / (e^{s+/tau} + sum_n e^{s-_n/tau})) from raw similarities.
inline double contrastive_from_similarities(double pos, std::span<const double> negs, double tau) {
  double mx = pos / tau;
  for (double s : negs) mx = std::max(mx, s / tau);
  if (mx == pos / tau) {
    // log(1 + sum exp(neg - pos)) keeps full relative precision for tiny losses.
    double acc = 0;
    for (double s : negs) acc += std::exp(s / tau - pos / tau);
    return std::log1p(acc);
  }
  double acc = std::exp(pos / tau - mx);
  for (double s : negs) acc += std::exp(s / tau - mx);
  return mx + std::log(acc) - pos / tau;
}
}  // namespace detail

inline double contrastive_loss(const ContrastSample& sample, double tau, int chunk) {
  detail::check_contrast_args(sample.negatives.size(), tau);
  const double pos = similarity(sample.anchor, sample.positive, chunk);
  std::vector<double> negs;
  for (const auto& n : sample.negatives) negs.push_back(similarity(sample.anchor, n, chunk));
  return detail::contrastive_from_similarities(pos, negs, tau);
}

// Differentiable counterparts used during training.

/// 1 - mean over each chunk of a [h, w] map; output [h*w/chunk^2].
template <typename T>
Var<T> coverage(const Var<T>& rep, int chunk) {
  if (rep.rank() != 2) throw ShapeError("coverage: expected a 2-D map");
  const auto w = static_cast<std::size_t>(chunk);
  const std::size_t h = rep.dim(0), wd = rep.dim(1);
  if (chunk <= 0 || h % w != 0 || wd % w != 0)
    throw ShapeError("coverage: " + shape_str(rep.shape()) + " not divisible by chunk " +
                     std::to_string(chunk));
  const std::size_t bc = wd / w;
  const T inv = T(1) / static_cast<T>(w * w);
  std::vector<T> out((h / w) * bc, T(0));
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < wd; ++c) out[(r / w) * bc + c / w] += (T(1) - rep.values()[r * wd + c]) * inv;
  auto xn = rep.node_ptr();
  return detail::make_result<T>({out.size()}, std::move(out), {rep}, [=](Node<T>& self) {
    auto& g = xn->ensure_grad();
    for (std::size_t r = 0; r < h; ++r)
      for (std::size_t c = 0; c < wd; ++c) g[r * wd + c] -= self.grad[(r / w) * bc + c / w] * inv;
  });
}

template <typename T>
Var<T> similarity(const Var<T>& a, const Var<T>& b, int chunk) {
  detail::check_same_shape(a, b, "similarity");
  return add_scalar(scale(mean(square(sub(coverage(a, chunk), coverage(b, chunk)))), T(-1)), T(1));
}

template <typename T>
Var<T> contrastive_loss(const Var<T>& anchor, const Var<T>& positive,
                        const std::vector<Var<T>>& negatives, double tau, int chunk) {
  detail::check_contrast_args(negatives.size(), tau);
  const T inv_tau = static_cast<T>(1.0 / tau);
  std::vector<Var<T>> logits{scale(similarity(anchor, positive, chunk), inv_tau)};
  for (const auto& n : negatives) logits.push_back(scale(similarity(anchor, n, chunk), inv_tau));
  return sub(logsumexp(stack_scalars(logits)), logits.front());
}

}  // namespace fclgan
