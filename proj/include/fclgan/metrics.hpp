#pragma once

// Paired reference metrics on [0,1] images: PSNR (RGB), SSIM (luma) and a
// per-channel mean colour-shift proxy.

#include <array>
#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fclgan/image.hpp"

namespace fclgan {

inline constexpr double kPsnrCap = 100.0;

namespace detail {
inline void check_pair(const Image& x, const Image& y, const char* who) {
  if (!x.same_shape(y))
    throw ShapeError(std::string(who) + ": image shapes differ (" + std::to_string(x.channels) + "x" +
                     std::to_string(x.height) + "x" + std::to_string(x.width) + " vs " +
                     std::to_string(y.channels) + "x" + std::to_string(y.height) + "x" +
                     std::to_string(y.width) + ")");
}
}  // namespace detail

/// 10 log10(1 / MSE) over all channels; identical images give kPsnrCap.
inline double psnr(const Image& x, const Image& y) {
  detail::check_pair(x, y, "psnr");
  double se = 0;
  for (std::size_t i = 0; i < x.data.size(); ++i) {
    const double d = static_cast<double>(x.data[i]) - y.data[i];
    se += d * d;
  }
  const double mse = se / static_cast<double>(x.data.size());
  if (mse == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

/// Luma plane (0.299, 0.587, 0.114) of an RGB image, or the single channel.
inline std::vector<double> to_gray(const Image& img) {
  std::vector<double> g(img.plane());
  if (img.channels == 1) {
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = img.data[i];
    return g;
  }
  if (img.channels != 3) throw ShapeError("to_gray: expected 1 or 3 channels");
  const std::size_t p = img.plane();
  for (std::size_t i = 0; i < p; ++i) g[i] = 0.299 * img.data[i] + 0.587 * img.data[p + i] + 0.114 * img.data[2 * p + i];
  return g;
}

struct SsimOptions {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01, k2 = 0.03, range = 1.0;
};

/// Normalized 1-D gaussian taps.
inline std::vector<double> gaussian_taps(int n, double sigma) {
  std::vector<double> t(static_cast<std::size_t>(n));
  const double c = (n - 1) / 2.0;
  double s = 0;
  for (int i = 0; i < n; ++i) s += t[static_cast<std::size_t>(i)] = std::exp(-(i - c) * (i - c) / (2 * sigma * sigma));
  for (double& v : t) v /= s;
  return t;
}

/// Mean local SSIM over all fully contained windows, on grayscale planes.
inline double ssim(const Image& x, const Image& y, const SsimOptions& opt = {}) {
  detail::check_pair(x, y, "ssim");
  const std::size_t n = static_cast<std::size_t>(opt.window);
  if (x.height < n || x.width < n)
    throw ShapeError("ssim: image " + std::to_string(x.height) + "x" + std::to_string(x.width) +
                     " smaller than the " + std::to_string(n) + "x" + std::to_string(n) + " window");
  const auto gx = to_gray(x), gy = to_gray(y);
  const auto taps = gaussian_taps(opt.window, opt.sigma);
  const std::size_t h = x.height, w = x.width, oh = h - n + 1, ow = w - n + 1;
  // Separable filtering of x, y, x^2, y^2, xy: rows first, then columns.
  std::array<std::vector<double>, 5> rowf;
  for (auto& r : rowf) r.assign(h * ow, 0.0);
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < ow; ++j)
      for (std::size_t k = 0; k < n; ++k) {
        const double a = gx[i * w + j + k], b = gy[i * w + j + k], t = taps[k];
        rowf[0][i * ow + j] += t * a;
        rowf[1][i * ow + j] += t * b;
        rowf[2][i * ow + j] += t * a * a;
        rowf[3][i * ow + j] += t * b * b;
        rowf[4][i * ow + j] += t * a * b;
      }
  const double c1 = (opt.k1 * opt.range) * (opt.k1 * opt.range);
  const double c2 = (opt.k2 * opt.range) * (opt.k2 * opt.range);
  double total = 0;
  for (std::size_t i = 0; i < oh; ++i)
    for (std::size_t j = 0; j < ow; ++j) {
      std::array<double, 5> m{};
      for (std::size_t k = 0; k < n; ++k)
        for (std::size_t f = 0; f < 5; ++f) m[f] += taps[k] * rowf[f][(i + k) * ow + j];
      const double vx = m[2] - m[0] * m[0], vy = m[3] - m[1] * m[1], cxy = m[4] - m[0] * m[1];
      total += ((2 * m[0] * m[1] + c1) * (2 * cxy + c2)) /
               ((m[0] * m[0] + m[1] * m[1] + c1) * (vx + vy + c2));
    }
  return total / static_cast<double>(oh * ow);
}

/// Mean over channels of |mean(x_c) - mean(y_c)|. A proxy for colour shift,
/// blind to spatial structure.
inline double cse_proxy(const Image& x, const Image& y) {
  if (x.channels != y.channels) throw ShapeError("cse_proxy: channel counts differ");
  detail::check_pair(x, y, "cse_proxy");
  double acc = 0;
  const std::size_t p = x.plane();
  for (std::size_t c = 0; c < x.channels; ++c) {
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < p; ++i) {
      mx += x.data[c * p + i];
      my += y.data[c * p + i];
    }
    acc += std::abs(mx - my) / static_cast<double>(p);
  }
  return acc / static_cast<double>(x.channels);
}

struct MetricRow {
  std::string name;
  double psnr = 0, ssim = 0, cse_proxy = 0;
};

struct MetricReport {
  std::vector<MetricRow> rows;

  void add(std::string name, const Image& restored, const Image& reference) {
    rows.push_back({std::move(name), fclgan::psnr(restored, reference), fclgan::ssim(restored, reference),
                    fclgan::cse_proxy(restored, reference)});
  }
  std::size_t count() const { return rows.size(); }
  MetricRow mean() const {
    MetricRow m{"mean"};
    if (rows.empty()) return m;
    for (const auto& r : rows) {
      m.psnr += r.psnr;
      m.ssim += r.ssim;
      m.cse_proxy += r.cse_proxy;
    }
    const double n = static_cast<double>(rows.size());
    m.psnr /= n;
    m.ssim /= n;
    m.cse_proxy /= n;
    return m;
  }

  std::string table() const {
    std::ostringstream os;
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-28s %10s %8s %10s\n", "image", "psnr_db", "ssim", "cse_proxy");
    os << buf;
    auto line = [&](const MetricRow& r) {
      std::snprintf(buf, sizeof buf, "%-28s %10.4f %8.5f %10.6f\n", r.name.c_str(), r.psnr, r.ssim, r.cse_proxy);
      os << buf;
    };
    for (const auto& r : rows) line(r);
    line(mean());
    os << "count " << count() << "; psnr on RGB, capped at " << kPsnrCap << " dB for identical images\n";
    return os.str();
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["rows"] = nlohmann::json::array();
    for (const auto& r : rows)
      j["rows"].push_back({{"name", r.name}, {"psnr", r.psnr}, {"ssim", r.ssim}, {"cse_proxy", r.cse_proxy}});
    const auto m = mean();
    j["mean"] = {{"psnr", m.psnr}, {"ssim", m.ssim}, {"cse_proxy", m.cse_proxy}};
    j["count"] = count();
    j["psnr_cap_db"] = kPsnrCap;
    return j;
  }
};

}  // namespace fclgan
