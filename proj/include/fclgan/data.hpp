#pragma once

// Blur synthesis, the procedural desk dataset, and the unpaired batch loader.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "fclgan/image.hpp"
#include "fclgan/tensor.hpp"

namespace fclgan {

enum class BlurKind { gaussian, linear_motion };

struct BlurSpec {
  BlurKind kind = BlurKind::gaussian;
  double sigma = 1.0;     // gaussian
  int length = 5;         // linear_motion, pixels
  double angle = 0.0;     // linear_motion, degrees

  static BlurSpec gaussian(double s) { return {BlurKind::gaussian, s, 0, 0.0}; }
  static BlurSpec motion(int len, double deg) { return {BlurKind::linear_motion, 0.0, len, deg}; }

  nlohmann::json to_json() const {
    if (kind == BlurKind::gaussian) return {{"kind", "gaussian"}, {"sigma", sigma}};
    return {{"kind", "linear_motion"}, {"length", length}, {"angle", angle}};
  }
};

/// Square odd-sized kernel, row-major, normalized to sum 1.
struct BlurKernel {
  int size = 1;
  std::vector<double> taps{1.0};
  int radius() const { return size / 2; }
  double at(int y, int x) const { return taps[static_cast<std::size_t>(y * size + x)]; }
};

namespace detail {
inline void normalize_kernel(BlurKernel& k) {
  double s = 0;
  for (double v : k.taps) s += v;
  if (!(s > 0) || !std::isfinite(s)) throw NumericError("blur kernel cannot be normalized (sum " + std::to_string(s) + ")");
  for (double& v : k.taps) v /= s;
}
}  // namespace detail

/// Gaussian: radius ceil(3 sigma); sigma below 1e-3 gives a delta.
/// Linear motion: `length` unit samples along a centered segment at `angle`
/// (0 = horizontal, counter-clockwise), each rounded to the nearest pixel.
inline BlurKernel make_kernel(const BlurSpec& spec) {
  BlurKernel k;
  if (spec.kind == BlurKind::gaussian) {
    if (!(spec.sigma >= 0) || !std::isfinite(spec.sigma)) throw NumericError("gaussian sigma must be finite and >= 0");
    if (spec.sigma < 1e-3) return k;
    const int r = static_cast<int>(std::ceil(3.0 * spec.sigma));
    k.size = 2 * r + 1;
    k.taps.assign(static_cast<std::size_t>(k.size * k.size), 0.0);
    for (int y = -r; y <= r; ++y)
      for (int x = -r; x <= r; ++x)
        k.taps[static_cast<std::size_t>((y + r) * k.size + x + r)] =
            std::exp(-(x * x + y * y) / (2.0 * spec.sigma * spec.sigma));
  } else {
    if (spec.length <= 0) throw NumericError("motion length must be positive");
    const double th = spec.angle * std::numbers::pi / 180.0;
    const double half = (spec.length - 1) / 2.0;
    const int r = static_cast<int>(std::ceil(half));
    k.size = 2 * r + 1;
    k.taps.assign(static_cast<std::size_t>(k.size * k.size), 0.0);
    for (int t = 0; t < spec.length; ++t) {
      const double off = t - half;
      const int x = static_cast<int>(std::lround(off * std::cos(th)));
      const int y = static_cast<int>(std::lround(-off * std::sin(th)));
      k.taps[static_cast<std::size_t>((y + r) * k.size + x + r)] += 1.0;
    }
  }
  detail::normalize_kernel(k);
  return k;
}

inline std::size_t reflect101(long i, std::size_t n) {
  if (n == 1) return 0;
  const long m = static_cast<long>(n);
  while (i < 0 || i >= m) i = i < 0 ? -i : 2 * (m - 1) - i;
  return static_cast<std::size_t>(i);
}

/// Channelwise convolution with reflect-padded borders.
inline Image apply_kernel(const Image& img, const BlurKernel& k) {
  const int r = k.radius();
  if (static_cast<std::size_t>(r) >= img.height || static_cast<std::size_t>(r) >= img.width)
    throw ShapeError("blur kernel of size " + std::to_string(k.size) + " does not fit a " +
                     std::to_string(img.height) + "x" + std::to_string(img.width) + " image");
  Image out(img.channels, img.height, img.width);
  for (std::size_t c = 0; c < img.channels; ++c)
    for (std::size_t y = 0; y < img.height; ++y)
      for (std::size_t x = 0; x < img.width; ++x) {
        double s = 0;
        for (int dy = -r; dy <= r; ++dy) {
          const std::size_t yy = reflect101(static_cast<long>(y) + dy, img.height);
          for (int dx = -r; dx <= r; ++dx) {
            const double w = k.at(dy + r, dx + r);
            if (w == 0.0) continue;
            s += w * img.at(c, yy, reflect101(static_cast<long>(x) + dx, img.width));
          }
        }
        out.at(c, y, x) = static_cast<float>(s);
      }
  return out;
}

inline Image synth_blur(const Image& img, const BlurSpec& spec) { return apply_kernel(img, make_kernel(spec)); }

// Procedural sharp images.

namespace detail {

struct Rgb {
  float r, g, b;
};

inline Rgb random_color(std::mt19937_64& rng) {
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  return {u(rng), u(rng), u(rng)};
}

inline void blend(Image& img, std::size_t y, std::size_t x, Rgb c, float a = 1.0f) {
  img.at(0, y, x) = img.at(0, y, x) * (1 - a) + c.r * a;
  img.at(1, y, x) = img.at(1, y, x) * (1 - a) + c.g * a;
  img.at(2, y, x) = img.at(2, y, x) * (1 - a) + c.b * a;
}

inline void fill_polygon(Image& img, const std::vector<std::pair<double, double>>& pts, Rgb c) {
  // Even-odd rule at pixel centers.
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x) {
      const double px = x + 0.5, py = y + 0.5;
      bool in = false;
      for (std::size_t i = 0, j = pts.size() - 1; i < pts.size(); j = i++) {
        const auto [xi, yi] = pts[i];
        const auto [xj, yj] = pts[j];
        if ((yi > py) != (yj > py) && px < (xj - xi) * (py - yi) / (yj - yi) + xi) in = !in;
      }
      if (in) blend(img, y, x, c);
    }
}

inline void stroke(Image& img, double x0, double y0, double x1, double y1, double width, Rgb c) {
  const double dx = x1 - x0, dy = y1 - y0, len2 = dx * dx + dy * dy;
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x) {
      const double px = x + 0.5 - x0, py = y + 0.5 - y0;
      const double t = len2 > 0 ? std::clamp((px * dx + py * dy) / len2, 0.0, 1.0) : 0.0;
      const double ex = px - t * dx, ey = py - t * dy;
      if (ex * ex + ey * ey <= width * width / 4) blend(img, y, x, c);
    }
}

}  // namespace detail

/// Random polygons, text-like strokes and a noise-textured patch over a
/// smooth background. Rich in high frequencies by construction.
inline Image generate_sharp_image(std::size_t size, std::mt19937_64& rng) {
  using detail::Rgb;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double s = static_cast<double>(size);
  Image img(3, size, size);
  const Rgb c0 = detail::random_color(rng), c1 = detail::random_color(rng);
  const double gx = u(rng) - 0.5, gy = u(rng) - 0.5;
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x) {
      const float t = static_cast<float>(std::clamp(0.5 + gx * (x / s - 0.5) + gy * (y / s - 0.5), 0.0, 1.0));
      detail::blend(img, y, x, {c0.r * (1 - t) + c1.r * t, c0.g * (1 - t) + c1.g * t, c0.b * (1 - t) + c1.b * t});
    }

  const int polygons = 3 + static_cast<int>(u(rng) * 4);
  for (int p = 0; p < polygons; ++p) {
    const int n = 3 + static_cast<int>(u(rng) * 4);
    const double cx = u(rng) * s, cy = u(rng) * s, rad = (0.1 + 0.25 * u(rng)) * s;
    std::vector<std::pair<double, double>> pts;
    for (int i = 0; i < n; ++i) {
      const double a = 2 * std::numbers::pi * (i + 0.6 * u(rng)) / n;
      const double rr = rad * (0.5 + 0.5 * u(rng));
      pts.emplace_back(cx + rr * std::cos(a), cy + rr * std::sin(a));
    }
    detail::fill_polygon(img, pts, detail::random_color(rng));
  }

  // Text-like strokes: short rows of thin glyph segments.
  const int lines = 2 + static_cast<int>(u(rng) * 3);
  for (int l = 0; l < lines; ++l) {
    const double y = u(rng) * s, x0 = u(rng) * s * 0.5, gh = (0.04 + 0.05 * u(rng)) * s;
    const Rgb ink = u(rng) < 0.5 ? Rgb{0.05f, 0.05f, 0.05f} : Rgb{0.95f, 0.95f, 0.95f};
    const int glyphs = 3 + static_cast<int>(u(rng) * 6);
    for (int g = 0; g < glyphs; ++g) {
      const double gx0 = x0 + g * gh * 0.9;
      const int segs = 1 + static_cast<int>(u(rng) * 3);
      for (int k = 0; k < segs; ++k)
        detail::stroke(img, gx0 + u(rng) * gh * 0.6, y + u(rng) * gh, gx0 + u(rng) * gh * 0.6,
                       y + u(rng) * gh, 1.0 + u(rng), ink);
    }
  }

  // Noise texture patch.
  std::normal_distribution<double> nd(0.0, 0.25);
  const std::size_t px = static_cast<std::size_t>(u(rng) * s * 0.6), py = static_cast<std::size_t>(u(rng) * s * 0.6);
  const std::size_t pw = size / 4 + static_cast<std::size_t>(u(rng) * s * 0.3);
  for (std::size_t y = py; y < std::min(size, py + pw); ++y)
    for (std::size_t x = px; x < std::min(size, px + pw); ++x)
      for (std::size_t c = 0; c < 3; ++c)
        img.at(c, y, x) = static_cast<float>(std::clamp(img.at(c, y, x) + nd(rng), 0.0, 1.0));
  return quantize8(std::move(img));
}

struct DeskDatasetLayout {
  std::filesystem::path root;
  std::filesystem::path sharp() const { return root / "sharp"; }
  std::filesystem::path blurred() const { return root / "blurred"; }
  std::filesystem::path val_sharp() const { return root / "val_sharp"; }
  std::filesystem::path val_blurred() const { return root / "val_blurred"; }
  std::filesystem::path manifest() const { return root / "manifest.json"; }
};

inline std::size_t validation_count(std::size_t n_images) { return std::max<std::size_t>(4, n_images / 4); }

/// Writes sharp/ and blurred/ (disjoint sources, unpaired), a paired
/// validation set with gaussian sigma in [1, 2], and manifest.json.
inline nlohmann::json make_desk_dataset(const std::filesystem::path& out_dir, std::size_t n_images,
                                        std::size_t size, std::uint64_t seed) {
  if (size < 32) throw ConfigError("desk dataset: image size must be >= 32");
  if (n_images < 2) throw ConfigError("desk dataset: need at least 2 images");
  const DeskDatasetLayout lay{out_dir};
  std::error_code ec;
  for (const auto& d : {lay.sharp(), lay.blurred(), lay.val_sharp(), lay.val_blurred()}) {
    std::filesystem::create_directories(d, ec);
    if (ec) throw IoError("cannot create " + d.string() + ": " + ec.message());
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto name = [](const char* stem, std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s_%04zu.png", stem, i);
    return std::string(buf);
  };
  auto random_blur = [&]() {
    if (u(rng) < 0.5) return BlurSpec::gaussian(1.0 + 2.0 * u(rng));
    return BlurSpec::motion(5 + 2 * static_cast<int>(u(rng) * 4), std::floor(u(rng) * 180.0));
  };

  nlohmann::json man;
  man["seed"] = seed;
  man["size"] = size;
  man["n_images"] = n_images;
  man["sharp"] = nlohmann::json::array();
  man["blurred"] = nlohmann::json::array();
  man["validation"] = nlohmann::json::array();
  std::size_t ns = 0, nb = 0;
  for (std::size_t i = 0; i < n_images; ++i) {
    const Image img = generate_sharp_image(size, rng);
    if (i % 2 == 0) {
      const std::string f = name("sharp", ns++);
      write_png(lay.sharp() / f, img);
      man["sharp"].push_back({{"file", "sharp/" + f}, {"source", i}});
    } else {
      const BlurSpec b = random_blur();
      const std::string f = name("blurred", nb++);
      write_png(lay.blurred() / f, synth_blur(img, b));
      man["blurred"].push_back({{"file", "blurred/" + f}, {"source", i}, {"blur", b.to_json()}});
    }
  }
  for (std::size_t i = 0; i < validation_count(n_images); ++i) {
    const Image img = generate_sharp_image(size, rng);
    const BlurSpec b = BlurSpec::gaussian(1.0 + u(rng));
    const std::string f = name("val", i);
    write_png(lay.val_sharp() / f, img);
    write_png(lay.val_blurred() / f, synth_blur(img, b));
    man["validation"].push_back({{"sharp", "val_sharp/" + f}, {"blurred", "val_blurred/" + f}, {"blur", b.to_json()}});
  }
  std::ofstream os(lay.manifest(), std::ios::binary);
  if (!os) throw IoError("cannot write " + lay.manifest().string());
  os << man.dump(2) << '\n';
  if (!os) throw IoError("failed writing " + lay.manifest().string());
  return man;
}

// Unpaired loading.

/// Sorted *.png files of a directory.
inline std::vector<std::filesystem::path> list_pngs(const std::filesystem::path& dir) {
  std::error_code ec;
  if (!std::filesystem::is_directory(dir, ec)) throw DatasetError("not a directory: " + dir.string());
  std::vector<std::filesystem::path> out;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".png") out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

/// Decodes every PNG in `dir`; undecodable files are skipped with a warning.
inline std::vector<Image> load_images(const std::filesystem::path& dir, std::ostream& warn = std::cerr) {
  std::vector<Image> out;
  for (const auto& p : list_pngs(dir)) {
    try {
      out.push_back(read_png(p));
    } catch (const IoError& e) {
      warn << "warning: skipping " << p.string() << ": " << e.what() << '\n';
    }
  }
  return out;
}

/// NCHW float batch in [-1, 1].
struct Batch {
  Shape shape;
  std::vector<float> values;
};

struct BatchPair {
  Batch blurred, sharp;
};

/// Unpaired blurred/sharp source. Order, crops and flips for a given epoch
/// key depend only on (seed, key), so any epoch can be regenerated on resume.
class UnpairedDataset {
 public:
  UnpairedDataset(std::vector<Image> blurred, std::vector<Image> sharp, std::size_t crop_size, std::uint64_t seed)
      : blurred_(std::move(blurred)), sharp_(std::move(sharp)), crop_(crop_size), seed_(seed) {
    if (blurred_.empty()) throw DatasetError("no decodable blurred images");
    if (sharp_.empty()) throw DatasetError("no decodable sharp images");
    if (crop_ == 0 || crop_ % 4 != 0) throw DatasetError("crop size must be a positive multiple of 4");
    for (const auto* set : {&blurred_, &sharp_})
      for (const auto& im : *set)
        if (im.height < crop_ || im.width < crop_)
          throw DatasetError("crop size " + std::to_string(crop_) + " exceeds image " +
                             std::to_string(im.height) + "x" + std::to_string(im.width));
  }

  std::size_t blurred_count() const { return blurred_.size(); }
  std::size_t sharp_count() const { return sharp_.size(); }
  std::size_t crop_size() const { return crop_; }

  /// The shorter list bounds the number of batches.
  std::size_t batches_per_epoch(std::size_t batch) const {
    return std::min(blurred_.size(), sharp_.size()) / batch;
  }

  std::vector<BatchPair> epoch_batches(std::uint64_t key, std::size_t batch) const {
    if (batch == 0) throw ConfigError("batch size must be positive");
    const std::size_t nb = batches_per_epoch(batch);
    auto bo = order(key, 0, blurred_.size()), so = order(key, 1, sharp_.size());
    std::vector<BatchPair> out(nb);
    for (std::size_t i = 0; i < nb; ++i) {
      out[i].blurred = assemble(blurred_, bo, i, batch, key, 2);
      out[i].sharp = assemble(sharp_, so, i, batch, key, 3);
    }
    return out;
  }

 private:
  std::mt19937_64 stream(std::uint64_t key, std::uint64_t tag, std::uint64_t idx = 0) const {
    std::seed_seq seq{static_cast<std::uint32_t>(seed_), static_cast<std::uint32_t>(seed_ >> 32),
                      static_cast<std::uint32_t>(key), static_cast<std::uint32_t>(key >> 32),
                      static_cast<std::uint32_t>(tag), static_cast<std::uint32_t>(idx)};
    return std::mt19937_64(seq);
  }

  std::vector<std::size_t> order(std::uint64_t key, std::uint64_t tag, std::size_t n) const {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    auto rng = stream(key, tag);
    for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng() % i]);
    return idx;
  }

  Batch assemble(const std::vector<Image>& set, const std::vector<std::size_t>& ord, std::size_t bi,
                 std::size_t batch, std::uint64_t key, std::uint64_t tag) const {
    Batch b{{batch, 3, crop_, crop_}, std::vector<float>(batch * 3 * crop_ * crop_)};
    for (std::size_t j = 0; j < batch; ++j) {
      const Image& im = set[ord[bi * batch + j]];
      auto rng = stream(key, tag, bi * batch + j);
      const std::size_t oy = rng() % (im.height - crop_ + 1), ox = rng() % (im.width - crop_ + 1);
      const bool flip = (rng() & 1) != 0;
      float* dst = b.values.data() + j * 3 * crop_ * crop_;
      for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t y = 0; y < crop_; ++y)
          for (std::size_t x = 0; x < crop_; ++x) {
            const std::size_t sx = flip ? ox + crop_ - 1 - x : ox + x;
            dst[(c * crop_ + y) * crop_ + x] = im.at(c % im.channels, oy + y, sx) * 2.0f - 1.0f;
          }
    }
    return b;
  }

  std::vector<Image> blurred_, sharp_;
  std::size_t crop_;
  std::uint64_t seed_;
};

inline UnpairedDataset load_unpaired(const std::filesystem::path& blur_dir, const std::filesystem::path& sharp_dir,
                                     std::size_t crop_size, std::uint64_t seed) {
  return UnpairedDataset(load_images(blur_dir), load_images(sharp_dir), crop_size, seed);
}

/// [0,1] image <-> [1,C,H,W] tensor in [-1,1].
template <typename T>
Var<T> image_to_tensor(const Image& img) {
  std::vector<T> v(img.data.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<T>(img.data[i]) * T(2) - T(1);
  return Var<T>::from({1, img.channels, img.height, img.width}, std::move(v));
}

template <typename T>
Image tensor_to_image(const Var<T>& t, std::size_t n = 0) {
  const std::size_t c = t.dim(1), h = t.dim(2), w = t.dim(3);
  Image img(c, h, w);
  const T* src = t.values().data() + n * c * h * w;
  for (std::size_t i = 0; i < img.data.size(); ++i)
    img.data[i] = std::clamp(static_cast<float>((src[i] + T(1)) / T(2)), 0.0f, 1.0f);
  return img;
}

}  // namespace fclgan
