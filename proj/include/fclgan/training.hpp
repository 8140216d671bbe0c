#pragma once

// Two-circuit adversarial training with spectral contrastive constraints,
// negative buffers, image pools, the learning-rate schedule and checkpoints.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fclgan/data.hpp"
#include "fclgan/ldcu.hpp"
#include "fclgan/losses.hpp"
#include "fclgan/metrics.hpp"
#include "fclgan/optim.hpp"
#include "fclgan/pfcu.hpp"

namespace fclgan {

struct TrainConfig {
  int epochs = 80;
  double lr = 1e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  int lr_halving_epochs = 20;
  int batch_size = 4;
  int crop_size = 64;
  int repeats = 8;  // passes over the data per epoch
  int negatives = 8;
  int buffer_capacity = 50;
  int pool_capacity = 50;
  double tau = 0.07;
  int checkpoint_interval = 1;  // epochs
  std::uint64_t seed = 0;
  LossWeights weights;
  SpectralConfig spectral;
  GeneratorSpec generator;
  DiscriminatorSpec discriminator;

  void validate() const {
    if (epochs < 0) throw ConfigError("train: epochs must be >= 0");
    if (!(lr > 0)) throw ConfigError("train: lr must be positive");
    if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1)) throw ConfigError("train: betas must lie in [0, 1)");
    if (lr_halving_epochs <= 0) throw ConfigError("train: lr_halving_epochs must be positive");
    if (batch_size <= 0 || crop_size <= 0 || repeats <= 0 || checkpoint_interval <= 0)
      throw ConfigError("train: batch_size, crop_size, repeats and checkpoint_interval must be positive");
    if (crop_size % 4 != 0) throw ConfigError("train: crop_size must be a multiple of 4");
    if (negatives <= 0 || buffer_capacity <= 0 || pool_capacity < 0)
      throw ConfigError("train: negatives and buffer_capacity must be positive");
    if (negatives > buffer_capacity) throw ConfigError("train: negatives must not exceed buffer_capacity");
    if (!(tau > 0)) throw ConfigError("train: tau must be positive");
    weights.validate();
    spectral.validate();
    generator.validate();
  }
};

inline nlohmann::json to_json(const TrainConfig& c) {
  const auto& g = c.generator;
  return {
      {"epochs", c.epochs}, {"lr", c.lr}, {"beta1", c.beta1}, {"beta2", c.beta2},
      {"lr_halving_epochs", c.lr_halving_epochs}, {"batch_size", c.batch_size}, {"crop_size", c.crop_size},
      {"repeats", c.repeats}, {"negatives", c.negatives}, {"buffer_capacity", c.buffer_capacity},
      {"pool_capacity", c.pool_capacity}, {"tau", c.tau}, {"checkpoint_interval", c.checkpoint_interval},
      {"seed", c.seed},
      {"weights", {{"adv", c.weights.adv}, {"cc", c.weights.cc}, {"ctst", c.weights.ctst}, {"tv", c.weights.tv}}},
      {"spectral",
       {{"crop_fraction", c.spectral.crop_fraction}, {"chunk", c.spectral.chunk},
        {"quant_scale", c.spectral.quant_scale}, {"threshold", c.spectral.threshold},
        {"temperature", c.spectral.temperature}, {"luminance_weights", c.spectral.luminance_weights}}},
      {"generator",
       {{"structure", to_string(g.structure)}, {"base_width", g.base_width}, {"allocation", g.allocation},
        {"norm", to_string(g.norm)}, {"residual_norm", to_string(g.residual_norm)},
        {"residual_form", to_string(g.residual_form)}, {"kernel", g.kernel}, {"image_channels", g.image_channels}}},
      {"discriminator",
       {{"base_width", c.discriminator.base_width}, {"norm", to_string(c.discriminator.norm)},
        {"image_channels", c.discriminator.image_channels}}},
  };
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  try {
    c.epochs = j.at("epochs");
    c.lr = j.at("lr");
    c.beta1 = j.at("beta1");
    c.beta2 = j.at("beta2");
    c.lr_halving_epochs = j.at("lr_halving_epochs");
    c.batch_size = j.at("batch_size");
    c.crop_size = j.at("crop_size");
    c.repeats = j.at("repeats");
    c.negatives = j.at("negatives");
    c.buffer_capacity = j.at("buffer_capacity");
    c.pool_capacity = j.at("pool_capacity");
    c.tau = j.at("tau");
    c.checkpoint_interval = j.at("checkpoint_interval");
    c.seed = j.at("seed");
    const auto& w = j.at("weights");
    c.weights = {w.at("adv"), w.at("cc"), w.at("ctst"), w.at("tv")};
    const auto& s = j.at("spectral");
    c.spectral.crop_fraction = s.at("crop_fraction");
    c.spectral.chunk = s.at("chunk");
    c.spectral.quant_scale = s.at("quant_scale");
    c.spectral.threshold = s.at("threshold");
    c.spectral.temperature = s.at("temperature");
    c.spectral.luminance_weights = s.at("luminance_weights");
    const auto& g = j.at("generator");
    c.generator.structure = parse_structure(g.at("structure"));
    c.generator.base_width = g.at("base_width");
    c.generator.allocation = g.at("allocation");
    c.generator.norm = parse_norm(g.at("norm"));
    c.generator.residual_norm = parse_norm(g.at("residual_norm"));
    c.generator.residual_form = parse_form(g.at("residual_form"));
    c.generator.kernel = g.at("kernel");
    c.generator.image_channels = g.at("image_channels");
    const auto& d = j.at("discriminator");
    c.discriminator.base_width = d.at("base_width");
    c.discriminator.norm = parse_norm(d.at("norm"));
    c.discriminator.image_channels = d.at("image_channels");
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed config snapshot: ") + e.what());
  }
  return c;
}

/// lr_initial * 0.5^floor(epoch / lr_halving_epochs)
inline double lr_at(int epoch, const TrainConfig& cfg) {
  return cfg.lr * std::pow(0.5, std::floor(static_cast<double>(epoch) / cfg.lr_halving_epochs));
}

enum class Domain : std::uint8_t { blurred = 0, sharp = 1 };

inline const char* to_string(Domain d) { return d == Domain::blurred ? "blurred" : "sharp"; }

/// One image [1,C,H,W] with its domain tag.
template <typename T>
struct TaggedImage {
  Domain domain;
  Shape shape;
  std::vector<T> values;
  Var<T> var() const { return Var<T>::from(shape, values); }
};

/// FIFO store of past real images of a single domain, used as negatives.
template <typename T>
class NegativeBuffer {
 public:
  NegativeBuffer(Domain holds, std::size_t capacity) : holds_(holds), capacity_(capacity) {}

  void push(TaggedImage<T> img) {
    if (img.domain != holds_)
      throw ConfigError(std::string("negative buffer for ") + to_string(holds_) + " images received a " +
                        to_string(img.domain) + " image");
    if (items_.size() == capacity_) items_.pop_front();
    items_.push_back(std::move(img));
  }

  /// n distinct items, uniformly without replacement.
  std::vector<const TaggedImage<T>*> sample(std::size_t n, std::mt19937_64& rng) const {
    if (n > items_.size()) throw ConfigError("negative buffer: not enough items to sample");
    std::vector<std::size_t> idx(items_.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::vector<const TaggedImage<T>*> out;
    for (std::size_t k = 0; k < n; ++k) {
      const std::size_t j = k + static_cast<std::size_t>(rng() % (idx.size() - k));
      std::swap(idx[k], idx[j]);
      out.push_back(&items_[idx[k]]);
    }
    return out;
  }

  Domain holds() const { return holds_; }
  std::size_t size() const { return items_.size(); }
  std::size_t capacity() const { return capacity_; }
  const std::deque<TaggedImage<T>>& items() const { return items_; }
  std::deque<TaggedImage<T>>& items() { return items_; }

 private:
  Domain holds_;
  std::size_t capacity_;
  std::deque<TaggedImage<T>> items_;
};

/// History of generated images: while filling, returns the new image; when
/// full, returns a stored one (replacing it) with probability 1/2.
template <typename T>
class ImagePool {
 public:
  explicit ImagePool(std::size_t capacity) : capacity_(capacity) {}

  /// Queries a whole [N,C,H,W] batch item by item.
  Var<T> query(const Var<T>& batch, std::mt19937_64& rng) {
    if (capacity_ == 0) return batch.detach();
    const std::size_t n = batch.dim(0), per = batch.numel() / n;
    std::vector<T> out(batch.values());
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<T> cur(out.begin() + i * per, out.begin() + (i + 1) * per);
      if (items_.size() < capacity_) {
        items_.push_back(std::move(cur));
      } else if (u(rng) < 0.5) {
        const std::size_t j = static_cast<std::size_t>(rng() % capacity_);
        std::copy(items_[j].begin(), items_[j].end(), out.begin() + i * per);
        items_[j] = std::move(cur);
      }
    }
    return Var<T>::from(batch.shape(), std::move(out));
  }

  std::size_t size() const { return items_.size(); }
  std::size_t capacity() const { return capacity_; }
  std::vector<std::vector<T>>& items() { return items_; }
  const std::vector<std::vector<T>>& items() const { return items_; }

 private:
  std::size_t capacity_;
  std::vector<std::vector<T>> items_;
};

/// The two generators and two critics trained jointly.
template <typename T>
struct TrainModels {
  Model<T> g_b2s, g_s2b, d_b, d_s;

  static TrainModels build(const TrainConfig& cfg) {
    std::mt19937_64 rng(cfg.seed);
    auto g1 = build_generator<T>(cfg.generator, rng);
    auto g2 = build_generator<T>(cfg.generator, rng);
    auto d1 = build_discriminator<T>(cfg.discriminator, rng);
    auto d2 = build_discriminator<T>(cfg.discriminator, rng);
    return {std::move(g1), std::move(g2), std::move(d1), std::move(d2)};
  }

  std::vector<std::pair<std::string, Model<T>*>> named() {
    return {{"g_b2s", &g_b2s}, {"g_s2b", &g_s2b}, {"d_b", &d_b}, {"d_s", &d_s}};
  }

  /// Trainable registry: generator then critic parameters, fully qualified.
  std::vector<NamedParam<T>> registry() {
    std::vector<NamedParam<T>> out;
    for (auto& [name, m] : named())
      for (auto& p : m->parameters()) out.push_back({name + "." + p.name, p.var});
    return out;
  }
};

/// Negative soft representations shared by every anchor of a stream.
template <typename T>
struct StepNegatives {
  std::vector<Var<T>> deblur;  // blurred-domain reps, against anchors S_B
  std::vector<Var<T>> reblur;  // sharp-domain reps, against anchors B_S
};

template <typename T>
struct GeneratorObjective {
  Var<T> s_b, b_star, b_s, s_star;
  GeneratorLossParts<T> parts;
  Var<T> total;
};

/// Soft spectral reps of every batch item, cut from the graph.
template <typename T>
std::vector<Var<T>> constant_reps(const Var<T>& batch, const SpectralConfig& cfg) {
  NoGradGuard ng;
  std::vector<Var<T>> out;
  for (std::size_t i = 0; i < batch.dim(0); ++i) out.push_back(spectral_rep(batch_item(batch, i), cfg));
  return out;
}

/// Mean over batch items of the contrastive loss of each generated item
/// against its real counterpart (positive) and the shared negatives.
template <typename T>
Var<T> stream_contrastive(const Var<T>& generated, const std::vector<Var<T>>& positives,
                          const std::vector<Var<T>>& negatives, const SpectralConfig& cfg, double tau) {
  std::vector<Var<T>> per;
  for (std::size_t i = 0; i < generated.dim(0); ++i)
    per.push_back(contrastive_loss(spectral_rep(batch_item(generated, i), cfg), positives[i], negatives, tau, cfg.chunk));
  return mean(stack_scalars(per));
}

/// Both circuits and the weighted generator objective for one step.
template <typename T>
GeneratorObjective<T> generator_objective(TrainModels<T>& m, const Var<T>& b, const Var<T>& s,
                                          const StepNegatives<T>& neg, const SpectralConfig& spec, double tau,
                                          const LossWeights& w) {
  GeneratorObjective<T> o;
  o.s_b = m.g_b2s.forward(b);
  o.b_star = m.g_s2b.forward(o.s_b);
  o.b_s = m.g_s2b.forward(s);
  o.s_star = m.g_b2s.forward(o.b_s);
  o.parts.adv = add(adversarial_g(m.d_s.forward(o.s_b)), adversarial_g(m.d_b.forward(o.b_s)));
  o.parts.cc = cycle_consistency(b, o.b_star, s, o.s_star);
  o.parts.ctst = add(stream_contrastive(o.s_b, constant_reps(s, spec), neg.deblur, spec, tau),
                     stream_contrastive(o.b_s, constant_reps(b, spec), neg.reblur, spec, tau));
  o.parts.tv = add(total_variation(o.s_b), total_variation(o.s_star));
  o.total = total_generator_loss(o.parts, w);
  return o;
}

namespace detail {

template <typename T>
std::string tensor_stats(const char* name, const Var<T>& v) {
  if (!v.defined()) return std::string(name) + ": <none>";
  double mn = std::numeric_limits<double>::infinity(), mx = -mn, sum = 0;
  std::size_t bad = 0;
  for (T x : v.values()) {
    const double d = static_cast<double>(x);
    if (!std::isfinite(d)) {
      ++bad;
      continue;
    }
    mn = std::min(mn, d);
    mx = std::max(mx, d);
    sum += d;
  }
  const std::size_t ok = v.numel() - bad;
  std::ostringstream os;
  os << name << " " << shape_str(v.shape()) << " min=" << mn << " max=" << mx
     << " mean=" << (ok ? sum / static_cast<double>(ok) : 0.0) << " nonfinite=" << bad;
  return os.str();
}

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

}  // namespace detail

inline std::string format_step_line(std::uint64_t step, int epoch, double lr, const LossReport& r) {
  std::ostringstream os;
  os << "step=" << step << " epoch=" << epoch << " lr=" << detail::format_double(lr)
     << " adv_g=" << detail::format_double(r.adv_g) << " adv_d_B=" << detail::format_double(r.adv_d_B)
     << " adv_d_S=" << detail::format_double(r.adv_d_S) << " cc=" << detail::format_double(r.cc)
     << " ctst=" << detail::format_double(r.ctst) << " tv=" << detail::format_double(r.tv)
     << " total=" << detail::format_double(r.total);
  return os.str();
}

/// Paired validation images in [0,1].
struct ValidationSet {
  std::vector<std::string> names;
  std::vector<Image> blurred, sharp;

  static std::optional<ValidationSet> load(const std::filesystem::path& root) {
    const DeskDatasetLayout lay{root};
    std::error_code ec;
    if (!std::filesystem::is_directory(lay.val_blurred(), ec) || !std::filesystem::is_directory(lay.val_sharp(), ec))
      return std::nullopt;
    ValidationSet v;
    for (const auto& p : list_pngs(lay.val_blurred())) {
      const auto sp = lay.val_sharp() / p.filename();
      if (!std::filesystem::exists(sp)) continue;
      v.names.push_back(p.filename().string());
      v.blurred.push_back(read_png(p));
      v.sharp.push_back(read_png(sp));
    }
    if (v.names.empty()) return std::nullopt;
    return v;
  }
};

/// Reflect-pads to a multiple of `multiple`, runs `model` in evaluation
/// mode and crops back. Training mode is restored afterwards.
template <typename T>
Image run_generator(Model<T>& model, const Image& img, bool restore_training = true) {
  const std::size_t mult = model.input_multiple();
  const std::size_t h = img.height, w = img.width;
  const std::size_t ph = (h + mult - 1) / mult * mult, pw = (w + mult - 1) / mult * mult;
  Image padded(img.channels, ph, pw);
  for (std::size_t c = 0; c < img.channels; ++c)
    for (std::size_t y = 0; y < ph; ++y)
      for (std::size_t x = 0; x < pw; ++x)
        padded.at(c, y, x) = img.at(c, reflect101(static_cast<long>(y), h), reflect101(static_cast<long>(x), w));
  NoGradGuard ng;
  model.set_training(false);
  const Var<T> out = model.forward(image_to_tensor<T>(padded));
  if (restore_training) model.set_training(true);
  const Image full = tensor_to_image(out);
  Image res(img.channels, h, w);
  for (std::size_t c = 0; c < img.channels; ++c)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) res.at(c, y, x) = full.at(c, y, x);
  return res;
}

struct ValidationResult {
  MetricReport restored, baseline;
};

template <typename T>
ValidationResult validate(Model<T>& g_b2s, const ValidationSet& v) {
  ValidationResult r;
  for (std::size_t i = 0; i < v.names.size(); ++i) {
    r.restored.add(v.names[i], run_generator(g_b2s, v.blurred[i]), v.sharp[i]);
    r.baseline.add(v.names[i], v.blurred[i], v.sharp[i]);
  }
  return r;
}

inline std::string format_validation_line(int epoch, const ValidationResult& r) {
  const auto m = r.restored.mean(), b = r.baseline.mean();
  std::ostringstream os;
  os << "epoch=" << epoch << " psnr=" << detail::format_double(m.psnr) << " ssim=" << detail::format_double(m.ssim)
     << " cse_proxy=" << detail::format_double(m.cse_proxy) << " baseline_psnr=" << detail::format_double(b.psnr)
     << " baseline_ssim=" << detail::format_double(b.ssim) << " count=" << r.restored.count();
  return os.str();
}

inline constexpr char kCheckpointMagic[8] = {'F', 'C', 'L', 'C', 'K', 'P', 'T', '\0'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

class BinWriter {
 public:
  template <typename U>
  void pod(const U& v) {
    static_assert(std::is_trivially_copyable_v<U>);
    buf_.append(reinterpret_cast<const char*>(&v), sizeof v);
  }
  void str(const std::string& s) {
    pod<std::uint64_t>(s.size());
    buf_.append(s);
  }
  template <typename U>
  void vec(const std::vector<U>& v) {
    pod<std::uint64_t>(v.size());
    buf_.append(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(U));
  }
  const std::string& bytes() const { return buf_; }

 private:
  std::string buf_;
};

class BinReader {
 public:
  explicit BinReader(std::string bytes) : buf_(std::move(bytes)) {}
  template <typename U>
  U pod() {
    need(sizeof(U));
    U v;
    std::memcpy(&v, buf_.data() + pos_, sizeof v);
    pos_ += sizeof v;
    return v;
  }
  std::string str() {
    const auto n = pod<std::uint64_t>();
    need(n);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  template <typename U>
  std::vector<U> vec() {
    const auto n = pod<std::uint64_t>();
    need(n * sizeof(U));
    std::vector<U> v(n);
    std::memcpy(v.data(), buf_.data() + pos_, n * sizeof(U));
    pos_ += n * sizeof(U);
    return v;
  }
  void raw(char* dst, std::size_t n) {
    need(n);
    std::memcpy(dst, buf_.data() + pos_, n);
    pos_ += n;
  }
  bool done() const { return pos_ == buf_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > buf_.size()) throw IoError("checkpoint truncated");
  }
  std::string buf_;
  std::size_t pos_ = 0;
};

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  if (!is) throw IoError("cannot open " + p.string());
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

/// Write to a sibling temp file, then rename over the target.
inline void atomic_write(const std::filesystem::path& p, const std::string& bytes) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  const auto tmp = p.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write " + tmp);
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw IoError("failed writing " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, p, ec);
  if (ec) throw IoError("cannot rename " + tmp + " to " + p.string() + ": " + ec.message());
}

}  // namespace detail

/// Full training state: models, optimizers, buffers, pools, RNG and counters.
template <typename T>
class Trainer {
 public:
  Trainer(TrainConfig cfg, TrainModels<T> models)
      : cfg_(std::move(cfg)),
        models_(std::move(models)),
        opt_g_(generator_params(), cfg_.beta1, cfg_.beta2),
        opt_db_(param_vars(models_.d_b), cfg_.beta1, cfg_.beta2),
        opt_ds_(param_vars(models_.d_s), cfg_.beta1, cfg_.beta2),
        sharp_guide_(Domain::blurred, static_cast<std::size_t>(cfg_.buffer_capacity)),
        blurred_guide_(Domain::sharp, static_cast<std::size_t>(cfg_.buffer_capacity)),
        pool_b_(static_cast<std::size_t>(cfg_.pool_capacity)),
        pool_s_(static_cast<std::size_t>(cfg_.pool_capacity)),
        rng_(cfg_.seed ^ 0x9e3779b97f4a7c15ULL) {
    cfg_.validate();
    for (auto& [n, m] : models_.named()) m->set_training(true);
  }

  explicit Trainer(const TrainConfig& cfg) : Trainer(cfg, TrainModels<T>::build(cfg)) {}

  /// One optimization step on a blurred batch B and a sharp batch S.
  LossReport step(const Var<T>& b, const Var<T>& s, double lr) {
    detail::check_same_shape(b, s, "train_step");

    // Generators; critics act as fixed functions.
    models_.d_b.set_requires_grad(false);
    models_.d_s.set_requires_grad(false);
    opt_g_.zero_grad();
    GeneratorObjective<T> obj;
    try {
      const StepNegatives<T> neg{negatives_for(sharp_guide_, b), negatives_for(blurred_guide_, s)};
      obj = generator_objective(models_, b, s, neg, cfg_.spectral, cfg_.tau, cfg_.weights);
    } catch (const NumericError& e) {
      abort_nonfinite(e.what(), b, s);
    }
    LossReport r;
    r.adv_g = static_cast<double>(obj.parts.adv.item());
    r.cc = static_cast<double>(obj.parts.cc.item());
    r.ctst = static_cast<double>(obj.parts.ctst.item());
    r.tv = static_cast<double>(obj.parts.tv.item());
    r.total = static_cast<double>(obj.total.item());
    if (!r.all_finite()) abort_nonfinite(format_step_line(step_ + 1, epoch_, lr, r), b, s);
    obj.total.backward();
    opt_g_.step(lr);
    models_.d_b.set_requires_grad(true);
    models_.d_s.set_requires_grad(true);

    // Critics on real batches vs pool-mixed fakes.
    const Var<T> fake_s = pool_s_.query(obj.s_b, rng_);
    const Var<T> fake_b = pool_b_.query(obj.b_s, rng_);
    obj = {};
    opt_ds_.zero_grad();
    Var<T> ld_s = adversarial_d(models_.d_s.forward(s), models_.d_s.forward(fake_s));
    r.adv_d_S = static_cast<double>(ld_s.item());
    opt_db_.zero_grad();
    Var<T> ld_b = adversarial_d(models_.d_b.forward(b), models_.d_b.forward(fake_b));
    r.adv_d_B = static_cast<double>(ld_b.item());
    if (!r.all_finite()) abort_nonfinite(format_step_line(step_ + 1, epoch_, lr, r), b, s);
    ld_s.backward();
    opt_ds_.step(lr);
    ld_b.backward();
    opt_db_.step(lr);

    push_items(sharp_guide_, b, Domain::blurred);
    push_items(blurred_guide_, s, Domain::sharp);
    ++step_;
    return r;
  }

  /// Runs epochs [epoch(), cfg.epochs). Writes one log line per step and
  /// one validation line per epoch; checkpoints every interval and at the end.
  void fit(const UnpairedDataset& data, std::ostream& log, const ValidationSet* val = nullptr,
           std::ostream* val_log = nullptr, const std::filesystem::path& checkpoint_dir = {},
           const std::function<void(int)>& on_epoch = {}) {
    if (!checkpoint_dir.empty() && epoch_ == 0 && step_ == 0) save_checkpoint(checkpoint_dir, "epoch_0000.ckpt");
    const auto batch = static_cast<std::size_t>(cfg_.batch_size);
    for (; epoch_ < cfg_.epochs;) {
      const double lr = lr_at(epoch_, cfg_);
      for (int pass = 0; pass < cfg_.repeats; ++pass) {
        const auto key = static_cast<std::uint64_t>(epoch_) * static_cast<std::uint64_t>(cfg_.repeats) +
                         static_cast<std::uint64_t>(pass);
        for (const auto& bp : data.epoch_batches(key, batch)) {
          const LossReport r = step(to_var(bp.blurred), to_var(bp.sharp), lr);
          log << format_step_line(step_, epoch_, lr, r) << '\n';
        }
      }
      log.flush();
      ++epoch_;
      if (val && val_log) {
        *val_log << format_validation_line(epoch_, validate(models_.g_b2s, *val)) << '\n';
        val_log->flush();
      }
      if (!checkpoint_dir.empty() && (epoch_ % cfg_.checkpoint_interval == 0 || epoch_ == cfg_.epochs))
        save_checkpoint(checkpoint_dir, checkpoint_name(epoch_));
      if (on_epoch) on_epoch(epoch_);
    }
  }

  static std::string checkpoint_name(int epoch) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "epoch_%04d.ckpt", epoch);
    return buf;
  }

  // Checkpoints.

  std::string serialize() {
    detail::BinWriter w;
    for (char c : kCheckpointMagic) w.pod(c);
    w.pod(kCheckpointVersion);
    w.pod<std::uint32_t>(sizeof(T));
    w.str(to_json(cfg_).dump());
    w.pod<std::int64_t>(epoch_);
    w.pod<std::uint64_t>(step_);
    std::ostringstream rs;
    rs << rng_;
    w.str(rs.str());
    for (auto& [name, m] : models_.named()) {
      const auto params = m->parameters();
      w.pod<std::uint64_t>(params.size());
      for (const auto& p : params) {
        w.str(p.name);
        w.vec(p.var.shape());
        w.vec(p.var.values());
      }
      const auto bufs = m->buffers();
      w.pod<std::uint64_t>(bufs.size());
      for (const auto& b : bufs) {
        w.str(b.name);
        w.vec(*b.values);
      }
    }
    for (auto* o : {&opt_g_, &opt_db_, &opt_ds_}) {
      w.pod<std::uint64_t>(o->steps());
      w.pod<std::uint64_t>(o->first_moments().size());
      for (std::size_t i = 0; i < o->first_moments().size(); ++i) {
        w.vec(o->first_moments()[i]);
        w.vec(o->second_moments()[i]);
      }
    }
    for (auto* nb : {&sharp_guide_, &blurred_guide_}) {
      w.pod<std::uint64_t>(nb->items().size());
      for (const auto& it : nb->items()) {
        w.pod(static_cast<std::uint8_t>(it.domain));
        w.vec(it.shape);
        w.vec(it.values);
      }
    }
    for (auto* p : {&pool_b_, &pool_s_}) {
      w.pod<std::uint64_t>(p->items().size());
      for (const auto& it : p->items()) w.vec(it);
    }
    return w.bytes();
  }

  /// Reads a checkpoint header and config snapshot without touching state.
  static TrainConfig read_config(const std::string& bytes) {
    detail::BinReader r(bytes);
    check_header(r);
    return train_config_from_json(nlohmann::json::parse(r.str()));
  }

  static Trainer from_bytes(const std::string& bytes) {
    Trainer t(read_config(bytes));
    t.deserialize(bytes);
    return t;
  }

  static Trainer load(const std::filesystem::path& path) { return from_bytes(detail::read_file(path)); }

  void deserialize(const std::string& bytes) {
    detail::BinReader r(bytes);
    check_header(r);
    r.str();  // config, already applied at construction
    epoch_ = static_cast<int>(r.pod<std::int64_t>());
    step_ = r.pod<std::uint64_t>();
    std::istringstream rs(r.str());
    rs >> rng_;
    if (!rs) throw IoError("checkpoint: corrupt RNG state");
    for (auto& [name, m] : models_.named()) {
      auto params = m->parameters();
      if (r.pod<std::uint64_t>() != params.size()) throw ConfigError("checkpoint: " + name + " parameter count differs");
      for (auto& p : params) {
        const std::string pn = r.str();
        const auto shape = r.vec<std::size_t>();
        auto vals = r.vec<T>();
        if (pn != p.name || shape != p.var.shape())
          throw ConfigError("checkpoint: " + name + " parameter '" + pn + "' does not match '" + p.name + "'");
        p.var.values() = std::move(vals);
      }
      auto bufs = m->buffers();
      if (r.pod<std::uint64_t>() != bufs.size()) throw ConfigError("checkpoint: " + name + " buffer count differs");
      for (auto& b : bufs) {
        const std::string bn = r.str();
        auto vals = r.vec<T>();
        if (bn != b.name || vals.size() != b.values->size())
          throw ConfigError("checkpoint: " + name + " buffer '" + bn + "' does not match");
        *b.values = std::move(vals);
      }
    }
    for (auto* o : {&opt_g_, &opt_db_, &opt_ds_}) {
      o->set_steps(r.pod<std::uint64_t>());
      if (r.pod<std::uint64_t>() != o->first_moments().size()) throw ConfigError("checkpoint: optimizer layout differs");
      for (std::size_t i = 0; i < o->first_moments().size(); ++i) {
        o->first_moments()[i] = r.vec<T>();
        o->second_moments()[i] = r.vec<T>();
      }
    }
    for (auto* nb : {&sharp_guide_, &blurred_guide_}) {
      nb->items().clear();
      const auto n = r.pod<std::uint64_t>();
      for (std::uint64_t i = 0; i < n; ++i) {
        TaggedImage<T> it;
        it.domain = static_cast<Domain>(r.pod<std::uint8_t>());
        it.shape = r.vec<std::size_t>();
        it.values = r.vec<T>();
        nb->push(std::move(it));
      }
    }
    for (auto* p : {&pool_b_, &pool_s_}) {
      p->items().clear();
      const auto n = r.pod<std::uint64_t>();
      for (std::uint64_t i = 0; i < n; ++i) p->items().push_back(r.vec<T>());
    }
    if (!r.done()) throw IoError("checkpoint: trailing bytes");
  }

  /// Writes `name` and latest.ckpt atomically under `dir`.
  void save_checkpoint(const std::filesystem::path& dir, const std::string& name) {
    const std::string bytes = serialize();
    detail::atomic_write(dir / name, bytes);
    detail::atomic_write(dir / "latest.ckpt", bytes);
  }

  const TrainConfig& config() const { return cfg_; }
  TrainConfig& mutable_config() { return cfg_; }
  TrainModels<T>& models() { return models_; }
  int epoch() const { return epoch_; }
  std::uint64_t steps() const { return step_; }
  const NegativeBuffer<T>& sharp_guide_buffer() const { return sharp_guide_; }
  const NegativeBuffer<T>& blurred_guide_buffer() const { return blurred_guide_; }
  const ImagePool<T>& pool_b() const { return pool_b_; }
  const ImagePool<T>& pool_s() const { return pool_s_; }

 private:
  std::vector<Var<T>> generator_params() {
    auto a = param_vars(models_.g_b2s), b = param_vars(models_.g_s2b);
    a.insert(a.end(), b.begin(), b.end());
    return a;
  }

  static std::vector<Var<T>> param_vars(Model<T>& m) {
    std::vector<Var<T>> out;
    for (auto& p : m.parameters()) out.push_back(p.var);
    return out;
  }

  static void check_header(detail::BinReader& r) {
    char magic[8];
    r.raw(magic, 8);
    if (std::memcmp(magic, kCheckpointMagic, 8) != 0) throw IoError("not a checkpoint file");
    const auto version = r.pod<std::uint32_t>();
    if (version != kCheckpointVersion)
      throw VersionError("checkpoint format version " + std::to_string(version) + " is not supported (expected " +
                         std::to_string(kCheckpointVersion) + ")");
    if (r.pod<std::uint32_t>() != sizeof(T)) throw VersionError("checkpoint scalar width differs");
  }

  /// N buffer samples when available, else the current opposite-domain batch.
  std::vector<Var<T>> negatives_for(const NegativeBuffer<T>& buf, const Var<T>& current) {
    const auto n = static_cast<std::size_t>(cfg_.negatives);
    if (buf.size() < n) return constant_reps(current, cfg_.spectral);
    NoGradGuard ng;
    std::vector<Var<T>> out;
    for (const auto* it : buf.sample(n, rng_)) out.push_back(spectral_rep(it->var(), cfg_.spectral));
    return out;
  }

  static void push_items(NegativeBuffer<T>& buf, const Var<T>& batch, Domain d) {
    const std::size_t n = batch.dim(0), per = batch.numel() / n;
    for (std::size_t i = 0; i < n; ++i)
      buf.push({d, {1, batch.dim(1), batch.dim(2), batch.dim(3)},
                std::vector<T>(batch.values().begin() + i * per, batch.values().begin() + (i + 1) * per)});
  }

  static Var<T> to_var(const Batch& b) {
    return Var<T>::from(b.shape, std::vector<T>(b.values.begin(), b.values.end()));
  }

  /// Throws with statistics of the inputs and of both circuits' outputs.
  [[noreturn]] void abort_nonfinite(const std::string& reason, const Var<T>& b, const Var<T>& s) {
    std::ostringstream os;
    os << "non-finite loss at step " << step_ + 1 << " (epoch " << epoch_ << "): " << reason;
    os << "\n  " << detail::tensor_stats("B", b) << "\n  " << detail::tensor_stats("S", s);
    NoGradGuard ng;
    const Var<T> s_b = models_.g_b2s.forward(b), b_s = models_.g_s2b.forward(s);
    os << "\n  " << detail::tensor_stats("S_B", s_b) << "\n  " << detail::tensor_stats("B*", models_.g_s2b.forward(s_b))
       << "\n  " << detail::tensor_stats("B_S", b_s) << "\n  " << detail::tensor_stats("S*", models_.g_b2s.forward(b_s));
    throw NumericError(os.str());
  }

  TrainConfig cfg_;
  TrainModels<T> models_;
  Adam<T> opt_g_, opt_db_, opt_ds_;
  NegativeBuffer<T> sharp_guide_;    // holds blurred images
  NegativeBuffer<T> blurred_guide_;  // holds sharp images
  ImagePool<T> pool_b_, pool_s_;
  std::mt19937_64 rng_;
  int epoch_ = 0;
  std::uint64_t step_ = 0;
};

enum class Direction { blur_to_sharp, sharp_to_blur };

inline Direction parse_direction(const std::string& s) {
  if (s == "blur2sharp" || s == "blur_to_sharp" || s == "b2s") return Direction::blur_to_sharp;
  if (s == "sharp2blur" || s == "sharp_to_blur" || s == "s2b") return Direction::sharp_to_blur;
  throw ConfigError("unknown direction '" + s + "' (expected blur2sharp or sharp2blur)");
}

/// Applies one generator of a checkpoint in evaluation mode.
template <typename T>
std::vector<Image> infer(const std::filesystem::path& checkpoint, const std::vector<Image>& images, Direction dir) {
  std::error_code ec;
  if (!std::filesystem::is_regular_file(checkpoint, ec)) throw IoError("checkpoint not found: " + checkpoint.string());
  auto trainer = Trainer<T>::load(checkpoint);
  auto& g = dir == Direction::blur_to_sharp ? trainer.models().g_b2s : trainer.models().g_s2b;
  std::vector<Image> out;
  for (const auto& im : images) out.push_back(run_generator(g, im, false));
  return out;
}

}  // namespace fclgan
