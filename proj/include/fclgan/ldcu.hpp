#pragma once

// Generators, discriminators and the parameter/MAC analyzer.

#include <array>
#include <cstdio>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fclgan/metas.hpp"

namespace fclgan {

enum class StructureKind { encoder_decoder, single_scale, led };

inline std::string to_string(StructureKind s) {
  switch (s) {
    case StructureKind::encoder_decoder: return "encoder_decoder";
    case StructureKind::single_scale: return "single_scale";
    case StructureKind::led: return "led";
  }
  return "?";
}

inline StructureKind parse_structure(const std::string& s) {
  if (s == "encoder_decoder" || s == "ed") return StructureKind::encoder_decoder;
  if (s == "single_scale" || s == "ss") return StructureKind::single_scale;
  if (s == "led") return StructureKind::led;
  throw ConfigError("unknown structure '" + s + "' (expected encoder_decoder, single_scale or led)");
}

inline std::string to_string(NormKind n) {
  switch (n) {
    case NormKind::batch: return "batch";
    case NormKind::instance: return "instance";
    case NormKind::none: return "none";
  }
  return "?";
}

inline NormKind parse_norm(const std::string& s) {
  if (s == "batch" || s == "bn") return NormKind::batch;
  if (s == "instance" || s == "in") return NormKind::instance;
  if (s == "none") return NormKind::none;
  throw ConfigError("unknown norm '" + s + "' (expected batch, instance or none)");
}

inline std::string to_string(ResidualMetaForm f) {
  switch (f) {
    case ResidualMetaForm::d: return "d";
    case ResidualMetaForm::e: return "e";
    case ResidualMetaForm::f: return "f";
  }
  return "?";
}

inline ResidualMetaForm parse_form(const std::string& s) {
  if (s == "d") return ResidualMetaForm::d;
  if (s == "e") return ResidualMetaForm::e;
  if (s == "f") return ResidualMetaForm::f;
  throw ConfigError("unknown residual form '" + s + "' (expected d, e or f)");
}

using Allocation = std::array<int, 3>;

struct GeneratorSpec {
  StructureKind structure = StructureKind::led;
  int base_width = 32;
  Allocation allocation{0, 6, 3};  // residual metas at full, 1/2 and 1/4 resolution
  NormKind norm = NormKind::batch;           // basic metas
  NormKind residual_norm = NormKind::batch;  // residual metas (forms d, e)
  ResidualMetaForm residual_form = ResidualMetaForm::e;
  int kernel = 3;
  int image_channels = 3;

  int meta_count() const { return allocation[0] + allocation[1] + allocation[2]; }

  /// Allocation after the structure's constraints are applied.
  Allocation effective_allocation() const {
    switch (structure) {
      case StructureKind::encoder_decoder: return {0, 0, meta_count()};
      case StructureKind::single_scale: return {meta_count(), 0, 0};
      case StructureKind::led: return allocation;
    }
    return allocation;
  }

  /// Residual-meta width at scale s.
  int width_at(int s) const {
    return structure == StructureKind::single_scale ? 4 * base_width : base_width << s;
  }

  void validate() const {
    if (base_width <= 0) throw ConfigError("generator: base width must be positive");
    for (int n : allocation)
      if (n < 0) throw ConfigError("generator: allocation entries must be non-negative");
    if (kernel <= 0 || kernel % 2 == 0) throw ConfigError("generator: kernel must be odd");
    if (image_channels <= 0) throw ConfigError("generator: image channels must be positive");
  }
};

struct DiscriminatorSpec {
  int base_width = 64;
  NormKind norm = NormKind::batch;
  int image_channels = 3;
};

struct SummaryReport {
  std::vector<SummaryRow> rows;
  Shape input_shape, output_shape;

  std::size_t total_params() const {
    return std::accumulate(rows.begin(), rows.end(), std::size_t{0},
                           [](std::size_t a, const SummaryRow& r) { return a + r.params; });
  }
  std::size_t total_macs() const {
    return std::accumulate(rows.begin(), rows.end(), std::size_t{0},
                           [](std::size_t a, const SummaryRow& r) { return a + r.macs; });
  }
  /// Serialized size at 4 bytes per parameter, in MiB.
  double size_mb() const { return static_cast<double>(total_params()) * 4.0 / (1024.0 * 1024.0); }

  /// Params and MACs of rows whose name starts with `prefix` (e.g. "metas").
  std::pair<std::size_t, std::size_t> subtotal(const std::string& prefix) const {
    std::size_t p = 0, m = 0;
    for (const auto& r : rows)
      if (r.name.rfind(prefix, 0) == 0) {
        p += r.params;
        m += r.macs;
      }
    return {p, m};
  }

  std::string table() const {
    std::size_t name_w = 5;
    for (const auto& r : rows) name_w = std::max(name_w, r.name.size());
    std::ostringstream os;
    os << std::left << std::setw(static_cast<int>(name_w) + 2) << "layer" << std::setw(20)
       << "output" << std::right << std::setw(14) << "params" << std::setw(18) << "MACs" << '\n';
    for (const auto& r : rows)
      os << std::left << std::setw(static_cast<int>(name_w) + 2) << r.name << std::setw(20)
         << shape_str(r.output_shape) << std::right << std::setw(14) << r.params << std::setw(18)
         << r.macs << '\n';
    os << std::left << std::setw(static_cast<int>(name_w) + 22) << "total" << std::right
       << std::setw(14) << total_params() << std::setw(18) << total_macs() << '\n';
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.3f", size_mb());
    os << "estimated size: " << buf << " MB (4 bytes/parameter)\n";
    return os.str();
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["input_shape"] = input_shape;
    j["output_shape"] = output_shape;
    j["rows"] = nlohmann::json::array();
    for (const auto& r : rows)
      j["rows"].push_back(
          {{"name", r.name}, {"output_shape", r.output_shape}, {"params", r.params}, {"macs", r.macs}});
    j["total_params"] = total_params();
    j["total_macs"] = total_macs();
    j["size_mb"] = size_mb();
    const auto [mp, mm] = subtotal("metas");
    j["meta_stack"] = {{"params", mp}, {"macs", mm}};
    return j;
  }
};

/// A built network: a layer tree plus input-shape constraints.
template <typename T>
class Model {
 public:
  Model(std::string kind, LayerPtr<T> root, std::size_t multiple, std::size_t min_size)
      : kind_(std::move(kind)), root_(std::move(root)), multiple_(multiple), min_size_(min_size) {}

  void check_input(const Shape& in) const {
    if (in.size() != 4) throw ShapeError(kind_ + ": expected NCHW input, got " + shape_str(in));
    if (in[2] < min_size_ || in[3] < min_size_)
      throw ShapeError(kind_ + ": input " + shape_str(in) + " smaller than " +
                       std::to_string(min_size_) + "x" + std::to_string(min_size_));
    if (in[2] % multiple_ != 0 || in[3] % multiple_ != 0)
      throw ShapeError(kind_ + ": input " + shape_str(in) + " spatial size not divisible by " +
                       std::to_string(multiple_));
  }

  Var<T> forward(const Var<T>& x) {
    check_input(x.shape());
    return root_->forward(x);
  }

  std::vector<NamedParam<T>> parameters() {
    std::vector<NamedParam<T>> p;
    std::vector<NamedBuffer<T>> b;
    root_->collect("", p, b);
    return p;
  }

  std::vector<NamedBuffer<T>> buffers() {
    std::vector<NamedParam<T>> p;
    std::vector<NamedBuffer<T>> b;
    root_->collect("", p, b);
    return b;
  }

  std::size_t parameter_count() {
    std::size_t n = 0;
    for (auto& p : parameters()) n += p.var.numel();
    return n;
  }

  void set_training(bool t) { root_->set_training(t); }

  void set_requires_grad(bool r) {
    for (auto& p : parameters()) p.var.set_requires_grad(r);
  }

  void zero_grad() {
    for (auto& p : parameters()) p.var.zero_grad();
  }

  SummaryReport summary(const Shape& input_shape) const {
    check_input(input_shape);
    SummaryReport rep;
    rep.input_shape = input_shape;
    rep.output_shape = root_->summarize("", input_shape, rep.rows);
    return rep;
  }

  const std::string& kind() const { return kind_; }
  std::size_t input_multiple() const { return multiple_; }
  Layer<T>& root() { return *root_; }

 private:
  std::string kind_;
  LayerPtr<T> root_;
  std::size_t multiple_, min_size_;
};

template <typename T>
SummaryReport model_summary(const Model<T>& model, const Shape& input_shape) {
  return model.summary(input_shape);
}

/// stem -> [scale-0 metas] -> down -> [scale-1 metas] -> down -> [scale-2 metas]
/// -> up -> up -> head -> tanh. Single-scale drops the down/up path and runs
/// every meta at 4C and full resolution.
template <typename T>
Model<T> build_generator(const GeneratorSpec& spec, std::mt19937_64& rng) {
  spec.validate();
  const Allocation alloc = spec.effective_allocation();
  const int c = spec.base_width, k = spec.kernel, img = spec.image_channels;
  auto net = std::make_unique<Sequential<T>>();
  auto add_metas = [&](int scale, int count, int width) {
    for (int i = 0; i < count; ++i)
      net->push("metas" + std::to_string(scale) + "." + std::to_string(i),
                build_residual_meta<T>({width, k, spec.residual_form, spec.residual_norm}, rng));
  };
  auto basic = [&](int in, int out, int kernel, int stride, bool up, NormKind norm, Activation act) {
    return build_basic_meta<T>({in, out, kernel, stride, up, norm, act}, rng);
  };

  if (spec.structure == StructureKind::single_scale) {
    const int w = spec.width_at(0);
    net->push("stem", basic(img, w, 7, 1, false, spec.norm, Activation::relu));
    add_metas(0, alloc[0], w);
    net->push("head", basic(w, img, 7, 1, false, NormKind::none, Activation::none));
    net->push("tanh", std::make_unique<TanhLayer<T>>());
    return Model<T>("generator", std::move(net), 1, 4);
  }

  net->push("stem", basic(img, c, 7, 1, false, spec.norm, Activation::relu));
  add_metas(0, alloc[0], c);
  net->push("down1", basic(c, 2 * c, k, 2, false, spec.norm, Activation::relu));
  add_metas(1, alloc[1], 2 * c);
  net->push("down2", basic(2 * c, 4 * c, k, 2, false, spec.norm, Activation::relu));
  add_metas(2, alloc[2], 4 * c);
  net->push("up2", basic(4 * c, 2 * c, k, 2, true, spec.norm, Activation::relu));
  net->push("up1", basic(2 * c, c, k, 2, true, spec.norm, Activation::relu));
  net->push("head", basic(c, img, 7, 1, false, NormKind::none, Activation::none));
  net->push("tanh", std::make_unique<TanhLayer<T>>());
  return Model<T>("generator", std::move(net), 4, 8);
}

/// Four stride-2 metas (w, 2w, 4w, 8w; leaky ReLU; no norm on the first)
/// followed by a 1-channel 1x1 head: a patch map at 1/16 resolution.
template <typename T>
Model<T> build_discriminator(const DiscriminatorSpec& spec, std::mt19937_64& rng) {
  if (spec.base_width <= 0) throw ConfigError("discriminator: base width must be positive");
  const int w = spec.base_width;
  auto net = std::make_unique<Sequential<T>>();
  const std::array<int, 5> widths{spec.image_channels, w, 2 * w, 4 * w, 8 * w};
  for (int i = 0; i < 4; ++i)
    net->push("layer" + std::to_string(i + 1),
              build_basic_meta<T>({widths[static_cast<std::size_t>(i)],
                                   widths[static_cast<std::size_t>(i + 1)], 3, 2, false,
                                   i == 0 ? NormKind::none : spec.norm, Activation::leaky_relu},
                                  rng));
  net->push("head", build_basic_meta<T>({8 * w, 1, 1, 1, false, NormKind::none, Activation::none}, rng));
  return Model<T>("discriminator", std::move(net), 1, 16);
}

}  // namespace fclgan
