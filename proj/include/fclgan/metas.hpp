#pragma once

// Basic and residual metas: the indivisible blocks every generator and
// discriminator is assembled from, plus the small layer framework they sit on.

#include <memory>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "fclgan/conv.hpp"
#include "fclgan/norm.hpp"
#include "fclgan/tensor.hpp"

namespace fclgan {

enum class NormKind { batch, instance, none };
enum class Activation { relu, leaky_relu, none };

/// d: Conv-Norm-ReLU-Conv-Norm, skip-add, trailing ReLU.
/// e: same without the trailing ReLU.
/// f: Conv-ReLU-Conv, skip-add, no norm.
enum class ResidualMetaForm { d, e, f };

inline constexpr double kLeakySlope = 0.2;
inline constexpr double kInitStddev = 0.02;

struct BasicMetaSpec {
  int in_channels = 3;
  int out_channels = 3;
  int kernel = 3;
  int stride = 1;
  bool transposed = false;  // learned 2x upsampling when true
  NormKind norm = NormKind::batch;
  Activation activation = Activation::relu;

  void validate() const {
    if (in_channels <= 0 || out_channels <= 0)
      throw ConfigError("basic meta: channel counts must be positive");
    if (kernel <= 0 || kernel % 2 == 0)
      throw ConfigError("basic meta: kernel must be odd and positive, got " + std::to_string(kernel));
    if (stride != 1 && stride != 2)
      throw ConfigError("basic meta: stride must be 1 or 2, got " + std::to_string(stride));
    if (transposed && stride != 2) throw ConfigError("basic meta: transposed metas upsample by 2");
  }
};

struct ResidualMetaSpec {
  int channels = 64;
  int kernel = 3;
  ResidualMetaForm form = ResidualMetaForm::e;
  NormKind norm = NormKind::batch;  // ignored for form f

  void validate() const {
    if (channels <= 0) throw ConfigError("residual meta: channels must be positive");
    if (kernel <= 0 || kernel % 2 == 0)
      throw ConfigError("residual meta: kernel must be odd and positive, got " +
                        std::to_string(kernel));
  }
};

/// One row of an architecture summary.
struct SummaryRow {
  std::string name;
  Shape output_shape;
  std::size_t params = 0;
  std::size_t macs = 0;
};

template <typename T>
struct NamedParam {
  std::string name;
  Var<T> var;
};

/// Non-trainable state such as batch-norm running statistics.
template <typename T>
struct NamedBuffer {
  std::string name;
  std::vector<T>* values;
};

template <typename T>
class Layer {
 public:
  virtual ~Layer() = default;
  virtual Var<T> forward(const Var<T>& x) = 0;
  virtual void collect(const std::string& prefix, std::vector<NamedParam<T>>& params,
                       std::vector<NamedBuffer<T>>& buffers) = 0;
  /// Appends rows for parameterized sub-layers and returns the output shape.
  virtual Shape summarize(const std::string& prefix, const Shape& in,
                          std::vector<SummaryRow>& rows) const = 0;
  virtual void set_training(bool) {}
};

template <typename T>
using LayerPtr = std::unique_ptr<Layer<T>>;

namespace detail {

template <typename T>
Var<T> normal_param(Shape shape, std::mt19937_64& rng, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<T> v(numel_of(shape));
  for (auto& e : v) e = static_cast<T>(dist(rng));
  return Var<T>::from(std::move(shape), std::move(v), true);
}

template <typename T>
Var<T> filled_param(std::size_t n, T value) {
  return Var<T>::from({n}, std::vector<T>(n, value), true);
}

inline std::string join(const std::string& prefix, const std::string& name) {
  return prefix.empty() ? name : prefix + "." + name;
}

inline void require_spatial(const Shape& in, const char* who) {
  if (in.size() != 4) throw ShapeError(std::string(who) + ": expected NCHW shape, got " + shape_str(in));
}

}  // namespace detail

template <typename T>
class Conv2dLayer : public Layer<T> {
 public:
  Conv2dLayer(int in, int out, int kernel, int stride, bool bias, std::mt19937_64& rng)
      : stride_(stride),
        pad_(kernel / 2),
        mode_(stride == 1 ? PadMode::reflect : PadMode::zero),
        weight_(detail::normal_param<T>(
            {static_cast<std::size_t>(out), static_cast<std::size_t>(in),
             static_cast<std::size_t>(kernel), static_cast<std::size_t>(kernel)},
            rng, kInitStddev)) {
    if (bias) bias_ = detail::filled_param<T>(static_cast<std::size_t>(out), T(0));
  }

  Var<T> forward(const Var<T>& x) override {
    return conv2d(x, weight_, bias_, stride_, pad_, mode_);
  }

  void collect(const std::string& prefix, std::vector<NamedParam<T>>& params,
               std::vector<NamedBuffer<T>>&) override {
    params.push_back({detail::join(prefix, "weight"), weight_});
    if (bias_.defined()) params.push_back({detail::join(prefix, "bias"), bias_});
  }

  Shape summarize(const std::string& prefix, const Shape& in,
                  std::vector<SummaryRow>& rows) const override {
    detail::require_spatial(in, "conv");
    const std::size_t cout = weight_.dim(0), cin = weight_.dim(1), k = weight_.dim(2);
    if (in[1] != cin) throw ShapeError("conv: expected " + std::to_string(cin) + " input channels");
    const auto oh = detail::conv_out_size(static_cast<int>(in[2]), static_cast<int>(k), stride_, pad_);
    const auto ow = detail::conv_out_size(static_cast<int>(in[3]), static_cast<int>(k), stride_, pad_);
    if (oh <= 0 || ow <= 0) throw ShapeError("conv: input " + shape_str(in) + " too small");
    Shape out{in[0], cout, static_cast<std::size_t>(oh), static_cast<std::size_t>(ow)};
    const std::size_t params = weight_.numel() + (bias_.defined() ? bias_.numel() : 0);
    rows.push_back({prefix, out, params, k * k * cin * cout * out[2] * out[3]});
    return out;
  }

  Var<T>& weight() { return weight_; }
  Var<T>& bias() { return bias_; }

 private:
  int stride_, pad_;
  PadMode mode_;
  Var<T> weight_, bias_;
};

/// Learned 2x upsampling: kernel k, stride 2, padding k/2, output padding 1.
template <typename T>
class ConvTranspose2dLayer : public Layer<T> {
 public:
  ConvTranspose2dLayer(int in, int out, int kernel, bool bias, std::mt19937_64& rng)
      : pad_(kernel / 2),
        weight_(detail::normal_param<T>(
            {static_cast<std::size_t>(in), static_cast<std::size_t>(out),
             static_cast<std::size_t>(kernel), static_cast<std::size_t>(kernel)},
            rng, kInitStddev)) {
    if (bias) bias_ = detail::filled_param<T>(static_cast<std::size_t>(out), T(0));
  }

  Var<T> forward(const Var<T>& x) override {
    return conv_transpose2d(x, weight_, bias_, 2, pad_, 1);
  }

  void collect(const std::string& prefix, std::vector<NamedParam<T>>& params,
               std::vector<NamedBuffer<T>>&) override {
    params.push_back({detail::join(prefix, "weight"), weight_});
    if (bias_.defined()) params.push_back({detail::join(prefix, "bias"), bias_});
  }

  /// MACs count the multiplies actually performed: k^2 * Cin * Cout per input pixel.
  Shape summarize(const std::string& prefix, const Shape& in,
                  std::vector<SummaryRow>& rows) const override {
    detail::require_spatial(in, "conv_transpose");
    const std::size_t cin = weight_.dim(0), cout = weight_.dim(1), k = weight_.dim(2);
    if (in[1] != cin)
      throw ShapeError("conv_transpose: expected " + std::to_string(cin) + " input channels");
    Shape out{in[0], cout, in[2] * 2, in[3] * 2};
    const std::size_t params = weight_.numel() + (bias_.defined() ? bias_.numel() : 0);
    rows.push_back({prefix, out, params, k * k * cin * cout * in[2] * in[3]});
    return out;
  }

  Var<T>& weight() { return weight_; }
  Var<T>& bias() { return bias_; }

 private:
  int pad_;
  Var<T> weight_, bias_;
};

template <typename T>
class NormLayer : public Layer<T> {
 public:
  NormLayer(NormKind kind, int channels)
      : kind_(kind),
        gamma_(detail::filled_param<T>(static_cast<std::size_t>(channels), T(1))),
        beta_(detail::filled_param<T>(static_cast<std::size_t>(channels), T(0))),
        running_mean_(static_cast<std::size_t>(channels), T(0)),
        running_var_(static_cast<std::size_t>(channels), T(1)) {}

  Var<T> forward(const Var<T>& x) override {
    if (kind_ == NormKind::batch)
      return batch_norm(x, gamma_, beta_, running_mean_, running_var_, training_);
    return instance_norm(x, gamma_, beta_);
  }

  void collect(const std::string& prefix, std::vector<NamedParam<T>>& params,
               std::vector<NamedBuffer<T>>& buffers) override {
    params.push_back({detail::join(prefix, "gamma"), gamma_});
    params.push_back({detail::join(prefix, "beta"), beta_});
    if (kind_ == NormKind::batch) {
      buffers.push_back({detail::join(prefix, "running_mean"), &running_mean_});
      buffers.push_back({detail::join(prefix, "running_var"), &running_var_});
    }
  }

  Shape summarize(const std::string& prefix, const Shape& in,
                  std::vector<SummaryRow>& rows) const override {
    rows.push_back({prefix, in, gamma_.numel() + beta_.numel(), 0});
    return in;
  }

  void set_training(bool t) override { training_ = t; }

 private:
  NormKind kind_;
  bool training_ = true;
  Var<T> gamma_, beta_;
  std::vector<T> running_mean_, running_var_;
};

template <typename T>
Var<T> apply_activation(Activation a, const Var<T>& x) {
  switch (a) {
    case Activation::relu: return relu(x);
    case Activation::leaky_relu: return leaky_relu(x, static_cast<T>(kLeakySlope));
    case Activation::none: return x;
  }
  return x;
}

/// Conv -> (Norm unless none) -> (activation unless none).
template <typename T>
class BasicMeta : public Layer<T> {
 public:
  BasicMeta(const BasicMetaSpec& spec, std::mt19937_64& rng) : spec_(spec) {
    spec.validate();
    if (spec.transposed)
      conv_ = std::make_unique<ConvTranspose2dLayer<T>>(spec.in_channels, spec.out_channels,
                                                        spec.kernel, true, rng);
    else
      conv_ = std::make_unique<Conv2dLayer<T>>(spec.in_channels, spec.out_channels, spec.kernel,
                                               spec.stride, true, rng);
    if (spec.norm != NormKind::none) norm_ = std::make_unique<NormLayer<T>>(spec.norm, spec.out_channels);
  }

  Var<T> forward(const Var<T>& x) override {
    Var<T> y = conv_->forward(x);
    if (norm_) y = norm_->forward(y);
    return apply_activation(spec_.activation, y);
  }

  void collect(const std::string& prefix, std::vector<NamedParam<T>>& params,
               std::vector<NamedBuffer<T>>& buffers) override {
    conv_->collect(detail::join(prefix, "conv"), params, buffers);
    if (norm_) norm_->collect(detail::join(prefix, "norm"), params, buffers);
  }

  Shape summarize(const std::string& prefix, const Shape& in,
                  std::vector<SummaryRow>& rows) const override {
    Shape s = conv_->summarize(detail::join(prefix, "conv"), in, rows);
    if (norm_) s = norm_->summarize(detail::join(prefix, "norm"), s, rows);
    return s;
  }

  void set_training(bool t) override {
    if (norm_) norm_->set_training(t);
  }

  const BasicMetaSpec& spec() const { return spec_; }

 private:
  BasicMetaSpec spec_;
  LayerPtr<T> conv_;
  LayerPtr<T> norm_;
};

/// y = x + F(x) (forms e, f) or ReLU(x + F(x)) (form d); shape-preserving.
template <typename T>
class ResidualMeta : public Layer<T> {
 public:
  ResidualMeta(const ResidualMetaSpec& spec, std::mt19937_64& rng) : spec_(spec) {
    spec.validate();
    const NormKind norm = spec.form == ResidualMetaForm::f ? NormKind::none : spec.norm;
    BasicMetaSpec first{spec.channels, spec.channels, spec.kernel, 1, false, norm, Activation::relu};
    BasicMetaSpec second{spec.channels, spec.channels, spec.kernel, 1, false, norm, Activation::none};
    first_ = std::make_unique<BasicMeta<T>>(first, rng);
    second_ = std::make_unique<BasicMeta<T>>(second, rng);
  }

  Var<T> forward(const Var<T>& x) override {
    Var<T> y = add(x, second_->forward(first_->forward(x)));
    return spec_.form == ResidualMetaForm::d ? relu(y) : y;
  }

  void collect(const std::string& prefix, std::vector<NamedParam<T>>& params,
               std::vector<NamedBuffer<T>>& buffers) override {
    first_->collect(detail::join(prefix, "a"), params, buffers);
    second_->collect(detail::join(prefix, "b"), params, buffers);
  }

  Shape summarize(const std::string& prefix, const Shape& in,
                  std::vector<SummaryRow>& rows) const override {
    Shape s = first_->summarize(detail::join(prefix, "a"), in, rows);
    s = second_->summarize(detail::join(prefix, "b"), s, rows);
    return s;
  }

  void set_training(bool t) override {
    first_->set_training(t);
    second_->set_training(t);
  }

  const ResidualMetaSpec& spec() const { return spec_; }

 private:
  ResidualMetaSpec spec_;
  LayerPtr<T> first_, second_;
};

template <typename T>
class Sequential : public Layer<T> {
 public:
  void push(std::string name, LayerPtr<T> layer) {
    names_.push_back(std::move(name));
    layers_.push_back(std::move(layer));
  }

  Var<T> forward(const Var<T>& x) override {
    Var<T> y = x;
    for (auto& l : layers_) y = l->forward(y);
    return y;
  }

  void collect(const std::string& prefix, std::vector<NamedParam<T>>& params,
               std::vector<NamedBuffer<T>>& buffers) override {
    for (std::size_t i = 0; i < layers_.size(); ++i)
      layers_[i]->collect(detail::join(prefix, names_[i]), params, buffers);
  }

  Shape summarize(const std::string& prefix, const Shape& in,
                  std::vector<SummaryRow>& rows) const override {
    Shape s = in;
    for (std::size_t i = 0; i < layers_.size(); ++i)
      s = layers_[i]->summarize(detail::join(prefix, names_[i]), s, rows);
    return s;
  }

  void set_training(bool t) override {
    for (auto& l : layers_) l->set_training(t);
  }

  std::size_t size() const { return layers_.size(); }
  Layer<T>& at(std::size_t i) { return *layers_.at(i); }

 private:
  std::vector<std::string> names_;
  std::vector<LayerPtr<T>> layers_;
};

/// Elementwise tanh stage; no parameters.
template <typename T>
class TanhLayer : public Layer<T> {
 public:
  Var<T> forward(const Var<T>& x) override { return fclgan::tanh(x); }
  void collect(const std::string&, std::vector<NamedParam<T>>&, std::vector<NamedBuffer<T>>&) override {}
  Shape summarize(const std::string&, const Shape& in, std::vector<SummaryRow>&) const override {
    return in;
  }
};

template <typename T>
LayerPtr<T> build_basic_meta(const BasicMetaSpec& spec, std::mt19937_64& rng) {
  return std::make_unique<BasicMeta<T>>(spec, rng);
}

template <typename T>
LayerPtr<T> build_residual_meta(const ResidualMetaSpec& spec, std::mt19937_64& rng) {
  return std::make_unique<ResidualMeta<T>>(spec, rng);
}

/// Analytic parameter count of a basic meta.
inline std::size_t basic_meta_params(const BasicMetaSpec& s) {
  const std::size_t k = static_cast<std::size_t>(s.kernel);
  const std::size_t out = static_cast<std::size_t>(s.out_channels);
  return k * k * static_cast<std::size_t>(s.in_channels) * out + out +
         (s.norm == NormKind::none ? 0 : 2 * out);
}

}  // namespace fclgan
