#pragma once

#include <cmath>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rotaflip/ops.hpp"

namespace rotaflip {

enum class LayerKind {
  conv2d,
  batchnorm,
  relu,
  dense,
  max_pool,
  avg_pool,
  global_avg_pool,
  concat,
  dropout,
  rotaflip,
  upsample,
};

inline const char* kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::batchnorm: return "batchnorm";
    case LayerKind::relu: return "relu";
    case LayerKind::dense: return "dense";
    case LayerKind::max_pool: return "max_pool";
    case LayerKind::avg_pool: return "avg_pool";
    case LayerKind::global_avg_pool: return "global_avg_pool";
    case LayerKind::concat: return "concat";
    case LayerKind::dropout: return "dropout";
    case LayerKind::rotaflip: return "rotaflip";
    case LayerKind::upsample: return "upsample";
  }
  return "?";
}

template <class S>
struct Parameter {
  std::string name;
  Tensor<S> value;
  Tensor<S> grad;
  bool trainable = true;
};

/// A differentiable node. backward() consumes the state cached by the last
/// train-mode forward() and returns one gradient per input; parameter
/// gradients are accumulated into Parameter::grad. Inputs passed to forward()
/// must stay alive until backward() returns.
template <class S>
class Layer {
 public:
  using Inputs = std::span<const Tensor<S>* const>;

  virtual ~Layer() = default;
  virtual LayerKind kind() const = 0;
  virtual std::string describe() const { return kind_name(kind()); }

  Tensor<S> forward(Inputs inputs, Mode mode) {
    if (inputs.size() != arity() && arity() != 0)
      throw ShapeError(std::string(kind_name(kind())) + ": expected " + std::to_string(arity()) + " inputs, got " +
                       std::to_string(inputs.size()));
    Tensor<S> y = do_forward(inputs, mode);
    cached_ = mode == Mode::train;
    return y;
  }
  Tensor<S> forward(const Tensor<S>& x, Mode mode) {
    const Tensor<S>* in[] = {&x};
    return forward(Inputs(in), mode);
  }

  std::vector<Tensor<S>> backward(const Tensor<S>& grad_out) {
    if (!cached_) throw Error(std::string(kind_name(kind())) + ": backward without a preceding train-mode forward");
    cached_ = false;
    return do_backward(grad_out);
  }

  virtual std::vector<Parameter<S>*> parameters() { return {}; }
  virtual void initialize(RngStream&) {}

  /// Stochastic layers: reuse the last drawn mask on subsequent forwards.
  virtual void freeze_masks(bool) {}
  /// Stochastic layers: stream used for mask draws.
  virtual void set_stream(RngStream) {}
  /// Normalization layers: use running statistics even in train mode.
  virtual void freeze_statistics(bool) {}
  /// Hash of the piecewise-linear branch taken by the last forward pass
  /// (ReLU signs, max-pool winners); 0 for smooth layers.
  virtual std::uint64_t branch_signature() const { return 0; }

 protected:
  /// Number of inputs; 0 means variadic.
  virtual std::size_t arity() const { return 1; }
  virtual Tensor<S> do_forward(Inputs inputs, Mode mode) = 0;
  virtual std::vector<Tensor<S>> do_backward(const Tensor<S>& grad_out) = 0;

 private:
  bool cached_ = false;
};

template <class S>
class Conv2dLayer : public Layer<S> {
 public:
  Conv2dLayer(std::size_t in_channels, std::size_t out_channels, std::size_t kernel, std::size_t stride = 1,
              Padding padding = Padding::same)
      : stride_(stride), padding_(padding) {
    if (stride == 0) throw ConfigError("conv2d: stride must be positive");
    weights_ = {"weights", Tensor<S>(Shape{out_channels, in_channels, kernel, kernel}),
                Tensor<S>(Shape{out_channels, in_channels, kernel, kernel}), true};
    bias_ = {"bias", Tensor<S>(Shape{1, out_channels, 1, 1}), Tensor<S>(Shape{1, out_channels, 1, 1}), true};
  }

  LayerKind kind() const override { return LayerKind::conv2d; }
  std::string describe() const override {
    const Shape& w = weights_.value.shape();
    return "conv2d " + std::to_string(w.h) + "x" + std::to_string(w.w) + " " + std::to_string(w.c) + "->" +
           std::to_string(w.n) + " stride " + std::to_string(stride_) +
           (padding_ == Padding::same ? " same" : " valid");
  }
  std::vector<Parameter<S>*> parameters() override { return {&weights_, &bias_}; }

  /// He-uniform weights, zero bias.
  void initialize(RngStream& rng) override {
    const Shape& w = weights_.value.shape();
    const double limit = std::sqrt(6.0 / static_cast<double>(w.c * w.h * w.w));
    weights_.value = Tensor<S>::random(w, rng, static_cast<S>(-limit), static_cast<S>(limit));
    bias_.value = Tensor<S>(bias_.value.shape());
  }

  std::size_t out_channels() const { return weights_.value.shape().n; }

 protected:
  Tensor<S> do_forward(typename Layer<S>::Inputs in, Mode) override {
    input_ = in[0];
    return conv2d(*in[0], weights_.value, bias_.value, stride_, padding_);
  }
  std::vector<Tensor<S>> do_backward(const Tensor<S>& grad) override {
    Conv2dGrads<S> g = conv2d_backward(*input_, weights_.value, grad, stride_, padding_);
    weights_.grad.array() += g.weights.array();
    bias_.grad.array() += g.bias.array();
    std::vector<Tensor<S>> out;
    out.push_back(std::move(g.x));
    return out;
  }

  Parameter<S> weights_, bias_;
  std::size_t stride_;
  Padding padding_;
  const Tensor<S>* input_ = nullptr;
};

template <class S>
class BatchNormLayer : public Layer<S> {
 public:
  explicit BatchNormLayer(std::size_t channels, double momentum = 0.99, double epsilon = 1e-5)
      : momentum_(static_cast<S>(momentum)), epsilon_(static_cast<S>(epsilon)) {
    const Shape v{1, channels, 1, 1};
    gamma_ = {"gamma", Tensor<S>(v, S(1)), Tensor<S>(v), true};
    beta_ = {"beta", Tensor<S>(v), Tensor<S>(v), true};
    running_mean_ = {"running_mean", Tensor<S>(v), Tensor<S>(v), false};
    running_var_ = {"running_var", Tensor<S>(v, S(1)), Tensor<S>(v), false};
  }

  LayerKind kind() const override { return LayerKind::batchnorm; }
  std::string describe() const override { return "batchnorm " + std::to_string(gamma_.value.size()); }
  std::vector<Parameter<S>*> parameters() override { return {&gamma_, &beta_, &running_mean_, &running_var_}; }
  void initialize(RngStream&) override {
    const Shape v = gamma_.value.shape();
    gamma_.value = Tensor<S>(v, S(1));
    beta_.value = Tensor<S>(v);
    running_mean_.value = Tensor<S>(v);
    running_var_.value = Tensor<S>(v, S(1));
  }
  void freeze_statistics(bool frozen) override { frozen_ = frozen; }

 protected:
  Tensor<S> do_forward(typename Layer<S>::Inputs in, Mode mode) override {
    const Tensor<S>& x = *in[0];
    if (mode == Mode::infer || frozen_)
      return batchnorm_infer(x, gamma_.value, beta_.value, running_mean_.value, running_var_.value, epsilon_,
                             mode == Mode::train ? &cache_ : nullptr);
    std::vector<S> mean, var;
    Tensor<S> y = batchnorm_train(x, gamma_.value, beta_.value, epsilon_, &cache_, &mean, &var);
    for (std::size_t c = 0; c < mean.size(); ++c) {
      running_mean_.value[c] = momentum_ * running_mean_.value[c] + (S(1) - momentum_) * mean[c];
      running_var_.value[c] = momentum_ * running_var_.value[c] + (S(1) - momentum_) * var[c];
    }
    return y;
  }
  std::vector<Tensor<S>> do_backward(const Tensor<S>& grad) override {
    BatchNormGrads<S> g = batchnorm_backward(grad, cache_, gamma_.value);
    gamma_.grad.array() += g.gamma.array();
    beta_.grad.array() += g.beta.array();
    std::vector<Tensor<S>> out;
    out.push_back(std::move(g.x));
    return out;
  }

 private:
  Parameter<S> gamma_, beta_, running_mean_, running_var_;
  S momentum_, epsilon_;
  bool frozen_ = false;
  BatchNormCache<S> cache_;
};

template <class S>
class ReluLayer : public Layer<S> {
 public:
  LayerKind kind() const override { return LayerKind::relu; }

 protected:
  Tensor<S> do_forward(typename Layer<S>::Inputs in, Mode) override {
    input_ = in[0];
    return relu(*in[0]);
  }
  std::vector<Tensor<S>> do_backward(const Tensor<S>& grad) override {
    std::vector<Tensor<S>> out;
    out.push_back(relu_grad(*input_, grad));
    return out;
  }

 public:
  std::uint64_t branch_signature() const override {
    std::uint64_t h = 0x243f6a8885a308d3ULL;
    if (input_)
      for (std::size_t i = 0; i < input_->size(); ++i) h = mix64(h ^ ((*input_)[i] > S(0) ? i + 1 : 0));
    return h;
  }

 private:
  const Tensor<S>* input_ = nullptr;
};

template <class S>
class DenseLayer : public Layer<S> {
 public:
  DenseLayer(std::size_t in_features, std::size_t out_features) {
    weights_ = {"weights", Tensor<S>(Shape{out_features, in_features, 1, 1}),
                Tensor<S>(Shape{out_features, in_features, 1, 1}), true};
    bias_ = {"bias", Tensor<S>(Shape{1, out_features, 1, 1}), Tensor<S>(Shape{1, out_features, 1, 1}), true};
  }

  LayerKind kind() const override { return LayerKind::dense; }
  std::string describe() const override {
    return "dense " + std::to_string(weights_.value.shape().c) + "->" + std::to_string(weights_.value.shape().n);
  }
  std::vector<Parameter<S>*> parameters() override { return {&weights_, &bias_}; }
  void initialize(RngStream& rng) override {
    const double limit = std::sqrt(6.0 / static_cast<double>(weights_.value.shape().c));
    weights_.value = Tensor<S>::random(weights_.value.shape(), rng, static_cast<S>(-limit), static_cast<S>(limit));
    bias_.value = Tensor<S>(bias_.value.shape());
  }

 protected:
  Tensor<S> do_forward(typename Layer<S>::Inputs in, Mode) override {
    input_ = in[0];
    return dense(*in[0], weights_.value, bias_.value);
  }
  std::vector<Tensor<S>> do_backward(const Tensor<S>& grad) override {
    DenseGrads<S> g = dense_backward(*input_, weights_.value, grad);
    weights_.grad.array() += g.weights.array();
    bias_.grad.array() += g.bias.array();
    std::vector<Tensor<S>> out;
    out.push_back(std::move(g.x));
    return out;
  }

 private:
  Parameter<S> weights_, bias_;
  const Tensor<S>* input_ = nullptr;
};

template <class S>
class PoolLayer : public Layer<S> {
 public:
  PoolLayer(PoolKind kind, std::size_t window = 2, std::size_t stride = 2)
      : pool_kind_(kind), window_(window), stride_(stride) {}

  LayerKind kind() const override { return pool_kind_ == PoolKind::max ? LayerKind::max_pool : LayerKind::avg_pool; }
  std::string describe() const override {
    return std::string(kind_name(kind())) + " " + std::to_string(window_) + "x" + std::to_string(window_) +
           " stride " + std::to_string(stride_);
  }

 protected:
  Tensor<S> do_forward(typename Layer<S>::Inputs in, Mode) override {
    input_shape_ = in[0]->shape();
    return pool(*in[0], pool_kind_, window_, stride_, pool_kind_ == PoolKind::max ? &argmax_ : nullptr);
  }
  std::vector<Tensor<S>> do_backward(const Tensor<S>& grad) override {
    std::vector<Tensor<S>> out;
    out.push_back(pool_backward(input_shape_, grad, pool_kind_, window_, stride_, argmax_));
    return out;
  }

 public:
  std::uint64_t branch_signature() const override {
    std::uint64_t h = 0x13198a2e03707344ULL;
    for (auto a : argmax_) h = mix64(h ^ a);
    return h;
  }

 private:
  PoolKind pool_kind_;
  std::size_t window_, stride_;
  Shape input_shape_;
  std::vector<std::size_t> argmax_;
};

template <class S>
class GlobalAvgPoolLayer : public Layer<S> {
 public:
  LayerKind kind() const override { return LayerKind::global_avg_pool; }

 protected:
  Tensor<S> do_forward(typename Layer<S>::Inputs in, Mode) override {
    input_shape_ = in[0]->shape();
    return global_avg_pool(*in[0]);
  }
  std::vector<Tensor<S>> do_backward(const Tensor<S>& grad) override {
    std::vector<Tensor<S>> out;
    out.push_back(global_avg_pool_backward(input_shape_, grad));
    return out;
  }

 private:
  Shape input_shape_;
};

template <class S>
class ConcatLayer : public Layer<S> {
 public:
  LayerKind kind() const override { return LayerKind::concat; }

 protected:
  std::size_t arity() const override { return 0; }
  Tensor<S> do_forward(typename Layer<S>::Inputs in, Mode) override {
    channels_.clear();
    for (const Tensor<S>* t : in) channels_.push_back(t->shape().c);
    return concat<S>(in);
  }
  std::vector<Tensor<S>> do_backward(const Tensor<S>& grad) override { return concat_backward(grad, std::span<const std::size_t>(channels_)); }

 private:
  std::vector<std::size_t> channels_;
};

template <class S>
class UpsampleLayer : public Layer<S> {
 public:
  explicit UpsampleLayer(std::size_t factor = 2) : factor_(factor) {
    if (factor == 0) throw ConfigError("upsample: factor must be >= 1");
  }
  LayerKind kind() const override { return LayerKind::upsample; }
  std::string describe() const override { return "upsample x" + std::to_string(factor_); }

 protected:
  Tensor<S> do_forward(typename Layer<S>::Inputs in, Mode) override { return upsample(*in[0], factor_); }
  std::vector<Tensor<S>> do_backward(const Tensor<S>& grad) override {
    std::vector<Tensor<S>> out;
    out.push_back(upsample_backward(grad, factor_));
    return out;
  }

 private:
  std::size_t factor_;
};

template <class S>
class DropoutLayer : public Layer<S> {
 public:
  explicit DropoutLayer(DropoutSpec spec) : spec_(spec) { spec_.validate(); }

  LayerKind kind() const override { return LayerKind::dropout; }
  std::string describe() const override { return "dropout rate " + std::to_string(spec_.rate); }
  void freeze_masks(bool frozen) override { frozen_ = frozen; }
  void set_stream(RngStream s) override { stream_ = s; }
  const DropoutSpec& spec() const { return spec_; }
  const Tensor<S>& last_mask() const { return mask_; }

 protected:
  Tensor<S> do_forward(typename Layer<S>::Inputs in, Mode mode) override {
    const Tensor<S>& x = *in[0];
    if (mode == Mode::infer) return x;
    if (!(frozen_ && mask_.shape() == x.shape())) mask_ = draw_keep_mask<S>(x.shape(), spec_, stream_);
    return mul(x, mask_);
  }
  std::vector<Tensor<S>> do_backward(const Tensor<S>& grad) override {
    std::vector<Tensor<S>> out;
    out.push_back(dropout_backward(grad, mask_));
    return out;
  }

 private:
  DropoutSpec spec_;
  RngStream stream_{0};
  bool frozen_ = false;
  Tensor<S> mask_;
};

template <class S>
class RotaflipLayer : public Layer<S> {
 public:
  explicit RotaflipLayer(RotaflipSpec spec) : spec_(spec) { spec_.validate(); }

  LayerKind kind() const override { return LayerKind::rotaflip; }
  std::string describe() const override { return "rotaflip rate " + std::to_string(spec_.rate); }
  void freeze_masks(bool frozen) override { frozen_ = frozen; }
  void set_stream(RngStream s) override { stream_ = s; }
  const RotaflipSpec& spec() const { return spec_; }
  const TransformMask& last_mask() const { return mask_; }

 protected:
  Tensor<S> do_forward(typename Layer<S>::Inputs in, Mode mode) override {
    const Tensor<S>& x = *in[0];
    const Shape& s = x.shape();
    if (s.h != s.w) throw ShapeError("rotaflip requires square feature maps, got " + s.str());
    if (mode == Mode::infer) return x;
    if (!(frozen_ && mask_.samples() == s.n && mask_.channels() == s.c))
      mask_ = draw_transform_mask(s.n, s.c, spec_, stream_);
    return rotaflip_apply(x, mask_);
  }
  std::vector<Tensor<S>> do_backward(const Tensor<S>& grad) override {
    std::vector<Tensor<S>> out;
    out.push_back(rotaflip_backward(grad, mask_));
    return out;
  }

 private:
  RotaflipSpec spec_;
  RngStream stream_{0};
  bool frozen_ = false;
  TransformMask mask_;
};

}  // namespace rotaflip
