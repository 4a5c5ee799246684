#pragma once

// Stateless forward/backward kernels. Layer objects in layers.hpp wrap these
// with parameters and cached state.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "rotaflip/d4.hpp"
#include "rotaflip/error.hpp"
#include "rotaflip/rng.hpp"
#include "rotaflip/tensor.hpp"

namespace rotaflip {

enum class Mode { train, infer };

// ---------------------------------------------------------------------------
// Rotaflip

struct RotaflipSpec {
  double rate = 0.0;
  /// Sample from all 8 codes (default) or only the 7 non-identity codes.
  bool include_identity = true;
  /// Draw one selection and code per channel, shared across the batch.
  bool shared_per_channel = false;

  void validate() const {
    if (!(rate >= 0.0 && rate <= 1.0)) throw ConfigError("rotaflip rate must be in [0,1], got " + std::to_string(rate));
  }
};

/// Per-(sample, channel) record of the transform applied by a rotaflip forward pass.
class TransformMask {
 public:
  TransformMask() = default;
  TransformMask(std::size_t samples, std::size_t channels)
      : samples_(samples), channels_(channels), codes_(samples * channels, kUnselected) {}

  bool empty() const noexcept { return codes_.empty(); }
  std::size_t samples() const noexcept { return samples_; }
  std::size_t channels() const noexcept { return channels_; }

  bool selected(std::size_t n, std::size_t c) const { return codes_[n * channels_ + c] != kUnselected; }
  D4Code code(std::size_t n, std::size_t c) const {
    const auto v = codes_[n * channels_ + c];
    if (v == kUnselected) throw Error("transform mask: slot not selected");
    return static_cast<D4Code>(v);
  }
  void select(std::size_t n, std::size_t c, D4Code t) { codes_[n * channels_ + c] = static_cast<std::int8_t>(t); }

  std::size_t selected_count() const {
    std::size_t k = 0;
    for (auto v : codes_) k += v != kUnselected;
    return k;
  }

  friend bool operator==(const TransformMask&, const TransformMask&) = default;

 private:
  static constexpr std::int8_t kUnselected = -1;
  std::size_t samples_ = 0, channels_ = 0;
  std::vector<std::int8_t> codes_;
};

/// Draws a transform mask for an (N, C, ·, ·) activation.
inline TransformMask draw_transform_mask(std::size_t samples, std::size_t channels, const RotaflipSpec& spec,
                                         RngStream& stream) {
  TransformMask mask(samples, channels);
  if (spec.shared_per_channel) {
    for (std::size_t c = 0; c < channels; ++c) {
      if (!stream.bernoulli(spec.rate)) continue;
      const D4Code t = sample_code(stream, spec.include_identity);
      for (std::size_t n = 0; n < samples; ++n) mask.select(n, c, t);
    }
    return mask;
  }
  for (std::size_t n = 0; n < samples; ++n)
    for (std::size_t c = 0; c < channels; ++c)
      if (stream.bernoulli(spec.rate)) mask.select(n, c, sample_code(stream, spec.include_identity));
  return mask;
}

namespace detail {

inline void check_mask(const Shape& s, const TransformMask& mask) {
  if (mask.samples() != s.n || mask.channels() != s.c)
    throw ShapeError("transform mask (" + std::to_string(mask.samples()) + "," + std::to_string(mask.channels()) +
                     ") does not match tensor " + s.str());
}

template <class S>
Tensor<S> transform_slots(const Tensor<S>& x, const TransformMask& mask, bool inverse) {
  const Shape& s = x.shape();
  if (mask.empty()) return x;
  check_mask(s, mask);
  Tensor<S> y = x;
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c) {
      if (!mask.selected(n, c)) continue;
      const D4Code t = inverse ? invert(mask.code(n, c)) : mask.code(n, c);
      apply_into(x.plane(n, c), y.plane(n, c), s.h, s.w, t);
    }
  return y;
}

}  // namespace detail

/// Applies a frozen mask to x.
template <class S>
Tensor<S> rotaflip_apply(const Tensor<S>& x, const TransformMask& mask) {
  return detail::transform_slots(x, mask, false);
}

/// Train mode: each (n, c) map is replaced, with probability spec.rate, by a
/// uniformly drawn D4 transform of itself. Infer mode: identity, empty mask.
template <class S>
std::pair<Tensor<S>, TransformMask> rotaflip_forward(const Tensor<S>& x, const RotaflipSpec& spec, Mode mode,
                                                     RngStream& stream) {
  spec.validate();
  const Shape& s = x.shape();
  if (s.h != s.w) throw ShapeError("rotaflip requires square feature maps, got " + s.str());
  if (mode == Mode::infer) return {x, TransformMask{}};
  TransformMask mask = draw_transform_mask(s.n, s.c, spec, stream);
  Tensor<S> y = rotaflip_apply(x, mask);
  return {std::move(y), std::move(mask)};
}

/// The adjoint of a permutation is its inverse.
template <class S>
Tensor<S> rotaflip_backward(const Tensor<S>& grad_y, const TransformMask& mask) {
  return detail::transform_slots(grad_y, mask, true);
}

// ---------------------------------------------------------------------------
// Dropout (inverted scaling)

struct DropoutSpec {
  double rate = 0.0;

  void validate() const {
    if (!(rate >= 0.0 && rate < 1.0)) throw ConfigError("dropout rate must be in [0,1), got " + std::to_string(rate));
  }
};

/// Keep mask with entries 0 or 1/(1-rate).
template <class S>
Tensor<S> draw_keep_mask(const Shape& shape, const DropoutSpec& spec, RngStream& stream) {
  Tensor<S> mask(shape);
  const S keep_scale = S(1) / static_cast<S>(1.0 - spec.rate);
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = stream.bernoulli(spec.rate) ? S(0) : keep_scale;
  return mask;
}

template <class S>
std::pair<Tensor<S>, Tensor<S>> dropout_forward(const Tensor<S>& x, const DropoutSpec& spec, Mode mode,
                                                RngStream& stream) {
  spec.validate();
  if (mode == Mode::infer) return {x, Tensor<S>{}};
  Tensor<S> mask = draw_keep_mask<S>(x.shape(), spec, stream);
  Tensor<S> y = mul(x, mask);
  return {std::move(y), std::move(mask)};
}

template <class S>
Tensor<S> dropout_backward(const Tensor<S>& grad_y, const Tensor<S>& keep_mask) {
  if (keep_mask.empty()) return grad_y;
  return mul(grad_y, keep_mask);
}

// ---------------------------------------------------------------------------
// 2-D convolution (cross-correlation) via im2col and GEMM

enum class Padding { same, valid };

struct ConvGeometry {
  std::size_t kh = 1, kw = 1, stride = 1, pad_h = 0, pad_w = 0;
  std::size_t out_h = 0, out_w = 0;
};

inline ConvGeometry conv_geometry(const Shape& x, const Shape& w, std::size_t stride, Padding padding) {
  if (stride == 0) throw ConfigError("conv2d: stride must be positive");
  if (w.c != x.c)
    throw ShapeError("conv2d: input has " + std::to_string(x.c) + " channels, weights " + w.str() + " expect " +
                     std::to_string(w.c));
  ConvGeometry g;
  g.kh = w.h;
  g.kw = w.w;
  g.stride = stride;
  if (padding == Padding::same) {
    g.pad_h = (w.h - 1) / 2;
    g.pad_w = (w.w - 1) / 2;
  }
  if (x.h + 2 * g.pad_h < g.kh || x.w + 2 * g.pad_w < g.kw)
    throw ShapeError("conv2d: kernel " + w.str() + " larger than padded input " + x.str());
  g.out_h = (x.h + 2 * g.pad_h - g.kh) / stride + 1;
  g.out_w = (x.w + 2 * g.pad_w - g.kw) / stride + 1;
  return g;
}

namespace detail {

// Output columns [lo, hi) whose input column oj*stride + kj - pad lies in [0, w).
inline void valid_columns(const ConvGeometry& g, std::size_t kj, std::size_t w, std::size_t& lo, std::size_t& hi) {
  lo = kj >= g.pad_w ? 0 : (g.pad_w - kj + g.stride - 1) / g.stride;
  const std::size_t limit = w + g.pad_w - kj;  // jj < w  <=>  oj*stride < limit
  hi = limit == 0 ? 0 : std::min(g.out_w, (limit - 1) / g.stride + 1);
  if (hi < lo) hi = lo;
}

template <class S>
void im2col(const S* x, std::size_t channels, std::size_t h, std::size_t w, const ConvGeometry& g, RowMatrix<S>& cols) {
  const std::size_t out_plane = g.out_h * g.out_w;
  cols.resize(static_cast<Eigen::Index>(channels * g.kh * g.kw), static_cast<Eigen::Index>(out_plane));
  S* dst = cols.data();
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t ki = 0; ki < g.kh; ++ki)
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        std::size_t lo, hi;
        valid_columns(g, kj, w, lo, hi);
        for (std::size_t oi = 0; oi < g.out_h; ++oi, dst += g.out_w) {
          const std::size_t ii = oi * g.stride + ki;
          if (ii < g.pad_h || ii - g.pad_h >= h) {
            std::fill(dst, dst + g.out_w, S(0));
            continue;
          }
          // source of output column oj is row[oj*stride + kj - pad_w], non-negative for oj >= lo
          const S* row = x + (c * h + ii - g.pad_h) * w;
          std::fill(dst, dst + lo, S(0));
          if (hi > lo) {
            const S* first = row + (lo * g.stride + kj - g.pad_w);
            if (g.stride == 1)
              std::copy(first, first + (hi - lo), dst + lo);
            else
              for (std::size_t oj = lo; oj < hi; ++oj, first += g.stride) dst[oj] = *first;
          }
          std::fill(dst + hi, dst + g.out_w, S(0));
        }
      }
}

template <class S>
void col2im(const RowMatrix<S>& cols, std::size_t channels, std::size_t h, std::size_t w, const ConvGeometry& g, S* x) {
  const S* src = cols.data();
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t ki = 0; ki < g.kh; ++ki)
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        std::size_t lo, hi;
        valid_columns(g, kj, w, lo, hi);
        for (std::size_t oi = 0; oi < g.out_h; ++oi, src += g.out_w) {
          const std::size_t ii = oi * g.stride + ki;
          if (ii < g.pad_h || ii - g.pad_h >= h) continue;
          if (hi <= lo) continue;
          S* dst = x + (c * h + ii - g.pad_h) * w + (lo * g.stride + kj - g.pad_w);
          for (std::size_t oj = lo; oj < hi; ++oj, dst += g.stride) *dst += src[oj];
        }
      }
}

inline bool is_pointwise(const ConvGeometry& g) { return g.kh == 1 && g.kw == 1 && g.stride == 1; }

}  // namespace detail

/// Cross-correlation of x (N,Cin,H,W) with weights (Cout,Cin,kh,kw) plus a
/// per-output-channel bias of shape (1,Cout,1,1).
template <class S>
Tensor<S> conv2d(const Tensor<S>& x, const Tensor<S>& weights, const Tensor<S>& bias, std::size_t stride = 1,
                 Padding padding = Padding::valid) {
  const Shape& xs = x.shape();
  const Shape& ws = weights.shape();
  const ConvGeometry g = conv_geometry(xs, ws, stride, padding);
  if (bias.size() != ws.n) throw ShapeError("conv2d: bias " + bias.shape().str() + " does not match weights " + ws.str());
  const auto cout = static_cast<Eigen::Index>(ws.n);
  const auto k = static_cast<Eigen::Index>(ws.c * ws.h * ws.w);
  const auto out_plane = static_cast<Eigen::Index>(g.out_h * g.out_w);
  Tensor<S> y = Tensor<S>::uninitialized(Shape{xs.n, ws.n, g.out_h, g.out_w});
  Eigen::Map<const RowMatrix<S>> wmat(weights.data(), cout, k);
  Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, 1>> b(bias.data(), cout);
  RowMatrix<S> cols;
  for (std::size_t n = 0; n < xs.n; ++n) {
    Eigen::Map<RowMatrix<S>> out(y.plane(n, 0), cout, out_plane);
    if (detail::is_pointwise(g)) {
      out.noalias() = wmat * Eigen::Map<const RowMatrix<S>>(x.plane(n, 0), k, out_plane);
    } else {
      detail::im2col(x.plane(n, 0), xs.c, xs.h, xs.w, g, cols);
      out.noalias() = wmat * cols;
    }
    out.colwise() += b;
  }
  return y;
}

template <class S>
struct Conv2dGrads {
  Tensor<S> x, weights, bias;
};

template <class S>
Conv2dGrads<S> conv2d_backward(const Tensor<S>& x, const Tensor<S>& weights, const Tensor<S>& grad_y,
                               std::size_t stride = 1, Padding padding = Padding::valid) {
  const Shape& xs = x.shape();
  const Shape& ws = weights.shape();
  const ConvGeometry g = conv_geometry(xs, ws, stride, padding);
  if (grad_y.shape() != Shape{xs.n, ws.n, g.out_h, g.out_w})
    throw ShapeError("conv2d backward: gradient " + grad_y.shape().str() + " does not match output shape");
  const auto cout = static_cast<Eigen::Index>(ws.n);
  const auto k = static_cast<Eigen::Index>(ws.c * ws.h * ws.w);
  const auto out_plane = static_cast<Eigen::Index>(g.out_h * g.out_w);
  Conv2dGrads<S> grads{Tensor<S>(xs), Tensor<S>(ws), Tensor<S>(Shape{1, ws.n, 1, 1})};
  Eigen::Map<const RowMatrix<S>> wmat(weights.data(), cout, k);
  Eigen::Map<RowMatrix<S>> dw(grads.weights.data(), cout, k);
  Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, 1>> db(grads.bias.data(), cout);
  RowMatrix<S> cols, dcols;
  for (std::size_t n = 0; n < xs.n; ++n) {
    Eigen::Map<const RowMatrix<S>> gy(grad_y.plane(n, 0), cout, out_plane);
    db += gy.rowwise().sum();
    if (detail::is_pointwise(g)) {
      Eigen::Map<const RowMatrix<S>> xin(x.plane(n, 0), k, out_plane);
      dw.noalias() += gy * xin.transpose();
      Eigen::Map<RowMatrix<S>>(grads.x.plane(n, 0), k, out_plane).noalias() = wmat.transpose() * gy;
    } else {
      detail::im2col(x.plane(n, 0), xs.c, xs.h, xs.w, g, cols);
      dw.noalias() += gy * cols.transpose();
      dcols.noalias() = wmat.transpose() * gy;
      detail::col2im(dcols, xs.c, xs.h, xs.w, g, grads.x.plane(n, 0));
    }
  }
  return grads;
}

// ---------------------------------------------------------------------------
// Batch normalization over (N, H, W) per channel

template <class S>
struct BatchNormCache {
  Tensor<S> x_hat;
  std::vector<S> inv_std;
  bool batch_statistics = true;
};

template <class S>
struct BatchNormGrads {
  Tensor<S> x, gamma, beta;
};

namespace detail {

template <class S>
void check_bn_params(const Shape& xs, const Tensor<S>& gamma, const Tensor<S>& beta) {
  if (xs.n == 0) throw ShapeError("batchnorm: batch of size 0");
  if (gamma.size() != xs.c || beta.size() != xs.c)
    throw ShapeError("batchnorm: gamma/beta length must equal channel count of " + xs.str());
}

}  // namespace detail

namespace detail {

template <class S>
using ArrayMap = Eigen::Map<Eigen::Array<S, Eigen::Dynamic, 1>>;
template <class S>
using ConstArrayMap = Eigen::Map<const Eigen::Array<S, Eigen::Dynamic, 1>>;

template <class S>
ConstArrayMap<S> plane_array(const Tensor<S>& t, std::size_t n, std::size_t c) {
  return ConstArrayMap<S>(t.plane(n, c), static_cast<Eigen::Index>(t.shape().plane()));
}
template <class S>
ArrayMap<S> plane_array(Tensor<S>& t, std::size_t n, std::size_t c) {
  return ArrayMap<S>(t.plane(n, c), static_cast<Eigen::Index>(t.shape().plane()));
}

}  // namespace detail

/// Normalizes with batch statistics. Writes the batch mean and biased
/// variance into `batch_mean`/`batch_var` when given.
template <class S>
Tensor<S> batchnorm_train(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta, S epsilon,
                          BatchNormCache<S>* cache = nullptr, std::vector<S>* batch_mean = nullptr,
                          std::vector<S>* batch_var = nullptr) {
  using detail::plane_array;
  const Shape& s = x.shape();
  detail::check_bn_params(s, gamma, beta);
  const S count = static_cast<S>(s.n * s.plane());
  Tensor<S> y = Tensor<S>::uninitialized(s);
  Tensor<S> x_hat = Tensor<S>::uninitialized(s);
  std::vector<S> inv_std(s.c), means(s.c), vars(s.c);
  for (std::size_t c = 0; c < s.c; ++c) {
    S mean = 0;
    for (std::size_t n = 0; n < s.n; ++n) mean += plane_array(x, n, c).sum();
    mean /= count;
    S var = 0;
    for (std::size_t n = 0; n < s.n; ++n) var += (plane_array(x, n, c) - mean).square().sum();
    var /= count;
    means[c] = mean;
    vars[c] = var;
    const S is = S(1) / std::sqrt(var + epsilon);
    inv_std[c] = is;
    const S g = gamma[c], b = beta[c];
    for (std::size_t n = 0; n < s.n; ++n) {
      auto xh = plane_array(x_hat, n, c);
      xh = (plane_array(x, n, c) - mean) * is;
      plane_array(y, n, c) = xh * g + b;
    }
  }
  if (batch_mean) *batch_mean = std::move(means);
  if (batch_var) *batch_var = std::move(vars);
  if (cache) *cache = BatchNormCache<S>{std::move(x_hat), std::move(inv_std), true};
  return y;
}

/// Normalizes with fixed (running) statistics.
template <class S>
Tensor<S> batchnorm_infer(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta,
                          const Tensor<S>& running_mean, const Tensor<S>& running_var, S epsilon,
                          BatchNormCache<S>* cache = nullptr) {
  using detail::plane_array;
  const Shape& s = x.shape();
  detail::check_bn_params(s, gamma, beta);
  Tensor<S> y = Tensor<S>::uninitialized(s);
  std::vector<S> inv_std(s.c);
  Tensor<S> x_hat;
  if (cache) x_hat = Tensor<S>::uninitialized(s);
  for (std::size_t c = 0; c < s.c; ++c) {
    const S is = S(1) / std::sqrt(running_var[c] + epsilon);
    inv_std[c] = is;
    const S mean = running_mean[c], g = gamma[c], b = beta[c];
    for (std::size_t n = 0; n < s.n; ++n) {
      if (cache) {
        auto xh = plane_array(x_hat, n, c);
        xh = (plane_array(x, n, c) - mean) * is;
        plane_array(y, n, c) = xh * g + b;
      } else {
        plane_array(y, n, c) = (plane_array(x, n, c) - mean) * (is * g) + b;
      }
    }
  }
  if (cache) *cache = BatchNormCache<S>{std::move(x_hat), std::move(inv_std), false};
  return y;
}

template <class S>
BatchNormGrads<S> batchnorm_backward(const Tensor<S>& grad_y, const BatchNormCache<S>& cache, const Tensor<S>& gamma) {
  using detail::plane_array;
  const Shape& s = grad_y.shape();
  if (cache.x_hat.shape() != s) throw ShapeError("batchnorm backward: gradient shape mismatch");
  const S count = static_cast<S>(s.n * s.plane());
  BatchNormGrads<S> g{Tensor<S>::uninitialized(s), Tensor<S>(Shape{1, s.c, 1, 1}), Tensor<S>(Shape{1, s.c, 1, 1})};
  for (std::size_t c = 0; c < s.c; ++c) {
    S sum_dy = 0, sum_dy_xh = 0;
    for (std::size_t n = 0; n < s.n; ++n) {
      const auto dy = plane_array(grad_y, n, c);
      sum_dy += dy.sum();
      sum_dy_xh += (dy * plane_array(cache.x_hat, n, c)).sum();
    }
    g.beta[c] = sum_dy;
    g.gamma[c] = sum_dy_xh;
    const S k = gamma[c] * cache.inv_std[c];
    const S mean_dy = sum_dy / count, mean_dy_xh = sum_dy_xh / count;
    for (std::size_t n = 0; n < s.n; ++n) {
      if (cache.batch_statistics)
        plane_array(g.x, n, c) = k * (plane_array(grad_y, n, c) - mean_dy - plane_array(cache.x_hat, n, c) * mean_dy_xh);
      else
        plane_array(g.x, n, c) = k * plane_array(grad_y, n, c);
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Pooling

enum class PoolKind { max, average };

struct PoolGeometry {
  std::size_t window = 2, stride = 2, out_h = 0, out_w = 0;
};

inline PoolGeometry pool_geometry(const Shape& x, std::size_t window, std::size_t stride) {
  if (window == 0 || stride == 0) throw ConfigError("pool: window and stride must be positive");
  if (window > x.h || window > x.w)
    throw ShapeError("pool: window " + std::to_string(window) + " larger than input " + x.str());
  return {window, stride, (x.h - window) / stride + 1, (x.w - window) / stride + 1};
}

/// Pooled output; for max pooling `argmax` receives the flat input index that
/// won each output (first in row-major order on ties).
template <class S>
Tensor<S> pool(const Tensor<S>& x, PoolKind kind, std::size_t window, std::size_t stride,
               std::vector<std::size_t>* argmax = nullptr) {
  const Shape& s = x.shape();
  const PoolGeometry g = pool_geometry(s, window, stride);
  Tensor<S> y(Shape{s.n, s.c, g.out_h, g.out_w});
  if (argmax) argmax->assign(y.size(), 0);
  const S inv_area = S(1) / static_cast<S>(window * window);
  std::size_t o = 0;
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c)
      for (std::size_t oi = 0; oi < g.out_h; ++oi)
        for (std::size_t oj = 0; oj < g.out_w; ++oj, ++o) {
          S acc = kind == PoolKind::max ? -std::numeric_limits<S>::infinity() : S(0);
          std::size_t best = 0;
          for (std::size_t ki = 0; ki < window; ++ki)
            for (std::size_t kj = 0; kj < window; ++kj) {
              const std::size_t idx = x.offset(n, c, oi * stride + ki, oj * stride + kj);
              const S v = x[idx];
              if (kind == PoolKind::average) {
                acc += v;
              } else if (v > acc) {
                acc = v;
                best = idx;
              }
            }
          y[o] = kind == PoolKind::average ? acc * inv_area : acc;
          if (argmax) (*argmax)[o] = best;
        }
  return y;
}

template <class S>
Tensor<S> pool_backward(const Shape& input_shape, const Tensor<S>& grad_y, PoolKind kind, std::size_t window,
                        std::size_t stride, std::span<const std::size_t> argmax = {}) {
  const PoolGeometry g = pool_geometry(input_shape, window, stride);
  const Shape& gs = grad_y.shape();
  if (gs != Shape{input_shape.n, input_shape.c, g.out_h, g.out_w})
    throw ShapeError("pool backward: gradient " + gs.str() + " does not match output shape");
  Tensor<S> dx(input_shape);
  if (kind == PoolKind::max) {
    if (argmax.size() != grad_y.size()) throw ShapeError("pool backward: argmax record missing");
    for (std::size_t o = 0; o < grad_y.size(); ++o) dx[argmax[o]] += grad_y[o];
    return dx;
  }
  const S inv_area = S(1) / static_cast<S>(window * window);
  std::size_t o = 0;
  for (std::size_t n = 0; n < gs.n; ++n)
    for (std::size_t c = 0; c < gs.c; ++c)
      for (std::size_t oi = 0; oi < g.out_h; ++oi)
        for (std::size_t oj = 0; oj < g.out_w; ++oj, ++o) {
          const S v = grad_y[o] * inv_area;
          for (std::size_t ki = 0; ki < window; ++ki)
            for (std::size_t kj = 0; kj < window; ++kj) dx(n, c, oi * stride + ki, oj * stride + kj) += v;
        }
  return dx;
}

template <class S>
Tensor<S> global_avg_pool(const Tensor<S>& x) {
  return reduce(ReduceOp::mean, x, Axes::spatial());
}

template <class S>
Tensor<S> global_avg_pool_backward(const Shape& input_shape, const Tensor<S>& grad_y) {
  Tensor<S> dx(input_shape);
  const std::size_t plane = input_shape.plane();
  const S inv = S(1) / static_cast<S>(plane);
  for (std::size_t n = 0; n < input_shape.n; ++n)
    for (std::size_t c = 0; c < input_shape.c; ++c) {
      const S v = grad_y(n, c, 0, 0) * inv;
      S* p = dx.plane(n, c);
      for (std::size_t i = 0; i < plane; ++i) p[i] = v;
    }
  return dx;
}

// ---------------------------------------------------------------------------
// Dense (fully connected)

/// y = x·Wᵀ + b where x is (N,F) (all non-batch axes flattened), weights are
/// (K,F,1,1) and bias is (1,K,1,1). Output shape (N,K,1,1).
template <class S>
Tensor<S> dense(const Tensor<S>& x, const Tensor<S>& weights, const Tensor<S>& bias) {
  const std::size_t n = x.shape().n;
  const std::size_t f = n ? x.size() / n : 0;
  const std::size_t k = weights.shape().n;
  if (weights.shape().c * weights.shape().h * weights.shape().w != f)
    throw ShapeError("dense: input " + x.shape().str() + " has " + std::to_string(f) + " features, weights " +
                     weights.shape().str() + " expect " + std::to_string(weights.size() / std::max<std::size_t>(k, 1)));
  if (bias.size() != k) throw ShapeError("dense: bias " + bias.shape().str() + " does not match weights");
  Tensor<S> y(Shape{n, k, 1, 1});
  const auto N = static_cast<Eigen::Index>(n), F = static_cast<Eigen::Index>(f), K = static_cast<Eigen::Index>(k);
  Eigen::Map<RowMatrix<S>> out(y.data(), N, K);
  out.noalias() = Eigen::Map<const RowMatrix<S>>(x.data(), N, F) * Eigen::Map<const RowMatrix<S>>(weights.data(), K, F).transpose();
  out.rowwise() += Eigen::Map<const Eigen::Matrix<S, 1, Eigen::Dynamic>>(bias.data(), K);
  return y;
}

template <class S>
struct DenseGrads {
  Tensor<S> x, weights, bias;
};

template <class S>
DenseGrads<S> dense_backward(const Tensor<S>& x, const Tensor<S>& weights, const Tensor<S>& grad_y) {
  const std::size_t n = x.shape().n;
  const std::size_t f = n ? x.size() / n : 0;
  const std::size_t k = weights.shape().n;
  if (grad_y.shape() != Shape{n, k, 1, 1}) throw ShapeError("dense backward: gradient shape mismatch");
  const auto N = static_cast<Eigen::Index>(n), F = static_cast<Eigen::Index>(f), K = static_cast<Eigen::Index>(k);
  DenseGrads<S> g{Tensor<S>(x.shape()), Tensor<S>(weights.shape()), Tensor<S>(Shape{1, k, 1, 1})};
  Eigen::Map<const RowMatrix<S>> gy(grad_y.data(), N, K);
  Eigen::Map<RowMatrix<S>>(g.x.data(), N, F).noalias() = gy * Eigen::Map<const RowMatrix<S>>(weights.data(), K, F);
  Eigen::Map<RowMatrix<S>>(g.weights.data(), K, F).noalias() = gy.transpose() * Eigen::Map<const RowMatrix<S>>(x.data(), N, F);
  Eigen::Map<Eigen::Matrix<S, 1, Eigen::Dynamic>>(g.bias.data(), K) = gy.colwise().sum();
  return g;
}

// ---------------------------------------------------------------------------
// Channel concatenation

template <class S>
Tensor<S> concat(std::span<const Tensor<S>* const> xs) {
  if (xs.empty()) throw ShapeError("concat: no inputs");
  const Shape& s0 = xs[0]->shape();
  std::size_t channels = 0;
  for (const Tensor<S>* t : xs) {
    const Shape& s = t->shape();
    if (s.n != s0.n || s.h != s0.h || s.w != s0.w)
      throw ShapeError("concat: shapes " + s0.str() + " and " + s.str() + " differ outside the channel axis");
    channels += s.c;
  }
  Tensor<S> y(Shape{s0.n, channels, s0.h, s0.w});
  for (std::size_t n = 0; n < s0.n; ++n) {
    S* dst = y.plane(n, 0);
    for (const Tensor<S>* t : xs) {
      const std::size_t len = t->shape().c * s0.plane();
      std::copy_n(t->plane(n, 0), len, dst);
      dst += len;
    }
  }
  return y;
}

template <class S>
Tensor<S> concat(std::initializer_list<const Tensor<S>*> xs) {
  return concat<S>(std::span<const Tensor<S>* const>(xs.begin(), xs.size()));
}

/// Splits a concatenated gradient back into per-input gradients.
template <class S>
std::vector<Tensor<S>> concat_backward(const Tensor<S>& grad_y, std::span<const std::size_t> channels) {
  const Shape& s = grad_y.shape();
  std::size_t total = 0;
  for (auto c : channels) total += c;
  if (total != s.c) throw ShapeError("concat backward: channel counts do not sum to " + std::to_string(s.c));
  std::vector<Tensor<S>> out;
  out.reserve(channels.size());
  for (auto c : channels) out.emplace_back(Shape{s.n, c, s.h, s.w});
  for (std::size_t n = 0; n < s.n; ++n) {
    const S* src = grad_y.plane(n, 0);
    for (std::size_t i = 0; i < channels.size(); ++i) {
      const std::size_t len = channels[i] * s.plane();
      std::copy_n(src, len, out[i].plane(n, 0));
      src += len;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Nearest-neighbour upsampling

template <class S>
Tensor<S> upsample(const Tensor<S>& x, std::size_t factor = 2) {
  if (factor == 0) throw ConfigError("upsample: factor must be >= 1");
  const Shape& s = x.shape();
  Tensor<S> y(Shape{s.n, s.c, s.h * factor, s.w * factor});
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c) {
      const S* src = x.plane(n, c);
      S* dst = y.plane(n, c);
      const std::size_t ow = s.w * factor;
      for (std::size_t i = 0; i < s.h * factor; ++i)
        for (std::size_t j = 0; j < ow; ++j) dst[i * ow + j] = src[(i / factor) * s.w + j / factor];
    }
  return y;
}

template <class S>
Tensor<S> upsample_backward(const Tensor<S>& grad_y, std::size_t factor = 2) {
  const Shape& s = grad_y.shape();
  if (factor == 0 || s.h % factor || s.w % factor) throw ShapeError("upsample backward: gradient " + s.str() + " not divisible by factor");
  Tensor<S> dx(Shape{s.n, s.c, s.h / factor, s.w / factor});
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c) {
      const S* src = grad_y.plane(n, c);
      S* dst = dx.plane(n, c);
      const std::size_t iw = s.w / factor;
      for (std::size_t i = 0; i < s.h; ++i)
        for (std::size_t j = 0; j < s.w; ++j) dst[(i / factor) * iw + j / factor] += src[i * s.w + j];
    }
  return dx;
}

}  // namespace rotaflip
