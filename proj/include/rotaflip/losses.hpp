#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "rotaflip/tensor.hpp"

namespace rotaflip {

template <class S>
struct LossResult {
  double loss = 0.0;
  Tensor<S> grad;
};

namespace detail {

/// Softmax cross-entropy of one K-vector read with `stride`; writes
/// (softmax - onehot) * scale into `grad`.
template <class S>
double softmax_xent(const S* logits, std::size_t k, std::size_t stride, int label, S scale, S* grad) {
  S mx = logits[0];
  for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, logits[j * stride]);
  double denom = 0.0;
  for (std::size_t j = 0; j < k; ++j) denom += std::exp(static_cast<double>(logits[j * stride] - mx));
  const double log_denom = std::log(denom);
  for (std::size_t j = 0; j < k; ++j) {
    const double p = std::exp(static_cast<double>(logits[j * stride] - mx) - log_denom);
    grad[j * stride] = static_cast<S>((p - (static_cast<int>(j) == label ? 1.0 : 0.0)) * static_cast<double>(scale));
  }
  return log_denom - static_cast<double>(logits[static_cast<std::size_t>(label) * stride] - mx);
}

}  // namespace detail

/// Mean softmax cross-entropy of (N,K,1,1) logits against class indices.
template <class S>
LossResult<S> cross_entropy(const Tensor<S>& logits, std::span<const int> labels) {
  const Shape& s = logits.shape();
  const std::size_t k = s.c * s.h * s.w;
  if (k < 2) throw ShapeError("cross_entropy: need at least 2 classes, logits " + s.str());
  if (labels.size() != s.n)
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for " + std::to_string(s.n) + " samples");
  LossResult<S> r{0.0, Tensor<S>(s)};
  const S scale = S(1) / static_cast<S>(s.n);
  for (std::size_t n = 0; n < s.n; ++n) {
    if (labels[n] < 0 || static_cast<std::size_t>(labels[n]) >= k)
      throw ConfigError("cross_entropy: label " + std::to_string(labels[n]) + " out of range [0," + std::to_string(k) + ")");
    r.loss += detail::softmax_xent(logits.data() + n * k, k, 1, labels[n], scale, r.grad.data() + n * k);
  }
  r.loss /= static_cast<double>(s.n);
  return r;
}

/// Mean per-pixel softmax cross-entropy of (N,K,H,W) logits against label maps.
template <class S>
LossResult<S> pixel_cross_entropy(const Tensor<S>& logits, std::span<const LabelMap> labels) {
  const Shape& s = logits.shape();
  if (s.c < 2) throw ShapeError("pixel_cross_entropy: need at least 2 classes, logits " + s.str());
  if (labels.size() != s.n) throw ShapeError("pixel_cross_entropy: label map count does not match batch");
  LossResult<S> r{0.0, Tensor<S>(s)};
  const std::size_t plane = s.plane();
  const S scale = S(1) / static_cast<S>(s.n * plane);
  for (std::size_t n = 0; n < s.n; ++n) {
    const LabelMap& lm = labels[n];
    if (static_cast<std::size_t>(lm.rows()) != s.h || static_cast<std::size_t>(lm.cols()) != s.w)
      throw ShapeError("pixel_cross_entropy: label map " + std::to_string(lm.rows()) + "x" + std::to_string(lm.cols()) +
                       " does not match logits " + s.str());
    for (std::size_t i = 0; i < plane; ++i) {
      const int label = lm.data()[i];
      if (label < 0 || static_cast<std::size_t>(label) >= s.c)
        throw ConfigError("pixel_cross_entropy: label " + std::to_string(label) + " out of range");
      r.loss += detail::softmax_xent(logits.plane(n, 0) + i, s.c, plane, label, scale, r.grad.plane(n, 0) + i);
    }
  }
  r.loss /= static_cast<double>(s.n * plane);
  return r;
}

}  // namespace rotaflip
