#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "rotaflip/layers.hpp"

namespace rotaflip {

/// lr(epoch) = initial_lr · decay^epoch.
struct Schedule {
  double initial_lr = 0.001;
  double decay = 0.99;
  std::size_t epochs = 300;
};

inline double lr_at(const Schedule& schedule, std::size_t epoch) {
  return schedule.initial_lr * std::pow(schedule.decay, static_cast<double>(epoch));
}

struct NadamSettings {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Moment accumulators for every trainable parameter, in parameter order.
template <class S>
struct OptimizerState {
  NadamSettings settings;
  std::vector<Tensor<S>> first_moment;
  std::vector<Tensor<S>> second_moment;
  std::size_t step = 0;
};

template <class S>
using NamedParameters = std::vector<std::pair<std::string, Parameter<S>*>>;

/// One Nadam update (Adam with a Nesterov look-ahead on the bias-corrected
/// first moment, constant β1):
///   m ← β1·m + (1−β1)·g,  v ← β2·v + (1−β2)·g²
///   m̂ = β1·m/(1−β1^(t+1)) + (1−β1)·g/(1−β1^t),  v̂ = v/(1−β2^t)
///   θ ← θ − lr·m̂/(√v̂ + ε)
/// Non-trainable parameters are skipped. Throws DivergenceError naming the
/// first parameter whose gradient is not finite, before any update.
template <class S>
void nadam_step(const NamedParameters<S>& params, OptimizerState<S>& state, double lr) {
  std::vector<std::size_t> trainable;
  for (std::size_t i = 0; i < params.size(); ++i)
    if (params[i].second->trainable) trainable.push_back(i);
  if (state.first_moment.empty()) {
    for (auto i : trainable) {
      state.first_moment.emplace_back(params[i].second->value.shape());
      state.second_moment.emplace_back(params[i].second->value.shape());
    }
  }
  if (state.first_moment.size() != trainable.size()) throw ShapeError("nadam: optimizer state does not match parameters");
  for (auto i : trainable)
    if (!params[i].second->grad.all_finite()) throw DivergenceError("non-finite gradient in parameter " + params[i].first);

  ++state.step;
  const NadamSettings& cfg = state.settings;
  const double t = static_cast<double>(state.step);
  const double b1 = cfg.beta1, b2 = cfg.beta2;
  const S m_coef = static_cast<S>(b1 / (1.0 - std::pow(b1, t + 1.0)));
  const S g_coef = static_cast<S>((1.0 - b1) / (1.0 - std::pow(b1, t)));
  const S v_corr = static_cast<S>(1.0 / (1.0 - std::pow(b2, t)));
  const S step = static_cast<S>(lr);
  const S eps = static_cast<S>(cfg.epsilon);
  for (std::size_t k = 0; k < trainable.size(); ++k) {
    Parameter<S>& p = *params[trainable[k]].second;
    auto& m = state.first_moment[k].array();
    auto& v = state.second_moment[k].array();
    if (m.size() != p.value.array().size()) throw ShapeError("nadam: moment shape mismatch for " + params[trainable[k]].first);
    const auto& g = p.grad.array();
    m = static_cast<S>(b1) * m + static_cast<S>(1.0 - b1) * g;
    v = static_cast<S>(b2) * v + static_cast<S>(1.0 - b2) * g.square();
    p.value.array() -= step * (m_coef * m + g_coef * g) / ((v * v_corr).sqrt() + eps);
  }
}

}  // namespace rotaflip
