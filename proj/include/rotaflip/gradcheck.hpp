#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "rotaflip/model.hpp"

namespace rotaflip {

struct GradcheckOptions {
  double step = 1e-5;
  /// Random directions per checked tensor.
  std::size_t directions = 3;
  /// Redraws allowed when the stencil crosses a ReLU or max-pool kink.
  std::size_t max_redraws = 25;
};

struct GradcheckEntry {
  std::string target;
  double max_rel_error = 0.0;
  std::size_t checks = 0;
  std::size_t kink_redraws = 0;
};

struct GradcheckReport {
  std::vector<GradcheckEntry> entries;

  double worst() const {
    double w = 0.0;
    for (const auto& e : entries) w = std::max(w, e.max_rel_error);
    return w;
  }
  bool passed(double tolerance) const { return worst() < tolerance; }

  std::string str() const {
    std::ostringstream os;
    os.precision(3);
    for (const auto& e : entries)
      os << e.target << " max_rel_error=" << std::scientific << e.max_rel_error << " checks=" << e.checks
         << " kink_redraws=" << e.kink_redraws << '\n';
    return os.str();
  }
};

/// |a - n| / max(|a|, |n|), and 0 when both vanish.
inline double relative_error(double analytic, double numeric) {
  const double denom = std::max(std::abs(analytic), std::abs(numeric));
  return denom == 0.0 ? 0.0 : std::abs(analytic - numeric) / denom;
}

namespace detail {

/// A perturbable tensor together with the analytic gradient computed for it.
struct GradTarget {
  std::string group;
  Tensor<double>* value;
  std::function<const Tensor<double>&()> grad;
};

/// Directional central-difference check of d/dθ ⟨r, f(θ)⟩. Targets sharing
/// a group are perturbed together along one joint direction, so a component
/// whose gradient vanishes exactly (a conv bias feeding batch norm) does not
/// reduce the check to rounding noise. `forward` evaluates f at the current
/// values; `signature` identifies the piecewise-linear branch of the last
/// evaluation.
inline GradcheckReport run_gradcheck(std::vector<GradTarget>& targets, const std::function<Tensor<double>()>& forward,
                                     const std::function<std::uint64_t()>& signature, const Tensor<double>& weights,
                                     RngStream& rng, const GradcheckOptions& opt) {
  forward();
  const std::uint64_t base_sig = signature();
  std::vector<std::string> order;
  std::map<std::string, std::vector<GradTarget*>> members;
  for (GradTarget& t : targets) {
    if (!members.count(t.group)) order.push_back(t.group);
    members[t.group].push_back(&t);
  }
  auto objective = [&](std::uint64_t& sig) {
    const Tensor<double> y = forward();
    sig = signature();
    return (y.array() * weights.array()).sum();
  };
  GradcheckReport report;
  for (const std::string& group : order) {
    const std::vector<GradTarget*>& ts = members[group];
    GradcheckEntry entry;
    entry.target = group;
    std::vector<Tensor<double>> original, analytic_grad;
    for (GradTarget* t : ts) {
      original.push_back(*t->value);
      analytic_grad.push_back(t->grad());
    }
    auto place = [&](const std::vector<Tensor<double>>& dir, double step) {
      for (std::size_t k = 0; k < ts.size(); ++k) ts[k]->value->array() = original[k].array() + step * dir[k].array();
    };
    for (std::size_t d = 0; d < opt.directions; ++d) {
      for (std::size_t attempt = 0;; ++attempt) {
        std::vector<Tensor<double>> dir;
        double norm2 = 0.0;
        for (const auto& o : original) {
          dir.push_back(Tensor<double>::random(o.shape(), rng));
          norm2 += dir.back().array().square().sum();
        }
        for (auto& v : dir) v.array() /= std::sqrt(norm2);  // unit length, so `step` is the displacement
        std::uint64_t sig_plus = 0, sig_minus = 0;
        place(dir, opt.step);
        const double plus = objective(sig_plus);
        place(dir, -opt.step);
        const double minus = objective(sig_minus);
        for (std::size_t k = 0; k < ts.size(); ++k) *ts[k]->value = original[k];
        if ((sig_plus != base_sig || sig_minus != base_sig) && attempt < opt.max_redraws) {
          ++entry.kink_redraws;
          continue;
        }
        const double numeric = (plus - minus) / (2.0 * opt.step);
        double analytic = 0.0;
        for (std::size_t k = 0; k < ts.size(); ++k) analytic += (analytic_grad[k].array() * dir[k].array()).sum();
        entry.max_rel_error = std::max(entry.max_rel_error, relative_error(analytic, numeric));
        ++entry.checks;
        break;
      }
    }
    report.entries.push_back(entry);
  }
  return report;
}

}  // namespace detail

/// Checks a single layer on random inputs of the given shapes. Stochastic
/// layers are checked with their first drawn mask frozen.
inline GradcheckReport gradcheck_layer(Layer<double>& layer, const std::vector<Shape>& input_shapes, std::uint64_t seed,
                                       const GradcheckOptions& opt = {}) {
  RngStream rng(seed);
  std::vector<Tensor<double>> inputs;
  for (const Shape& s : input_shapes) inputs.push_back(Tensor<double>::random(s, rng));
  std::vector<const Tensor<double>*> ptrs;
  for (auto& t : inputs) ptrs.push_back(&t);
  layer.set_stream(rng.child("layer"));
  layer.freeze_masks(true);
  auto forward = [&] { return layer.forward(Layer<double>::Inputs(ptrs), Mode::train); };
  const Tensor<double> y = forward();
  const Tensor<double> weights = Tensor<double>::random(y.shape(), rng);
  for (Parameter<double>* p : layer.parameters()) p->grad.array().setZero();
  const std::vector<Tensor<double>> input_grads = layer.backward(weights);

  std::vector<detail::GradTarget> targets;
  for (std::size_t i = 0; i < inputs.size(); ++i)
    targets.push_back({"input" + std::to_string(i), &inputs[i], [&, i]() -> const Tensor<double>& { return input_grads[i]; }});
  for (Parameter<double>* p : layer.parameters())
    if (p->trainable) targets.push_back({p->name, &p->value, [p]() -> const Tensor<double>& { return p->grad; }});
  return detail::run_gradcheck(targets, forward, [&] { return layer.branch_signature(); }, weights, rng, opt);
}

/// Checks a whole model at the given batch size; one report entry per node
/// holding trainable parameters plus one for the input.
inline GradcheckReport gradcheck_model(Model<double>& model, std::size_t batch, std::uint64_t seed,
                                       const GradcheckOptions& opt = {}) {
  RngStream rng(seed);
  Shape in = model.input_shape();
  in.n = batch;
  Tensor<double> x = Tensor<double>::random(in, rng);
  model.seed_stochastic(rng.child("stochastic").seed());
  model.freeze_masks(true);
  auto forward = [&] { return model.forward(x, Mode::train); };
  const Tensor<double> y = forward();
  const Tensor<double> weights = Tensor<double>::random(y.shape(), rng);
  model.zero_grad();
  const Tensor<double> input_grad = model.backward(weights);

  std::vector<detail::GradTarget> targets;
  targets.push_back({"input", &x, [&]() -> const Tensor<double>& { return input_grad; }});
  for (auto& [name, p] : model.named_parameters()) {
    if (!p->trainable) continue;
    const std::string node = name.substr(0, name.rfind('.'));
    targets.push_back({node, &p->value, [p]() -> const Tensor<double>& { return p->grad; }});
  }
  GradcheckReport report =
      detail::run_gradcheck(targets, forward, [&] { return model.branch_signature(); }, weights, rng, opt);
  model.freeze_masks(false);
  return report;
}

}  // namespace rotaflip
