#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "rotaflip/data.hpp"
#include "rotaflip/losses.hpp"
#include "rotaflip/metrics.hpp"
#include "rotaflip/models.hpp"
#include "rotaflip/optim.hpp"

namespace rotaflip {

struct TrainSettings {
  std::uint64_t seed = 1;
  Schedule schedule;
  NadamSettings optimizer;
  std::size_t batch_size = 32;
  bool balanced = true;
  AugmentPolicy augment;
  EvalProtocol eval_protocol = EvalProtocol::orbit8;
  std::size_t eval_batch = 64;
};

/// Stacks `set[indices]` into a (N,C,H,W) batch, each sample transformed by
/// its code.
template <class S>
Tensor<S> stack_batch(const Dataset& set, std::span<const std::size_t> indices, std::span<const D4Code> codes) {
  Shape s = set.at(indices.front()).pixels.shape();
  s.n = indices.size();
  Tensor<S> out(s);
  const std::size_t per = s.c * s.plane();
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const Tensor<double>& px = set[indices[b]].pixels;
    if (px.shape().c != s.c || px.shape().h != s.h || px.shape().w != s.w)
      throw ShapeError("batch: sample " + set[indices[b]].id + " has shape " + px.shape().str());
    for (std::size_t c = 0; c < s.c; ++c) {
      const double* src = px.plane(0, c);
      S* dst = out.data() + b * per + c * s.plane();
      if (codes[b] == D4Code::identity) {
        for (std::size_t i = 0; i < s.plane(); ++i) dst[i] = static_cast<S>(src[i]);
      } else {
        for (std::size_t i = 0; i < s.h; ++i)
          for (std::size_t j = 0; j < s.w; ++j) {
            const auto [si, sj] = d4_source(codes[b], i, j, s.h, s.w);
            dst[i * s.w + j] = static_cast<S>(src[si * s.w + sj]);
          }
      }
    }
  }
  return out;
}

/// Optimizes a model on a dataset. Classification when samples carry class
/// labels, per-pixel segmentation when they carry label maps.
///
/// Streams: batching draws from child("batching", epoch) and augmentation
/// from child("augment", epoch) of the root seed; the model's own init and
/// stochastic streams are seeded by the caller.
template <class S>
class Trainer {
 public:
  using EpochCallback = std::function<void(const TrainRecord&)>;

  Trainer(Model<S>& model, TrainSettings settings) : model_(model), settings_(std::move(settings)) {
    params_ = model_.named_parameters();
    state_.settings = settings_.optimizer;
  }

  /// Called after every epoch, once the record is complete.
  EpochCallback on_epoch;

  const OptimizerState<S>& optimizer_state() const { return state_; }

  /// Runs schedule.epochs epochs, evaluating on `eval_set` after each.
  /// A non-finite loss raises DivergenceError; records already passed to
  /// on_epoch stay with the caller.
  std::vector<TrainRecord> fit(const Dataset& train_set, const Dataset& eval_set) {
    if (train_set.empty()) throw ConfigError("training set is empty");
    if (eval_set.empty()) throw ConfigError("evaluation set is empty");
    const bool seg = train_set.front().is_segmentation();
    const RngStream root(settings_.seed);
    std::vector<TrainRecord> records;
    for (std::size_t epoch = 0; epoch < settings_.schedule.epochs; ++epoch) {
      const double lr = lr_at(settings_.schedule, epoch);
      RngStream batch_stream = root.child("batching", epoch);
      RngStream aug_stream = root.child("augment", epoch);
      const std::vector<Batch> batches = (!seg && settings_.balanced)
                                             ? balanced_batches(train_set, settings_.batch_size, batch_stream)
                                             : shuffled_batches(train_set.size(), settings_.batch_size, batch_stream);
      double loss_sum = 0.0;
      std::size_t samples = 0, correct = 0, scored = 0;
      for (std::size_t bi = 0; bi < batches.size(); ++bi) {
        const Batch& batch = batches[bi];
        std::vector<D4Code> codes(batch.size());
        for (std::size_t k = 0; k < batch.size(); ++k) {
          const LabeledImage& im = train_set[batch[k]];
          for (D4Code t : settings_.augment.codes()) check_d4_shape(t, im.height(), im.width());
          codes[k] = draw_augment_code(settings_.augment, aug_stream);
        }
        const Tensor<S> x = stack_batch<S>(train_set, batch, codes);
        model_.zero_grad();
        const Tensor<S> logits = model_.forward(x, Mode::train);
        LossResult<S> loss;
        if (seg) {
          std::vector<LabelMap> maps;
          maps.reserve(batch.size());
          for (std::size_t k = 0; k < batch.size(); ++k) maps.push_back(apply(train_set[batch[k]].label_map, codes[k]));
          loss = pixel_cross_entropy(logits, std::span<const LabelMap>(maps));
          const std::vector<LabelMap> pred = argmax_pixels(logits);
          for (std::size_t k = 0; k < maps.size(); ++k) {
            correct += static_cast<std::size_t>((pred[k].array() == maps[k].array()).count());
            scored += static_cast<std::size_t>(maps[k].size());
          }
        } else {
          std::vector<int> labels(batch.size());
          for (std::size_t k = 0; k < batch.size(); ++k) labels[k] = train_set[batch[k]].label;
          loss = cross_entropy(logits, std::span<const int>(labels));
          const std::vector<int> pred = argmax_classes(logits);
          for (std::size_t k = 0; k < labels.size(); ++k) correct += pred[k] == labels[k];
          scored += labels.size();
        }
        if (!std::isfinite(loss.loss))
          throw DivergenceError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " + std::to_string(bi));
        model_.backward(loss.grad);
        nadam_step(params_, state_, lr);
        loss_sum += loss.loss * static_cast<double>(batch.size());
        samples += batch.size();
      }
      TrainRecord r;
      r.epoch = epoch;
      r.lr = lr;
      r.loss = loss_sum / static_cast<double>(samples);
      r.train_accuracy = 100.0 * static_cast<double>(correct) / static_cast<double>(scored);
      const EvalReport ev = evaluate(eval_set, settings_.eval_protocol);
      r.eval_accuracy = ev.accuracy;
      r.agreement = ev.agreement;
      records.push_back(r);
      if (on_epoch) on_epoch(r);
    }
    return records;
  }

  /// Infer-mode evaluation of the current parameters.
  EvalReport evaluate(const Dataset& set, EvalProtocol protocol, std::vector<OrbitPrediction>* orbits = nullptr) {
    if (set.front().is_segmentation()) {
      return evaluate_pixels(
          [&](const Tensor<double>& x) { return argmax_pixels(model_.forward(x.template cast<S>(), Mode::infer)); }, set,
          protocol, settings_.eval_batch);
    }
    OrbitEvaluation ev = evaluate_classes(
        [&](const Tensor<double>& x) { return argmax_classes(model_.forward(x.template cast<S>(), Mode::infer)); }, set,
        protocol, settings_.eval_batch);
    if (orbits) *orbits = std::move(ev.orbits);
    return ev.report;
  }

 private:
  Model<S>& model_;
  TrainSettings settings_;
  NamedParameters<S> params_;
  OptimizerState<S> state_;
};

}  // namespace rotaflip
