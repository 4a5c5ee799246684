#pragma once

#include <functional>
#include <string>
#include <vector>

#include "rotaflip/gradcheck.hpp"
#include "rotaflip/models.hpp"

namespace rotaflip {

struct SuiteResult {
  std::string name;
  GradcheckReport report;
};

/// Every layer type on small random inputs, checked with the given seed.
inline std::vector<SuiteResult> gradcheck_layers(std::uint64_t seed, const GradcheckOptions& opt = {}) {
  using L = std::unique_ptr<Layer<double>>;
  struct Case {
    std::string name;
    std::function<L()> make;
    std::vector<Shape> inputs;
  };
  const std::vector<Case> cases = {
      {"conv3x3_same", [] { return L(new Conv2dLayer<double>(3, 4, 3)); }, {{2, 3, 5, 5}}},
      {"conv3x3_valid", [] { return L(new Conv2dLayer<double>(3, 4, 3, 1, Padding::valid)); }, {{2, 3, 6, 5}}},
      {"conv3x3_stride2", [] { return L(new Conv2dLayer<double>(2, 3, 3, 2)); }, {{2, 2, 7, 7}}},
      {"conv1x1", [] { return L(new Conv2dLayer<double>(4, 3, 1)); }, {{2, 4, 5, 5}}},
      {"batchnorm", [] { return L(new BatchNormLayer<double>(2)); }, {{4, 2, 3, 3}}},
      {"relu", [] { return L(new ReluLayer<double>()); }, {{2, 2, 4, 4}}},
      {"dense", [] { return L(new DenseLayer<double>(4, 2)); }, {{3, 4, 1, 1}}},
      {"maxpool", [] { return L(new PoolLayer<double>(PoolKind::max, 2, 2)); }, {{2, 2, 4, 4}}},
      {"avgpool", [] { return L(new PoolLayer<double>(PoolKind::average, 2, 2)); }, {{2, 2, 4, 4}}},
      {"global_avg_pool", [] { return L(new GlobalAvgPoolLayer<double>()); }, {{2, 3, 4, 4}}},
      {"upsample", [] { return L(new UpsampleLayer<double>(2)); }, {{1, 1, 2, 2}}},
      {"concat", [] { return L(new ConcatLayer<double>()); }, {{1, 3, 4, 4}, {1, 5, 4, 4}}},
      {"dropout", [] { return L(new DropoutLayer<double>(DropoutSpec{0.3})); }, {{2, 3, 4, 4}}},
      {"rotaflip", [] { return L(new RotaflipLayer<double>(RotaflipSpec{0.5})); }, {{2, 3, 4, 4}}},
  };
  std::vector<SuiteResult> out;
  for (const Case& c : cases) {
    L layer = c.make();
    RngStream init = RngStream(seed).child("init", 0).child(c.name);
    layer->initialize(init);
    // non-trivial affine parameters for batch norm
    for (Parameter<double>* p : layer->parameters())
      if (p->trainable && layer->kind() == LayerKind::batchnorm)
        p->value = Tensor<double>::random(p->value.shape(), init, 0.5, 1.5);
    out.push_back({c.name, gradcheck_layer(*layer, c.inputs, RngStream(seed).child(c.name).seed(), opt)});
  }
  return out;
}

/// Small DenseNet with every slot holding dropout and rotaflip.
inline DenseNetConfig gradcheck_densenet_config() {
  DenseNetConfig cfg;
  cfg.growth_rate = 3;
  cfg.block_sizes = {2, 1};
  cfg.stem_channels = 4;
  cfg.height = cfg.width = 8;
  cfg.slot = RegularizerSlot{SlotKind::both, 0.3, 0.2};
  return cfg;
}

/// Small four-level U-net with every slot holding dropout and rotaflip.
inline UnetConfig gradcheck_unet_config() {
  UnetConfig cfg;
  cfg.filters = {3, 4, 4, 5};
  cfg.height = cfg.width = 16;
  cfg.slot = RegularizerSlot{SlotKind::both, 0.3, 0.2};
  cfg.dropout_between_convs = 0.2;
  return cfg;
}

/// Whole-model check at batch 2 with frozen masks. Biases start at zero, which
/// parks every all-zero receptive field exactly on a ReLU kink, so biases and
/// BN shifts are moved off zero first.
inline GradcheckReport gradcheck_model_kind(const std::string& kind, std::uint64_t seed, const GradcheckOptions& opt = {}) {
  Model<double> m = kind == "densenet" ? build_densenet<double>(gradcheck_densenet_config())
                                       : build_unet<double>(gradcheck_unet_config());
  m.initialize(seed);
  RngStream shift = RngStream(seed).child("gradcheck_shift");
  for (auto& [name, p] : m.named_parameters())
    if (p->trainable && p->value.shape().n == 1 && p->value.shape().h == 1 && p->value.shape().w == 1 &&
        p->value.array().isConstant(0.0))
      p->value = Tensor<double>::random(p->value.shape(), shift, -0.2, 0.2);
  return gradcheck_model(m, 2, seed, opt);
}

}  // namespace rotaflip
