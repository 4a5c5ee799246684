#pragma once

#include <string>
#include <vector>

#include "rotaflip/model.hpp"

namespace rotaflip {

enum class SlotKind { none, rotaflip, dropout, both };

inline const char* slot_kind_name(SlotKind k) {
  switch (k) {
    case SlotKind::none: return "none";
    case SlotKind::rotaflip: return "rotaflip";
    case SlotKind::dropout: return "dropout";
    case SlotKind::both: return "both";
  }
  return "?";
}

inline SlotKind parse_slot_kind(const std::string& s) {
  if (s == "none") return SlotKind::none;
  if (s == "rotaflip") return SlotKind::rotaflip;
  if (s == "dropout") return SlotKind::dropout;
  if (s == "both") return SlotKind::both;
  throw ConfigError("regularizer.kind: unknown value '" + s + "' (none|rotaflip|dropout|both)");
}

/// Regularizer placed at the end of every convolutional, transition and
/// resolution block. Kind `both` applies dropout, then rotaflip.
struct RegularizerSlot {
  SlotKind kind = SlotKind::none;
  double rotaflip_rate = 0.0;
  double dropout_rate = 0.0;
  bool include_identity = true;
  bool shared_per_channel = false;

  bool has_rotaflip() const { return kind == SlotKind::rotaflip || kind == SlotKind::both; }
  bool has_dropout() const { return kind == SlotKind::dropout || kind == SlotKind::both; }

  void collect_violations(std::vector<std::string>& out) const {
    if (!(rotaflip_rate >= 0.0 && rotaflip_rate < 1.0))
      out.push_back("regularizer.rotaflip_rate must be in [0,1), got " + std::to_string(rotaflip_rate));
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0))
      out.push_back("regularizer.dropout_rate must be in [0,1), got " + std::to_string(dropout_rate));
  }
};

enum class StemKind { conv3, conv7_stride2 };

struct NormSettings {
  double momentum = 0.99;
  double epsilon = 1e-5;
};

struct DenseNetConfig {
  std::size_t growth_rate = 8;
  std::vector<std::size_t> block_sizes = {2, 2, 2};
  std::size_t stem_channels = 16;
  StemKind stem = StemKind::conv3;
  std::size_t channels = 1, height = 32, width = 32;
  std::size_t classes = 2;
  RegularizerSlot slot;
  NormSettings norm;

  /// Number of 2× downsamplings between input and head.
  std::size_t pooling_depth() const {
    return (block_sizes.empty() ? 0 : block_sizes.size() - 1) + (stem == StemKind::conv7_stride2 ? 2 : 0);
  }

  std::vector<std::string> violations() const {
    std::vector<std::string> v;
    if (growth_rate == 0) v.push_back("model.densenet.growth_rate must be positive");
    if (block_sizes.empty()) v.push_back("model.densenet.block_sizes must be non-empty");
    for (auto b : block_sizes)
      if (b == 0) v.push_back("model.densenet.block_sizes entries must be positive");
    if (stem_channels == 0) v.push_back("model.densenet.stem_channels must be positive");
    if (channels == 0 || height == 0 || width == 0) v.push_back("model input dimensions must be positive");
    if (classes < 2) v.push_back("model.classes must be >= 2");
    if (slot.has_rotaflip() && height != width) v.push_back("rotaflip requires square inputs (height == width)");
    const std::size_t min_size = std::size_t{1} << pooling_depth();
    if (height < min_size || width < min_size)
      v.push_back("input " + std::to_string(height) + "x" + std::to_string(width) + " smaller than the " +
                  std::to_string(min_size) + " px implied by pooling depth");
    slot.collect_violations(v);
    return v;
  }
};

struct UnetConfig {
  std::vector<std::size_t> filters = {8, 16, 24, 32};
  std::size_t channels = 1, height = 64, width = 64;
  std::size_t classes = 2;
  RegularizerSlot slot;
  double dropout_between_convs = 0.0;
  NormSettings norm;

  std::vector<std::string> violations() const {
    std::vector<std::string> v;
    if (filters.empty()) v.push_back("model.unet.filters must be non-empty");
    for (auto f : filters)
      if (f == 0) v.push_back("model.unet.filters entries must be positive");
    if (channels == 0 || height == 0 || width == 0) v.push_back("model input dimensions must be positive");
    if (classes < 2) v.push_back("model.classes must be >= 2");
    if (!filters.empty()) {
      const std::size_t div = std::size_t{1} << (filters.size() - 1);
      if (height % div || width % div)
        v.push_back("input " + std::to_string(height) + "x" + std::to_string(width) + " must be divisible by " +
                    std::to_string(div));
    }
    if (slot.has_rotaflip() && height != width) v.push_back("rotaflip requires square inputs (height == width)");
    if (!(dropout_between_convs >= 0.0 && dropout_between_convs < 1.0))
      v.push_back("model.unet.dropout_between_convs must be in [0,1)");
    slot.collect_violations(v);
    return v;
  }
};

namespace detail {

inline void throw_violations(const std::vector<std::string>& v) {
  if (v.empty()) return;
  std::string msg = "invalid model config:";
  for (const auto& s : v) msg += "\n  - " + s;
  throw ConfigError(msg);
}

template <class S>
std::size_t add_slot(Model<S>& m, const std::string& prefix, const std::string& block, const RegularizerSlot& slot,
                     std::size_t x) {
  if (slot.has_dropout())
    x = m.add(prefix + ".drop", block, std::make_unique<DropoutLayer<S>>(DropoutSpec{slot.dropout_rate}), {x});
  if (slot.has_rotaflip())
    x = m.add(prefix + ".rfl", block,
              std::make_unique<RotaflipLayer<S>>(
                  RotaflipSpec{slot.rotaflip_rate, slot.include_identity, slot.shared_per_channel}),
              {x});
  return x;
}

template <class S>
std::size_t add_bn_relu(Model<S>& m, const std::string& prefix, const std::string& block, std::size_t channels,
                        const NormSettings& norm, std::size_t x) {
  x = m.add(prefix + ".bn", block, std::make_unique<BatchNormLayer<S>>(channels, norm.momentum, norm.epsilon), {x});
  return m.add(prefix + ".relu", block, std::make_unique<ReluLayer<S>>(), {x});
}

}  // namespace detail

/// Miniature DenseNet classifier: stem, dense blocks of
/// [BN-ReLU-conv1×1(4k)-BN-ReLU-conv3×3(k)-slot] concatenated onto their input,
/// transition blocks [BN-ReLU-conv1×1(half)-avgpool2×2-slot], then
/// BN-ReLU-global average pool-dense.
template <class S>
Model<S> build_densenet(const DenseNetConfig& cfg) {
  detail::throw_violations(cfg.violations());
  Model<S> m(Shape{1, cfg.channels, cfg.height, cfg.width});
  const std::size_t k = cfg.growth_rate;
  std::size_t x = Model<S>::kInput;
  std::size_t ch = cfg.stem_channels;
  if (cfg.stem == StemKind::conv3) {
    x = m.add("stem.conv", "stem", std::make_unique<Conv2dLayer<S>>(cfg.channels, ch, 3), {x});
  } else {
    x = m.add("stem.conv", "stem", std::make_unique<Conv2dLayer<S>>(cfg.channels, ch, 7, 2), {x});
    x = detail::add_bn_relu(m, "stem", "stem", ch, cfg.norm, x);
    x = m.add("stem.pool", "stem", std::make_unique<PoolLayer<S>>(PoolKind::max, 2, 2), {x});
  }
  for (std::size_t b = 0; b < cfg.block_sizes.size(); ++b) {
    for (std::size_t j = 0; j < cfg.block_sizes[b]; ++j) {
      const std::string p = "db" + std::to_string(b) + ".cb" + std::to_string(j);
      std::size_t y = detail::add_bn_relu(m, p + ".a", p, ch, cfg.norm, x);
      y = m.add(p + ".conv1", p, std::make_unique<Conv2dLayer<S>>(ch, 4 * k, 1), {y});
      y = detail::add_bn_relu(m, p + ".b", p, 4 * k, cfg.norm, y);
      y = m.add(p + ".conv3", p, std::make_unique<Conv2dLayer<S>>(4 * k, k, 3), {y});
      y = detail::add_slot(m, p, p, cfg.slot, y);
      x = m.add(p + ".concat", p, std::make_unique<ConcatLayer<S>>(), {x, y});
      ch += k;
    }
    if (b + 1 < cfg.block_sizes.size()) {
      const std::string p = "tr" + std::to_string(b);
      const std::size_t out = ch / 2;
      x = detail::add_bn_relu(m, p, p, ch, cfg.norm, x);
      x = m.add(p + ".conv", p, std::make_unique<Conv2dLayer<S>>(ch, out, 1), {x});
      x = m.add(p + ".pool", p, std::make_unique<PoolLayer<S>>(PoolKind::average, 2, 2), {x});
      x = detail::add_slot(m, p, p, cfg.slot, x);
      ch = out;
    }
  }
  x = detail::add_bn_relu(m, "head", "head", ch, cfg.norm, x);
  x = m.add("head.gap", "head", std::make_unique<GlobalAvgPoolLayer<S>>(), {x});
  m.add("head.dense", "head", std::make_unique<DenseLayer<S>>(ch, cfg.classes), {x});
  return m;
}

/// Miniature U-net: encoder resolution blocks
/// [conv3×3-BN-ReLU-(dropout)-conv3×3-BN-ReLU-slot] with 2×2 max pooling
/// between them; decoder blocks upsample, conv3×3-ReLU, concatenate the
/// matching encoder output, then repeat the encoder block body; 1×1 conv head.
template <class S>
Model<S> build_unet(const UnetConfig& cfg) {
  detail::throw_violations(cfg.violations());
  Model<S> m(Shape{1, cfg.channels, cfg.height, cfg.width});
  const std::size_t levels = cfg.filters.size();

  auto resolution_block = [&](const std::string& p, std::size_t in_ch, std::size_t f, std::size_t x) {
    x = m.add(p + ".conv_a", p, std::make_unique<Conv2dLayer<S>>(in_ch, f, 3), {x});
    x = detail::add_bn_relu(m, p + ".a", p, f, cfg.norm, x);
    if (cfg.dropout_between_convs > 0.0)
      x = m.add(p + ".mid_drop", p, std::make_unique<DropoutLayer<S>>(DropoutSpec{cfg.dropout_between_convs}), {x});
    x = m.add(p + ".conv_b", p, std::make_unique<Conv2dLayer<S>>(f, f, 3), {x});
    x = detail::add_bn_relu(m, p + ".b", p, f, cfg.norm, x);
    return detail::add_slot(m, p, p, cfg.slot, x);
  };

  std::vector<std::size_t> skips;
  std::size_t x = Model<S>::kInput;
  std::size_t in_ch = cfg.channels;
  for (std::size_t l = 0; l < levels; ++l) {
    const std::string p = "enc" + std::to_string(l);
    x = resolution_block(p, in_ch, cfg.filters[l], x);
    skips.push_back(x);
    in_ch = cfg.filters[l];
    if (l + 1 < levels) x = m.add(p + ".pool", p + ".down", std::make_unique<PoolLayer<S>>(PoolKind::max, 2, 2), {x});
  }
  for (std::size_t l = levels - 1; l-- > 0;) {
    const std::string p = "dec" + std::to_string(l);
    const std::size_t f = cfg.filters[l];
    x = m.add(p + ".up", p + ".up", std::make_unique<UpsampleLayer<S>>(2), {x});
    x = m.add(p + ".up_conv", p + ".up", std::make_unique<Conv2dLayer<S>>(in_ch, f, 3), {x});
    x = m.add(p + ".up_relu", p + ".up", std::make_unique<ReluLayer<S>>(), {x});
    x = m.add(p + ".concat", p, std::make_unique<ConcatLayer<S>>(), {skips[l], x});
    x = resolution_block(p, 2 * f, f, x);
    in_ch = f;
  }
  m.add("head.conv", "head", std::make_unique<Conv2dLayer<S>>(in_ch, cfg.classes, 1), {x});
  return m;
}

/// Argmax over the channel axis of (N,K,1,1) logits; lowest index wins ties.
template <class S>
std::vector<int> argmax_classes(const Tensor<S>& logits) {
  const Shape& s = logits.shape();
  std::vector<int> out(s.n);
  const std::size_t per = s.c * s.h * s.w;
  for (std::size_t n = 0; n < s.n; ++n) {
    const S* p = logits.data() + n * per;
    std::size_t best = 0;
    for (std::size_t k = 1; k < per; ++k)
      if (p[k] > p[best]) best = k;
    out[n] = static_cast<int>(best);
  }
  return out;
}

/// Per-pixel argmax over channels of (N,K,H,W) logits; lowest index wins ties.
template <class S>
std::vector<LabelMap> argmax_pixels(const Tensor<S>& logits) {
  const Shape& s = logits.shape();
  std::vector<LabelMap> out(s.n, LabelMap::Zero(static_cast<Eigen::Index>(s.h), static_cast<Eigen::Index>(s.w)));
  const std::size_t plane = s.plane();
  for (std::size_t n = 0; n < s.n; ++n) {
    std::int32_t* dst = out[n].data();
    for (std::size_t i = 0; i < plane; ++i) {
      S best = logits.plane(n, 0)[i];
      for (std::size_t c = 1; c < s.c; ++c) {
        const S v = logits.plane(n, c)[i];
        if (v > best) {
          best = v;
          dst[i] = static_cast<std::int32_t>(c);
        }
      }
    }
  }
  return out;
}

/// Class predictions for a batch of images, infer mode.
template <class S>
std::vector<int> predict_class(Model<S>& model, const Tensor<S>& images) {
  return argmax_classes(model.forward(images, Mode::infer));
}

/// Label-map predictions for a batch of images, infer mode.
template <class S>
std::vector<LabelMap> predict_pixels(Model<S>& model, const Tensor<S>& images) {
  return argmax_pixels(model.forward(images, Mode::infer));
}

}  // namespace rotaflip
