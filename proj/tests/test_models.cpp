#include <cmath>

#include "doctest.h"
#include "placement.hpp"
#include "rotaflip/models.hpp"

using namespace rotaflip;
using rotaflip::testing::matches;

namespace {

RegularizerSlot slot_of(SlotKind kind, double rate = 0.1) {
  RegularizerSlot s;
  s.kind = kind;
  s.rotaflip_rate = rate;
  s.dropout_rate = rate;
  return s;
}

template <class S>
Tensor<S> random_input(const Model<S>& m, std::size_t n, std::uint64_t seed) {
  Shape s = m.input_shape();
  s.n = n;
  RngStream rng(seed);
  return Tensor<double>::random(s, rng, 0.0, 1.0).template cast<S>();
}

}  // namespace

TEST_CASE("densenet: trainable parameter count for the default configuration") {
  // stem 9·16+16 = 160. A conv block on c channels with k=8 holds
  // 2c (BN) + 32c+32 (1×1) + 64 (BN) + 9·32·8+8 (3×3) = 34c + 2408.
  // Block 0 sees c = 16, 24; blocks 1 and 2 see c = 16, 24 after each
  // transition halves 32 channels: 2c + c·c/2 + c/2 = 592 for c = 32.
  // Head: BN 64 + dense 32·2+2 = 130.
  const std::size_t conv_blocks = 3 * ((34 * 16 + 2408) + (34 * 24 + 2408));
  const std::size_t expected = 160 + conv_blocks + 2 * 592 + 130;
  CHECK(expected == 20002);
  Model<float> m = build_densenet<float>(DenseNetConfig{});
  CHECK(m.parameter_count() == expected);
  // Running mean and variance: BN widths are 3·((16+32)+(24+32)) in the
  // dense blocks, 2·32 in transitions, 32 in the head.
  CHECK(m.parameter_count(false) == expected + 2 * (3 * 104 + 64 + 32));
}

TEST_CASE("densenet: regularizer placement for every slot kind") {
  for (SlotKind kind : {SlotKind::none, SlotKind::dropout, SlotKind::rotaflip, SlotKind::both}) {
    DenseNetConfig cfg;
    cfg.slot = slot_of(kind);
    Model<float> m = build_densenet<float>(cfg);
    std::string why;
    CHECK_MESSAGE(matches(m, rotaflip::testing::expected_densenet(cfg), &why), why);
    const std::size_t slots = 6 + 2;  // conv blocks + transitions
    CHECK(m.count(LayerKind::rotaflip) == (cfg.slot.has_rotaflip() ? slots : 0));
    CHECK(m.count(LayerKind::dropout) == (cfg.slot.has_dropout() ? slots : 0));
  }
  DenseNetConfig stride_stem;
  stride_stem.stem = StemKind::conv7_stride2;
  stride_stem.slot = slot_of(SlotKind::rotaflip);
  stride_stem.height = stride_stem.width = 64;
  std::string why;
  CHECK_MESSAGE(matches(build_densenet<float>(stride_stem), rotaflip::testing::expected_densenet(stride_stem), &why),
                why);
}

TEST_CASE("unet: regularizer placement, with and without the inner dropout") {
  for (double mid : {0.0, 0.2})
    for (SlotKind kind : {SlotKind::none, SlotKind::rotaflip, SlotKind::both}) {
      UnetConfig cfg;
      cfg.slot = slot_of(kind);
      cfg.dropout_between_convs = mid;
      Model<float> m = build_unet<float>(cfg);
      std::string why;
      CHECK_MESSAGE(matches(m, rotaflip::testing::expected_unet(cfg), &why), why);
      CHECK(m.count(LayerKind::rotaflip) == (cfg.slot.has_rotaflip() ? 7u : 0u));
    }
}

TEST_CASE("densenet: channels entering the first transition and the output shape") {
  DenseNetConfig cfg;
  cfg.block_sizes = {1, 1};
  Model<float> m = build_densenet<float>(cfg);
  const Tensor<float> x = random_input(m, 3, 1);
  const Tensor<float> y = m.forward(x, Mode::infer);
  CHECK(y.shape() == Shape{3, 2, 1, 1});
  CHECK(m.node_output(m.find("db0.cb0.concat")).shape().c == 16 + 8);
  CHECK(m.node_output(m.find("tr0.pool")).shape() == Shape{3, 12, 16, 16});

  cfg.classes = 5;
  cfg.height = cfg.width = 8;
  Model<float> small = build_densenet<float>(cfg);
  CHECK(small.forward(random_input(small, 2, 2), Mode::infer).shape() == Shape{2, 5, 1, 1});
}

TEST_CASE("densenet: size validation") {
  DenseNetConfig cfg;
  cfg.height = cfg.width = 3;
  cfg.block_sizes = {1, 1, 1};
  CHECK_THROWS_AS(build_densenet<float>(cfg), ConfigError);
  cfg.block_sizes = {};
  CHECK_THROWS_AS(build_densenet<float>(cfg), ConfigError);
}

TEST_CASE("unet: deepest resolution and skip concatenation widths") {
  UnetConfig cfg;
  cfg.filters = {32, 64, 96, 128};
  cfg.height = cfg.width = 240;
  Model<float> m = build_unet<float>(cfg);
  const Tensor<float> y = m.forward(random_input(m, 1, 3), Mode::infer);
  CHECK(y.shape() == Shape{1, 2, 240, 240});
  CHECK(m.node_output(m.find("enc3.b.relu")).shape() == Shape{1, 128, 30, 30});
  for (std::size_t l = 0; l < 3; ++l) {
    const Shape s = m.node_output(m.find("dec" + std::to_string(l) + ".concat")).shape();
    CHECK(s.c == 2 * cfg.filters[l]);
    CHECK(s.h == 240 >> l);
  }
  UnetConfig odd;
  odd.height = odd.width = 60;
  CHECK_THROWS_AS(build_unet<float>(odd), ConfigError);
}

TEST_CASE("rotaflip at rate 0 is indistinguishable from no regularizer") {
  DenseNetConfig plain;
  plain.height = plain.width = 16;
  DenseNetConfig zero = plain;
  zero.slot = slot_of(SlotKind::rotaflip, 0.0);
  Model<double> a = build_densenet<double>(plain), b = build_densenet<double>(zero);
  for (Model<double>* m : {&a, &b}) {
    m->initialize(4);
    m->seed_stochastic(4);
  }
  const Tensor<double> x = random_input(a, 4, 5);
  const Tensor<double> ya = a.forward(x, Mode::train), yb = b.forward(x, Mode::train);
  CHECK((ya.array() == yb.array()).all());
}

TEST_CASE("train and infer agree when every rate is 0 and statistics are frozen") {
  UnetConfig cfg;
  cfg.height = cfg.width = 16;
  cfg.slot = slot_of(SlotKind::both, 0.0);
  Model<double> m = build_unet<double>(cfg);
  m.initialize(6);
  m.seed_stochastic(6);
  m.freeze_statistics(true);
  const Tensor<double> x = random_input(m, 2, 7);
  const Tensor<double> train = m.forward(x, Mode::train);
  const Tensor<double> infer = m.forward(x, Mode::infer);
  CHECK((train.array() - infer.array()).abs().maxCoeff() < 1e-12);
}

TEST_CASE("argmax: ties go to the lowest class") {
  const Tensor<float> tie(Shape{1, 2, 1, 1}, {0.5f, 0.5f});
  CHECK(argmax_classes(tie) == std::vector<int>{0});
  const Tensor<float> two(Shape{2, 2, 1, 1}, {0.2f, 0.8f, 0.9f, -1.0f});
  CHECK(argmax_classes(two) == std::vector<int>{1, 0});
  const Tensor<float> pix(Shape{1, 2, 1, 2}, {0.0f, 0.3f, 0.0f, 0.1f});
  const auto maps = argmax_pixels(pix);
  CHECK(maps[0](0, 0) == 0);
  CHECK(maps[0](0, 1) == 0);
}

TEST_CASE("constant kernels make the classifier invariant on the orbit") {
  DenseNetConfig cfg;
  cfg.height = cfg.width = 16;
  Model<double> m = build_densenet<double>(cfg);
  m.initialize(8);
  for (auto& [name, p] : m.named_parameters()) {
    if (p->name != "weights") continue;
    const Shape s = p->value.shape();
    for (std::size_t o = 0; o < s.n; ++o)
      for (std::size_t i = 0; i < s.c; ++i) {
        double mean = 0.0;
        for (std::size_t k = 0; k < s.plane(); ++k) mean += p->value.plane(o, i)[k];
        mean /= static_cast<double>(s.plane());
        for (std::size_t k = 0; k < s.plane(); ++k) p->value.plane(o, i)[k] = mean;
      }
  }
  const Tensor<double> x = random_input(m, 6, 9);
  const Tensor<double> ref = m.forward(x, Mode::infer);
  const std::vector<int> ref_classes = argmax_classes(ref);
  for (D4Code t : kAllD4) {
    const Tensor<double> y = m.forward(apply(x, t), Mode::infer);
    CHECK((y.array() - ref.array()).abs().maxCoeff() < 1e-12);
    CHECK(argmax_classes(y) == ref_classes);
  }
}

TEST_CASE("model: listing names every node with its block") {
  DenseNetConfig cfg;
  cfg.block_sizes = {1};
  cfg.slot = slot_of(SlotKind::rotaflip);
  const std::string text = build_densenet<float>(cfg).listing();
  CHECK(text.find("db0.cb0.rfl db0.cb0 rotaflip") != std::string::npos);
  CHECK(text.find("head.dense head dense") != std::string::npos);
}
