#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>

#include "doctest.h"
#include "rotaflip/gradcheck_suite.hpp"

using namespace rotaflip;

namespace {

Tensor<double> iota(Shape s, double start = 1.0) {
  Tensor<double> t(s);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = start + static_cast<double>(i);
  return t;
}

bool bit_equal(const Tensor<double>& a, const Tensor<double>& b) {
  if (a.shape() != b.shape()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (std::memcmp(a.data() + i, b.data() + i, sizeof(double)) != 0) return false;
  return true;
}

// Conv whose input gradient has the wrong sign.
class SignFlippedConv : public Conv2dLayer<double> {
 public:
  using Conv2dLayer<double>::Conv2dLayer;

 protected:
  std::vector<Tensor<double>> do_backward(const Tensor<double>& grad) override {
    auto out = Conv2dLayer<double>::do_backward(grad);
    out[0].array() = -out[0].array();
    return out;
  }
};

}  // namespace

TEST_CASE("rotaflip: rate 0 is identity, infer is identity at every rate") {
  RngStream rng(5);
  const Tensor<double> x = Tensor<double>::random(Shape{4, 3, 5, 5}, rng);
  RngStream s(1);
  auto [y0, m0] = rotaflip_forward(x, RotaflipSpec{0.0}, Mode::train, s);
  CHECK(bit_equal(x, y0));
  CHECK(m0.selected_count() == 0);
  for (double rate : {0.0, 0.1, 0.5, 1.0}) {
    auto [y, m] = rotaflip_forward(x, RotaflipSpec{rate}, Mode::infer, s);
    CHECK(bit_equal(x, y));
    CHECK(m.empty());
  }
}

TEST_CASE("rotaflip: constant slices are fixed points at rate 1") {
  Tensor<double> x(Shape{3, 4, 6, 6});
  for (std::size_t n = 0; n < 3; ++n)
    for (std::size_t c = 0; c < 4; ++c)
      for (std::size_t i = 0; i < 36; ++i) x.plane(n, c)[i] = static_cast<double>(n * 4 + c);
  RngStream s(2);
  auto [y, m] = rotaflip_forward(x, RotaflipSpec{1.0}, Mode::train, s);
  CHECK(m.selected_count() == 12);
  CHECK(bit_equal(x, y));
}

TEST_CASE("rotaflip: selection count and code frequencies at rate 0.1") {
  const Tensor<double> x(Shape{100, 100, 8, 8});
  RngStream s(11);
  auto [y, m] = rotaflip_forward(x, RotaflipSpec{0.1}, Mode::train, s);
  const double sel = static_cast<double>(m.selected_count());
  CHECK(std::abs(sel - 1000.0) <= 90.0);
  std::array<double, 8> counts{};
  for (std::size_t n = 0; n < 100; ++n)
    for (std::size_t c = 0; c < 100; ++c)
      if (m.selected(n, c)) counts[static_cast<std::size_t>(m.code(n, c))] += 1.0;
  const double expect = sel / 8.0, sigma = std::sqrt(sel * (1.0 / 8.0) * (7.0 / 8.0));
  for (double k : counts) CHECK(std::abs(k - expect) <= 3.0 * sigma);
}

TEST_CASE("rotaflip: slices are permuted, the map is linear, and backward inverts") {
  RngStream rng(3);
  const Tensor<double> x = Tensor<double>::random(Shape{3, 4, 4, 4}, rng);
  const Tensor<double> z = Tensor<double>::random(Shape{3, 4, 4, 4}, rng);
  RngStream s(8);
  const TransformMask mask = draw_transform_mask(3, 4, RotaflipSpec{0.7}, s);
  const Tensor<double> y = rotaflip_apply(x, mask);
  for (std::size_t n = 0; n < 3; ++n)
    for (std::size_t c = 0; c < 4; ++c) {
      std::vector<double> a(x.plane(n, c), x.plane(n, c) + 16), b(y.plane(n, c), y.plane(n, c) + 16);
      std::sort(a.begin(), a.end());
      std::sort(b.begin(), b.end());
      CHECK(a == b);
    }
  Tensor<double> combo(x.shape());
  combo.array() = 2.0 * x.array() - 3.0 * z.array();
  const Tensor<double> lhs = rotaflip_apply(combo, mask);
  Tensor<double> rhs(x.shape());
  rhs.array() = 2.0 * y.array() - 3.0 * rotaflip_apply(z, mask).array();
  CHECK(bit_equal(lhs, rhs));
  CHECK(bit_equal(rotaflip_backward(y, mask), x));
}

TEST_CASE("rotaflip: backward of a rot90 slice is rot270 of the gradient") {
  const Tensor<double> g = iota(Shape{1, 1, 3, 3});
  TransformMask mask(1, 1);
  mask.select(0, 0, D4Code::rot90);
  const Tensor<double> back = rotaflip_backward(g, mask);
  Tensor<double> expect(g.shape());
  apply_into(g.plane(0, 0), expect.plane(0, 0), 3, 3, D4Code::rot270);
  CHECK(bit_equal(back, expect));
  CHECK(bit_equal(rotaflip_backward(g, TransformMask{}), g));
}

TEST_CASE("rotaflip: errors") {
  RngStream s(1);
  CHECK_THROWS_AS(rotaflip_forward(Tensor<double>(Shape{1, 1, 3, 4}), RotaflipSpec{0.1}, Mode::train, s), ShapeError);
  CHECK_THROWS_AS(RotaflipLayer<double>(RotaflipSpec{1.5}), ConfigError);
  CHECK_THROWS_AS(RotaflipLayer<double>(RotaflipSpec{-0.1}), ConfigError);
  CHECK_THROWS_AS(rotaflip_backward(Tensor<double>(Shape{2, 2, 3, 3}), TransformMask(2, 3)), ShapeError);
}

TEST_CASE("rotaflip: identity-free sampling and per-channel sharing") {
  RngStream s(4);
  const TransformMask m = draw_transform_mask(50, 20, RotaflipSpec{1.0, false, false}, s);
  for (std::size_t n = 0; n < 50; ++n)
    for (std::size_t c = 0; c < 20; ++c) CHECK(m.code(n, c) != D4Code::identity);
  const TransformMask shared = draw_transform_mask(6, 40, RotaflipSpec{0.5, true, true}, s);
  for (std::size_t c = 0; c < 40; ++c)
    for (std::size_t n = 1; n < 6; ++n) {
      REQUIRE(shared.selected(n, c) == shared.selected(0, c));
      if (shared.selected(0, c)) CHECK(shared.code(n, c) == shared.code(0, c));
    }
}

TEST_CASE("dropout: identities and the scaled-Bernoulli mean") {
  RngStream rng(6);
  const Tensor<double> x = Tensor<double>::random(Shape{1, 1, 100, 100}, rng, 0.0, 2.0);
  RngStream s(9);
  CHECK(bit_equal(dropout_forward(x, DropoutSpec{0.0}, Mode::train, s).first, x));
  for (double rate : {0.0, 0.3, 0.9}) CHECK(bit_equal(dropout_forward(x, DropoutSpec{rate}, Mode::infer, s).first, x));

  const double p = 0.3;
  const Tensor<double> y = dropout_forward(x, DropoutSpec{p}, Mode::train, s).first;
  const double n = static_cast<double>(x.size());
  // Var(mean y) = sum x_i^2 * p/(1-p) / n^2
  const double sigma = std::sqrt(x.array().square().sum() * p / (1.0 - p)) / n;
  CHECK(std::abs(y.array().mean() - x.array().mean()) <= 3.0 * sigma);
  CHECK_THROWS_AS(DropoutLayer<double>(DropoutSpec{1.0}), ConfigError);
}

TEST_CASE("conv2d: examples and errors") {
  const Tensor<double> x = iota(Shape{1, 1, 4, 4});
  const Tensor<double> one(Shape{1, 1, 1, 1}, 1.0), zero_b(Shape{1, 1, 1, 1});
  CHECK(bit_equal(conv2d(x, one, zero_b), x));

  const Tensor<double> ones(Shape{1, 1, 4, 4}, 1.0), k3(Shape{1, 1, 3, 3}, 1.0);
  const Tensor<double> y = conv2d(ones, k3, zero_b, 1, Padding::valid);
  CHECK(y.shape() == Shape{1, 1, 2, 2});
  for (std::size_t i = 0; i < 4; ++i) CHECK(y[i] == 9.0);

  const Tensor<double> ys = conv2d(ones, k3, zero_b, 1, Padding::same);
  CHECK(ys.shape() == Shape{1, 1, 4, 4});
  CHECK(ys[0] == 4.0);  // corner window
  CHECK(ys[5] == 9.0);
  CHECK(conv2d(Tensor<double>(Shape{1, 1, 7, 7}), k3, zero_b, 2, Padding::same).shape() == Shape{1, 1, 4, 4});
  CHECK(conv2d(Tensor<double>(Shape{1, 1, 7, 6}), k3, zero_b, 2, Padding::valid).shape() == Shape{1, 1, 3, 2});

  CHECK_THROWS_AS(conv2d(Tensor<double>(Shape{1, 2, 4, 4}), k3, zero_b), ShapeError);
  CHECK_THROWS_AS(conv2d(ones, k3, zero_b, 0), ConfigError);
}

TEST_CASE("conv2d: im2col path agrees with a direct loop") {
  RngStream rng(12);
  for (std::size_t stride : {1, 2})
    for (Padding pad : {Padding::same, Padding::valid}) {
      const Tensor<double> x = Tensor<double>::random(Shape{2, 3, 7, 6}, rng);
      const Tensor<double> w = Tensor<double>::random(Shape{4, 3, 3, 3}, rng);
      const Tensor<double> b = Tensor<double>::random(Shape{1, 4, 1, 1}, rng);
      const Tensor<double> y = conv2d(x, w, b, stride, pad);
      const long p = pad == Padding::same ? 1 : 0;
      const Shape& ys = y.shape();
      for (std::size_t n = 0; n < 2; ++n)
        for (std::size_t o = 0; o < 4; ++o)
          for (std::size_t i = 0; i < ys.h; ++i)
            for (std::size_t j = 0; j < ys.w; ++j) {
              double acc = b[o];
              for (std::size_t c = 0; c < 3; ++c)
                for (long a = 0; a < 3; ++a)
                  for (long d = 0; d < 3; ++d) {
                    const long ii = static_cast<long>(i * stride) + a - p, jj = static_cast<long>(j * stride) + d - p;
                    if (ii < 0 || jj < 0 || ii >= 7 || jj >= 6) continue;
                    acc += w(o, c, static_cast<std::size_t>(a), static_cast<std::size_t>(d)) *
                           x(n, c, static_cast<std::size_t>(ii), static_cast<std::size_t>(jj));
                  }
              CHECK(y(n, o, i, j) == doctest::Approx(acc).epsilon(1e-12));
            }
    }
}

TEST_CASE("batchnorm: constant channel maps to beta; unit data passes through") {
  const Tensor<double> x(Shape{3, 2, 2, 2}, 4.0);
  const Tensor<double> gamma(Shape{1, 2, 1, 1}, 7.0);
  Tensor<double> beta(Shape{1, 2, 1, 1});
  beta[0] = 0.25;
  beta[1] = -1.5;
  const Tensor<double> y = batchnorm_train(x, gamma, beta, 1e-5);
  for (std::size_t n = 0; n < 3; ++n)
    for (std::size_t i = 0; i < 4; ++i) {
      CHECK(y.plane(n, 0)[i] == 0.25);
      CHECK(y.plane(n, 1)[i] == -1.5);
    }

  // 4096 N(0,1) values per channel: |mean| < 3/64 and |1/sd - 1| < ~0.035 at 3 sigma.
  RngStream rng(13);
  Tensor<double> z(Shape{64, 2, 8, 8});
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = rng.normal();
  const Tensor<double> out = batchnorm_train(z, Tensor<double>(Shape{1, 2, 1, 1}, 1.0), Tensor<double>(Shape{1, 2, 1, 1}), 1e-5);
  for (std::size_t i = 0; i < z.size(); ++i) CHECK(std::abs(out[i] - z[i]) <= 0.05 + 0.05 * std::abs(z[i]));
  CHECK_THROWS_AS(batchnorm_train(Tensor<double>(Shape{0, 2, 2, 2}), gamma, beta, 1e-5), ShapeError);
}

TEST_CASE("batchnorm layer: running statistics and infer mode") {
  BatchNormLayer<double> bn(1, 0.99, 1e-5);
  RngStream init(1);
  bn.initialize(init);
  Tensor<double> x(Shape{2, 1, 1, 2});
  x[0] = 1; x[1] = 2; x[2] = 3; x[3] = 6;  // mean 3, biased var 3.5
  bn.forward(x, Mode::train);
  const auto params = bn.parameters();
  // running = 0.99 * initial + 0.01 * batch
  const Tensor<double>* mean = nullptr;
  const Tensor<double>* var = nullptr;
  for (auto* p : params) {
    if (p->name == "running_mean") mean = &p->value;
    if (p->name == "running_var") var = &p->value;
  }
  REQUIRE(mean);
  REQUIRE(var);
  CHECK((*mean)[0] == doctest::Approx(0.01 * 3.0).epsilon(1e-14));
  CHECK((*var)[0] == doctest::Approx(0.99 * 1.0 + 0.01 * 3.5).epsilon(1e-14));
  const Tensor<double> y = bn.forward(x, Mode::infer);
  CHECK(y[0] == doctest::Approx((1.0 - (*mean)[0]) / std::sqrt((*var)[0] + 1e-5)).epsilon(1e-14));
}

TEST_CASE("pooling, dense, concat, upsample examples") {
  const Tensor<double> x(Shape{1, 1, 2, 2}, {1, 2, 3, 4});
  CHECK(pool(x, PoolKind::average, 2, 2)[0] == 2.5);
  CHECK(pool(x, PoolKind::max, 2, 2)[0] == 4.0);
  CHECK_THROWS_AS(pool(x, PoolKind::max, 3, 1), ShapeError);

  // max-pool tie routes the gradient to the first element
  std::vector<std::size_t> argmax;
  const Tensor<double> tie(Shape{1, 1, 2, 2}, 1.0);
  const Tensor<double> py = pool(tie, PoolKind::max, 2, 2, &argmax);
  const Tensor<double> g = pool_backward(tie.shape(), Tensor<double>(py.shape(), 1.0), PoolKind::max, 2, 2, argmax);
  CHECK(g[0] == 1.0);
  CHECK(g[1] + g[2] + g[3] == 0.0);

  Tensor<double> eye(Shape{3, 3, 1, 1});
  for (std::size_t i = 0; i < 3; ++i) eye(i, i, 0, 0) = 1.0;
  const Tensor<double> v(Shape{2, 3, 1, 1}, {1, 2, 3, 4, 5, 6});
  CHECK(bit_equal(dense(v, eye, Tensor<double>(Shape{1, 3, 1, 1})), v));
  CHECK_THROWS_AS(dense(v, Tensor<double>(Shape{3, 4, 1, 1}), Tensor<double>(Shape{1, 3, 1, 1})), ShapeError);

  const Tensor<double> a(Shape{1, 3, 4, 4}), b(Shape{1, 5, 4, 4});
  CHECK(concat({&a, &b}).shape() == Shape{1, 8, 4, 4});
  const Tensor<double> c(Shape{1, 5, 4, 3});
  CHECK_THROWS_AS(concat({&a, &c}), ShapeError);

  const Tensor<double> u = upsample(Tensor<double>(Shape{1, 1, 1, 1}, 1.0), 2);
  CHECK(u.shape() == Shape{1, 1, 2, 2});
  for (std::size_t i = 0; i < 4; ++i) CHECK(u[i] == 1.0);
  RngStream rng(14);
  const Tensor<double> r = Tensor<double>::random(Shape{2, 3, 3, 3}, rng);
  CHECK(bit_equal(pool(upsample(r, 2), PoolKind::average, 2, 2), r));
  // backward sums the four copies
  const Tensor<double> ub = upsample_backward(iota(Shape{1, 1, 2, 2}), 2);
  CHECK(ub.size() == 1);
  CHECK(ub[0] == 10.0);
}

TEST_CASE("gradcheck: every layer over several seeds") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed)
    for (const SuiteResult& r : gradcheck_layers(seed)) {
      INFO(r.name << " seed " << seed << "\n" << r.report.str());
      const double tol = r.name == "dense" ? 1e-7 : (r.name == "batchnorm" ? 1e-5 : 1e-6);
      CHECK(r.report.worst() < tol);
    }
}

TEST_CASE("gradcheck: both model builders") {
  for (const char* kind : {"densenet", "unet"})
    for (std::uint64_t seed = 1; seed <= 2; ++seed) {
      const GradcheckReport r = gradcheck_model_kind(kind, seed);
      INFO(kind << " seed " << seed << "\n" << r.str());
      CHECK(r.worst() < 1e-5);
    }
}

TEST_CASE("gradcheck: a sign-flipped conv backward is caught") {
  SignFlippedConv conv(3, 4, 3);
  RngStream init(1);
  conv.initialize(init);
  const GradcheckReport r = gradcheck_layer(conv, {{2, 3, 5, 5}}, 7);
  CHECK(r.worst() > 0.1);
  CHECK(r.entries.front().target == "input0");
  CHECK(r.entries.front().max_rel_error > 0.1);
}
