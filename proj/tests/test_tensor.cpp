#include <sstream>

#include "doctest.h"
#include "rotaflip/rng.hpp"
#include "rotaflip/tensor.hpp"

using namespace rotaflip;

namespace {

Tensor<double> row(std::initializer_list<double> v) { return Tensor<double>(Shape{1, 1, 1, v.size()}, v); }

}  // namespace

TEST_CASE("elementwise examples") {
  CHECK(add(row({1, 2}), row({3, 4})) == row({4, 6}));
  CHECK(relu(row({-1, 0, 2})) == row({0, 0, 2}));
  CHECK(scale(row({1, 2}), 0.5) == row({0.5, 1.0}));
  CHECK(sub(row({5, 2}), row({3, 4})) == row({2, -2}));
  CHECK(mul(row({5, 2}), row({3, 4})) == row({15, 8}));
  CHECK(relu_grad(row({-1, 0, 2}), row({7, 7, 7})) == row({0, 0, 7}));
}

TEST_CASE("elementwise broadcasts per-channel vectors") {
  Tensor<float> a(Shape{2, 3, 1, 2}, 1.0f);
  Tensor<float> b(Shape{1, 3, 1, 1}, {10.0f, 20.0f, 30.0f});
  const Tensor<float> y = add(a, b);
  CHECK(y(1, 2, 0, 1) == 31.0f);
  CHECK(y(0, 0, 0, 0) == 11.0f);
}

TEST_CASE("elementwise shape mismatch names both shapes") {
  try {
    add(Tensor<double>(Shape{1, 2, 3, 3}), Tensor<double>(Shape{1, 2, 2, 2}));
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("(1,2,3,3)") != std::string::npos);
    CHECK(msg.find("(1,2,2,2)") != std::string::npos);
  }
}

TEST_CASE("reduce examples") {
  const Tensor<double> m(Shape{1, 1, 2, 2}, {1, 2, 3, 4});
  CHECK(reduce(ReduceOp::mean, m, Axes::spatial())[0] == 2.5);
  CHECK(reduce(ReduceOp::sum, Tensor<double>::ones(Shape{1, 2, 2, 2}), Axes::all())[0] == 8.0);
  CHECK(reduce(ReduceOp::max, Tensor<double>(Shape{1, 1, 2, 2}, {1, 9, 3, 4}), Axes::spatial())[0] == 9.0);
  CHECK(reduce(ReduceOp::sum, m, Axes::spatial()).shape() == Shape{1, 1, 1, 1});
  CHECK_THROWS_AS(reduce(ReduceOp::sum, Tensor<double>(), Axes::all()), ShapeError);
}

TEST_CASE("mean over spatial axes of a constant map") {
  const Tensor<float> c(Shape{2, 3, 5, 5}, 0.37f);
  const Tensor<float> m = reduce(ReduceOp::mean, c, Axes::spatial());
  CHECK(m.shape() == Shape{2, 3, 1, 1});
  for (std::size_t i = 0; i < m.size(); ++i) CHECK(m[i] == doctest::Approx(0.37f).epsilon(1e-6));
}

TEST_CASE("add is commutative and mean equals sum over count (random tensors)") {
  RngStream rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const Shape s{1 + rng.below(3), 1 + rng.below(4), 1 + rng.below(5), 1 + rng.below(5)};
    const auto a = Tensor<double>::random(s, rng, -10, 10);
    const auto b = Tensor<double>::random(s, rng, -10, 10);
    CHECK(add(a, b) == add(b, a));
    const double sum = reduce(ReduceOp::sum, a, Axes::all())[0];
    const double mean = reduce(ReduceOp::mean, a, Axes::all())[0];
    CHECK(mean == doctest::Approx(sum / static_cast<double>(a.size())).epsilon(1e-15));
  }
}

TEST_CASE("precision is preserved") {
  const Tensor<float> a(Shape{1, 1, 1, 2}, {1.0f, 2.0f});
  static_assert(std::is_same_v<decltype(add(a, a))::Scalar, float>);
  static_assert(std::is_same_v<decltype(reduce(ReduceOp::sum, a, Axes::all()))::Scalar, float>);
  CHECK(a.cast<double>().cast<float>() == a);
}

TEST_CASE("rng stream contract") {
  RngStream s(3);
  const auto first = rng_uniform(s, 5);
  const auto second = rng_uniform(s, 5);
  CHECK(first != second);

  RngStream a(99), b(99);
  CHECK(rng_uniform(a, 100) == rng_uniform(b, 100));

  RngStream big(42);
  const auto v = rng_uniform(big, 100000);
  double mean = 0;
  for (double x : v) {
    CHECK_UNARY(x >= 0.0);
    CHECK_UNARY(x < 1.0);
    mean += x;
  }
  mean /= static_cast<double>(v.size());
  // sd of the mean is sqrt(1/12/1e5) ~ 9.1e-4, so 0.01 is an 11-sigma bound.
  CHECK(std::abs(mean - 0.5) < 0.01);
}

TEST_CASE("sub-streams are reproducible, distinct and leave the parent untouched") {
  const RngStream parent(5);
  RngStream c1 = parent.child("rotaflip"), c1b = parent.child("rotaflip");
  RngStream c2 = parent.child("dropout");
  RngStream c3 = parent.child("rotaflip", 1);
  const auto v1 = rng_uniform(c1, 50);
  CHECK(v1 == rng_uniform(c1b, 50));
  CHECK(v1 != rng_uniform(c2, 50));
  CHECK(v1 != rng_uniform(c3, 50));
  RngStream p1(5), p2(5);
  (void)p1.child("x");
  CHECK(p1.next_u64() == p2.next_u64());
}

TEST_CASE("rng below is within bounds and covers the range") {
  RngStream s(11);
  std::array<int, 7> counts{};
  for (int i = 0; i < 7000; ++i) {
    const auto v = s.below(7);
    REQUIRE(v < 7);
    ++counts[v];
  }
  for (int c : counts) CHECK(c > 850);
}

TEST_CASE("binary tensor format layout") {
  const Tensor<float> t(Shape{1, 2, 1, 1}, {1.0f, -2.0f});
  std::ostringstream os;
  write_tensor(os, t);
  const std::string bytes = os.str();
  REQUIRE(bytes.size() == 4 + 2 + 1 + 16 + 8);
  CHECK(bytes.substr(0, 4) == "RTFL");
  CHECK(static_cast<unsigned char>(bytes[4]) == 1);  // version, little-endian
  CHECK(static_cast<unsigned char>(bytes[5]) == 0);
  CHECK(static_cast<unsigned char>(bytes[6]) == 1);  // single precision
  CHECK(static_cast<unsigned char>(bytes[11]) == 2);  // shape[1] = 2
  // 1.0f = 0x3f800000 stored little-endian
  CHECK(static_cast<unsigned char>(bytes[23]) == 0x00);
  CHECK(static_cast<unsigned char>(bytes[26]) == 0x3f);
}

TEST_CASE("binary tensor round trip is bit exact") {
  RngStream rng(123);
  for (int trial = 0; trial < 10; ++trial) {
    const Shape s{1 + rng.below(3), 1 + rng.below(3), 1 + rng.below(4), 1 + rng.below(4)};
    auto d = Tensor<double>::random(s, rng, -1e6, 1e6);
    d[0] = -0.0;
    std::stringstream ds;
    write_tensor(ds, d);
    const auto d2 = read_tensor<double>(ds);
    CHECK(d2.shape() == s);
    CHECK(std::memcmp(d.data(), d2.data(), d.size() * sizeof(double)) == 0);

    const auto f = d.cast<float>();
    std::stringstream fs;
    write_tensor(fs, f);
    const auto f2 = read_tensor<float>(fs);
    CHECK(std::memcmp(f.data(), f2.data(), f.size() * sizeof(float)) == 0);
  }
}

TEST_CASE("binary tensor reader rejects bad input") {
  std::stringstream bad("XXXX");
  CHECK_THROWS_AS(read_tensor<double>(bad), ParseError);

  const Tensor<float> t(Shape{1, 1, 2, 2}, 1.0f);
  std::stringstream ss;
  write_tensor(ss, t);
  CHECK_THROWS_AS(read_tensor<double>(ss), ParseError);  // precision mismatch

  std::string truncated = [&] {
    std::stringstream s2;
    write_tensor(s2, t);
    return s2.str();
  }();
  truncated.resize(truncated.size() - 3);
  std::stringstream ts(truncated);
  try {
    read_tensor<float>(ts);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.offset() == 23 + 12);
  }
}
