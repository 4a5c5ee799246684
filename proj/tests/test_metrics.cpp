#include <cmath>
#include <sstream>

#include "doctest.h"
#include "rotaflip/metrics.hpp"

using namespace rotaflip;

namespace {

OrbitPrediction orbit(std::vector<int> p) { return {"x", std::move(p)}; }

LabeledImage image(const std::string& id, int label, std::size_t size, RngStream& rng) {
  LabeledImage im{id, Tensor<double>(Shape{1, 1, size, size}), label, {}};
  for (std::size_t i = 0; i < im.pixels.size(); ++i) im.pixels[i] = static_cast<double>(rng.below(256)) / 255.0;
  return im;
}

// Parity of the 8-bit pixel sum: integer arithmetic, so exactly D4-invariant.
std::vector<int> parity_model(const Tensor<double>& x) {
  std::vector<int> out(x.shape().n);
  const std::size_t per = x.size() / x.shape().n;
  for (std::size_t n = 0; n < out.size(); ++n) {
    long sum = 0;
    for (std::size_t k = 0; k < per; ++k) sum += std::lround(x.data()[n * per + k] * 255.0);
    out[n] = static_cast<int>(sum % 2);
  }
  return out;
}

// Looks at one corner, so it sees different things on different versions.
std::vector<int> corner_model(const Tensor<double>& x) {
  std::vector<int> out(x.shape().n);
  for (std::size_t n = 0; n < out.size(); ++n) out[n] = x(n, 0, 0, 0) > 0.5 ? 1 : 0;
  return out;
}

std::vector<TrainRecord> records_of(std::vector<double> acc) {
  std::vector<TrainRecord> r(acc.size());
  for (std::size_t i = 0; i < acc.size(); ++i) {
    r[i].epoch = i;
    r[i].eval_accuracy = acc[i];
  }
  return r;
}

}  // namespace

TEST_CASE("accuracy: examples and errors") {
  const std::vector<int> labels{0, 1, 1, 0};
  const std::vector<int> three{0, 1, 0, 0}, wrong{1, 0, 0, 1};
  CHECK(accuracy(std::span<const int>(labels), std::span<const int>(labels)) == 100.0);
  CHECK(accuracy(std::span<const int>(wrong), std::span<const int>(labels)) == 0.0);
  CHECK(accuracy(std::span<const int>(three), std::span<const int>(labels)) == 75.0);
  const std::vector<int> none;
  CHECK_THROWS(accuracy(std::span<const int>(none), std::span<const int>(none)));
  CHECK_THROWS(accuracy(std::span<const int>(three), std::span<const int>(none)));

  std::vector<LabelMap> truth{LabelMap::Zero(2, 2)}, pred{LabelMap::Zero(2, 2)};
  pred[0](1, 1) = 1;
  CHECK(accuracy(std::span<const LabelMap>(pred), std::span<const LabelMap>(truth)) == 75.0);
}

TEST_CASE("agreement: worked example, unanimity, tie, plurality") {
  CHECK(orbit_agreement(orbit({1, 1, 0, 0, 0, 0, 0, 0})) == 75.0);
  CHECK(orbit_agreement(orbit({1, 1, 1, 1, 1, 1, 1, 1})) == 100.0);
  CHECK(orbit_agreement(orbit({0, 1, 0, 1, 0, 1, 0, 1})) == 50.0);
  CHECK(orbit_agreement(orbit({0, 1, 2, 2, 2, 1, 1, 2})) == 50.0);
  // relabeling classes changes nothing
  CHECK(orbit_agreement(orbit({0, 0, 1, 1, 1, 1, 1, 1})) == 75.0);
  const std::vector<OrbitPrediction> both{orbit({1, 1, 0, 0, 0, 0, 0, 0}), orbit({1, 1, 1, 1, 1, 1, 1, 1})};
  CHECK(agreement(std::span<const OrbitPrediction>(both)) == 87.5);
  const std::vector<OrbitPrediction> short_orbit{orbit({1, 1, 1})};
  CHECK_THROWS(agreement(std::span<const OrbitPrediction>(short_orbit)));
}

TEST_CASE("eval_orbit: constant model and invariant oracle model") {
  RngStream rng(3);
  Dataset set;
  for (int i = 0; i < 12; ++i) set.push_back(image("i" + std::to_string(i), i < 9 ? 0 : 1, 6, rng));
  const OrbitEvaluation constant = eval_orbit(
      [](const Tensor<double>& x) { return std::vector<int>(x.shape().n, 0); }, set, 5);
  CHECK(constant.report.agreement == 100.0);
  CHECK(constant.report.accuracy == 75.0);
  CHECK(constant.report.n_samples == 12);
  CHECK(constant.report.n_predictions == 96);
  CHECK(constant.report.per_class_accuracy == std::vector<double>{100.0, 0.0});

  const OrbitEvaluation parity = eval_orbit(parity_model, set, 4);
  CHECK(parity.report.agreement == 100.0);
  REQUIRE(parity.orbits.size() == 12);
  for (const auto& o : parity.orbits) CHECK(o.predictions.size() == 8);

  LabeledImage wide{"w", Tensor<double>(Shape{1, 1, 3, 4}), 0, {}};
  CHECK_THROWS_AS(eval_orbit(parity_model, Dataset{wide}), ShapeError);
  CHECK_NOTHROW(evaluate_classes(parity_model, Dataset{wide}, EvalProtocol::single));
}

TEST_CASE("eval_orbit: duplicated set, symmetric images, orbit order") {
  RngStream rng(4);
  Dataset set;
  for (int i = 0; i < 10; ++i) set.push_back(image("i" + std::to_string(i), i % 2, 5, rng));
  Dataset doubled = set;
  for (const auto& im : set) {
    doubled.push_back(im);
    doubled.back().id += "_copy";
  }
  const auto a = eval_orbit(corner_model, set);
  const auto b = eval_orbit(corner_model, doubled, 3);
  CHECK(a.report.agreement < 100.0);
  CHECK(a.report.agreement == doctest::Approx(b.report.agreement).epsilon(1e-15));
  CHECK(a.report.accuracy == doctest::Approx(b.report.accuracy).epsilon(1e-15));
  // predictions are indexed by code
  for (std::size_t i = 0; i < set.size(); ++i)
    for (D4Code t : kAllD4) {
      const Tensor<double> moved = apply(set[i].pixels, t);
      CHECK(a.orbits[i].predictions[to_int(t)] == corner_model(moved)[0]);
    }

  Dataset symmetric;
  for (int i = 0; i < 6; ++i) {
    LabeledImage im{"s" + std::to_string(i), Tensor<double>(Shape{1, 1, 4, 4}), i % 2, {}};
    for (std::size_t r = 0; r < 4; ++r)
      for (std::size_t c = 0; c < 4; ++c) {
        const std::size_t ring = std::min(std::min(r, 3 - r), std::min(c, 3 - c));
        im.pixels(0, 0, r, c) = ring == 0 ? (i % 3) / 2.0 : 0.3;
      }
    symmetric.push_back(im);
  }
  const auto single = evaluate_classes(corner_model, symmetric, EvalProtocol::single);
  const auto eight = evaluate_classes(corner_model, symmetric, EvalProtocol::orbit8);
  CHECK(single.report.accuracy == eight.report.accuracy);
  CHECK(eight.report.agreement == 100.0);
  CHECK(std::isnan(single.report.agreement));
}

TEST_CASE("evaluate_pixels: transformed predictions meet transformed labels") {
  RngStream rng(5);
  Dataset set;
  for (int i = 0; i < 3; ++i) {
    LabeledImage im = image("p" + std::to_string(i), -1, 6, rng);
    im.label = -1;
    im.label_map = (im.pixels.plane_map(0, 0).array() > 0.5).cast<std::int32_t>();
    set.push_back(im);
  }
  auto threshold = [](const Tensor<double>& x) {
    std::vector<LabelMap> out;
    for (std::size_t n = 0; n < x.shape().n; ++n) out.push_back((x.plane_map(n, 0).array() > 0.5).cast<std::int32_t>());
    return out;
  };
  const EvalReport r = evaluate_pixels(threshold, set, EvalProtocol::orbit8, 2);
  CHECK(r.accuracy == 100.0);
  CHECK(std::isnan(r.agreement));
  CHECK(r.n_predictions == 8 * 3);
  auto transposed = [&](const Tensor<double>& x) {
    std::vector<LabelMap> out = threshold(x);
    for (auto& m : out) m = LabelMap(m.transpose());
    return out;
  };
  CHECK(evaluate_pixels(transposed, set, EvalProtocol::orbit8).accuracy < 100.0);
}

TEST_CASE("last_n_mean and best_epoch") {
  const auto r = records_of({1, 2, 3, 4});
  CHECK(last_n_mean(std::span<const TrainRecord>(r), 3, RecordField::eval_accuracy) == 3.0);
  CHECK(last_n_mean(std::span<const TrainRecord>(r), 1, RecordField::eval_accuracy) == 4.0);
  CHECK_THROWS(last_n_mean(std::span<const TrainRecord>(r), 5, RecordField::eval_accuracy));
  CHECK_THROWS(last_n_mean(std::span<const TrainRecord>(r), 0, RecordField::eval_accuracy));
  const auto flat = records_of(std::vector<double>(12, 87.25));
  CHECK(last_n_mean(std::span<const TrainRecord>(flat), 10, RecordField::eval_accuracy) == 87.25);

  const auto tie = records_of({5, 9, 9});
  CHECK(best_epoch(std::span<const TrainRecord>(tie), RecordField::eval_accuracy) == 1);
  CHECK(best_epoch(std::span<const TrainRecord>(r), RecordField::eval_accuracy) == 3);
  const auto one = records_of({42});
  CHECK(best_epoch(std::span<const TrainRecord>(one), RecordField::eval_accuracy) == 0);
}

TEST_CASE("records CSV and report key=value round trips") {
  std::vector<TrainRecord> r = records_of({50.0, 0.1 + 0.2, 1.0 / 3.0});
  r[1].loss = 1e-300;
  r[2].lr = 0.001 * 0.99 * 0.99;
  r[0].agreement = 97.8125;
  std::ostringstream os;
  os << records_csv_header() << '\n';
  for (const auto& x : r) os << records_csv_row(x) << '\n';
  CHECK(os.str().rfind("epoch,lr,loss,train_acc,eval_acc,agreement\n", 0) == 0);
  std::istringstream is(os.str());
  const auto back = read_records_csv(is);
  REQUIRE(back.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(back[i].epoch == r[i].epoch);
    CHECK(back[i].lr == r[i].lr);
    CHECK(back[i].loss == r[i].loss);
    CHECK(back[i].eval_accuracy == r[i].eval_accuracy);
  }
  CHECK(back[0].agreement == 97.8125);
  CHECK(std::isnan(back[1].agreement));
  CHECK(format_real(NAN) == "nan");

  EvalReport rep;
  rep.accuracy = 100.0 * 2 / 3;
  rep.agreement = 91.25;
  rep.per_class_accuracy = {70.0, 1.0 / 7.0};
  rep.n_samples = 500;
  rep.n_predictions = 4000;
  const EvalReport again = parse_report(rep.key_values("best.test."), "best.test.");
  CHECK(again.protocol == "orbit8");
  CHECK(again.accuracy == rep.accuracy);
  CHECK(again.agreement == rep.agreement);
  CHECK(again.per_class_accuracy == rep.per_class_accuracy);
  CHECK(again.n_samples == 500);
  CHECK(again.n_predictions == 4000);
  const auto kv = parse_key_values("# comment\n\na=1\nb.c=x y\n");
  CHECK(kv.at("a") == "1");
  CHECK(kv.at("b.c") == "x y");
  CHECK(parse_protocol(protocol_name(EvalProtocol::single)) == EvalProtocol::single);
  CHECK_THROWS(parse_protocol("nine"));
}
