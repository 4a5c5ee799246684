#include "rotaflip/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>

namespace rotaflip {

double accuracy(std::span<const int> predictions, std::span<const int> labels) {
  if (predictions.empty()) throw ConfigError("accuracy: empty input");
  if (predictions.size() != labels.size())
    throw ShapeError("accuracy: " + std::to_string(predictions.size()) + " predictions for " +
                     std::to_string(labels.size()) + " labels");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) correct += predictions[i] == labels[i];
  return 100.0 * static_cast<double>(correct) / static_cast<double>(labels.size());
}

double accuracy(std::span<const LabelMap> predictions, std::span<const LabelMap> labels) {
  if (predictions.empty()) throw ConfigError("accuracy: empty input");
  if (predictions.size() != labels.size()) throw ShapeError("accuracy: map count mismatch");
  std::size_t correct = 0, total = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (predictions[i].rows() != labels[i].rows() || predictions[i].cols() != labels[i].cols())
      throw ShapeError("accuracy: label map " + std::to_string(i) + " shape mismatch");
    correct += static_cast<std::size_t>((predictions[i].array() == labels[i].array()).count());
    total += static_cast<std::size_t>(labels[i].size());
  }
  if (total == 0) throw ConfigError("accuracy: empty label maps");
  return 100.0 * static_cast<double>(correct) / static_cast<double>(total);
}

double orbit_agreement(const OrbitPrediction& orbit) {
  if (orbit.predictions.size() != 8)
    throw ShapeError("agreement: orbit of " + orbit.image_id + " has " + std::to_string(orbit.predictions.size()) +
                     " predictions, expected 8");
  std::map<int, int> counts;
  int top = 0;
  for (int p : orbit.predictions) top = std::max(top, ++counts[p]);
  return 100.0 * top / 8.0;
}

double agreement(std::span<const OrbitPrediction> orbits) {
  if (orbits.empty()) throw ConfigError("agreement: no orbits");
  double sum = 0.0;
  for (const auto& o : orbits) sum += orbit_agreement(o);
  return sum / static_cast<double>(orbits.size());
}

std::string protocol_name(EvalProtocol p) { return p == EvalProtocol::single ? "single" : "orbit8"; }

EvalProtocol parse_protocol(const std::string& s) {
  if (s == "single") return EvalProtocol::single;
  if (s == "orbit8") return EvalProtocol::orbit8;
  throw ConfigError("unknown evaluation protocol '" + s + "' (expected single or orbit8)");
}

// ---------------------------------------------------------------------------

std::string format_real(double v) {
  if (std::isnan(v)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

namespace {

double parse_real(const std::string& s, const std::string& what) {
  if (s == "nan") return NAN;
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::logic_error&) {
    throw ConfigError(what + ": not a number '" + s + "'");
  }
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) out.push_back(item);
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

}  // namespace

std::string EvalReport::key_values(const std::string& prefix) const {
  std::ostringstream os;
  os << prefix << "protocol=" << protocol << '\n';
  os << prefix << "accuracy=" << format_real(accuracy) << '\n';
  os << prefix << "agreement=" << format_real(agreement) << '\n';
  os << prefix << "per_class_accuracy=";
  for (std::size_t i = 0; i < per_class_accuracy.size(); ++i) os << (i ? ";" : "") << format_real(per_class_accuracy[i]);
  os << '\n';
  os << prefix << "n_samples=" << n_samples << '\n';
  os << prefix << "n_predictions=" << n_predictions << '\n';
  return os.str();
}

std::string EvalReport::csv_header() { return "protocol,accuracy,agreement,per_class_accuracy,n_samples,n_predictions"; }

std::string EvalReport::csv_row() const {
  std::string pcs;
  for (std::size_t i = 0; i < per_class_accuracy.size(); ++i) pcs += (i ? ";" : "") + format_real(per_class_accuracy[i]);
  return protocol + "," + format_real(accuracy) + "," + format_real(agreement) + "," + pcs + "," +
         std::to_string(n_samples) + "," + std::to_string(n_predictions);
}

std::map<std::string, std::string> parse_key_values(const std::string& text) {
  std::map<std::string, std::string> out;
  std::istringstream is(text);
  std::string line;
  for (std::size_t lineno = 1; std::getline(is, line); ++lineno) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto first = line.find_first_not_of(" \t");
    if (first == std::string::npos || line[first] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key=value");
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t"), e = s.find_last_not_of(" \t");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError("line " + std::to_string(lineno) + ": empty key");
    if (!out.emplace(key, trim(line.substr(eq + 1))).second)
      throw ConfigError("line " + std::to_string(lineno) + ": duplicate key " + key);
  }
  return out;
}

EvalReport parse_report(const std::string& text, const std::string& prefix) {
  const auto kv = parse_key_values(text);
  auto get = [&](const std::string& k) -> const std::string& {
    const auto it = kv.find(prefix + k);
    if (it == kv.end()) throw ConfigError("report is missing key " + prefix + k);
    return it->second;
  };
  EvalReport r;
  r.protocol = get("protocol");
  r.accuracy = parse_real(get("accuracy"), "accuracy");
  r.agreement = parse_real(get("agreement"), "agreement");
  for (const auto& v : split(get("per_class_accuracy"), ';'))
    if (!v.empty()) r.per_class_accuracy.push_back(parse_real(v, "per_class_accuracy"));
  r.n_samples = static_cast<std::size_t>(parse_real(get("n_samples"), "n_samples"));
  r.n_predictions = static_cast<std::size_t>(parse_real(get("n_predictions"), "n_predictions"));
  return r;
}

// ---------------------------------------------------------------------------

namespace {

std::vector<D4Code> protocol_codes(EvalProtocol p) {
  if (p == EvalProtocol::single) return {D4Code::identity};
  return {kAllD4.begin(), kAllD4.end()};
}

void check_images(const Dataset& images, EvalProtocol protocol) {
  if (images.empty()) throw ConfigError("evaluation: empty image set");
  const Shape s = images.front().pixels.shape();
  for (const auto& im : images) {
    if (im.pixels.shape() != s) throw ShapeError("evaluation: images must share one shape, " + im.id + " differs");
    if (protocol == EvalProtocol::orbit8 && im.height() != im.width())
      throw ShapeError("evaluation: orbit8 needs square images, " + im.id + " is " + im.pixels.shape().str());
  }
}

/// Stacks the selected images, each transformed by `t`, into one batch.
Tensor<double> stack(const Dataset& images, std::size_t begin, std::size_t end, D4Code t) {
  Shape s = images.front().pixels.shape();
  s.n = end - begin;
  Tensor<double> out(s);
  const std::size_t per = images.front().pixels.size();
  const std::size_t hw = s.plane();
  for (std::size_t i = begin; i < end; ++i) {
    const Tensor<double>& px = images[i].pixels;
    for (std::size_t c = 0; c < s.c; ++c) apply_into(px.plane(0, c), out.data() + (i - begin) * per + c * hw, s.h, s.w, t);
  }
  return out;
}

}  // namespace

OrbitEvaluation evaluate_classes(const ClassPredictor& predict, const Dataset& images, EvalProtocol protocol,
                                 std::size_t batch) {
  check_images(images, protocol);
  if (batch == 0) throw ConfigError("evaluation batch must be positive");
  const std::vector<D4Code> codes = protocol_codes(protocol);
  OrbitEvaluation out;
  out.orbits.resize(images.size());
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i].is_segmentation()) throw ConfigError("evaluate_classes: " + images[i].id + " is a segmentation sample");
    out.orbits[i].image_id = images[i].id;
  }
  int classes = 0;
  for (const auto& im : images) classes = std::max(classes, im.label + 1);
  std::vector<std::size_t> class_total(static_cast<std::size_t>(classes)), class_correct(class_total.size());
  std::size_t correct = 0;
  for (std::size_t b = 0; b < images.size(); b += batch) {
    const std::size_t e = std::min(images.size(), b + batch);
    for (D4Code t : codes) {
      const std::vector<int> pred = predict(stack(images, b, e, t));
      if (pred.size() != e - b) throw ShapeError("evaluation: predictor returned the wrong number of classes");
      for (std::size_t i = b; i < e; ++i) {
        const int p = pred[i - b];
        out.orbits[i].predictions.push_back(p);
        const auto label = static_cast<std::size_t>(images[i].label);
        ++class_total[label];
        if (p == images[i].label) {
          ++correct;
          ++class_correct[label];
        }
      }
    }
  }
  EvalReport& r = out.report;
  r.protocol = protocol_name(protocol);
  r.n_samples = images.size();
  r.n_predictions = images.size() * codes.size();
  r.accuracy = 100.0 * static_cast<double>(correct) / static_cast<double>(r.n_predictions);
  for (std::size_t c = 0; c < class_total.size(); ++c)
    r.per_class_accuracy.push_back(class_total[c] ? 100.0 * static_cast<double>(class_correct[c]) /
                                                        static_cast<double>(class_total[c])
                                                  : NAN);
  if (protocol == EvalProtocol::orbit8) r.agreement = agreement(out.orbits);
  return out;
}

EvalReport evaluate_pixels(const PixelPredictor& predict, const Dataset& images, EvalProtocol protocol,
                           std::size_t batch) {
  check_images(images, protocol);
  if (batch == 0) throw ConfigError("evaluation batch must be positive");
  const std::vector<D4Code> codes = protocol_codes(protocol);
  std::vector<std::size_t> class_total, class_correct;
  std::size_t correct = 0, total = 0;
  for (std::size_t b = 0; b < images.size(); b += batch) {
    const std::size_t e = std::min(images.size(), b + batch);
    for (D4Code t : codes) {
      const std::vector<LabelMap> pred = predict(stack(images, b, e, t));
      if (pred.size() != e - b) throw ShapeError("evaluation: predictor returned the wrong number of maps");
      for (std::size_t i = b; i < e; ++i) {
        if (!images[i].is_segmentation()) throw ConfigError("evaluate_pixels: " + images[i].id + " has no label map");
        const LabelMap truth = apply(images[i].label_map, t);
        const LabelMap& p = pred[i - b];
        if (p.rows() != truth.rows() || p.cols() != truth.cols())
          throw ShapeError("evaluation: predicted map shape mismatch for " + images[i].id);
        for (Eigen::Index k = 0; k < truth.size(); ++k) {
          const auto label = static_cast<std::size_t>(truth.data()[k]);
          if (label >= class_total.size()) {
            class_total.resize(label + 1, 0);
            class_correct.resize(label + 1, 0);
          }
          ++class_total[label];
          if (p.data()[k] == truth.data()[k]) {
            ++correct;
            ++class_correct[label];
          }
        }
        total += static_cast<std::size_t>(truth.size());
      }
    }
  }
  EvalReport r;
  r.protocol = protocol_name(protocol);
  r.n_samples = images.size();
  r.n_predictions = images.size() * codes.size();
  r.accuracy = 100.0 * static_cast<double>(correct) / static_cast<double>(total);
  for (std::size_t c = 0; c < class_total.size(); ++c)
    r.per_class_accuracy.push_back(
        class_total[c] ? 100.0 * static_cast<double>(class_correct[c]) / static_cast<double>(class_total[c]) : NAN);
  return r;
}

void write_orbits_csv(std::ostream& os, std::span<const OrbitPrediction> orbits) {
  os << "image_id,code,prediction\n";
  for (const auto& o : orbits)
    for (std::size_t k = 0; k < o.predictions.size(); ++k) os << o.image_id << ',' << k << ',' << o.predictions[k] << '\n';
}

// ---------------------------------------------------------------------------

double field_value(const TrainRecord& r, RecordField field) {
  switch (field) {
    case RecordField::lr: return r.lr;
    case RecordField::loss: return r.loss;
    case RecordField::train_accuracy: return r.train_accuracy;
    case RecordField::eval_accuracy: return r.eval_accuracy;
    case RecordField::agreement: return r.agreement;
  }
  return NAN;
}

double last_n_mean(std::span<const TrainRecord> records, std::size_t n, RecordField field) {
  if (n == 0) throw ConfigError("last_n_mean: n must be >= 1");
  if (n > records.size())
    throw ConfigError("last_n_mean: n=" + std::to_string(n) + " exceeds " + std::to_string(records.size()) + " records");
  double sum = 0.0;
  for (std::size_t i = records.size() - n; i < records.size(); ++i) sum += field_value(records[i], field);
  return sum / static_cast<double>(n);
}

std::size_t best_epoch(std::span<const TrainRecord> records, RecordField field) {
  if (records.empty()) throw ConfigError("best_epoch: no records");
  std::size_t best = 0;
  for (std::size_t i = 1; i < records.size(); ++i)
    if (field_value(records[i], field) > field_value(records[best], field)) best = i;
  return records[best].epoch;
}

std::string records_csv_header() { return "epoch,lr,loss,train_acc,eval_acc,agreement"; }

std::string records_csv_row(const TrainRecord& r) {
  return std::to_string(r.epoch) + "," + format_real(r.lr) + "," + format_real(r.loss) + "," +
         format_real(r.train_accuracy) + "," + format_real(r.eval_accuracy) + "," + format_real(r.agreement);
}

std::vector<TrainRecord> read_records_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != records_csv_header()) throw ConfigError("records CSV: unexpected header");
  std::vector<TrainRecord> out;
  for (std::size_t lineno = 2; std::getline(is, line); ++lineno) {
    if (line.empty()) continue;
    const auto f = split(line, ',');
    if (f.size() != 6) throw ConfigError("records CSV line " + std::to_string(lineno) + ": expected 6 fields");
    TrainRecord r;
    r.epoch = static_cast<std::size_t>(parse_real(f[0], "epoch"));
    r.lr = parse_real(f[1], "lr");
    r.loss = parse_real(f[2], "loss");
    r.train_accuracy = parse_real(f[3], "train_acc");
    r.eval_accuracy = parse_real(f[4], "eval_acc");
    r.agreement = parse_real(f[5], "agreement");
    out.push_back(r);
  }
  return out;
}

}  // namespace rotaflip
