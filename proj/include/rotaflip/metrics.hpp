#pragma once

#include <cmath>
#include <functional>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "rotaflip/data.hpp"

namespace rotaflip {

/// 100 · correct / total. Throws on empty or mismatched inputs.
double accuracy(std::span<const int> predictions, std::span<const int> labels);
/// Pixel accuracy over all pixels of all maps.
double accuracy(std::span<const LabelMap> predictions, std::span<const LabelMap> labels);

/// Class predictions for the 8 D4 versions of one image, indexed by code.
struct OrbitPrediction {
  std::string image_id;
  std::vector<int> predictions;
};

/// 100 · (plurality count)/8 for one orbit.
double orbit_agreement(const OrbitPrediction& orbit);
/// Mean of orbit_agreement over images. Throws if an orbit does not hold 8 entries.
double agreement(std::span<const OrbitPrediction> orbits);

enum class EvalProtocol { single, orbit8 };

std::string protocol_name(EvalProtocol p);
EvalProtocol parse_protocol(const std::string& s);

struct EvalReport {
  std::string protocol = "orbit8";
  double accuracy = 0.0;
  /// NaN for segmentation and for the single protocol.
  double agreement = NAN;
  std::vector<double> per_class_accuracy;
  std::size_t n_samples = 0;
  std::size_t n_predictions = 0;

  /// Flat "key=value" lines.
  std::string key_values(const std::string& prefix = "") const;
  static std::string csv_header();
  std::string csv_row() const;
};

/// Parses a key=value block into a map (blank lines and '#' comments skipped).
std::map<std::string, std::string> parse_key_values(const std::string& text);
/// Reads back a report written by EvalReport::key_values with the same prefix.
EvalReport parse_report(const std::string& text, const std::string& prefix = "");

/// Maps a (N,C,H,W) batch to one class per sample.
using ClassPredictor = std::function<std::vector<int>(const Tensor<double>&)>;
/// Maps a (N,C,H,W) batch to one label map per sample.
using PixelPredictor = std::function<std::vector<LabelMap>(const Tensor<double>&)>;

struct OrbitEvaluation {
  EvalReport report;
  std::vector<OrbitPrediction> orbits;
};

/// Classification evaluation. orbit8 predicts all 8 D4 versions of every
/// image (square images only) and scores all 8·n predictions; single scores
/// the untransformed images. Images are fed in batches of `batch` samples.
OrbitEvaluation evaluate_classes(const ClassPredictor& predict, const Dataset& images, EvalProtocol protocol,
                                 std::size_t batch = 64);
/// eval_orbit for classification.
inline OrbitEvaluation eval_orbit(const ClassPredictor& predict, const Dataset& images, std::size_t batch = 64) {
  return evaluate_classes(predict, images, EvalProtocol::orbit8, batch);
}

/// Segmentation evaluation; each transformed prediction is scored against
/// the identically transformed label map. Agreement is not computed.
EvalReport evaluate_pixels(const PixelPredictor& predict, const Dataset& images, EvalProtocol protocol,
                           std::size_t batch = 16);

/// Writes "image_id,code,prediction" rows.
void write_orbits_csv(std::ostream& os, std::span<const OrbitPrediction> orbits);

/// One row of the per-epoch training log.
struct TrainRecord {
  std::size_t epoch = 0;
  double lr = 0.0;
  double loss = 0.0;
  double train_accuracy = 0.0;
  double eval_accuracy = 0.0;
  double agreement = NAN;
};

enum class RecordField { lr, loss, train_accuracy, eval_accuracy, agreement };

double field_value(const TrainRecord& r, RecordField field);

/// Mean of `field` over the final n records.
double last_n_mean(std::span<const TrainRecord> records, std::size_t n, RecordField field);

/// Epoch of the maximum of `field`; the earliest wins ties.
std::size_t best_epoch(std::span<const TrainRecord> records, RecordField field);

/// Header "epoch,lr,loss,train_acc,eval_acc,agreement".
std::string records_csv_header();
/// Values printed with 17 significant digits so CSVs compare bit-for-bit.
std::string records_csv_row(const TrainRecord& r);
std::vector<TrainRecord> read_records_csv(std::istream& is);

/// "%.17g", with "nan" for NaN.
std::string format_real(double v);

}  // namespace rotaflip
