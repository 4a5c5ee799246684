#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "rotaflip/config.hpp"
#include "rotaflip/trainer.hpp"

namespace rotaflip {

/// Generates or loads the configured dataset.
Dataset load_experiment_dataset(const ExperimentConfig& cfg);

/// Train/validation/test sets cut from `set` by the configured folds.
struct ExperimentSplit {
  Dataset train, validation, test;
  /// Per-epoch evaluation set: validation when present, else test.
  const Dataset& eval() const { return validation.empty() ? test : validation; }
  std::string eval_name() const { return validation.empty() ? "test" : "validation"; }
};
ExperimentSplit split_experiment(const ExperimentConfig& cfg, const Dataset& set);

/// Model for the configured kind, initialized and seeded from cfg.seed.
template <class S>
Model<S> build_experiment_model(const ExperimentConfig& cfg, const Shape& sample_shape);

/// Outcome of one training run.
struct RunSummary {
  std::string output_dir;
  std::vector<TrainRecord> records;
  std::string eval_set;
  double last_n_eval_accuracy = NAN;
  double last_n_agreement = NAN;
  double best_eval_accuracy = NAN;
  long best_epoch = -1;
  /// Test-set evaluation of the final and best-epoch parameters, all eight
  /// versions and untransformed only.
  EvalReport final_test;
  EvalReport best_test;
  EvalReport final_test_single;
  EvalReport best_test_single;
};

/// Picks the output directory: as configured if absent or empty, otherwise a
/// numbered suffix or an IoError, per output.on_exists.
std::string resolve_output_dir(const ExperimentConfig& cfg);

/// Runs a full experiment and writes, under `out_dir`:
///   config.txt, records.csv, checkpoints/{final,best}/, report.txt,
///   orbits_test.csv (classification).
/// Validates first; DivergenceError propagates after records.csv holds the
/// completed epochs. `log` receives one progress line per epoch if non-null.
RunSummary run_experiment(const ExperimentConfig& cfg, const std::string& out_dir, std::ostream* log = nullptr);

/// Same, on an already prepared dataset.
RunSummary run_experiment(const ExperimentConfig& cfg, const Dataset& set, const std::string& out_dir,
                          std::ostream* log = nullptr);

/// Key=value text of a summary, as written to report.txt.
std::string summary_report(const RunSummary& s, std::size_t last_n);

/// Evaluates a checkpoint directory on `images`.
EvalReport evaluate_checkpoint(const ExperimentConfig& cfg, const std::string& checkpoint_dir, const Dataset& images,
                               EvalProtocol protocol, std::vector<OrbitPrediction>* orbits = nullptr);

/// Keeps freed activation buffers in the heap instead of returning them to
/// the OS, which otherwise page-faults every batch. No-op outside glibc.
void keep_heap_resident();

}  // namespace rotaflip
