#include "rotaflip/experiment.hpp"

#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace rotaflip {

namespace fs = std::filesystem;

Dataset load_experiment_dataset(const ExperimentConfig& cfg) {
  switch (cfg.dataset.kind) {
    case DatasetKind::motif: return gen_motif_classification(cfg.dataset.motif_params(), cfg.dataset.seed);
    case DatasetKind::voronoi: return gen_voronoi_segmentation(cfg.dataset.voronoi_params(), cfg.dataset.seed);
    case DatasetKind::manifest: return load_dataset(cfg.dataset.path);
  }
  throw ConfigError("dataset.kind not handled");
}

ExperimentSplit split_experiment(const ExperimentConfig& cfg, const Dataset& set) {
  const FoldSplit folds = split_folds(set, cfg.folds.count, cfg.folds.seed);
  const SplitIndices idx = split_roles(set, folds, cfg.folds.test, cfg.folds.validation);
  return {select(set, idx.train), select(set, idx.validation), select(set, idx.test)};
}

template <class S>
Model<S> build_experiment_model(const ExperimentConfig& cfg, const Shape& s) {
  Model<S> m = cfg.model == ModelKind::densenet ? build_densenet<S>(densenet_config(cfg, s.c, s.h, s.w))
                                                : build_unet<S>(unet_config(cfg, s.c, s.h, s.w));
  m.initialize(cfg.seed);
  m.seed_stochastic(cfg.seed);
  return m;
}

template Model<float> build_experiment_model<float>(const ExperimentConfig&, const Shape&);
template Model<double> build_experiment_model<double>(const ExperimentConfig&, const Shape&);

std::string resolve_output_dir(const ExperimentConfig& cfg) {
  auto taken = [](const fs::path& p) { return fs::exists(p) && !(fs::is_directory(p) && fs::is_empty(p)); };
  const fs::path base(cfg.output_dir);
  if (!taken(base)) return base.string();
  if (cfg.on_exists == OnExists::refuse)
    throw IoError("output directory " + base.string() + " exists and output.on_exists=refuse");
  for (int k = 1;; ++k) {
    fs::path p = base;
    p += "_" + std::to_string(k);
    if (!taken(p)) return p.string();
  }
}

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path.string());
  os << text;
  if (!os) throw IoError("write failed: " + path.string());
}

void check_dataset_matches(const ExperimentConfig& cfg, const Dataset& set) {
  if (set.empty()) throw ConfigError("dataset is empty");
  const bool seg = set.front().is_segmentation();
  if (seg != (cfg.model == ModelKind::unet))
    throw ConfigError(std::string("model.kind=") + (cfg.model == ModelKind::unet ? "unet" : "densenet") +
                      " does not match a " + (seg ? "segmentation" : "classification") + " dataset");
  for (const auto& s : set) {
    if (s.pixels.shape() != set.front().pixels.shape())
      throw ShapeError("dataset images must share one shape; " + s.id + " is " + s.pixels.shape().str());
    if (!seg && (s.label < 0 || static_cast<std::size_t>(s.label) >= cfg.classes))
      throw ConfigError("label of " + s.id + " outside [0, model.classes)");
  }
}

template <class S>
RunSummary run_typed(const ExperimentConfig& cfg, const Dataset& set, const fs::path& out, std::ostream* log) {
  const ExperimentSplit split = split_experiment(cfg, set);
  if (split.train.empty()) throw ConfigError("fold split leaves no training samples");
  Model<S> model = build_experiment_model<S>(cfg, set.front().pixels.shape());

  TrainSettings ts;
  ts.seed = cfg.seed;
  ts.schedule = cfg.schedule;
  ts.optimizer = cfg.optimizer;
  ts.batch_size = cfg.batch_size;
  ts.balanced = cfg.balanced;
  ts.augment = cfg.augment;
  ts.eval_protocol = cfg.eval_protocol;
  ts.eval_batch = cfg.eval_batch;
  Trainer<S> trainer(model, ts);

  const fs::path final_dir = out / "checkpoints" / "final";
  const fs::path best_dir = out / "checkpoints" / "best";
  std::ofstream csv(out / "records.csv", std::ios::binary);
  if (!csv) throw IoError("cannot write " + (out / "records.csv").string());
  csv << records_csv_header() << '\n' << std::flush;

  RunSummary summary;
  summary.output_dir = out.string();
  summary.eval_set = split.eval_name();
  trainer.on_epoch = [&](const TrainRecord& r) {
    csv << records_csv_row(r) << '\n' << std::flush;
    if (!csv) throw IoError("write failed: records.csv");
    if (summary.best_epoch < 0 || r.eval_accuracy > summary.best_eval_accuracy) {
      summary.best_epoch = static_cast<long>(r.epoch);
      summary.best_eval_accuracy = r.eval_accuracy;
      model.save(best_dir);
    }
    if (log) {
      *log << "epoch " << r.epoch << " lr=" << r.lr << " loss=" << r.loss << " train_acc=" << r.train_accuracy
           << " " << summary.eval_set << "_acc=" << r.eval_accuracy << " agreement=" << r.agreement << std::endl;
    }
  };
  summary.records = trainer.fit(split.train, split.eval());
  model.save(final_dir);

  const std::size_t n = std::min(cfg.last_n, summary.records.size());
  if (n > 0) {
    summary.last_n_eval_accuracy = last_n_mean(summary.records, n, RecordField::eval_accuracy);
    summary.last_n_agreement = last_n_mean(summary.records, n, RecordField::agreement);
  }
  if (!split.test.empty()) {
    std::vector<OrbitPrediction> orbits;
    summary.final_test = trainer.evaluate(split.test, EvalProtocol::orbit8, &orbits);
    summary.final_test_single = trainer.evaluate(split.test, EvalProtocol::single);
    if (!orbits.empty()) {
      std::ofstream os(out / "orbits_test.csv", std::ios::binary);
      write_orbits_csv(os, orbits);
      if (!os) throw IoError("write failed: orbits_test.csv");
    }
    if (summary.best_epoch >= 0) {
      model.load(best_dir);
      summary.best_test = trainer.evaluate(split.test, EvalProtocol::orbit8);
      summary.best_test_single = trainer.evaluate(split.test, EvalProtocol::single);
    } else {
      summary.best_test = summary.final_test;
      summary.best_test_single = summary.final_test_single;
    }
  }
  write_text(out / "report.txt", summary_report(summary, cfg.last_n));
  return summary;
}

}  // namespace

RunSummary run_experiment(const ExperimentConfig& cfg, const Dataset& set, const std::string& out_dir, std::ostream* log) {
  validate(cfg);
  check_dataset_matches(cfg, set);
  const fs::path out(out_dir);
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw IoError("cannot create output directory " + out_dir + ": " + ec.message());
  ExperimentConfig echo = cfg;
  echo.output_dir = out_dir;
  write_text(out / "config.txt", emit_config(echo));
  if (cfg.precision == Precision::double_) return run_typed<double>(cfg, set, out, log);
  return run_typed<float>(cfg, set, out, log);
}

RunSummary run_experiment(const ExperimentConfig& cfg, const std::string& out_dir, std::ostream* log) {
  validate(cfg);
  return run_experiment(cfg, load_experiment_dataset(cfg), out_dir, log);
}

std::string summary_report(const RunSummary& s, std::size_t last_n) {
  std::ostringstream os;
  os << "epochs=" << s.records.size() << '\n';
  os << "eval_set=" << s.eval_set << '\n';
  os << "last_n=" << std::min(last_n, s.records.size()) << '\n';
  os << "last_n.eval_accuracy=" << format_real(s.last_n_eval_accuracy) << '\n';
  os << "last_n.agreement=" << format_real(s.last_n_agreement) << '\n';
  os << "best.epoch=" << s.best_epoch << '\n';
  os << "best.eval_accuracy=" << format_real(s.best_eval_accuracy) << '\n';
  os << s.final_test.key_values("final.test.");
  os << s.best_test.key_values("best.test.");
  os << s.final_test_single.key_values("final.test_single.");
  os << s.best_test_single.key_values("best.test_single.");
  return os.str();
}

EvalReport evaluate_checkpoint(const ExperimentConfig& cfg, const std::string& checkpoint_dir, const Dataset& images,
                               EvalProtocol protocol, std::vector<OrbitPrediction>* orbits) {
  validate(cfg);
  check_dataset_matches(cfg, images);
  auto run = [&](auto tag) {
    using S = decltype(tag);
    Model<S> model = build_experiment_model<S>(cfg, images.front().pixels.shape());
    model.load(checkpoint_dir);
    TrainSettings ts;
    ts.eval_batch = cfg.eval_batch;
    Trainer<S> trainer(model, ts);
    return trainer.evaluate(images, protocol, orbits);
  };
  if (cfg.precision == Precision::double_) return run(double{});
  return run(float{});
}

void keep_heap_resident() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

}  // namespace rotaflip
