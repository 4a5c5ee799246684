// rotaflip: dataset generation, training, rate sweeps, evaluation and
// gradient checks from the command line.
//
// Exit codes: 0 success, 1 failed gradient check, 2 config/validation
// error, 3 divergence, 4 I/O error.

#include <sys/wait.h>
#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "rotaflip/experiment.hpp"
#include "rotaflip/gradcheck_suite.hpp"

namespace fs = std::filesystem;
using namespace rotaflip;

namespace {

enum Exit { kOk = 0, kCheckFailed = 1, kConfig = 2, kDivergence = 3, kIo = 4 };

struct CommonOptions {
  std::string config;
  std::vector<std::string> overrides;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string out;
  std::string precision;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--config", o.config, "Experiment config file (key=value lines)");
  cmd->add_option("--set", o.overrides, "Override one config key, KEY=VALUE (repeatable)");
  cmd->add_option_function<std::uint64_t>(
      "--seed", [&o](std::uint64_t s) { o.seed = s, o.seed_set = true; }, "Root seed override");
  cmd->add_option("--out", o.out, "Output directory override");
  cmd->add_option("--precision", o.precision, "single or double")->check(CLI::IsMember({"single", "double"}));
}

ExperimentConfig resolve_config(const CommonOptions& o) {
  ExperimentConfig cfg = o.config.empty() ? ExperimentConfig{} : load_config(o.config);
  for (const auto& kv : o.overrides) apply_override(cfg, kv);
  if (o.seed_set) cfg.seed = o.seed;
  if (!o.out.empty()) cfg.output_dir = o.out;
  if (!o.precision.empty()) set_config_value(cfg, "precision", o.precision);
  return cfg;
}

// ---------------------------------------------------------------------------

int cmd_gen(const CommonOptions& o) {
  ExperimentConfig cfg = resolve_config(o);
  if (cfg.dataset.kind == DatasetKind::manifest) throw ConfigError("dataset.kind: gen needs motif or voronoi");
  if (cfg.dataset.kind == DatasetKind::voronoi) cfg.model = ModelKind::unet;
  // only the dataset part of the config matters here
  std::vector<std::string> bad;
  for (const auto& v : violations(cfg))
    if (v.rfind("dataset.", 0) == 0) bad.push_back(v);
  if (!bad.empty()) {
    std::string msg = "invalid dataset spec:";
    for (const auto& v : bad) msg += "\n  - " + v;
    throw ConfigError(msg);
  }
  const Dataset set = load_experiment_dataset(cfg);
  const std::string dir = resolve_output_dir(cfg);
  save_dataset(set, dir);
  std::cout << "wrote " << set.size() << " images to " << dir << '\n';
  if (set.front().is_segmentation()) {
    std::size_t edge = 0, total = 0;
    for (const auto& s : set) {
      edge += static_cast<std::size_t>((s.label_map.array() == kEdgeClass).count());
      total += static_cast<std::size_t>(s.label_map.size());
    }
    std::cout << "pixels body=" << total - edge << " edge=" << edge << '\n';
  } else {
    std::map<int, std::size_t> counts;
    for (const auto& s : set) ++counts[s.label];
    for (const auto& [label, n] : counts) std::cout << "class " << label << ": " << n << '\n';
  }
  return kOk;
}

int cmd_train(const CommonOptions& o) {
  const ExperimentConfig cfg = resolve_config(o);
  validate(cfg);  // before any data or output is touched
  const std::string dir = resolve_output_dir(cfg);
  const RunSummary s = run_experiment(cfg, dir, &std::cerr);
  std::cout << "output: " << dir << '\n' << summary_report(s, cfg.last_n);
  return kOk;
}

// ---------------------------------------------------------------------------

struct SweepOptions {
  std::string param;
  std::vector<double> values;
  int jobs = 1;
};

ExperimentConfig sweep_config(const ExperimentConfig& base, const std::string& param, double value, std::size_t index) {
  ExperimentConfig c = base;
  c.seed = base.seed + index;
  c.regularizer.kind = param == "rotaflip_rate" ? SlotKind::rotaflip : param == "dropout_rate" ? SlotKind::dropout : SlotKind::both;
  c.regularizer.rotaflip_rate = c.regularizer.has_rotaflip() ? value : 0.0;
  c.regularizer.dropout_rate = c.regularizer.has_dropout() ? value : 0.0;
  return c;
}

std::string sweep_setup(const std::string& param, double value) {
  if (value == 0.0) return "baseline";
  if (param == "rotaflip_rate") return "rotaflip";
  if (param == "dropout_rate") return "dropout";
  return "both";
}

/// Runs one sub-run; failures are reported and leave no report.txt.
void sweep_run(const ExperimentConfig& cfg, const std::string& dir) {
  try {
    run_experiment(cfg, dir, nullptr);
  } catch (const std::exception& e) {
    std::cerr << "sub-run " << dir << " failed: " << e.what() << '\n';
  }
}

std::string summary_row(const std::string& setup, double rate, const std::string& dir) {
  std::string last = "nan", best = "nan", test = "nan", agree = "nan";
  std::ifstream is(fs::path(dir) / "report.txt");
  if (is) {
    std::stringstream ss;
    ss << is.rdbuf();
    const auto kv = parse_key_values(ss.str());
    last = kv.at("last_n.eval_accuracy");
    best = kv.at("best.eval_accuracy");
    const EvalReport final_test = parse_report(ss.str(), "final.test.");
    test = format_real(final_test.accuracy);
    agree = format_real(final_test.agreement);
  }
  return setup + "," + format_real(rate) + "," + last + "," + best + "," + test + "," + agree;
}

int cmd_sweep(const CommonOptions& o, const SweepOptions& so) {
  const ExperimentConfig base = resolve_config(o);
  if (so.values.empty()) throw ConfigError("--values must list at least one rate");
  if (so.jobs < 1) throw ConfigError("--jobs must be >= 1");
  std::vector<ExperimentConfig> runs;
  for (std::size_t i = 0; i < so.values.size(); ++i) {
    runs.push_back(sweep_config(base, so.param, so.values[i], i));
    validate(runs.back());
  }
  const std::string root = resolve_output_dir(base);
  fs::create_directories(root);
  std::vector<std::string> dirs;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    char name[64];
    std::snprintf(name, sizeof name, "run_%03zu", i);
    dirs.push_back((fs::path(root) / name).string());
    runs[i].output_dir = dirs.back();
  }

  if (so.jobs == 1) {
    for (std::size_t i = 0; i < runs.size(); ++i) {
      std::cerr << "sweep " << so.param << "=" << so.values[i] << " -> " << dirs[i] << std::endl;
      sweep_run(runs[i], dirs[i]);
    }
  } else {
    std::size_t next = 0, running = 0;
    while (next < runs.size() || running > 0) {
      if (next < runs.size() && running < static_cast<std::size_t>(so.jobs)) {
        std::cout.flush();
        std::cerr.flush();
        const pid_t pid = fork();
        if (pid < 0) throw IoError("fork failed");
        if (pid == 0) {
          sweep_run(runs[next], dirs[next]);
          std::_Exit(0);
        }
        ++next, ++running;
      } else {
        int status = 0;
        if (wait(&status) > 0) --running;
      }
    }
  }

  std::ofstream csv(fs::path(root) / "summary.csv", std::ios::binary);
  if (!csv) throw IoError("cannot write summary.csv in " + root);
  csv << "setup,rate,last10_mean_acc,best_val_acc,test_acc_8version,agreement\n";
  for (std::size_t i = 0; i < runs.size(); ++i) csv << summary_row(sweep_setup(so.param, so.values[i]), so.values[i], dirs[i]) << '\n';
  if (!csv) throw IoError("write failed: summary.csv");
  std::cout << "summary: " << (fs::path(root) / "summary.csv").string() << '\n';
  return kOk;
}

// ---------------------------------------------------------------------------

struct EvalOptions {
  std::string checkpoint;
  std::string protocol = "orbit8";
  std::string split = "test";
  std::string manifest;
};

int cmd_eval(const CommonOptions& o, const EvalOptions& eo) {
  ExperimentConfig cfg = resolve_config(o);
  const EvalProtocol protocol = parse_protocol(eo.protocol);
  validate(cfg);
  Dataset images;
  if (!eo.manifest.empty()) {
    images = load_dataset(eo.manifest);
  } else {
    const Dataset set = load_experiment_dataset(cfg);
    const ExperimentSplit sp = split_experiment(cfg, set);
    if (eo.split == "test")
      images = sp.test;
    else if (eo.split == "validation")
      images = sp.validation;
    else if (eo.split == "train")
      images = sp.train;
    else
      images = set;
    if (images.empty()) throw ConfigError("split '" + eo.split + "' is empty for this fold configuration");
  }
  std::vector<OrbitPrediction> orbits;
  const EvalReport r = evaluate_checkpoint(cfg, eo.checkpoint, images, protocol, &orbits);
  std::cout << r.key_values();
  if (!o.out.empty()) {
    fs::create_directories(o.out);
    std::ofstream rep(fs::path(o.out) / "eval_report.txt", std::ios::binary);
    rep << r.key_values();
    std::ofstream csv(fs::path(o.out) / "eval_report.csv", std::ios::binary);
    csv << EvalReport::csv_header() << '\n' << r.csv_row() << '\n';
    if (!orbits.empty()) {
      std::ofstream ob(fs::path(o.out) / "orbits.csv", std::ios::binary);
      write_orbits_csv(ob, orbits);
    }
    if (!rep || !csv) throw IoError("cannot write evaluation output in " + o.out);
  }
  return kOk;
}

// ---------------------------------------------------------------------------

struct GradcheckCliOptions {
  std::string target = "all";
  std::size_t seeds = 1;
  std::uint64_t first_seed = 1;
  double tolerance = 1e-5;
};

int cmd_gradcheck(const GradcheckCliOptions& g) {
  double worst = 0.0;
  auto show = [&](const std::string& name, std::uint64_t seed, const GradcheckReport& r) {
    worst = std::max(worst, r.worst());
    std::printf("%-18s seed=%-4llu worst=%.3e %s\n", name.c_str(), static_cast<unsigned long long>(seed), r.worst(),
                r.passed(g.tolerance) ? "ok" : "FAIL");
    if (!r.passed(g.tolerance)) std::fputs(r.str().c_str(), stdout);
  };
  for (std::size_t k = 0; k < g.seeds; ++k) {
    const std::uint64_t seed = g.first_seed + k;
    if (g.target == "all" || g.target == "layers")
      for (const auto& res : gradcheck_layers(seed)) show(res.name, seed, res.report);
    if (g.target == "all" || g.target == "densenet") show("densenet", seed, gradcheck_model_kind("densenet", seed));
    if (g.target == "all" || g.target == "unet") show("unet", seed, gradcheck_model_kind("unet", seed));
  }
  std::printf("worst relative error %.3e (tolerance %.1e)\n", worst, g.tolerance);
  return worst < g.tolerance ? kOk : kCheckFailed;
}

}  // namespace

int main(int argc, char** argv) {
  rotaflip::keep_heap_resident();
  CLI::App app{"rotaflip: D4 feature-map regularizer experiments"};
  app.require_subcommand(1);

  CommonOptions gen_o, train_o, sweep_o, eval_o;
  auto* gen = app.add_subcommand("gen", "Generate a synthetic dataset as PNM files plus manifest.csv");
  add_common(gen, gen_o);
  auto* train = app.add_subcommand("train", "Train one configuration");
  add_common(train, train_o);
  auto* sweep = app.add_subcommand("sweep", "Train once per regularizer rate and summarize");
  add_common(sweep, sweep_o);
  SweepOptions so;
  sweep->add_option("--param", so.param, "Swept rate")
      ->required()
      ->check(CLI::IsMember({"rotaflip_rate", "dropout_rate", "both"}));
  sweep->add_option("--values", so.values, "Rates, comma separated")->required()->delimiter(',');
  sweep->add_option("--jobs", so.jobs, "Parallel sub-run processes");
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  add_common(eval, eval_o);
  EvalOptions eo;
  eval->add_option("--checkpoint", eo.checkpoint, "Checkpoint directory")->required();
  eval->add_option("--protocol", eo.protocol, "single or orbit8")->check(CLI::IsMember({"single", "orbit8"}));
  eval->add_option("--split", eo.split, "test, validation, train or all")
      ->check(CLI::IsMember({"test", "validation", "train", "all"}));
  eval->add_option("--manifest", eo.manifest, "Evaluate a dataset directory instead of the config's split");
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient checks in double precision");
  GradcheckCliOptions go;
  gc->add_option("--target", go.target, "layers, densenet, unet or all")
      ->check(CLI::IsMember({"all", "layers", "densenet", "unet"}));
  gc->add_option("--seeds", go.seeds, "Number of seeds");
  gc->add_option("--first-seed", go.first_seed, "First seed");
  gc->add_option("--tolerance", go.tolerance, "Maximum relative error");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (*gen) return cmd_gen(gen_o);
    if (*train) return cmd_train(train_o);
    if (*sweep) return cmd_sweep(sweep_o, so);
    if (*eval) return cmd_eval(eval_o, eo);
    if (*gc) return cmd_gradcheck(go);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const ShapeError& e) {
    std::cerr << "shape error: " << e.what() << '\n';
    return kConfig;
  } catch (const DivergenceError& e) {
    std::cerr << "diverged: " << e.what() << '\n';
    return kDivergence;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return kIo;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return kIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return kOk;
}
