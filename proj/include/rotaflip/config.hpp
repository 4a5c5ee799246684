#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rotaflip/data.hpp"
#include "rotaflip/metrics.hpp"
#include "rotaflip/models.hpp"
#include "rotaflip/optim.hpp"

namespace rotaflip {

enum class ModelKind { densenet, unet };
enum class DatasetKind { motif, voronoi, manifest };
enum class OnExists { suffix, refuse };

struct DatasetSpec {
  DatasetKind kind = DatasetKind::motif;
  std::uint64_t seed = 1;
  std::size_t n = 2500;
  std::size_t size = 32;
  MotifParams motif;
  VoronoiParams voronoi;
  /// Directory holding manifest.csv (kind=manifest).
  std::string path;

  MotifParams motif_params() const;
  VoronoiParams voronoi_params() const;
};

struct FoldSpec {
  std::size_t count = 5;
  std::size_t test = 0;
  /// -1: no validation fold; per-epoch evaluation then runs on the test fold.
  int validation = -1;
  std::uint64_t seed = 1;
};

/// Everything needed to reproduce one training run.
struct ExperimentConfig {
  std::uint64_t seed = 1;
  Precision precision = Precision::single;

  ModelKind model = ModelKind::densenet;
  std::size_t classes = 2;
  DenseNetConfig densenet;
  UnetConfig unet;
  NormSettings norm;
  RegularizerSlot regularizer;

  Schedule schedule{0.001, 0.99, 30};
  NadamSettings optimizer;
  std::size_t batch_size = 32;
  /// Class-balanced batches (classification only).
  bool balanced = true;

  DatasetSpec dataset;
  FoldSpec folds;
  AugmentPolicy augment;

  EvalProtocol eval_protocol = EvalProtocol::orbit8;
  std::size_t last_n = 10;
  std::size_t eval_batch = 64;

  std::string output_dir = "runs/default";
  OnExists on_exists = OnExists::suffix;
};

/// Starts from the defaults and applies every key=value line. Unknown keys,
/// duplicate keys and malformed values raise ConfigError naming the key.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::string& path);

/// Every key, one per line, in a fixed order; parse_config(emit_config(c))
/// reproduces c exactly.
std::string emit_config(const ExperimentConfig& cfg);

/// Applies one "key=value" override.
void set_config_value(ExperimentConfig& cfg, const std::string& key, const std::string& value);
void apply_override(ExperimentConfig& cfg, const std::string& assignment);

/// Human-readable constraint violations; empty when the config is usable.
std::vector<std::string> violations(const ExperimentConfig& cfg);
/// Throws ConfigError listing all violations.
void validate(const ExperimentConfig& cfg);

/// Model configs with the regularizer, norm settings and input dimensions filled in.
DenseNetConfig densenet_config(const ExperimentConfig& cfg, std::size_t channels, std::size_t height, std::size_t width);
UnetConfig unet_config(const ExperimentConfig& cfg, std::size_t channels, std::size_t height, std::size_t width);

std::string precision_name(Precision p);

}  // namespace rotaflip
