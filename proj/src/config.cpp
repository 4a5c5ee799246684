#include "rotaflip/config.hpp"

#include <fstream>
#include <functional>
#include <set>
#include <sstream>

namespace rotaflip {

namespace {

std::uint64_t to_uint(const std::string& key, const std::string& v) {
  if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos)
    throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  try {
    return std::stoull(v);
  } catch (const std::out_of_range&) {
    throw ConfigError(key + ": value out of range '" + v + "'");
  }
}

int to_int(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const int x = std::stoi(v, &used);
    if (used == v.size()) return x;
  } catch (const std::logic_error&) {
  }
  throw ConfigError(key + ": expected an integer, got '" + v + "'");
}

double to_real(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double x = std::stod(v, &used);
    if (used == v.size()) return x;
  } catch (const std::logic_error&) {
  }
  throw ConfigError(key + ": expected a real number, got '" + v + "'");
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true") return true;
  if (v == "false") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

std::vector<std::size_t> to_list(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  if (v.empty()) return out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(to_uint(key, item));
  return out;
}

std::string from_list(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

std::string from_bool(bool b) { return b ? "true" : "false"; }

template <class E>
E to_enum(const std::string& key, const std::string& v, std::initializer_list<std::pair<const char*, E>> options) {
  std::string names;
  for (const auto& [name, value] : options) {
    if (v == name) return value;
    names += (names.empty() ? "" : "|") + std::string(name);
  }
  throw ConfigError(key + ": unknown value '" + v + "' (" + names + ")");
}

struct Field {
  const char* key;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string& key, const std::string&)> set;
};

#define RF_UINT(KEY, MEMBER)                                                                               \
  Field {                                                                                                  \
    KEY, [](const ExperimentConfig& c) { return std::to_string(c.MEMBER); },                              \
        [](ExperimentConfig& c, const std::string& k, const std::string& v) {                            \
          c.MEMBER = static_cast<decltype(c.MEMBER)>(to_uint(k, v));                                       \
        }                                                                                                  \
  }
#define RF_REAL(KEY, MEMBER)                                                                               \
  Field {                                                                                                  \
    KEY, [](const ExperimentConfig& c) { return format_real(c.MEMBER); },                                 \
        [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.MEMBER = to_real(k, v); } \
  }
#define RF_BOOL(KEY, MEMBER)                                                                               \
  Field {                                                                                                  \
    KEY, [](const ExperimentConfig& c) { return from_bool(c.MEMBER); },                                   \
        [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.MEMBER = to_bool(k, v); } \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      RF_UINT("seed", seed),
      {"precision", [](const ExperimentConfig& c) { return precision_name(c.precision); },
       [](ExperimentConfig& c, const std::string& k, const std::string& v) {
         c.precision = to_enum<Precision>(k, v, {{"single", Precision::single}, {"double", Precision::double_}});
       }},

      {"model.kind", [](const ExperimentConfig& c) { return std::string(c.model == ModelKind::densenet ? "densenet" : "unet"); },
       [](ExperimentConfig& c, const std::string& k, const std::string& v) {
         c.model = to_enum<ModelKind>(k, v, {{"densenet", ModelKind::densenet}, {"unet", ModelKind::unet}});
       }},
      RF_UINT("model.classes", classes),
      RF_UINT("model.densenet.growth_rate", densenet.growth_rate),
      {"model.densenet.block_sizes", [](const ExperimentConfig& c) { return from_list(c.densenet.block_sizes); },
       [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.densenet.block_sizes = to_list(k, v); }},
      RF_UINT("model.densenet.stem_channels", densenet.stem_channels),
      {"model.densenet.stem",
       [](const ExperimentConfig& c) { return std::string(c.densenet.stem == StemKind::conv3 ? "conv3" : "conv7_stride2"); },
       [](ExperimentConfig& c, const std::string& k, const std::string& v) {
         c.densenet.stem = to_enum<StemKind>(k, v, {{"conv3", StemKind::conv3}, {"conv7_stride2", StemKind::conv7_stride2}});
       }},
      {"model.unet.filters", [](const ExperimentConfig& c) { return from_list(c.unet.filters); },
       [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.unet.filters = to_list(k, v); }},
      RF_REAL("model.unet.dropout_between_convs", unet.dropout_between_convs),
      RF_REAL("model.norm.momentum", norm.momentum),
      RF_REAL("model.norm.epsilon", norm.epsilon),

      {"regularizer.kind", [](const ExperimentConfig& c) { return std::string(slot_kind_name(c.regularizer.kind)); },
       [](ExperimentConfig& c, const std::string&, const std::string& v) { c.regularizer.kind = parse_slot_kind(v); }},
      RF_REAL("regularizer.rotaflip_rate", regularizer.rotaflip_rate),
      RF_REAL("regularizer.dropout_rate", regularizer.dropout_rate),
      RF_BOOL("regularizer.include_identity", regularizer.include_identity),
      RF_BOOL("regularizer.shared_per_channel", regularizer.shared_per_channel),

      RF_REAL("schedule.initial_lr", schedule.initial_lr),
      RF_REAL("schedule.decay", schedule.decay),
      RF_UINT("schedule.epochs", schedule.epochs),
      RF_REAL("optimizer.beta1", optimizer.beta1),
      RF_REAL("optimizer.beta2", optimizer.beta2),
      RF_REAL("optimizer.epsilon", optimizer.epsilon),
      RF_UINT("batch_size", batch_size),
      RF_BOOL("batching.balanced", balanced),

      {"dataset.kind",
       [](const ExperimentConfig& c) {
         return std::string(c.dataset.kind == DatasetKind::motif     ? "motif"
                            : c.dataset.kind == DatasetKind::voronoi ? "voronoi"
                                                                     : "manifest");
       },
       [](ExperimentConfig& c, const std::string& k, const std::string& v) {
         c.dataset.kind = to_enum<DatasetKind>(
             k, v, {{"motif", DatasetKind::motif}, {"voronoi", DatasetKind::voronoi}, {"manifest", DatasetKind::manifest}});
       }},
      RF_UINT("dataset.seed", dataset.seed),
      RF_UINT("dataset.n", dataset.n),
      RF_UINT("dataset.size", dataset.size),
      RF_REAL("dataset.motif.contrast", dataset.motif.contrast),
      RF_REAL("dataset.motif.noise", dataset.motif.noise),
      RF_UINT("dataset.motif.max_clutter", dataset.motif.max_clutter),
      RF_UINT("dataset.voronoi.cells", dataset.voronoi.cells),
      RF_UINT("dataset.voronoi.edge_width", dataset.voronoi.edge_width),
      RF_REAL("dataset.voronoi.noise", dataset.voronoi.noise),
      {"dataset.path", [](const ExperimentConfig& c) { return c.dataset.path; },
       [](ExperimentConfig& c, const std::string&, const std::string& v) { c.dataset.path = v; }},

      RF_UINT("folds.count", folds.count),
      RF_UINT("folds.test", folds.test),
      {"folds.validation", [](const ExperimentConfig& c) { return std::to_string(c.folds.validation); },
       [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.folds.validation = to_int(k, v); }},
      RF_UINT("folds.seed", folds.seed),

      RF_BOOL("augment.d4", augment.use_d4),
      {"augment.subset",
       [](const ExperimentConfig& c) {
         std::vector<std::size_t> v;
         for (D4Code t : c.augment.subset) v.push_back(static_cast<std::size_t>(rotaflip::to_int(t)));
         return from_list(v);
       },
       [](ExperimentConfig& c, const std::string& k, const std::string& v) {
         c.augment.subset.clear();
         for (std::size_t code : to_list(k, v)) {
           if (code > 7) throw ConfigError(k + ": D4 code " + std::to_string(code) + " out of range 0..7");
           c.augment.subset.push_back(d4_from_int(static_cast<int>(code)));
         }
       }},

      {"eval.protocol", [](const ExperimentConfig& c) { return protocol_name(c.eval_protocol); },
       [](ExperimentConfig& c, const std::string&, const std::string& v) { c.eval_protocol = parse_protocol(v); }},
      RF_UINT("eval.last_n", last_n),
      RF_UINT("eval.batch", eval_batch),

      {"output.dir", [](const ExperimentConfig& c) { return c.output_dir; },
       [](ExperimentConfig& c, const std::string&, const std::string& v) { c.output_dir = v; }},
      {"output.on_exists", [](const ExperimentConfig& c) { return std::string(c.on_exists == OnExists::suffix ? "suffix" : "refuse"); },
       [](ExperimentConfig& c, const std::string& k, const std::string& v) {
         c.on_exists = to_enum<OnExists>(k, v, {{"suffix", OnExists::suffix}, {"refuse", OnExists::refuse}});
       }},
  };
  return table;
}

#undef RF_UINT
#undef RF_REAL
#undef RF_BOOL

}  // namespace

std::string precision_name(Precision p) { return p == Precision::single ? "single" : "double"; }

MotifParams DatasetSpec::motif_params() const {
  MotifParams p = motif;
  p.n = n;
  p.size = size;
  return p;
}

VoronoiParams DatasetSpec::voronoi_params() const {
  VoronoiParams p = voronoi;
  p.n = n;
  p.size = size;
  return p;
}

void set_config_value(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
  for (const Field& f : fields())
    if (key == f.key) {
      f.set(cfg, key, value);
      return;
    }
  throw ConfigError("unknown config key '" + key + "'");
}

void apply_override(ExperimentConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not KEY=VALUE");
  set_config_value(cfg, assignment.substr(0, eq), assignment.substr(eq + 1));
}

ExperimentConfig parse_config(const std::string& text) {
  ExperimentConfig cfg;
  for (const auto& [key, value] : parse_key_values(text)) set_config_value(cfg, key, value);
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  try {
    return parse_config(ss.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

std::string emit_config(const ExperimentConfig& cfg) {
  std::string out;
  for (const Field& f : fields()) out += std::string(f.key) + "=" + f.get(cfg) + "\n";
  return out;
}

std::vector<std::string> violations(const ExperimentConfig& cfg) {
  std::vector<std::string> v;
  if (cfg.batch_size == 0) v.push_back("batch_size must be positive");
  const bool classification = cfg.model == ModelKind::densenet;
  if (classification && cfg.balanced && cfg.batch_size % 2 != 0)
    v.push_back("batch_size must be even for balanced batching");
  if (!(cfg.schedule.initial_lr > 0.0)) v.push_back("schedule.initial_lr must be positive");
  if (!(cfg.schedule.decay > 0.0 && cfg.schedule.decay <= 1.0)) v.push_back("schedule.decay must be in (0,1]");
  if (!(cfg.optimizer.beta1 >= 0.0 && cfg.optimizer.beta1 < 1.0)) v.push_back("optimizer.beta1 must be in [0,1)");
  if (!(cfg.optimizer.beta2 >= 0.0 && cfg.optimizer.beta2 < 1.0)) v.push_back("optimizer.beta2 must be in [0,1)");
  if (!(cfg.optimizer.epsilon > 0.0)) v.push_back("optimizer.epsilon must be positive");
  if (!(cfg.norm.momentum >= 0.0 && cfg.norm.momentum <= 1.0)) v.push_back("model.norm.momentum must be in [0,1]");
  if (!(cfg.norm.epsilon > 0.0)) v.push_back("model.norm.epsilon must be positive");
  if (cfg.last_n == 0) v.push_back("eval.last_n must be >= 1");
  if (cfg.eval_batch == 0) v.push_back("eval.batch must be positive");
  if (cfg.output_dir.empty()) v.push_back("output.dir must be set");

  // dataset
  switch (cfg.dataset.kind) {
    case DatasetKind::motif:
      if (!classification) v.push_back("dataset.kind=motif is a classification set; use model.kind=densenet");
      if (cfg.dataset.size < 16) v.push_back("dataset.size must be >= 16 for motif, got " + std::to_string(cfg.dataset.size));
      if (cfg.dataset.n == 0 || cfg.dataset.n % 2) v.push_back("dataset.n must be a positive even count for motif");
      if (cfg.classes != 2) v.push_back("model.classes must be 2 for motif");
      break;
    case DatasetKind::voronoi:
      if (classification) v.push_back("dataset.kind=voronoi is a segmentation set; use model.kind=unet");
      if (cfg.dataset.size == 0 || cfg.dataset.size % 8)
        v.push_back("dataset.size must be a positive multiple of 8 for voronoi, got " + std::to_string(cfg.dataset.size));
      if (cfg.dataset.voronoi.cells < 4) v.push_back("dataset.voronoi.cells must be >= 4");
      if (cfg.dataset.voronoi.edge_width == 0) v.push_back("dataset.voronoi.edge_width must be >= 1");
      if (cfg.dataset.n == 0) v.push_back("dataset.n must be positive");
      if (cfg.classes != 2) v.push_back("model.classes must be 2 for voronoi");
      break;
    case DatasetKind::manifest:
      if (cfg.dataset.path.empty()) v.push_back("dataset.path must be set for dataset.kind=manifest");
      break;
  }
  if (cfg.folds.count < 2) v.push_back("folds.count must be >= 2");
  if (cfg.folds.test >= cfg.folds.count) v.push_back("folds.test must be < folds.count");
  if (cfg.folds.validation >= static_cast<int>(cfg.folds.count) || cfg.folds.validation < -1 ||
      cfg.folds.validation == static_cast<int>(cfg.folds.test))
    v.push_back("folds.validation must be -1 or a fold other than folds.test");
  if (cfg.dataset.kind != DatasetKind::manifest && cfg.dataset.n < cfg.folds.count)
    v.push_back("folds.count must be <= dataset.n");
  std::set<D4Code> seen;
  for (D4Code t : cfg.augment.subset)
    if (!seen.insert(t).second) v.push_back("augment.subset lists a code twice");

  // model, with the input implied by generated datasets
  if (cfg.dataset.kind != DatasetKind::manifest) {
    const std::size_t s = cfg.dataset.size;
    const auto mv = classification ? densenet_config(cfg, 1, s, s).violations() : unet_config(cfg, 1, s, s).violations();
    v.insert(v.end(), mv.begin(), mv.end());
  } else {
    cfg.regularizer.collect_violations(v);
  }
  return v;
}

void validate(const ExperimentConfig& cfg) {
  const auto v = violations(cfg);
  if (v.empty()) return;
  std::string msg = "invalid config:";
  for (const auto& s : v) msg += "\n  - " + s;
  throw ConfigError(msg);
}

DenseNetConfig densenet_config(const ExperimentConfig& cfg, std::size_t channels, std::size_t height, std::size_t width) {
  DenseNetConfig d = cfg.densenet;
  d.channels = channels;
  d.height = height;
  d.width = width;
  d.classes = cfg.classes;
  d.slot = cfg.regularizer;
  d.norm = cfg.norm;
  return d;
}

UnetConfig unet_config(const ExperimentConfig& cfg, std::size_t channels, std::size_t height, std::size_t width) {
  UnetConfig u = cfg.unet;
  u.channels = channels;
  u.height = height;
  u.width = width;
  u.classes = cfg.classes;
  u.slot = cfg.regularizer;
  u.norm = cfg.norm;
  return u;
}

}  // namespace rotaflip
