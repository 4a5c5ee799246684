#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "rotaflip/d4.hpp"
#include "rotaflip/rng.hpp"
#include "rotaflip/tensor.hpp"

namespace rotaflip {

/// One dataset item. Pixels are (1,C,H,W) in [0,1]. Classification samples
/// carry `label`; segmentation samples carry an H×W `label_map` and label -1.
struct LabeledImage {
  std::string id;
  Tensor<double> pixels;
  int label = -1;
  LabelMap label_map;

  bool is_segmentation() const noexcept { return label_map.size() > 0; }
  std::size_t channels() const noexcept { return pixels.shape().c; }
  std::size_t height() const noexcept { return pixels.shape().h; }
  std::size_t width() const noexcept { return pixels.shape().w; }
};

using Dataset = std::vector<LabeledImage>;

// ---------------------------------------------------------------------------
// Generators

struct MotifParams {
  std::size_t n = 100;
  std::size_t size = 32;
  /// Motif brightness above the local background.
  double contrast = 0.30;
  /// Per-pixel Gaussian noise sd added after the smoothed texture.
  double noise = 0.08;
  /// Upper bound on short clutter strokes per image (count drawn uniformly).
  std::size_t max_clutter = 4;
};

/// Binary set: label 1 images hold an L-shaped stamp, label 0 a straight bar
/// of the same pixel count. Position and D4 orientation are uniform, so the
/// label is D4-invariant. Labels alternate 0,1,0,1... by index.
Dataset gen_motif_classification(const MotifParams& params, std::uint64_t seed);

struct VoronoiParams {
  std::size_t n = 200;
  std::size_t size = 64;
  std::size_t cells = 12;
  std::size_t edge_width = 1;
  double noise = 0.06;
};

inline constexpr int kBodyClass = 0;
inline constexpr int kEdgeClass = 1;

/// Nearest-seed cell id (squared Euclidean, lowest seed index wins ties) for
/// every pixel of a size×size map.
LabelMap voronoi_cells(std::span<const std::pair<int, int>> seeds, std::size_t size);

/// Edge class where any pixel within Chebyshev distance `edge_width` belongs
/// to another cell, body class elsewhere.
LabelMap voronoi_edges(const LabelMap& cells, std::size_t edge_width);

/// Segmentation set of shaded Voronoi cells with darkened boundaries.
Dataset gen_voronoi_segmentation(const VoronoiParams& params, std::uint64_t seed);

// ---------------------------------------------------------------------------
// PNM (binary P5/P6, maxval 255)

/// Parses a P5 or P6 stream into (1,C,H,W) pixels scaled by 1/255.
Tensor<double> read_pnm(std::istream& is);
/// Raw 8-bit values of a P5 stream, used for label maps.
LabelMap read_pgm_raw(std::istream& is);
/// Writes 1 channel as P5, 3 channels as P6. Values are rounded to the
/// nearest multiple of 1/255 and must lie in [0,1].
void write_pnm(std::ostream& os, const Tensor<double>& pixels);
void write_pgm_raw(std::ostream& os, const LabelMap& map);

Tensor<double> load_pnm(const std::string& path);
void save_pnm(const Tensor<double>& pixels, const std::string& path);
LabelMap load_pgm_raw(const std::string& path);
void save_pgm_raw(const LabelMap& map, const std::string& path);

/// Rounds pixels to the 8-bit grid used on disk.
void quantize_8bit(Tensor<double>& pixels);

// ---------------------------------------------------------------------------
// Disk layout: directory of PNM files plus manifest.csv with
// "id,filename,label" or "id,image_file,label_file" lines.

void save_dataset(const Dataset& set, const std::string& dir);
Dataset load_dataset(const std::string& dir);

// ---------------------------------------------------------------------------
// Augmentation

struct AugmentPolicy {
  bool use_d4 = false;
  /// Codes to draw from; empty means all 8.
  std::vector<D4Code> subset;

  std::vector<D4Code> codes() const;
};

/// Draws one code from the policy set.
D4Code draw_augment_code(const AugmentPolicy& policy, RngStream& stream);

/// Same pixels and label map transform; id and class label unchanged.
LabeledImage apply(const LabeledImage& sample, D4Code t);
LabeledImage augment(const LabeledImage& sample, const AugmentPolicy& policy, RngStream& stream);

// ---------------------------------------------------------------------------
// Batching

using Batch = std::vector<std::size_t>;

/// One epoch of class-balanced batches over a binary classification set.
/// Each class is drawn without replacement from its own shuffled pool; the
/// smaller class is reshuffled and reused when it runs out. The epoch has
/// ceil(majority / (batch_size/2)) batches, so every majority item appears
/// once; if the majority count is not a multiple of batch_size/2 the last
/// batch is topped up from a reshuffled majority pool.
std::vector<Batch> balanced_batches(std::span<const int> labels, std::size_t batch_size, RngStream& stream);
std::vector<Batch> balanced_batches(const Dataset& set, std::size_t batch_size, RngStream& stream);

/// One shuffled pass; the last batch may be short.
std::vector<Batch> shuffled_batches(std::size_t count, std::size_t batch_size, RngStream& stream);

// ---------------------------------------------------------------------------
// Folds

struct FoldSplit {
  std::size_t fold_count = 0;
  std::map<std::string, std::size_t> assignment;

  std::size_t fold_of(const std::string& id) const;
  std::vector<std::size_t> fold_sizes() const;
};

/// Items are ordered by mix64(seed ^ fnv1a(id)) (id breaks ties) and dealt
/// round-robin, so sizes differ by at most one and input order is irrelevant.
FoldSplit split_folds(std::span<const std::string> ids, std::size_t fold_count, std::uint64_t seed);
FoldSplit split_folds(const Dataset& set, std::size_t fold_count, std::uint64_t seed);

/// Train/validation/test index lists into `set`. `validation_fold` < 0 means
/// no validation fold.
struct SplitIndices {
  std::vector<std::size_t> train, validation, test;
};
SplitIndices split_roles(const Dataset& set, const FoldSplit& split, std::size_t test_fold, int validation_fold);

Dataset select(const Dataset& set, std::span<const std::size_t> indices);

}  // namespace rotaflip
