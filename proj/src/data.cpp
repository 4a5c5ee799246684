#include "rotaflip/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

namespace rotaflip {

namespace fs = std::filesystem;

namespace {

std::string indexed_id(const char* prefix, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s%05zu", prefix, i);
  return buf;
}

/// 3×3 box filter with clamped borders.
RowMatrix<double> box_blur(const RowMatrix<double>& in) {
  const Eigen::Index h = in.rows(), w = in.cols();
  RowMatrix<double> out(h, w);
  for (Eigen::Index i = 0; i < h; ++i)
    for (Eigen::Index j = 0; j < w; ++j) {
      double s = 0.0;
      for (Eigen::Index di = -1; di <= 1; ++di)
        for (Eigen::Index dj = -1; dj <= 1; ++dj)
          s += in(std::clamp(i + di, Eigen::Index(0), h - 1), std::clamp(j + dj, Eigen::Index(0), w - 1));
      out(i, j) = s / 9.0;
    }
  return out;
}

/// Stamp masks with 8 lit pixels each.
RowMatrix<double> l_stamp() {
  RowMatrix<double> m = RowMatrix<double>::Zero(5, 5);
  m.col(0).setOnes();
  m.block(4, 1, 1, 3).setOnes();
  return m;
}

RowMatrix<double> bar_stamp() { return RowMatrix<double>::Ones(1, 8); }

/// Orients a stamp of any aspect; quarter turns swap its extents.
RowMatrix<double> orient(const RowMatrix<double>& m, D4Code t) {
  RowMatrix<double> out = m;
  for (int k = 0; k < to_int(t) % 4; ++k) {
    const RowMatrix<double> turned = out.transpose().colwise().reverse();
    out = turned;
  }
  if (is_reflection(t)) {
    const RowMatrix<double> flipped = out.rowwise().reverse();
    out = flipped;
  }
  return out;
}

void stamp_at(RowMatrix<double>& img, const RowMatrix<double>& mask, Eigen::Index top, Eigen::Index left, double amp) {
  img.block(top, left, mask.rows(), mask.cols()) += amp * mask;
}

Tensor<double> to_pixels(const RowMatrix<double>& img) {
  Tensor<double> t(Shape{1, 1, static_cast<std::size_t>(img.rows()), static_cast<std::size_t>(img.cols())});
  t.plane_map(0, 0) = img.cwiseMax(0.0).cwiseMin(1.0);
  quantize_8bit(t);
  return t;
}

}  // namespace

void quantize_8bit(Tensor<double>& pixels) {
  for (auto& v : pixels.span()) v = std::round(v * 255.0) / 255.0;
}

// ---------------------------------------------------------------------------

Dataset gen_motif_classification(const MotifParams& p, std::uint64_t seed) {
  if (p.size < 16) throw ConfigError("motif: size must be >= 16, got " + std::to_string(p.size));
  if (p.n == 0 || p.n % 2 != 0) throw ConfigError("motif: n must be a positive even count, got " + std::to_string(p.n));
  const RngStream root(seed);
  const auto size = static_cast<Eigen::Index>(p.size);
  const RowMatrix<double> l_mask = l_stamp(), bar_mask = bar_stamp();
  Dataset out;
  out.reserve(p.n);
  for (std::size_t i = 0; i < p.n; ++i) {
    RngStream rng = root.child("motif", i);
    RowMatrix<double> raw(size, size);
    for (Eigen::Index k = 0; k < raw.size(); ++k) raw.data()[k] = rng.uniform();
    RowMatrix<double> img = (box_blur(box_blur(raw)).array() - 0.5) * 1.5 + 0.4;

    const std::size_t clutter = rng.below(p.max_clutter + 1);
    for (std::size_t c = 0; c < clutter; ++c) {
      const Eigen::Index len = 2 + static_cast<Eigen::Index>(rng.below(3));
      const bool vertical = rng.bernoulli(0.5);
      const Eigen::Index rows = vertical ? len : 1, cols = vertical ? 1 : len;
      const auto top = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(size - rows + 1)));
      const auto left = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(size - cols + 1)));
      stamp_at(img, RowMatrix<double>::Ones(rows, cols), top, left, p.contrast * (0.6 + 0.4 * rng.uniform()));
    }

    const int label = static_cast<int>(i % 2);
    const D4Code orientation = sample_code(rng);
    const RowMatrix<double> mask = orient(label == 1 ? l_mask : bar_mask, orientation);
    const auto top = 1 + static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(size - mask.rows() - 1)));
    const auto left = 1 + static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(size - mask.cols() - 1)));
    stamp_at(img, mask, top, left, p.contrast * (0.8 + 0.4 * rng.uniform()));

    for (Eigen::Index k = 0; k < img.size(); ++k) img.data()[k] += p.noise * rng.normal();
    out.push_back({indexed_id("m", i), to_pixels(img), label, {}});
  }
  return out;
}

// ---------------------------------------------------------------------------

LabelMap voronoi_cells(std::span<const std::pair<int, int>> seeds, std::size_t size) {
  if (seeds.empty()) throw ConfigError("voronoi: no seed points");
  const auto n = static_cast<Eigen::Index>(size);
  LabelMap cells(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) {
      long best = -1;
      int best_k = 0;
      for (std::size_t k = 0; k < seeds.size(); ++k) {
        const long di = i - seeds[k].first, dj = j - seeds[k].second;
        const long d = di * di + dj * dj;
        if (best < 0 || d < best) {
          best = d;
          best_k = static_cast<int>(k);
        }
      }
      cells(i, j) = best_k;
    }
  return cells;
}

LabelMap voronoi_edges(const LabelMap& cells, std::size_t edge_width) {
  const Eigen::Index h = cells.rows(), w = cells.cols(), r = static_cast<Eigen::Index>(edge_width);
  LabelMap out = LabelMap::Constant(h, w, kBodyClass);
  for (Eigen::Index i = 0; i < h; ++i)
    for (Eigen::Index j = 0; j < w; ++j) {
      const Eigen::Index i0 = std::max<Eigen::Index>(0, i - r), i1 = std::min(h - 1, i + r);
      const Eigen::Index j0 = std::max<Eigen::Index>(0, j - r), j1 = std::min(w - 1, j + r);
      if ((cells.block(i0, j0, i1 - i0 + 1, j1 - j0 + 1).array() != cells(i, j)).any()) out(i, j) = kEdgeClass;
    }
  return out;
}

Dataset gen_voronoi_segmentation(const VoronoiParams& p, std::uint64_t seed) {
  if (p.cells < 4) throw ConfigError("voronoi: cells must be >= 4, got " + std::to_string(p.cells));
  if (p.size == 0 || p.size % 8 != 0)
    throw ConfigError("voronoi: size must be a positive multiple of 8, got " + std::to_string(p.size));
  if (p.cells > p.size * p.size) throw ConfigError("voronoi: more cells than pixels");
  if (p.edge_width == 0) throw ConfigError("voronoi: edge_width must be >= 1");
  const RngStream root(seed);
  const auto size = static_cast<Eigen::Index>(p.size);
  const double cell_radius = static_cast<double>(p.size) / std::sqrt(static_cast<double>(p.cells));
  const double edge_sigma = static_cast<double>(p.edge_width) + 0.5;
  Dataset out;
  out.reserve(p.n);
  for (std::size_t i = 0; i < p.n; ++i) {
    RngStream rng = root.child("voronoi", i);
    std::vector<std::pair<int, int>> seeds;
    std::set<std::pair<int, int>> used;
    while (seeds.size() < p.cells) {
      const std::pair<int, int> s{static_cast<int>(rng.below(p.size)), static_cast<int>(rng.below(p.size))};
      if (used.insert(s).second) seeds.push_back(s);  // duplicates are redrawn
    }
    std::vector<double> shade(p.cells);
    for (auto& v : shade) v = 0.5 + 0.35 * rng.uniform();

    const LabelMap cells = voronoi_cells(seeds, p.size);
    RowMatrix<double> img(size, size);
    for (Eigen::Index r = 0; r < size; ++r)
      for (Eigen::Index c = 0; c < size; ++c) {
        // nearest two seeds, for the distance to their bisector
        double d1 = INFINITY, d2 = INFINITY;
        std::size_t k1 = 0, k2 = 0;
        for (std::size_t k = 0; k < seeds.size(); ++k) {
          const double dr = static_cast<double>(r - seeds[k].first), dc = static_cast<double>(c - seeds[k].second);
          const double d = dr * dr + dc * dc;
          if (d < d1) {
            d2 = d1, k2 = k1;
            d1 = d, k1 = k;
          } else if (d < d2) {
            d2 = d, k2 = k;
          }
        }
        const double sr = seeds[k1].first - seeds[k2].first, sc = seeds[k1].second - seeds[k2].second;
        const double bisector = (d2 - d1) / (2.0 * std::sqrt(sr * sr + sc * sc));
        const double interior = shade[static_cast<std::size_t>(cells(r, c))] * (1.0 - 0.15 * std::min(1.0, std::sqrt(d1) / cell_radius));
        const double dark = 0.45 * std::exp(-(bisector / edge_sigma) * (bisector / edge_sigma));
        img(r, c) = interior - dark + p.noise * rng.normal();
      }
    out.push_back({indexed_id("v", i), to_pixels(img), -1, voronoi_edges(cells, p.edge_width)});
  }
  return out;
}

// ---------------------------------------------------------------------------

void save_dataset(const Dataset& set, const std::string& dir) {
  if (set.empty()) throw ConfigError("save_dataset: empty dataset");
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir + ": " + ec.message());
  const bool seg = set.front().is_segmentation();
  std::ofstream manifest(fs::path(dir) / "manifest.csv", std::ios::binary);
  if (!manifest) throw IoError("cannot write manifest in " + dir);
  manifest << (seg ? "id,image_file,label_file\n" : "id,filename,label\n");
  for (const LabeledImage& s : set) {
    if (s.is_segmentation() != seg) throw ConfigError("save_dataset: mixed classification and segmentation samples");
    const std::string image = s.id + (s.channels() == 3 ? ".ppm" : ".pgm");
    save_pnm(s.pixels, (fs::path(dir) / image).string());
    if (seg) {
      const std::string label = s.id + "_label.pgm";
      save_pgm_raw(s.label_map, (fs::path(dir) / label).string());
      manifest << s.id << ',' << image << ',' << label << '\n';
    } else {
      manifest << s.id << ',' << image << ',' << s.label << '\n';
    }
  }
  if (!manifest) throw IoError("write failed: manifest in " + dir);
}

Dataset load_dataset(const std::string& dir) {
  const fs::path manifest_path = fs::path(dir) / "manifest.csv";
  std::ifstream manifest(manifest_path);
  if (!manifest) throw IoError("cannot open " + manifest_path.string());
  std::string line;
  std::getline(manifest, line);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  bool seg;
  if (line == "id,filename,label")
    seg = false;
  else if (line == "id,image_file,label_file")
    seg = true;
  else
    throw ParseError("manifest header not recognised: " + line, 0);
  Dataset out;
  std::size_t offset = line.size() + 1;
  for (std::size_t lineno = 2; std::getline(manifest, line); ++lineno) {
    const std::size_t line_offset = offset;
    offset += line.size() + 1;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string id, image, third;
    if (!std::getline(ss, id, ',') || !std::getline(ss, image, ',') || !std::getline(ss, third) || id.empty())
      throw ParseError(manifest_path.string() + " line " + std::to_string(lineno) + ": expected 3 fields", line_offset);
    LabeledImage s;
    s.id = id;
    s.pixels = load_pnm((fs::path(dir) / image).string());
    if (seg) {
      s.label_map = load_pgm_raw((fs::path(dir) / third).string());
      if (static_cast<std::size_t>(s.label_map.rows()) != s.height() ||
          static_cast<std::size_t>(s.label_map.cols()) != s.width())
        throw ShapeError("label map " + third + " does not match image " + image);
    } else {
      try {
        std::size_t used = 0;
        s.label = std::stoi(third, &used);
        if (used != third.size()) throw std::invalid_argument(third);
      } catch (const std::logic_error&) {
        throw ParseError(manifest_path.string() + " line " + std::to_string(lineno) + ": bad label '" + third + "'",
                         line_offset);
      }
    }
    out.push_back(std::move(s));
  }
  if (out.empty()) throw IoError("dataset " + dir + " is empty");
  return out;
}

// ---------------------------------------------------------------------------

std::vector<D4Code> AugmentPolicy::codes() const {
  if (!use_d4) return {D4Code::identity};
  if (subset.empty()) return {kAllD4.begin(), kAllD4.end()};
  return subset;
}

D4Code draw_augment_code(const AugmentPolicy& policy, RngStream& stream) {
  const std::vector<D4Code> set = policy.codes();
  if (set.size() == 1) return set.front();
  if (set.size() == 8) return sample_code(stream);
  return set[stream.below(set.size())];
}

LabeledImage apply(const LabeledImage& sample, D4Code t) {
  LabeledImage out;
  out.id = sample.id;
  out.label = sample.label;
  out.pixels = apply(sample.pixels, t);
  if (sample.is_segmentation()) out.label_map = apply(sample.label_map, t);
  return out;
}

LabeledImage augment(const LabeledImage& sample, const AugmentPolicy& policy, RngStream& stream) {
  for (D4Code t : policy.codes()) check_d4_shape(t, sample.height(), sample.width());
  const D4Code t = draw_augment_code(policy, stream);
  return t == D4Code::identity ? sample : apply(sample, t);
}

// ---------------------------------------------------------------------------

std::vector<Batch> balanced_batches(std::span<const int> labels, std::size_t batch_size, RngStream& stream) {
  if (batch_size == 0 || batch_size % 2 != 0)
    throw ConfigError("balanced batches need a positive even batch size, got " + std::to_string(batch_size));
  std::array<std::vector<std::size_t>, 2> pools;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1)
      throw ConfigError("balanced batches need binary labels, got " + std::to_string(labels[i]));
    pools[static_cast<std::size_t>(labels[i])].push_back(i);
  }
  if (pools[0].empty() || pools[1].empty()) throw ConfigError("balanced batches need both classes present");
  for (auto& p : pools) stream.shuffle(p);
  const std::size_t half = batch_size / 2;
  const std::size_t majority = std::max(pools[0].size(), pools[1].size());
  const std::size_t count = (majority + half - 1) / half;
  std::array<std::size_t, 2> cursor{0, 0};
  auto draw = [&](std::size_t c) {
    if (cursor[c] == pools[c].size()) {
      stream.shuffle(pools[c]);
      cursor[c] = 0;
    }
    return pools[c][cursor[c]++];
  };
  std::vector<Batch> out(count);
  for (Batch& b : out) {
    b.reserve(batch_size);
    for (std::size_t c = 0; c < 2; ++c)
      for (std::size_t k = 0; k < half; ++k) b.push_back(draw(c));
    stream.shuffle(b);
  }
  return out;
}

std::vector<Batch> balanced_batches(const Dataset& set, std::size_t batch_size, RngStream& stream) {
  std::vector<int> labels;
  labels.reserve(set.size());
  for (const auto& s : set) {
    if (s.is_segmentation()) throw ConfigError("balanced batches apply to classification sets only");
    labels.push_back(s.label);
  }
  return balanced_batches(labels, batch_size, stream);
}

std::vector<Batch> shuffled_batches(std::size_t count, std::size_t batch_size, RngStream& stream) {
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  std::vector<std::size_t> order(count);
  for (std::size_t i = 0; i < count; ++i) order[i] = i;
  stream.shuffle(order);
  std::vector<Batch> out;
  for (std::size_t i = 0; i < count; i += batch_size)
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                     order.begin() + static_cast<std::ptrdiff_t>(std::min(count, i + batch_size)));
  return out;
}

// ---------------------------------------------------------------------------

std::size_t FoldSplit::fold_of(const std::string& id) const {
  const auto it = assignment.find(id);
  if (it == assignment.end()) throw ConfigError("fold split has no id " + id);
  return it->second;
}

std::vector<std::size_t> FoldSplit::fold_sizes() const {
  std::vector<std::size_t> sizes(fold_count, 0);
  for (const auto& [id, f] : assignment) ++sizes[f];
  return sizes;
}

FoldSplit split_folds(std::span<const std::string> ids, std::size_t fold_count, std::uint64_t seed) {
  if (fold_count < 2) throw ConfigError("fold count must be >= 2, got " + std::to_string(fold_count));
  if (fold_count > ids.size())
    throw ConfigError("fold count " + std::to_string(fold_count) + " exceeds set size " + std::to_string(ids.size()));
  std::vector<std::pair<std::uint64_t, const std::string*>> keyed;
  keyed.reserve(ids.size());
  for (const auto& id : ids) keyed.emplace_back(mix64(seed ^ fnv1a(id)), &id);
  std::sort(keyed.begin(), keyed.end(), [](const auto& a, const auto& b) {
    return a.first != b.first ? a.first < b.first : *a.second < *b.second;
  });
  FoldSplit split;
  split.fold_count = fold_count;
  for (std::size_t rank = 0; rank < keyed.size(); ++rank)
    if (!split.assignment.emplace(*keyed[rank].second, rank % fold_count).second)
      throw ConfigError("duplicate id " + *keyed[rank].second);
  return split;
}

FoldSplit split_folds(const Dataset& set, std::size_t fold_count, std::uint64_t seed) {
  std::vector<std::string> ids;
  ids.reserve(set.size());
  for (const auto& s : set) ids.push_back(s.id);
  return split_folds(ids, fold_count, seed);
}

SplitIndices split_roles(const Dataset& set, const FoldSplit& split, std::size_t test_fold, int validation_fold) {
  if (test_fold >= split.fold_count) throw ConfigError("test fold " + std::to_string(test_fold) + " out of range");
  if (validation_fold >= static_cast<int>(split.fold_count) || validation_fold == static_cast<int>(test_fold))
    throw ConfigError("validation fold " + std::to_string(validation_fold) + " invalid");
  SplitIndices out;
  for (std::size_t i = 0; i < set.size(); ++i) {
    const std::size_t f = split.fold_of(set[i].id);
    if (f == test_fold)
      out.test.push_back(i);
    else if (validation_fold >= 0 && f == static_cast<std::size_t>(validation_fold))
      out.validation.push_back(i);
    else
      out.train.push_back(i);
  }
  return out;
}

Dataset select(const Dataset& set, std::span<const std::size_t> indices) {
  Dataset out;
  out.reserve(indices.size());
  for (auto i : indices) out.push_back(set.at(i));
  return out;
}

}  // namespace rotaflip
