#pragma once

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <utility>

#include "rotaflip/error.hpp"
#include "rotaflip/rng.hpp"
#include "rotaflip/tensor.hpp"

namespace rotaflip {

/// Element of the dihedral group of the square. Code 4f+r is flipH^f ∘ rot^r,
/// where rot is a 90° counterclockwise rotation (applied first) and flipH
/// mirrors columns. Serialized as the integer 0..7.
enum class D4Code : std::uint8_t {
  identity = 0,
  rot90 = 1,
  rot180 = 2,
  rot270 = 3,
  flip_h = 4,
  flip_h_rot90 = 5,
  flip_h_rot180 = 6,  // vertical flip
  flip_h_rot270 = 7,
};

inline constexpr std::array<D4Code, 8> kAllD4 = {D4Code::identity,     D4Code::rot90,        D4Code::rot180,
                                                 D4Code::rot270,       D4Code::flip_h,       D4Code::flip_h_rot90,
                                                 D4Code::flip_h_rot180, D4Code::flip_h_rot270};

constexpr int to_int(D4Code t) noexcept { return static_cast<int>(t); }

constexpr D4Code d4_from_int(int v) {
  if (v < 0 || v > 7) throw ConfigError("D4 code out of range: " + std::to_string(v));
  return static_cast<D4Code>(v);
}

constexpr bool is_reflection(D4Code t) noexcept { return to_int(t) >= 4; }

/// Codes that map an H×W rectangle onto itself: identity, rot180, flipH, flipV.
constexpr bool preserves_rectangle(D4Code t) noexcept { return to_int(t) % 2 == 0; }

/// a ∘ b, i.e. apply b first, then a.
constexpr D4Code compose(D4Code a, D4Code b) noexcept {
  const int fa = to_int(a) / 4, ra = to_int(a) % 4;
  const int fb = to_int(b) / 4, rb = to_int(b) % 4;
  // rot ∘ flip == flip ∘ rot⁻¹
  const int f = (fa + fb) % 2;
  const int r = fb == 0 ? (ra + rb) % 4 : (rb - ra + 4) % 4;
  return static_cast<D4Code>(4 * f + r);
}

constexpr D4Code invert(D4Code t) noexcept {
  if (is_reflection(t)) return t;
  return static_cast<D4Code>((4 - to_int(t)) % 4);
}

/// Source coordinate read by output pixel (i, j) of an H×W map under `t`.
constexpr std::pair<std::size_t, std::size_t> d4_source(D4Code t, std::size_t i, std::size_t j, std::size_t h,
                                                        std::size_t w) noexcept {
  if (is_reflection(t)) j = w - 1 - j;
  switch (to_int(t) % 4) {
    case 1: return {j, w - 1 - i};
    case 2: return {h - 1 - i, w - 1 - j};
    case 3: return {h - 1 - j, i};
    default: return {i, j};
  }
}

inline void check_d4_shape(D4Code t, std::size_t h, std::size_t w) {
  if (h != w && !preserves_rectangle(t))
    throw ShapeError("D4 code " + std::to_string(to_int(t)) + " requires a square map, got " + std::to_string(h) +
                     "x" + std::to_string(w));
}

/// Writes `t` applied to the row-major H×W map `in` into `out` (no aliasing).
template <class T>
void apply_into(const T* in, T* out, std::size_t h, std::size_t w, D4Code t) {
  check_d4_shape(t, h, w);
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) {
      const auto [si, sj] = d4_source(t, i, j, h, w);
      out[i * w + j] = in[si * w + sj];
    }
}

/// Applies `t` to a 2-D map.
template <class Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> apply(
    const Eigen::MatrixBase<Derived>& map, D4Code t) {
  using Mat = Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const Mat in = map;
  Mat out(in.rows(), in.cols());
  apply_into(in.data(), out.data(), static_cast<std::size_t>(in.rows()), static_cast<std::size_t>(in.cols()), t);
  return out;
}

/// The 8 transformed versions of a square map, ordered by code.
template <class Derived>
auto orbit(const Eigen::MatrixBase<Derived>& map) {
  if (map.rows() != map.cols()) throw ShapeError("orbit requires a square map");
  std::array<decltype(apply(map, D4Code::identity)), 8> out;
  for (D4Code t : kAllD4) out[to_int(t)] = apply(map, t);
  return out;
}

/// Applies `t` to every (n, c) feature map of a tensor.
template <class S>
Tensor<S> apply(const Tensor<S>& x, D4Code t) {
  const Shape& s = x.shape();
  check_d4_shape(t, s.h, s.w);
  Tensor<S> y(s);
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c) apply_into(x.plane(n, c), y.plane(n, c), s.h, s.w, t);
  return y;
}

/// Uniform draw over the group, or over the 7 non-identity codes.
inline D4Code sample_code(RngStream& stream, bool include_identity = true) {
  if (include_identity) return static_cast<D4Code>(stream.next_u64() >> 61);
  return static_cast<D4Code>(1 + stream.below(7));
}

}  // namespace rotaflip
