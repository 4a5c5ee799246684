#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <initializer_list>
#include <istream>
#include <limits>
#include <ostream>
#include <span>
#include <string>
#include <type_traits>

#include "rotaflip/error.hpp"

namespace rotaflip {

/// Batch-channel-height-width extents.
struct Shape {
  std::size_t n = 0, c = 0, h = 0, w = 0;

  constexpr std::size_t size() const noexcept { return n * c * h * w; }
  constexpr std::size_t plane() const noexcept { return h * w; }
  friend constexpr bool operator==(const Shape&, const Shape&) = default;

  std::string str() const {
    return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
           std::to_string(w) + ")";
  }
};

template <class S>
using RowMatrix = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Per-pixel class indices of one segmentation target.
using LabelMap = RowMatrix<std::int32_t>;

/// Dense NCHW tensor with contiguous row-major storage.
template <class S>
class Tensor {
  static_assert(std::is_floating_point_v<S>);

 public:
  using Scalar = S;
  using Storage = Eigen::Array<S, Eigen::Dynamic, 1>;
  using PlaneMap = Eigen::Map<RowMatrix<S>>;
  using ConstPlaneMap = Eigen::Map<const RowMatrix<S>>;

  Tensor() = default;
  explicit Tensor(Shape shape, S fill = S(0)) : shape_(shape), data_(Storage::Constant(shape.size(), fill)) {}
  Tensor(Shape shape, Storage data) : shape_(shape), data_(std::move(data)) {
    if (static_cast<std::size_t>(data_.size()) != shape_.size())
      throw ShapeError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                       shape_.str());
  }
  Tensor(Shape shape, std::initializer_list<S> values) : Tensor(shape) {
    if (values.size() != shape.size())
      throw ShapeError("initializer length " + std::to_string(values.size()) + " does not match shape " +
                       shape.str());
    std::copy(values.begin(), values.end(), data_.data());
  }

  static Tensor zeros(Shape shape) { return Tensor(shape); }
  static Tensor ones(Shape shape) { return Tensor(shape, S(1)); }
  /// Contents unspecified; for outputs that are overwritten in full.
  static Tensor uninitialized(Shape shape) { return Tensor(shape, Storage(static_cast<Eigen::Index>(shape.size()))); }
  /// Uniform values in [lo, hi).
  template <class Rng>
  static Tensor random(Shape shape, Rng& rng, S lo = S(-1), S hi = S(1)) {
    Tensor t(shape);
    for (Eigen::Index i = 0; i < t.data_.size(); ++i) t.data_[i] = lo + (hi - lo) * static_cast<S>(rng.uniform());
    return t;
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t size() const noexcept { return shape_.size(); }
  bool empty() const noexcept { return shape_.size() == 0; }

  S* data() noexcept { return data_.data(); }
  const S* data() const noexcept { return data_.data(); }
  Storage& array() noexcept { return data_; }
  const Storage& array() const noexcept { return data_; }
  std::span<S> span() noexcept { return {data_.data(), size()}; }
  std::span<const S> span() const noexcept { return {data_.data(), size()}; }

  std::size_t offset(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const noexcept {
    return ((n * shape_.c + c) * shape_.h + h) * shape_.w + w;
  }
  S& operator()(std::size_t n, std::size_t c, std::size_t h, std::size_t w) noexcept {
    return data_[static_cast<Eigen::Index>(offset(n, c, h, w))];
  }
  S operator()(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const noexcept {
    return data_[static_cast<Eigen::Index>(offset(n, c, h, w))];
  }
  S& operator[](std::size_t i) noexcept { return data_[static_cast<Eigen::Index>(i)]; }
  S operator[](std::size_t i) const noexcept { return data_[static_cast<Eigen::Index>(i)]; }

  /// Pointer to the H×W feature map at (n, c).
  S* plane(std::size_t n, std::size_t c) noexcept { return data() + (n * shape_.c + c) * shape_.plane(); }
  const S* plane(std::size_t n, std::size_t c) const noexcept {
    return data() + (n * shape_.c + c) * shape_.plane();
  }
  PlaneMap plane_map(std::size_t n, std::size_t c) {
    return PlaneMap(plane(n, c), static_cast<Eigen::Index>(shape_.h), static_cast<Eigen::Index>(shape_.w));
  }
  ConstPlaneMap plane_map(std::size_t n, std::size_t c) const {
    return ConstPlaneMap(plane(n, c), static_cast<Eigen::Index>(shape_.h), static_cast<Eigen::Index>(shape_.w));
  }

  /// Same data viewed with another shape of equal size.
  Tensor reshaped(Shape shape) const { return Tensor(shape, data_); }

  template <class T>
  Tensor<T> cast() const {
    return Tensor<T>(shape_, data_.template cast<T>().eval());
  }

  bool all_finite() const { return data_.isFinite().all(); }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && (a.size() == 0 || (a.data_ == b.data_).all());
  }

 private:
  Shape shape_{};
  Storage data_;
};

// ---------------------------------------------------------------------------
// Elementwise operations

enum class ElementOp { add, sub, mul, scale, relu, relu_grad };

/// Pointwise `op(a, b)`. `b` must have a's shape, be a per-channel vector of
/// shape (1,C,1,1), or hold a single element. For relu, `b` is ignored; for
/// relu_grad, `a` is the forward input and `b` the incoming gradient.
template <class S>
Tensor<S> elementwise(ElementOp op, const Tensor<S>& a, const Tensor<S>& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  Tensor<S> out = Tensor<S>::uninitialized(sa);
  if (op == ElementOp::relu) {
    out.array() = a.array().max(S(0));
  } else if (sa == sb) {
    switch (op) {
      case ElementOp::add: out.array() = a.array() + b.array(); break;
      case ElementOp::sub: out.array() = a.array() - b.array(); break;
      case ElementOp::mul:
      case ElementOp::scale: out.array() = a.array() * b.array(); break;
      case ElementOp::relu_grad: out.array() = (a.array() > S(0)).select(b.array(), S(0)); break;
      case ElementOp::relu: break;
    }
  } else if (b.size() == 1 || (sb.n == 1 && sb.c == sa.c && sb.h == 1 && sb.w == 1)) {
    const std::size_t plane = sa.plane();
    const bool scalar = b.size() == 1;
    for (std::size_t n = 0; n < sa.n; ++n)
      for (std::size_t c = 0; c < sa.c; ++c) {
        const S v = scalar ? b[0] : b[c];
        const auto src = Eigen::Map<const Eigen::Array<S, Eigen::Dynamic, 1>>(a.plane(n, c), static_cast<Eigen::Index>(plane));
        auto dst = Eigen::Map<Eigen::Array<S, Eigen::Dynamic, 1>>(out.plane(n, c), static_cast<Eigen::Index>(plane));
        switch (op) {
          case ElementOp::add: dst = src + v; break;
          case ElementOp::sub: dst = src - v; break;
          case ElementOp::mul:
          case ElementOp::scale: dst = src * v; break;
          case ElementOp::relu_grad: dst = (src > S(0)).template cast<S>() * v; break;
          case ElementOp::relu: break;
        }
      }
  } else {
    throw ShapeError("elementwise: shapes " + sa.str() + " and " + sb.str() + " are not broadcast-compatible");
  }
  return out;
}

template <class S>
Tensor<S> elementwise(ElementOp op, const Tensor<S>& a, S b) {
  return elementwise(op, a, Tensor<S>(Shape{1, 1, 1, 1}, b));
}

template <class S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) { return elementwise(ElementOp::add, a, b); }
template <class S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) { return elementwise(ElementOp::sub, a, b); }
template <class S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) { return elementwise(ElementOp::mul, a, b); }
template <class S>
Tensor<S> scale(const Tensor<S>& a, S s) { return elementwise(ElementOp::scale, a, s); }
template <class S>
Tensor<S> relu(const Tensor<S>& a) { return elementwise(ElementOp::relu, a, S(0)); }
template <class S>
Tensor<S> relu_grad(const Tensor<S>& x, const Tensor<S>& grad) { return elementwise(ElementOp::relu_grad, x, grad); }

// ---------------------------------------------------------------------------
// Reductions

/// Set of axes to reduce over.
struct Axes {
  bool n = false, c = false, h = false, w = false;

  static constexpr Axes all() { return {true, true, true, true}; }
  static constexpr Axes spatial() { return {false, false, true, true}; }
  static constexpr Axes batch_spatial() { return {true, false, true, true}; }
};

enum class ReduceOp { sum, mean, max };

/// Reduces `a` over `axes`; reduced axes collapse to extent 1.
template <class S>
Tensor<S> reduce(ReduceOp op, const Tensor<S>& a, Axes axes) {
  if (a.empty()) throw ShapeError("reduce: empty tensor " + a.shape().str());
  const Shape& s = a.shape();
  const Shape os{axes.n ? 1 : s.n, axes.c ? 1 : s.c, axes.h ? 1 : s.h, axes.w ? 1 : s.w};
  const S init = op == ReduceOp::max ? -std::numeric_limits<S>::infinity() : S(0);
  Tensor<S> out(os, init);
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c)
      for (std::size_t h = 0; h < s.h; ++h)
        for (std::size_t w = 0; w < s.w; ++w) {
          S& dst = out(axes.n ? 0 : n, axes.c ? 0 : c, axes.h ? 0 : h, axes.w ? 0 : w);
          const S v = a(n, c, h, w);
          if (op == ReduceOp::max)
            dst = std::max(dst, v);
          else
            dst += v;
        }
  if (op == ReduceOp::mean) {
    const S count = static_cast<S>(s.size() / os.size());
    out.array() /= count;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Binary file format: "RTFL", u16 version, u8 precision tag, 4×u32 shape,
// little-endian element data.

enum class Precision : std::uint8_t { single = 1, double_ = 2 };

template <class S>
constexpr Precision precision_of() {
  return std::is_same_v<S, float> ? Precision::single : Precision::double_;
}

inline constexpr std::uint16_t kTensorFormatVersion = 1;

namespace detail {

template <class U>
void put_le(std::ostream& os, U v) {
  char buf[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(buf, sizeof(U));
}

template <class U>
U get_le(std::istream& is, std::size_t& offset) {
  unsigned char buf[sizeof(U)];
  if (!is.read(reinterpret_cast<char*>(buf), sizeof(U))) throw ParseError("tensor file truncated", offset);
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(buf[i]) << (8 * i);
  offset += sizeof(U);
  return v;
}

template <class S>
using Bits = std::conditional_t<std::is_same_v<S, float>, std::uint32_t, std::uint64_t>;

}  // namespace detail

template <class S>
void write_tensor(std::ostream& os, const Tensor<S>& t) {
  os.write("RTFL", 4);
  detail::put_le<std::uint16_t>(os, kTensorFormatVersion);
  detail::put_le<std::uint8_t>(os, static_cast<std::uint8_t>(precision_of<S>()));
  const Shape& s = t.shape();
  for (std::size_t d : {s.n, s.c, s.h, s.w}) detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(d));
  for (std::size_t i = 0; i < t.size(); ++i) detail::put_le(os, std::bit_cast<detail::Bits<S>>(t[i]));
}

/// Precision tag stored in a tensor stream; leaves the stream positioned after the tag.
inline Precision read_tensor_header(std::istream& is, Shape& shape, std::size_t& offset) {
  char magic[4];
  if (!is.read(magic, 4)) throw ParseError("tensor file truncated", offset);
  if (std::memcmp(magic, "RTFL", 4) != 0) throw ParseError("bad tensor magic", offset);
  offset += 4;
  const auto version = detail::get_le<std::uint16_t>(is, offset);
  if (version != kTensorFormatVersion)
    throw ParseError("unsupported tensor format version " + std::to_string(version), offset - 2);
  const auto tag = detail::get_le<std::uint8_t>(is, offset);
  if (tag != 1 && tag != 2) throw ParseError("unknown precision tag " + std::to_string(tag), offset - 1);
  std::uint32_t d[4];
  for (auto& v : d) v = detail::get_le<std::uint32_t>(is, offset);
  shape = Shape{d[0], d[1], d[2], d[3]};
  return static_cast<Precision>(tag);
}

/// Reads a tensor; the stored precision must match S.
template <class S>
Tensor<S> read_tensor(std::istream& is) {
  std::size_t offset = 0;
  Shape shape;
  const Precision p = read_tensor_header(is, shape, offset);
  if (p != precision_of<S>()) throw ParseError("tensor precision does not match requested type", 6);
  Tensor<S> t(shape);
  for (std::size_t i = 0; i < t.size(); ++i)
    t[i] = std::bit_cast<S>(detail::get_le<detail::Bits<S>>(is, offset));
  return t;
}

template <class S>
void save_tensor(const std::string& path, const Tensor<S>& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path + " for writing");
  write_tensor(os, t);
  if (!os) throw IoError("write failed: " + path);
}

template <class S>
Tensor<S> load_tensor(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path);
  return read_tensor<S>(is);
}

}  // namespace rotaflip
