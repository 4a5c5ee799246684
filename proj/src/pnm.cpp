#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <sstream>

#include "rotaflip/data.hpp"

namespace rotaflip {

namespace {

constexpr std::size_t kMaxDim = 1u << 16;

struct PnmHeader {
  std::size_t channels = 0, width = 0, height = 0;
  std::size_t payload = 0;  // offset of the first pixel byte
};

class HeaderReader {
 public:
  explicit HeaderReader(const std::string& bytes) : bytes_(bytes) {}

  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      const char c = bytes_[pos_];
      if (c == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  std::size_t number(const char* what) {
    skip_space_and_comments();
    const std::size_t start = token_ = pos_;
    std::size_t v = 0;
    while (pos_ < bytes_.size() && std::isdigit(static_cast<unsigned char>(bytes_[pos_]))) {
      v = v * 10 + static_cast<std::size_t>(bytes_[pos_] - '0');
      if (v > kMaxDim) throw ParseError(std::string("pnm: ") + what + " too large", start);
      ++pos_;
    }
    if (pos_ == start) throw ParseError(std::string("pnm: expected ") + what, start);
    return v;
  }

  std::size_t pos() const { return pos_; }
  /// Offset of the last token read by number().
  std::size_t token() const { return token_; }
  void advance() { ++pos_; }

 private:
  const std::string& bytes_;
  std::size_t pos_ = 0;
  std::size_t token_ = 0;
};

PnmHeader parse_header(const std::string& bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6'))
    throw ParseError("pnm: expected magic P5 or P6", 0);
  PnmHeader h;
  h.channels = bytes[1] == '5' ? 1 : 3;
  HeaderReader r(bytes);
  r.advance();
  r.advance();
  if (r.pos() >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[r.pos()])))
    throw ParseError("pnm: expected whitespace after magic", r.pos());
  h.width = r.number("width");
  const std::size_t width_at = r.token();
  h.height = r.number("height");
  const std::size_t height_at = r.token();
  if (h.width == 0 || h.height == 0) throw ParseError("pnm: zero image dimension", h.width == 0 ? width_at : height_at);
  const std::size_t maxval = r.number("maxval");
  const std::size_t maxval_at = r.token();
  if (maxval != 255) throw ParseError("pnm: only maxval 255 is supported, got " + std::to_string(maxval), maxval_at);
  if (r.pos() >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[r.pos()])))
    throw ParseError("pnm: expected a single whitespace byte after maxval", r.pos());
  h.payload = r.pos() + 1;
  const std::size_t need = h.width * h.height * h.channels;
  if (bytes.size() < h.payload + need)
    throw ParseError("pnm: truncated payload, " + std::to_string(bytes.size() - h.payload) + " of " +
                         std::to_string(need) + " bytes",
                     bytes.size());
  return h;
}

std::string slurp(std::istream& is) { return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()}; }

std::uint8_t to_byte(double v) {
  if (!(v >= 0.0 && v <= 1.0)) throw Error("pnm: pixel value " + std::to_string(v) + " outside [0,1]");
  return static_cast<std::uint8_t>(std::lround(v * 255.0));
}

}  // namespace

Tensor<double> read_pnm(std::istream& is) {
  const std::string bytes = slurp(is);
  const PnmHeader h = parse_header(bytes);
  Tensor<double> out(Shape{1, h.channels, h.height, h.width});
  const auto* px = reinterpret_cast<const unsigned char*>(bytes.data() + h.payload);
  // interleaved RGB on disk, planar in memory
  for (std::size_t i = 0; i < h.height * h.width; ++i)
    for (std::size_t c = 0; c < h.channels; ++c) out.plane(0, c)[i] = px[i * h.channels + c] / 255.0;
  return out;
}

LabelMap read_pgm_raw(std::istream& is) {
  const std::string bytes = slurp(is);
  const PnmHeader h = parse_header(bytes);
  if (h.channels != 1) throw ParseError("label map must be a P5 file", 0);
  LabelMap out(static_cast<Eigen::Index>(h.height), static_cast<Eigen::Index>(h.width));
  const auto* px = reinterpret_cast<const unsigned char*>(bytes.data() + h.payload);
  for (Eigen::Index i = 0; i < out.size(); ++i) out.data()[i] = px[i];
  return out;
}

void write_pnm(std::ostream& os, const Tensor<double>& pixels) {
  const Shape& s = pixels.shape();
  if (s.n != 1 || (s.c != 1 && s.c != 3) || s.h == 0 || s.w == 0)
    throw ShapeError("pnm: need a (1,1,H,W) or (1,3,H,W) image, got " + s.str());
  os << (s.c == 1 ? "P5" : "P6") << '\n' << s.w << ' ' << s.h << "\n255\n";
  std::string payload(s.size(), '\0');
  for (std::size_t i = 0; i < s.plane(); ++i)
    for (std::size_t c = 0; c < s.c; ++c) payload[i * s.c + c] = static_cast<char>(to_byte(pixels.plane(0, c)[i]));
  os.write(payload.data(), static_cast<std::streamsize>(payload.size()));
}

void write_pgm_raw(std::ostream& os, const LabelMap& map) {
  if (map.size() == 0) throw ShapeError("pnm: empty label map");
  os << "P5\n" << map.cols() << ' ' << map.rows() << "\n255\n";
  std::string payload(static_cast<std::size_t>(map.size()), '\0');
  for (Eigen::Index i = 0; i < map.size(); ++i) {
    const int v = map.data()[i];
    if (v < 0 || v > 255) throw Error("pnm: label value " + std::to_string(v) + " does not fit a byte");
    payload[static_cast<std::size_t>(i)] = static_cast<char>(v);
  }
  os.write(payload.data(), static_cast<std::streamsize>(payload.size()));
}

Tensor<double> load_pnm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path);
  try {
    return read_pnm(is);
  } catch (const ParseError& e) {
    throw ParseError(path + ": " + e.message(), e.offset());
  }
}

LabelMap load_pgm_raw(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path);
  try {
    return read_pgm_raw(is);
  } catch (const ParseError& e) {
    throw ParseError(path + ": " + e.message(), e.offset());
  }
}

void save_pnm(const Tensor<double>& pixels, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path + " for writing");
  write_pnm(os, pixels);
  if (!os) throw IoError("write failed: " + path);
}

void save_pgm_raw(const LabelMap& map, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path + " for writing");
  write_pgm_raw(os, map);
  if (!os) throw IoError("write failed: " + path);
}

}  // namespace rotaflip
