#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace rotaflip {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor shapes or dimensions.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration or argument value (CLI exit code 2).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Non-finite loss or gradient during training (CLI exit code 3).
class DivergenceError : public Error {
 public:
  using Error::Error;
};

/// File system failure (CLI exit code 4).
class IoError : public Error {
 public:
  using Error::Error;
};

/// Malformed file contents; carries the byte offset where parsing stopped.
class ParseError : public IoError {
 public:
  ParseError(const std::string& what, std::size_t offset)
      : IoError(what + " (at byte " + std::to_string(offset) + ")"), message_(what), offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }
  /// The message without the offset suffix.
  const std::string& message() const noexcept { return message_; }

 private:
  std::string message_;
  std::size_t offset_;
};

}  // namespace rotaflip
