#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace cloak {

/// Base class for every error raised by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor or trace dimensions do not line up.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Malformed input file; carries the 1-based line number.
class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Configuration rejected before any work starts.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace cloak
