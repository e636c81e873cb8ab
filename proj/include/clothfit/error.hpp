#pragma once

#include <stdexcept>
#include <string>

namespace clothfit {

// Base class for every failure raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input file. `line` is 1-based, 0 when not applicable.
class ParseError : public Error {
 public:
  ParseError(const std::string& path, std::size_t line, const std::string& what)
      : Error(path + (line ? ":" + std::to_string(line) : std::string()) + ": " + what),
        line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

// Geometry that violates a mesh or rig invariant.
class GeometryError : public Error {
 public:
  using Error::Error;
};

// Arguments with the wrong shape or out-of-range values.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// An optimization or training run produced a non-finite value.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace clothfit
