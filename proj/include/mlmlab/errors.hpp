#pragma once

#include <stdexcept>
#include <string>

namespace mlmlab {

// Shape or dimension disagreement between operands.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Invalid model / training / corpus configuration.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// NaN/Inf produced by an operation, or a violated numeric precondition.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// File I/O or malformed on-disk format; message carries the path.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace mlmlab
