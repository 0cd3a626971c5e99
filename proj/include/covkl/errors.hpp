#pragma once

#include <stdexcept>
#include <string>

namespace covkl {

/// Precondition violations on user-supplied inputs and configuration.
/// The CLI maps these to exit code 2.
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class DimensionMismatch : public InvalidArgument {
 public:
  DimensionMismatch(const std::string& what, long expected, long got)
      : InvalidArgument(what + ": dimension mismatch (expected " + std::to_string(expected) +
                        ", got " + std::to_string(got) + ")") {}
};

/// Failures that arise while computing: non-SPD matrices, eigensolver
/// breakdown, NaN objectives. The CLI maps these to exit code 3.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NotPositiveDefinite : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

}  // namespace covkl
