#pragma once

#include <stdexcept>
#include <string>

namespace svdscope {

/// Base class for every failure raised by the library. The CLI maps these
/// to exit code 1; malformed command lines map to 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Container decoding/encoding failures.
class FormatError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class ConvergenceError : public Error {
 public:
  using Error::Error;
};

/// A precondition on the numerical inputs does not hold (non-skew generator,
/// non-orthonormal basis, step size out of range, ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

class PatternError : public Error {
 public:
  using Error::Error;
};

}  // namespace svdscope
