#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace tempest {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input rejected by a precondition check (bad dimensions, ranges, empty grids).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// A loss was requested on a model head it does not apply to.
class IncompatibleLoss : public Error {
 public:
  using Error::Error;
};

class NonDifferentiableLoss : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite objective.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, std::size_t epoch, std::uint64_t seed)
      : Error(what), epoch_(epoch), seed_(seed) {}
  std::size_t epoch() const noexcept { return epoch_; }
  std::uint64_t seed() const noexcept { return seed_; }

 private:
  std::size_t epoch_;
  std::uint64_t seed_;
};

class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Malformed binary input (bad magic, truncated payload, bad header).
class FormatError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// The requested computation is not defined for this input kind.
class UnsupportedError : public Error {
 public:
  using Error::Error;
};

/// A parameter lies outside the admissible region of a bound.
class ConstraintViolation : public Error {
 public:
  using Error::Error;
};

}  // namespace tempest
