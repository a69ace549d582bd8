#pragma once

#include <stdexcept>
#include <string>

namespace spanet {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionMismatch : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class IsolatedNode : public Error {
 public:
  using Error::Error;
};

/// Raised by the eigensolver when the sweep budget runs out; carries the
/// off-diagonal residual that remained.
class NoConvergence : public Error {
 public:
  NoConvergence(const std::string& what, double residual)
      : Error(what), residual_(residual) {}
  double residual() const noexcept { return residual_; }

 private:
  double residual_;
};

class NonSquareInput : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class InvalidConfig : public Error {
 public:
  using Error::Error;
};

class NonDeterministicLoss : public Error {
 public:
  using Error::Error;
};

}  // namespace spanet
