#pragma once

#include <stdexcept>
#include <string>

namespace specmuon {

// Root of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand shapes do not agree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Non-finite values where finite data is required.
class DataError : public Error {
 public:
  using Error::Error;
};

// An argument is outside its documented range.
class ArgumentError : public Error {
 public:
  using Error::Error;
};

// Newton-Schulz input outside its convergence region.
class StabilityError : public Error {
 public:
  using Error::Error;
};

// f + kappa <= 0, so the energy root sqrt(f + kappa) is undefined.
class EnergyDomainError : public Error {
 public:
  using Error::Error;
};

// A loss evaluator failed or returned a non-finite value.
class EvaluationError : public Error {
 public:
  using Error::Error;
};

// Rate fit requested on an unusable trajectory window.
class EstimationError : public Error {
 public:
  using Error::Error;
};

// Invalid benchmark configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace specmuon
