#pragma once

#include <stdexcept>
#include <string>

namespace gplvm {

/// Base class for all library errors.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DimensionMismatch : Error {
  using Error::Error;
};

/// All jitter levels failed; the covariance upstream is badly conditioned.
struct FactorizationFailure : Error {
  using Error::Error;
};

struct InvalidConfig : Error {
  using Error::Error;
};

struct NonFinite : Error {
  using Error::Error;
};

struct DivergedOptimization : Error {
  using Error::Error;
};

struct IndexOutOfRange : Error {
  using Error::Error;
};

struct InsufficientSamples : Error {
  using Error::Error;
};

struct EmptyObservation : Error {
  using Error::Error;
};

struct EmptyInput : Error {
  using Error::Error;
};

struct IoError : Error {
  using Error::Error;
};

}  // namespace gplvm
