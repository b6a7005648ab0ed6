#pragma once

#include <stdexcept>
#include <string>

namespace stackgen {

// Base type for all library failures.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Shape/axis violations; the message names the offending axis.
struct DimensionError : Error {
  using Error::Error;
};

// Invalid or inconsistent configuration (layer geometry, config files,
// checkpoint/model mismatches).
struct ConfigError : Error {
  using Error::Error;
};

// API contract violations (backward on a non-scalar, missing gradients,
// degenerate batches).
struct ContractError : Error {
  using Error::Error;
};

// Malformed binary/text inputs; the message carries the byte offset where
// parsing failed when one is known.
struct FormatError : Error {
  using Error::Error;
};

// Non-finite values detected during a forward pass or a training step.
struct NumericError : Error {
  using Error::Error;
};

// Not enough samples to compute the requested statistic.
struct DataError : Error {
  using Error::Error;
};

}  // namespace stackgen
