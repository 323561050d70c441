#pragma once

#include <stdexcept>

namespace dats {

// Bad wiring: layer shapes that do not chain, invalid config fields.
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Caller broke an API contract: empty input, mismatched lengths, stale cache.
struct UsageError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Non-finite values, or a solve that missed its residual bound.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Geometry too degenerate to proceed: singular normal equations, empty class.
struct DegenerateError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed external data: CSV rows, model dumps.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace dats
