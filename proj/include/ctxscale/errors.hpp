#pragma once

#include <stdexcept>

#include "ctxscale/numerics/tensor.hpp"

namespace ctxscale {

using numerics::ContractError;
using numerics::DimensionError;
using numerics::NumericError;

/// Invalid experiment setup: infeasible window length, degenerate channel,
/// bad manifest key. Maps to CLI exit code 1.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input file.
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// File could not be read or written.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace ctxscale
