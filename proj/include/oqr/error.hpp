#pragma once

#include <stdexcept>
#include <string>

namespace oqr {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shapes that do not compose (layer widths, vector lengths, parameter sets).
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A loss or gradient evaluated to NaN/inf.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Malformed input data: CSV cells, missing columns, degenerate columns.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Invalid run or training configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace oqr
