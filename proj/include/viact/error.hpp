#pragma once

#include <stdexcept>
#include <string>

namespace viact {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor shapes or extents.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Degenerate point sets or contours.
class GeometryError : public Error {
 public:
  using Error::Error;
};

/// Invalid or inconsistent configuration values.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed or too-short input data, bad container files.
class IngestionError : public Error {
 public:
  using Error::Error;
};

/// Non-finite losses or gradients during optimization.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace viact
