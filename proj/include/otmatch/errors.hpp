#pragma once

#include <stdexcept>
#include <string>

namespace otmatch {

// Base class for all otmatch failures. The CLI maps subclasses to exit
// codes: ConfigError -> 1, DataError -> 2, NumericError and anything
// else -> 3.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Shape mismatches between operands.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration or usage.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Corpus, manifest or checkpoint file problems.
class DataError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf or other numeric faults.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace otmatch
