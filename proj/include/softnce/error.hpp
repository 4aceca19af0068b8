#pragma once

#include <stdexcept>
#include <string>

namespace softnce {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed or inconsistent input files.
class DatasetError : public Error {
 public:
  using Error::Error;
};

// Invalid hyper-parameters or run configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Shape mismatches between matrices, vectors or feature spaces.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// NaN/inf encountered where finite values are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace softnce
