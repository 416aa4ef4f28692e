#pragma once

#include <stdexcept>
#include <string>

namespace rrwkv {

// Error taxonomy. The CLI maps these onto exit codes:
// ConfigError -> 1, FormatError -> 2, NumericError -> 3; everything else -> 3.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class StateError : public Error {
 public:
  using Error::Error;
};

}  // namespace rrwkv
