#pragma once

#include <stdexcept>
#include <string>

namespace nmrf {

/// Base class for every error the library throws.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shapes, names or parameters that do not fit together.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed or unreadable weight files.
class LoadError : public Error {
 public:
  using Error::Error;
};

/// Bad user input: out-of-range coordinates, undecodable images, missing files.
class InputError : public Error {
 public:
  using Error::Error;
};

/// Optimizer hit a non-finite energy or gradient.
class OptimizationError : public Error {
 public:
  using Error::Error;
};

}  // namespace nmrf
