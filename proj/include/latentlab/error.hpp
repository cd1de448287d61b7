// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace latentlab {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes or sequence lengths do not conform.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A NaN/Inf appeared, or a loss diverged.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration or precondition violation on user input.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Missing, corrupt or incompatible files.
class DataError : public Error {
 public:
  using Error::Error;
};

}  // namespace latentlab
