// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace plora {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not line up.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A hyperparameter or argument is out of its legal range.
class ParameterError : public Error {
 public:
  using Error::Error;
};

/// Operation not allowed in the object's current state (e.g. forward on a merged layer).
class StateError : public Error {
 public:
  using Error::Error;
};

/// Malformed model input (bad token, bad class index, overlength sequence).
class InputError : public Error {
 public:
  using Error::Error;
};

/// Dataset content cannot satisfy the request (empty split, too few samples).
class DataError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf encountered in a loss or gradient.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Unknown user in a personalized lookup.
class RegistryError : public Error {
 public:
  using Error::Error;
};

/// Invalid generator / run configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Text file could not be parsed; message carries the line number.
class ParseError : public Error {
 public:
  using Error::Error;
};

/// Checkpoint content checksum mismatch.
class ChecksumError : public Error {
 public:
  using Error::Error;
};

/// Checkpoint written by an incompatible format version.
class VersionError : public Error {
 public:
  using Error::Error;
};

}  // namespace plora
