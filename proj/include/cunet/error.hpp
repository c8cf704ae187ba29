#pragma once

#include <stdexcept>
#include <string>

namespace cunet {

/// Root of every error raised by the library. The CLI maps the concrete
/// subclasses onto stable exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes disagree, or an op's preconditions on extents fail.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Misuse of the autodiff tape (non-scalar loss, double backward, ...).
class TapeError : public Error {
 public:
  using Error::Error;
};

/// NIfTI parsing or encoding failure.
class NiftiError : public Error {
 public:
  using Error::Error;
};

/// Dataset layout, fold or label problems.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration values.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Checkpoint file is unreadable, corrupt or incompatible.
class CheckpointError : public Error {
 public:
  using Error::Error;
};

/// A non-finite value showed up where the numerics forbid it.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace cunet
