#pragma once

#include <stdexcept>
#include <string>

namespace fclgan {

/// Base of every error thrown by the library.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Invalid or inconsistent configuration (bad kernel, unknown key, tau <= 0, ...).
struct ConfigError : Error {
  using Error::Error;
};

/// Tensor or image dimensions that an operation cannot accept.
struct ShapeError : Error {
  using Error::Error;
};

/// Non-finite values, non-normalizable kernels, diverging losses.
struct NumericError : Error {
  using Error::Error;
};

struct DatasetError : Error {
  using Error::Error;
};

struct IoError : Error {
  using Error::Error;
};

/// Checkpoint written by an incompatible format version.
struct VersionError : Error {
  using Error::Error;
};

}  // namespace fclgan
