#pragma once

#include <stdexcept>
#include <string>

namespace pdenet {

/// Raised when tensor or cube extents do not line up.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised for out-of-range scalar arguments (stride 0, bad augmentation code, ...).
class ParameterError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised by the binary readers when a file fails validation.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when a file cannot be opened, read or written.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Misuse of the autodiff graph, e.g. backward from a detached value.
class UsageError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Invalid run configuration (unknown key, malformed value).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Training produced a non-finite loss or gradient.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace pdenet
