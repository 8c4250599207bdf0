#pragma once

#include <stdexcept>
#include <string>

namespace sqz {

/// Base class for every error raised by the library. `exit_code()` is the
/// process status the command-line runner reports for it.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual int exit_code() const noexcept { return 2; }
};

/// Invalid or incomplete configuration (exit code 1).
class ConfigError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 1; }
};

/// Argument outside the physical domain of an operation: wavelength outside
/// the Sellmeier band, evanescent wavevector, and similar.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Malformed input to an operation (shape mismatch, non-symmetric kernel,
/// missing measurements).
class InputError : public Error {
 public:
  using Error::Error;
};

/// Numerical failure or violated invariant (exit code 2).
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// File-system or parse failure (exit code 3).
class IoError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 3; }
};

}  // namespace sqz
