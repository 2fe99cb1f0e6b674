#pragma once

#include <stdexcept>
#include <string>

namespace bmfia {

/// Base class for all library errors. `exit_code()` maps onto the CLI
/// contract: 2 configuration, 3 missing artifact, 4 numerical failure.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual int exit_code() const noexcept { return 1; }
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

class ShapeMismatch : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

class InvalidMesh : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

class OutOfDomain : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

class ConfigError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 2; }
};

class MissingArtifact : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 3; }
};

class NumericalError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 4; }
};

/// Sparse factorization failed (matrix not SPD).
class FactorizationError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class SolverError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class DegenerateSignal : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

}  // namespace bmfia
