#pragma once

#include <stdexcept>
#include <string>

namespace pbsm {

/// Base class for all errors raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

class InvalidMesh : public Error {
 public:
  using Error::Error;
};

class IncompatibleFlux : public Error {
 public:
  using Error::Error;
};

class SolverFailure : public Error {
 public:
  using Error::Error;
};

class PointOutsideDomain : public Error {
 public:
  using Error::Error;
};

class EmptyDesign : public Error {
 public:
  using Error::Error;
};

class ParameterOutsideDomain : public Error {
 public:
  using Error::Error;
};

class InvalidStart : public Error {
 public:
  using Error::Error;
};

class ChainTooShort : public Error {
 public:
  using Error::Error;
};

class DegenerateChain : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class MissingArtifact : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace pbsm
