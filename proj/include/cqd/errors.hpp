#pragma once

#include <stdexcept>
#include <string>

namespace cqd {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A caller violated a documented precondition (shapes, ranges, arguments).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf encountered, or a linear system that cannot be solved.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// An object was used in the wrong lifecycle state (e.g. backward twice).
class StateError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Checkpoint / manifest load failures. Each class is distinct so callers can
// tell a foreign file from a damaged one.
class FormatError : public IoError {
 public:
  using IoError::IoError;
};

class VersionError : public IoError {
 public:
  using IoError::IoError;
};

class TruncatedError : public IoError {
 public:
  using IoError::IoError;
};

class PayloadLengthError : public IoError {
 public:
  using IoError::IoError;
};

#define CQD_REQUIRE(cond, msg)                                  \
  do {                                                          \
    if (!(cond)) throw ::cqd::ContractError(std::string(msg));  \
  } while (0)

}  // namespace cqd
