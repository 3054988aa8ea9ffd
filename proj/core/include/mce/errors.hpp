#pragma once

#include <stdexcept>
#include <string>

namespace mce {

/// Base class for all library errors.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// An operation's shape/value contract was violated by the caller.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Bad run configuration (unknown key, invalid value, usage error).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Filesystem / serialization failure.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Checkpoint file carries an unsupported format version.
class CheckpointVersionError : public IoError {
 public:
  using IoError::IoError;
};

/// Checkpoint file ends before all declared records (or the CRC) were read.
class CheckpointTruncatedError : public IoError {
 public:
  using IoError::IoError;
};

/// Checkpoint CRC-32 does not match the stored trailer.
class CheckpointChecksumError : public IoError {
 public:
  using IoError::IoError;
};

/// Non-finite values where finite arithmetic was guaranteed (e.g. training divergence).
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Graph::backward called again without recording new operations.
class GraphReuseError : public Error {
 public:
  using Error::Error;
};

}  // namespace mce
