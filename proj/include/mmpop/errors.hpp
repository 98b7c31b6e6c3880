#pragma once

#include <stdexcept>
#include <string>

namespace mmpop {

/// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Caller violated an operation's precondition (bad argument, bad flag, bad config).
class UsageError : public Error {
 public:
  using Error::Error;
};

/// Input data is malformed or inconsistent (manifest, bundle, report files).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Non-conforming matrix shapes.
class ShapeError : public UsageError {
 public:
  using UsageError::UsageError;
};

}  // namespace mmpop
