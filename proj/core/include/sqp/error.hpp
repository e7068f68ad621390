#pragma once

#include <stdexcept>
#include <string>

namespace sqp {

/// Base class for every error raised by the library. Messages are meant to be
/// shown to a user as-is.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// Malformed or truncated file, wrong magic, unsupported encoding.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// A caller-supplied value violates an operation's precondition.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

}  // namespace sqp
