#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace bit {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand extents do not agree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A value is outside the domain of a function (e.g. log of a non-positive number).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// An API was called in a way its contract does not allow.
class UsageError : public Error {
 public:
  using Error::Error;
};

/// A configuration document failed validation.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A file could not be decoded. Carries the byte offset where decoding stopped.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t offset)
      : Error(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}

  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

/// A file carries a format tag or version this build does not understand.
class VersionError : public Error {
 public:
  using Error::Error;
};

/// A runtime contract check failed (gradient mismatch, frozen weights moved).
class CheckFailure : public Error {
 public:
  using Error::Error;
};

}  // namespace bit
