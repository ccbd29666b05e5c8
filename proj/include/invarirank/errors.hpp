#pragma once

#include <stdexcept>
#include <string>

namespace invarirank {

/// Root of every error thrown by this library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand extents that do not agree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A masked softmax row with no permitted key.
class DegenerateRowError : public Error {
 public:
  using Error::Error;
};

/// Caller violated an operation's precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class LayoutError : public Error {
 public:
  using Error::Error;
};

/// NaN or Inf where finite values are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

class VocabularyError : public Error {
 public:
  using Error::Error;
};

/// Malformed file content. `line()` is 1-based, 0 when not line oriented.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error(line == 0 ? what : "line " + std::to_string(line) + ": " + what),
        line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

class VersionError : public Error {
 public:
  using Error::Error;
};

}  // namespace invarirank
