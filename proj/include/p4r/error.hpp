#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace p4r {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input file; carries the 1-based line number when known.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error(line ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

// Well-formed input that violates a data invariant (rating range, bijections, ...).
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Shape or argument mismatch in a numeric routine.
class DomainError : public Error {
 public:
  using Error::Error;
};

// Non-finite values appeared during training or loading.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace p4r
