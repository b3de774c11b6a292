#pragma once

#include <stdexcept>
#include <string>

namespace nkws {

// Validation errors (bad input, bad config) map to CLI exit code 1; every
// other Error is a runtime failure (exit code 2).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual bool is_validation() const noexcept { return false; }
};

class ValidationError : public Error {
 public:
  using Error::Error;
  bool is_validation() const noexcept override { return true; }
};

class ParseError : public ValidationError {
 public:
  ParseError(const std::string& what, std::size_t line)
      : ValidationError("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class MissingKeywordError : public ValidationError {
 public:
  explicit MissingKeywordError(const std::string& keyword)
      : ValidationError("keyword '" + keyword + "' has no occurrences in the corpus"),
        keyword_(keyword) {}
  const std::string& keyword() const noexcept { return keyword_; }

 private:
  std::string keyword_;
};

class InfeasibleError : public Error {
 public:
  using Error::Error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class UsageError : public Error {
 public:
  using Error::Error;
};

class ContractError : public Error {
 public:
  using Error::Error;
};

class UndefinedMetricError : public Error {
 public:
  using Error::Error;
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

class DivergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace nkws
