#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace agentplan {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed workflow, config or plan document. `line` is 1-based, 0 if unknown.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, int line = 0, std::string field = {})
      : Error(line > 0 ? "line " + std::to_string(line) + ": " + what : what),
        line_(line),
        field_(std::move(field)) {}
  int line() const { return line_; }
  const std::string& field() const { return field_; }

 private:
  int line_;
  std::string field_;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

class CycleError : public ValidationError {
 public:
  explicit CycleError(std::vector<std::string> cycle);
  const std::vector<std::string>& cycle() const { return cycle_; }

 private:
  std::vector<std::string> cycle_;
};

class DependencyError : public Error {
 public:
  using Error::Error;
};

class ProfileError : public Error {
 public:
  using Error::Error;
};

class SearchError : public Error {
 public:
  using Error::Error;
};

// Raised by the exhaustive oracle when the instance is too large to enumerate.
class SizeGuardError : public Error {
 public:
  using Error::Error;
};

class OverflowError : public Error {
 public:
  OverflowError(const std::string& op, const std::string& worker, long long used, long long capacity);
  const std::string& op() const { return op_; }
  const std::string& worker() const { return worker_; }

 private:
  std::string op_;
  std::string worker_;
};

}  // namespace agentplan
