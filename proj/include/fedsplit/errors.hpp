#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace fedsplit {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

class NonFiniteInput : public Error {
 public:
  using Error::Error;
};

class ShapeMismatch : public Error {
 public:
  using Error::Error;
};

class PartitionFailure : public Error {
 public:
  using Error::Error;
};

class EmptyTestSet : public Error {
 public:
  using Error::Error;
};

// Raised when a local loss or parameter becomes non-finite. The federation
// layer rethrows it with the round/iteration/client where it happened.
class TrainingDiverged : public Error {
 public:
  explicit TrainingDiverged(std::size_t step);
  TrainingDiverged(std::size_t step, int round, int iteration, int client_id);

  std::size_t step() const { return step_; }
  std::optional<int> round() const { return round_; }
  std::optional<int> iteration() const { return iteration_; }
  std::optional<int> client_id() const { return client_id_; }

 private:
  std::size_t step_;
  std::optional<int> round_;
  std::optional<int> iteration_;
  std::optional<int> client_id_;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class ParseError : public ConfigError {
 public:
  ParseError(const std::string& message, std::size_t line);
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

// Carries every violation found, not just the first.
class ValidationError : public ConfigError {
 public:
  explicit ValidationError(std::vector<std::string> violations);
  const std::vector<std::string>& violations() const { return violations_; }

 private:
  std::vector<std::string> violations_;
};

}  // namespace fedsplit
