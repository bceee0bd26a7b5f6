#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace qtat {

/// Base class for every error raised by the library. Subclasses map one-to-one
/// onto the failure categories the CLI reports.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidGeometry : public Error {
 public:
  using Error::Error;
};

class InvalidOperator : public Error {
 public:
  using Error::Error;
};

class UnstableConfiguration : public Error {
 public:
  using Error::Error;
};

class InvalidInitialCondition : public Error {
 public:
  using Error::Error;
};

class InvalidData : public Error {
 public:
  using Error::Error;
};

class SolverFailure : public Error {
 public:
  SolverFailure(const std::string& what, std::size_t iterations, double residual)
      : Error(what + " (iterations=" + std::to_string(iterations) +
              ", residual=" + std::to_string(residual) + ")"),
        iterations_(iterations),
        residual_(residual) {}

  std::size_t iterations() const noexcept { return iterations_; }
  double residual() const noexcept { return residual_; }

 private:
  std::size_t iterations_;
  double residual_;
};

class UnderResolved : public Error {
 public:
  using Error::Error;
};

/// Configuration problems carry the offending line (0 when not tied to a line).
class ConfigError : public Error {
 public:
  ConfigError(const std::string& what, std::size_t line = 0)
      : Error(line ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Wraps an error raised inside one pipeline stage so callers see where it came from.
class StageError : public Error {
 public:
  StageError(std::string stage, const std::exception& inner)
      : Error(stage + ": " + inner.what()), stage_(std::move(stage)) {}

  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

}  // namespace qtat
