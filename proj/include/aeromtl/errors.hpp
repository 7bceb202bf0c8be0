#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace aeromtl {

// Failure categories; the CLI maps these onto process exit codes.
enum class ErrorCategory {
  InvalidArgument,
  Config,
  Parse,
  Schema,
  Degenerate,
  Infeasible,
  Numeric,
  Io,
};

const char* to_string(ErrorCategory category) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& what)
      : std::runtime_error(what), category_(category) {}

  ErrorCategory category() const noexcept { return category_; }

 private:
  ErrorCategory category_;
};

class InvalidArgument : public Error {
 public:
  explicit InvalidArgument(const std::string& what) : Error(ErrorCategory::InvalidArgument, what) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(ErrorCategory::Config, what) {}
};

/// Malformed text input. `position` is a character offset or a row, depending on the source.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t position)
      : Error(ErrorCategory::Parse, what), position_(position) {}

  std::size_t position() const noexcept { return position_; }

 private:
  std::size_t position_;
};

class SchemaError : public Error {
 public:
  explicit SchemaError(const std::string& what) : Error(ErrorCategory::Schema, what) {}
};

class DegenerateDimension : public Error {
 public:
  explicit DegenerateDimension(const std::string& what) : Error(ErrorCategory::Degenerate, what) {}
};

class Infeasible : public Error {
 public:
  explicit Infeasible(const std::string& what) : Error(ErrorCategory::Infeasible, what) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error(ErrorCategory::Numeric, what) {}
};

/// Training produced a non-finite loss. `iteration` is zero-based.
class Divergence : public NumericError {
 public:
  Divergence(const std::string& what, std::size_t iteration)
      : NumericError(what), iteration_(iteration) {}

  std::size_t iteration() const noexcept { return iteration_; }

 private:
  std::size_t iteration_;
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(ErrorCategory::Io, what) {}
};

}  // namespace aeromtl
