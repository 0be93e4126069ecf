#pragma once

#include <stdexcept>
#include <string>

namespace airfilter {

enum class ErrorCode {
  NoReferenceData,
  SingularCovariance,
  UnderdeterminedFit,
  RankDeficientDesign,
  InsufficientExceedances,
  FitDiverged,
  MleNotConverged,
  InsufficientData,
  Parse,
  Validation,
  UnsupportedFormat,
};

/// Whether an error stems from the input data or from a numerical failure.
/// The CLI maps these onto distinct exit codes.
enum class ErrorCategory { Data, Numerical };

const char* to_string(ErrorCode code);
ErrorCategory category_of(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }
  ErrorCategory category() const noexcept { return category_of(code_); }

 private:
  ErrorCode code_;
};

/// Parse failure with a 1-based line number (0 when not line-specific).
class ParseError : public Error {
 public:
  ParseError(const std::string& source, std::size_t line, const std::string& what)
      : Error(ErrorCode::Parse,
              source + (line > 0 ? ":" + std::to_string(line) : std::string()) + ": " + what),
        line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

}  // namespace airfilter
