#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace ctv {

// Error families map one-to-one onto CLI exit codes.
enum class ErrorFamily : int {
  kParse = 2,
  kValidation = 3,
  kGrid = 4,
  kIo = 5,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorFamily family, const std::string& what)
      : std::runtime_error(what), family_(family) {}
  ErrorFamily family() const noexcept { return family_; }

 private:
  ErrorFamily family_;
};

/// Malformed input text. `line` is 1-based, `column` is the 1-based field
/// index within the line (0 when the whole line is at fault).
class ParseError : public Error {
 public:
  ParseError(std::string source, std::size_t line, std::size_t column,
             const std::string& message)
      : Error(ErrorFamily::kParse, Format(source, line, column, message)),
        source_(std::move(source)),
        line_(line),
        column_(column) {}

  const std::string& source() const noexcept { return source_; }
  std::size_t line() const noexcept { return line_; }
  std::size_t column() const noexcept { return column_; }

 private:
  static std::string Format(const std::string& source, std::size_t line,
                            std::size_t column, const std::string& message) {
    std::string out = source.empty() ? std::string("<input>") : source;
    out += ":" + std::to_string(line);
    if (column > 0) out += ":" + std::to_string(column);
    return out + ": " + message;
  }

  std::string source_;
  std::size_t line_;
  std::size_t column_;
};

class ValidationError : public Error {
 public:
  explicit ValidationError(const std::string& what)
      : Error(ErrorFamily::kValidation, what) {}
};

/// A value outside its documented range (confidence > 1, inverted box...).
class RangeError : public ValidationError {
 public:
  RangeError(std::string source, std::size_t line, const std::string& message)
      : ValidationError((source.empty() ? std::string("<input>") : source) +
                        ":" + std::to_string(line) + ": " + message),
        line_(line) {}
  explicit RangeError(const std::string& message)
      : ValidationError(message), line_(0) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class UnknownClassError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class IncompleteProfileError : public ValidationError {
 public:
  IncompleteProfileError(const std::string& what,
                         std::vector<std::pair<std::string, int>> missing)
      : ValidationError(what), missing_(std::move(missing)) {}
  const std::vector<std::pair<std::string, int>>& missing() const noexcept {
    return missing_;
  }

 private:
  std::vector<std::pair<std::string, int>> missing_;
};

struct FieldIssue {
  std::string field;
  std::string message;
};

class InvalidParamsError : public ValidationError {
 public:
  explicit InvalidParamsError(std::vector<FieldIssue> issues)
      : ValidationError(Summarize(issues)), issues_(std::move(issues)) {}
  const std::vector<FieldIssue>& issues() const noexcept { return issues_; }

 private:
  static std::string Summarize(const std::vector<FieldIssue>& issues) {
    std::string out = "invalid parameters:";
    for (const auto& i : issues) out += " " + i.field + " (" + i.message + ");";
    return out;
  }
  std::vector<FieldIssue> issues_;
};

class MissingSourceError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class MissingImageSizeError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class ZeroWeightError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class PackingInfeasibleError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class GridTooLargeError : public Error {
 public:
  explicit GridTooLargeError(const std::string& what)
      : Error(ErrorFamily::kGrid, what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(ErrorFamily::kIo, what) {}
};

}  // namespace ctv
