#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace graphlay {

enum class ErrorKind {
  parse,
  duplicate_id,
  missing_field,
  unknown_relation,
  unresolved_reference,
  invalid_argument,
  shape_mismatch,
  training_diverged,
  not_found,
  conflict,
  io,
};

/// Base of every domain error raised by the library. The CLI maps these to
/// exit code 1; usage errors never reach this type.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error(ErrorKind::parse, "line " + std::to_string(line) + ": " + what),
        line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

}  // namespace graphlay
