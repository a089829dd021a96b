#pragma once

#include <stdexcept>
#include <string>

namespace gest {

// All library failures derive from Error. kind() is a short machine-readable
// tag ("parse", "shape", "config", ...) used by the CLI's one-line reports.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& message)
      : std::runtime_error(message), kind_(std::move(kind)) {}

  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

class ParseError : public Error {
 public:
  ParseError(int line, const std::string& message)
      : Error("parse", "line " + std::to_string(line) + ": " + message), line_(line) {}

  int line() const noexcept { return line_; }

 private:
  int line_;
};

inline void require(bool condition, const char* kind, const std::string& message) {
  if (!condition) throw Error(kind, message);
}

}  // namespace gest
