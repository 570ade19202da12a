#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>

namespace vrfear {

// Every failure raised by the library carries the module that produced it and a
// short machine-readable code, so callers (the CLI, the HTTP service) can report
// it without parsing the message.
class Error : public std::runtime_error {
 public:
  Error(std::string module, std::string code, const std::string& message)
      : std::runtime_error(message), module_(std::move(module)), code_(std::move(code)) {}

  const std::string& module() const noexcept { return module_; }
  const std::string& code() const noexcept { return code_; }

 private:
  std::string module_;
  std::string code_;
};

// A malformed input row. `line` is the 1-based line number in the source text,
// header included.
class ParseError : public Error {
 public:
  ParseError(std::string module, std::int64_t line, const std::string& message)
      : Error(std::move(module), "parse_error",
              "line " + std::to_string(line) + ": " + message),
        line_(line) {}

  std::int64_t line() const noexcept { return line_; }

 private:
  std::int64_t line_;
};

}  // namespace vrfear
