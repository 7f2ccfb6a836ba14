#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace greenbench {

// Base for every error raised by the harness itself (as opposed to verdicts
// about guest programs, which are data).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input file. Carries the 1-based line number when known.
class ParseError : public Error {
 public:
  ParseError(const std::string& source, std::size_t line, const std::string& what)
      : Error(source + ":" + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

// Invalid or unresolvable configuration: missing interpreter, bad flag value,
// missing credential.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// A precondition of a harness operation was not met.
class PreconditionError : public Error {
 public:
  using Error::Error;
};

// Infrastructure failure outside the guest program: provider transport,
// energy backend, filesystem.
class HarnessError : public Error {
 public:
  using Error::Error;
};

}  // namespace greenbench
