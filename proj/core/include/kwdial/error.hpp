#pragma once

#include <stdexcept>
#include <string>

namespace kwdial {

// Every failure raised by the library derives from Error. kind() is a short
// stable tag used by the CLI for machine-parseable error lines.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error("io", what) {}
};

class ParseError : public Error {
 public:
  ParseError(const std::string& what, long line = 0)
      : Error("parse", line > 0 ? what + " (line " + std::to_string(line) + ")" : what),
        line_(line) {}
  long line() const noexcept { return line_; }

 private:
  long line_;
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error("config", what) {}
};

class NonFiniteLoss : public Error {
 public:
  NonFiniteLoss(std::string term, const std::string& what)
      : Error("non_finite_loss", what), term_(std::move(term)) {}
  const std::string& term() const noexcept { return term_; }

 private:
  std::string term_;
};

}  // namespace kwdial
