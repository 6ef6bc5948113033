#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace weaklab {

/// Base class for every error raised by this library.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Malformed input data (standoff, JSON-Lines, BIO, vocabulary, TOML).
class ParseError : public Error {
public:
  explicit ParseError(const std::string& what, std::size_t line = 0)
      : Error(line ? what + " (line " + std::to_string(line) + ")" : what),
        line_(line) {}

  /// 1-based line of the offending input, 0 when not line-addressable.
  std::size_t line() const noexcept { return line_; }

private:
  std::size_t line_;
};

/// Invalid or inconsistent run configuration. Maps to CLI exit code 2.
class ConfigError : public Error {
public:
  using Error::Error;
};

/// Text-generation transport or protocol failure.
class GatewayError : public Error {
public:
  explicit GatewayError(const std::string& what, int attempts = 0, int http_status = 0)
      : Error(what), attempts_(attempts), http_status_(http_status) {}

  int attempts() const noexcept { return attempts_; }
  int http_status() const noexcept { return http_status_; }

private:
  int attempts_;
  int http_status_;
};

}  // namespace weaklab
