#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace bomtrace {

// Process exit codes shared by every CLI command.
namespace exit_code {
inline constexpr int ok = 0;
inline constexpr int usage = 1;
inline constexpr int not_found = 2;
inline constexpr int privilege = 3;
inline constexpr int malformed_log = 4;
inline constexpr int mismatch = 5;
inline constexpr int unverifiable = 6;
inline constexpr int differs = 7;
inline constexpr int unsupported = 8;
}  // namespace exit_code

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed replay-log record. `line` is 1-based; 0 when not applicable.
class ParseError : public Error {
 public:
  ParseError(std::string msg, std::size_t line = 0)
      : Error(line ? "line " + std::to_string(line) + ": " + msg : msg),
        line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

// A log whose timestamps decrease.
class OrderingError : public ParseError {
 public:
  using ParseError::ParseError;
};

// Malformed SBOM document bytes.
class DocumentError : public Error {
 public:
  DocumentError(std::string msg, std::size_t byte_offset)
      : Error("byte " + std::to_string(byte_offset) + ": " + msg),
        offset_(byte_offset) {}

  std::size_t byte_offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

class PermissionError : public Error {
 public:
  using Error::Error;
};

class UnsupportedError : public Error {
 public:
  using Error::Error;
};

class UnverifiableError : public Error {
 public:
  using Error::Error;
};

// Read failure in the middle of a digest computation.
class HashReadError : public Error {
 public:
  HashReadError(std::string msg, std::uint64_t bytes_read)
      : Error(msg + " after " + std::to_string(bytes_read) + " bytes"),
        bytes_read_(bytes_read) {}

  std::uint64_t bytes_read() const noexcept { return bytes_read_; }

 private:
  std::uint64_t bytes_read_;
};

}  // namespace bomtrace
