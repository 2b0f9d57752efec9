#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace qf {

// Each kind maps to a distinct CLI exit code (see harness.cpp).
enum class ErrorKind : std::uint8_t {
  kConfig,      // unsupported parameters or invalid configuration
  kGeneration,  // rejection sampler or dataset builder could not satisfy constraints
  kStructure,   // malformed payload handed to a solver
  kEncoding,    // symbol missing from a vocabulary
  kParse,       // token stream violates the task grammar
  kShape,       // tensor or sequence shape mismatch
  kData,        // batch/label content unusable (e.g. all-masked row)
  kContract,    // precondition violated by the caller
  kNumeric,     // non-finite values
  kIo,          // file system and persistence errors
};

std::string_view error_kind_name(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class ParseError : public Error {
 public:
  ParseError(std::size_t position, const std::string& message)
      : Error(ErrorKind::kParse,
              "parse error at position " + std::to_string(position) + ": " + message),
        position_(position) {}

  std::size_t position() const noexcept { return position_; }

 private:
  std::size_t position_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

inline void require(bool condition, ErrorKind kind, const std::string& message) {
  if (!condition) fail(kind, message);
}

}  // namespace qf
