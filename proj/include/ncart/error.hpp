#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ncart {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad input: malformed files, out-of-range indices, inconsistent shapes.
/// The CLI maps these to exit code 1.
class ValidationError : public Error {
 public:
  enum class Code {
    kIo,
    kParse,
    kManifest,
    kShapeMismatch,
    kTokenCountMismatch,
    kCorpusMismatch,
    kNonFinite,
    kOutOfBounds,
    kConflict,
    kDuplicate,
    kInvalidArgument,
  };

  ValidationError(Code code, const std::string& what) : Error(what), code_(code) {}

  Code code() const noexcept { return code_; }

 private:
  Code code_;
};

/// Numerical failure: singular systems, degenerate variance, ill-conditioning.
/// The CLI maps these to exit code 2.
class NumericalError : public Error {
 public:
  using Error::Error;
};

std::string_view to_string(ValidationError::Code code);

}  // namespace ncart
