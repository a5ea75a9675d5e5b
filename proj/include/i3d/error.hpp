#pragma once

#include <stdexcept>
#include <string>

namespace i3d {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand shapes are incompatible with the requested operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf encountered where finite values are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Invalid argument, configuration, or graph construction request.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Filesystem failure (missing file, unreadable directory, short write).
class IoError : public Error {
 public:
  using Error::Error;
};

// Malformed serialized data. `code` distinguishes the failure class so that
// callers can react without parsing messages.
class FormatError : public Error {
 public:
  enum class Code {
    kBadMagic,
    kBadVersion,
    kBadHeader,
    kTruncated,
    kOverlap,
    kDuplicateName,
    kCorrupt,
  };

  FormatError(Code code, const std::string& what) : Error(what), code_(code) {}
  Code code() const { return code_; }

 private:
  Code code_;
};

}  // namespace i3d
