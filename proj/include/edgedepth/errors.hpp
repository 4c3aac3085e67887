#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace edgedepth {

// Base class for all library errors.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Tensor extents incompatible with the requested operation.
class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& msg) : Error(msg) {}
};

// Non-finite value entered or left a numeric operation.
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& msg) : Error(msg) {}
};

// Invalid configuration value or inconsistent model wiring.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& msg) : Error(msg) {}
};

// Malformed file content; carries the byte offset of the defect.
class FormatError : public Error {
 public:
  FormatError(const std::string& msg, std::size_t byte_offset)
      : Error(msg + " (at byte offset " + std::to_string(byte_offset) + ")"),
        offset_(byte_offset) {}

  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

// A loss or metric was requested over a mask with no valid pixels.
class EmptyMaskError : public Error {
 public:
  explicit EmptyMaskError(const std::string& msg) : Error(msg) {}
};

// Input value outside the mathematical domain of the operation.
class DomainError : public Error {
 public:
  explicit DomainError(const std::string& msg) : Error(msg) {}
};

}  // namespace edgedepth
