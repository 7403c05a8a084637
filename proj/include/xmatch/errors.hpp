#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace xmatch {

// Base class for everything this library throws on purpose.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shape mismatch between operands.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Invalid argument value (empty input, non-positive temperature, ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

// API used out of order (e.g. reading gradients before backward()).
class StateError : public Error {
 public:
  using Error::Error;
};

// Token index outside the vocabulary.
class VocabError : public Error {
 public:
  using Error::Error;
};

// Bad bytes in a data file. Carries the offending byte offset when known.
class FormatError : public Error {
 public:
  static constexpr std::size_t kNoOffset = static_cast<std::size_t>(-1);

  explicit FormatError(const std::string& what, std::size_t byte_offset = kNoOffset)
      : Error(byte_offset == kNoOffset
                  ? what
                  : what + " (byte offset " + std::to_string(byte_offset) + ")"),
        byte_offset_(byte_offset) {}

  std::size_t byte_offset() const { return byte_offset_; }

 private:
  std::size_t byte_offset_;
};

// Invalid run configuration (unknown preset, inconsistent checkpoint, ...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// A NaN or Inf escaped a numeric operation.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Training diverged; message carries epoch/batch position.
class TrainingError : public Error {
 public:
  using Error::Error;
};

}  // namespace xmatch
