#pragma once

#include <stdexcept>
#include <string>

namespace asc {

enum class ErrorKind {
  ShapeMismatch,
  NonFinite,
  InvalidAxis,
  NotScalar,
  NonSquareRotation,
  KernelLargerThanPaddedInput,
  BatchTooSmall,
  OddSpatialDim,
  HeadDivisibility,
  UnknownVariant,
  InvalidConfig,
  FileTruncated,
  LabelOutOfRange,
  EmptyDataset,
  UnknownTarget,
  Io,
};

const char* to_string(ErrorKind kind) noexcept;

// Every recoverable failure in the library is reported through this type; the
// kind is what callers (and tests) dispatch on, the message is for humans.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace asc
