#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace featsplat {

enum class ErrorKind {
  TruncatedFile,
  UnsupportedCameraModel,
  MalformedRecord,
  NonFiniteValue,
  MissingFile,
  InconsistentReferences,
  DegenerateExtent,
  EmptyPointCloud,
  NonFiniteParameter,
  ShapeMismatch,
  NonFiniteLoss,
  MissingFeatureMap,
  ChecksumMismatch,
  VersionUnsupported,
  DimMismatch,
  TooSmall,
  MissingGroundTruth,
  EmptyInput,
  InvalidArgument,
  NotFound,
  NoEmbedder,
  Io,
};

std::string_view to_string(ErrorKind kind);

/// Every failure raised by the library carries a machine-checkable kind.
class Error : public std::runtime_error {
public:
  Error(ErrorKind kind, const std::string &detail)
      : std::runtime_error(std::string(to_string(kind)) + ": " + detail), kind_(kind), detail_(detail) {}

  ErrorKind kind() const noexcept { return kind_; }
  const std::string &detail() const noexcept { return detail_; }

private:
  ErrorKind kind_;
  std::string detail_;
};

} // namespace featsplat
