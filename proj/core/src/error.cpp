#include "featsplat/error.hpp"

namespace featsplat {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
  case ErrorKind::TruncatedFile: return "TruncatedFile";
  case ErrorKind::UnsupportedCameraModel: return "UnsupportedCameraModel";
  case ErrorKind::MalformedRecord: return "MalformedRecord";
  case ErrorKind::NonFiniteValue: return "NonFiniteValue";
  case ErrorKind::MissingFile: return "MissingFile";
  case ErrorKind::InconsistentReferences: return "InconsistentReferences";
  case ErrorKind::DegenerateExtent: return "DegenerateExtent";
  case ErrorKind::EmptyPointCloud: return "EmptyPointCloud";
  case ErrorKind::NonFiniteParameter: return "NonFiniteParameter";
  case ErrorKind::ShapeMismatch: return "ShapeMismatch";
  case ErrorKind::NonFiniteLoss: return "NonFiniteLoss";
  case ErrorKind::MissingFeatureMap: return "MissingFeatureMap";
  case ErrorKind::ChecksumMismatch: return "ChecksumMismatch";
  case ErrorKind::VersionUnsupported: return "VersionUnsupported";
  case ErrorKind::DimMismatch: return "DimMismatch";
  case ErrorKind::TooSmall: return "TooSmall";
  case ErrorKind::MissingGroundTruth: return "MissingGroundTruth";
  case ErrorKind::EmptyInput: return "EmptyInput";
  case ErrorKind::InvalidArgument: return "InvalidArgument";
  case ErrorKind::NotFound: return "NotFound";
  case ErrorKind::NoEmbedder: return "NoEmbedder";
  case ErrorKind::Io: return "Io";
  }
  return "Unknown";
}

} // namespace featsplat
