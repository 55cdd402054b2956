#include "cmr/error.hpp"

namespace cmr {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::MissingFile: return "missing-file";
    case ErrorCode::MalformedHeader: return "malformed-header";
    case ErrorCode::LabelOutOfRange: return "reference-label-out-of-range";
    case ErrorCode::DegenerateIntensity: return "degenerate-intensity";
    case ErrorCode::InsufficientGroupSize: return "insufficient-group-size";
    case ErrorCode::ShapeMismatch: return "shape-mismatch";
    case ErrorCode::InvalidArgument: return "invalid-argument";
    case ErrorCode::UnknownArchitecture: return "unknown-arch";
    case ErrorCode::Divergence: return "divergence";
    case ErrorCode::NoPositives: return "no-positives";
    case ErrorCode::UmapKindMismatch: return "umap-kind-mismatch";
    case ErrorCode::EmptyReference: return "empty-reference";
    case ErrorCode::UndefinedMetric: return "undefined-metric";
    case ErrorCode::OutOfBounds: return "out-of-bounds";
    case ErrorCode::EditRejected: return "edit-rejected";
    case ErrorCode::SessionClosed: return "session-closed";
    case ErrorCode::StaleVersion: return "stale-version";
    case ErrorCode::NotFound: return "not-found";
    case ErrorCode::ConfigError: return "config-error";
    case ErrorCode::MissingDependency: return "missing-dependency";
    case ErrorCode::IoError: return "io-error";
  }
  return "unknown";
}

}  // namespace cmr
