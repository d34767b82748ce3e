#include "lct/error.hpp"

namespace lct {

std::string_view to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::MalformedHeader: return "MalformedHeader";
    case ErrorKind::OffsetOverlap: return "OffsetOverlap";
    case ErrorKind::TruncatedData: return "TruncatedData";
    case ErrorKind::IoFailure: return "IoFailure";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::NameSetMismatch: return "NameSetMismatch";
    case ErrorKind::WeightSumInvalid: return "WeightSumInvalid";
    case ErrorKind::MissingTheta: return "MissingTheta";
    case ErrorKind::NonPositiveFactor: return "NonPositiveFactor";
    case ErrorKind::OddHeadDim: return "OddHeadDim";
    case ErrorKind::NonPositiveTheta: return "NonPositiveTheta";
    case ErrorKind::DimensionMismatch: return "DimensionMismatch";
    case ErrorKind::LengthTooSmall: return "LengthTooSmall";
    case ErrorKind::DivergedLoss: return "DivergedLoss";
    case ErrorKind::ConfigMismatch: return "ConfigMismatch";
    case ErrorKind::InvalidConfig: return "InvalidConfig";
    case ErrorKind::CorpusTooShort: return "CorpusTooShort";
    case ErrorKind::EmptyGrid: return "EmptyGrid";
    case ErrorKind::BackendUnreachable: return "BackendUnreachable";
    case ErrorKind::EmptyInput: return "EmptyInput";
    case ErrorKind::IncompleteRun: return "IncompleteRun";
    case ErrorKind::NonAscendingEdges: return "NonAscendingEdges";
    case ErrorKind::InvalidRecord: return "InvalidRecord";
    case ErrorKind::InvalidRunConfig: return "InvalidRunConfig";
    case ErrorKind::StageFailed: return "StageFailed";
  }
  return "Unknown";
}

}  // namespace lct
