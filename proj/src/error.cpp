#include "frozen_align/error.hpp"

namespace frozen_align {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::DimensionMismatch:
      return "DimensionMismatch";
    case ErrorCode::DuplicateId:
      return "DuplicateId";
    case ErrorCode::NonFiniteValue:
      return "NonFiniteValue";
    case ErrorCode::IoFailure:
      return "IoFailure";
    case ErrorCode::BadMagic:
      return "BadMagic";
    case ErrorCode::VersionUnsupported:
      return "VersionUnsupported";
    case ErrorCode::TruncatedFile:
      return "TruncatedFile";
    case ErrorCode::UnresolvedId:
      return "UnresolvedId";
    case ErrorCode::EmptyCaptionList:
      return "EmptyCaptionList";
    case ErrorCode::InvalidConfig:
      return "InvalidConfig";
    case ErrorCode::BatchTooSmall:
      return "BatchTooSmall";
    case ErrorCode::WidthMismatch:
      return "WidthMismatch";
    case ErrorCode::StaleCache:
      return "StaleCache";
    case ErrorCode::ZeroVector:
      return "ZeroVector";
    case ErrorCode::NotNormalized:
      return "NotNormalized";
    case ErrorCode::ShapeMismatch:
      return "ShapeMismatch";
    case ErrorCode::InvalidTau:
      return "InvalidTau";
    case ErrorCode::NonFiniteGradient:
      return "NonFiniteGradient";
    case ErrorCode::TooSmall:
      return "TooSmall";
    case ErrorCode::BatchExceedsDataset:
      return "BatchExceedsDataset";
    case ErrorCode::DimMismatch:
      return "DimMismatch";
    case ErrorCode::NonFiniteLoss:
      return "NonFiniteLoss";
    case ErrorCode::BadTemplate:
      return "BadTemplate";
    case ErrorCode::EmptyInput:
      return "EmptyInput";
    case ErrorCode::MissingEmbedding:
      return "MissingEmbedding";
    case ErrorCode::EmptyClass:
      return "EmptyClass";
    case ErrorCode::KExceedsCorpus:
      return "KExceedsCorpus";
    case ErrorCode::OverlapDetected:
      return "OverlapDetected";
    case ErrorCode::CountMismatch:
      return "CountMismatch";
    case ErrorCode::LeakDetected:
      return "LeakDetected";
    case ErrorCode::MissingDataset:
      return "MissingDataset";
    case ErrorCode::ParseError:
      return "ParseError";
  }
  return "Unknown";
}

}  // namespace frozen_align
