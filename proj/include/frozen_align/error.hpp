#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace frozen_align {

enum class ErrorCode {
  // feature store
  DimensionMismatch,
  DuplicateId,
  NonFiniteValue,
  IoFailure,
  BadMagic,
  VersionUnsupported,
  TruncatedFile,
  UnresolvedId,
  EmptyCaptionList,
  // projection net
  InvalidConfig,
  BatchTooSmall,
  WidthMismatch,
  StaleCache,
  // contrastive
  ZeroVector,
  NotNormalized,
  ShapeMismatch,
  InvalidTau,
  // optimizer
  NonFiniteGradient,
  // trainer
  TooSmall,
  BatchExceedsDataset,
  DimMismatch,
  NonFiniteLoss,
  // class representations
  BadTemplate,
  EmptyInput,
  MissingEmbedding,
  // evaluation
  EmptyClass,
  KExceedsCorpus,
  // benchmark protocol
  OverlapDetected,
  CountMismatch,
  LeakDetected,
  MissingDataset,
  // generic parse / config
  ParseError,
};

std::string_view to_string(ErrorCode code) noexcept;

/// Every failure in the engine surfaces as this exception; `code()` is the
/// stable discriminator the CLI maps onto exit codes.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace frozen_align
