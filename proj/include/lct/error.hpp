#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace lct {

enum class ErrorKind {
  // tensor_store
  MalformedHeader,
  OffsetOverlap,
  TruncatedData,
  IoFailure,
  ShapeMismatch,
  NameSetMismatch,
  // model_surgery
  WeightSumInvalid,
  MissingTheta,
  NonPositiveFactor,
  // rope
  OddHeadDim,
  NonPositiveTheta,
  DimensionMismatch,
  // toy_lab
  LengthTooSmall,
  DivergedLoss,
  ConfigMismatch,
  InvalidConfig,
  // niah / eval
  CorpusTooShort,
  EmptyGrid,
  BackendUnreachable,
  EmptyInput,
  IncompleteRun,
  // data_pipeline
  NonAscendingEdges,
  InvalidRecord,
  // cli
  InvalidRunConfig,
  StageFailed,
};

std::string_view to_string(ErrorKind kind) noexcept;

/// Every failure raised by the toolkit carries a machine-checkable kind.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace lct
