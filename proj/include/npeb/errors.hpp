#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace npeb {

enum class ErrorCode {
  TooFewObservations,
  DegenerateVariance,
  EmptyData,
  UnknownUnit,
  LengthMismatch,
  ZeroOracleLoss,
  BinTooSmall,
  RankDeficient,
  InsufficientWithinVariation,
  InfeasibleCorrelation,
  InvalidArgument,
  ParseError,
  NumericalFailure,
  QuadratureUnderflow,
};

std::string_view error_code_name(ErrorCode code);

/// Numerical failures map to a distinct CLI exit code; everything else is a
/// data/input problem.
bool is_numerical(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace npeb
