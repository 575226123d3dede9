#include "npeb/errors.hpp"

namespace npeb {

std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::TooFewObservations: return "TooFewObservations";
    case ErrorCode::DegenerateVariance: return "DegenerateVariance";
    case ErrorCode::EmptyData: return "EmptyData";
    case ErrorCode::UnknownUnit: return "UnknownUnit";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::ZeroOracleLoss: return "ZeroOracleLoss";
    case ErrorCode::BinTooSmall: return "BinTooSmall";
    case ErrorCode::RankDeficient: return "RankDeficient";
    case ErrorCode::InsufficientWithinVariation: return "InsufficientWithinVariation";
    case ErrorCode::InfeasibleCorrelation: return "InfeasibleCorrelation";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::NumericalFailure: return "NumericalFailure";
    case ErrorCode::QuadratureUnderflow: return "QuadratureUnderflow";
  }
  return "Unknown";
}

bool is_numerical(ErrorCode code) {
  return code == ErrorCode::NumericalFailure || code == ErrorCode::QuadratureUnderflow;
}

}  // namespace npeb
