#include "lrdiag/error.hpp"

namespace lrdiag {

std::string_view error_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::NotOrthonormal: return "NotOrthonormal";
    case ErrorCode::NotPd: return "NotPd";
    case ErrorCode::NonPositiveDiagonal: return "NonPositiveDiagonal";
    case ErrorCode::TooLargeToDensify: return "TooLargeToDensify";
    case ErrorCode::SingularSmallSystem: return "SingularSmallSystem";
    case ErrorCode::NotInvertible: return "NotInvertible";
    case ErrorCode::WidthExceeded: return "WidthExceeded";
    case ErrorCode::MismatchedVariant: return "MismatchedVariant";
    case ErrorCode::RankDeficient: return "RankDeficient";
    case ErrorCode::NonFiniteState: return "NonFiniteState";
    case ErrorCode::UnsupportedAForm: return "UnsupportedAForm";
    case ErrorCode::EmptySampleSet: return "EmptySampleSet";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::ValidationError: return "ValidationError";
    case ErrorCode::IoError: return "IoError";
  }
  return "UnknownError";
}

}  // namespace lrdiag
