#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace lrdiag {

enum class ErrorCode {
  DimensionMismatch,
  NotOrthonormal,
  NotPd,
  NonPositiveDiagonal,
  TooLargeToDensify,
  SingularSmallSystem,
  NotInvertible,
  WidthExceeded,
  MismatchedVariant,
  RankDeficient,
  NonFiniteState,
  UnsupportedAForm,
  EmptySampleSet,
  ParseError,
  ValidationError,
  IoError,
};

std::string_view error_name(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(error_name(code)) + ": " + what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

inline void require(bool ok, ErrorCode code, const std::string& what) {
  if (!ok) throw Error(code, what);
}

}  // namespace lrdiag
