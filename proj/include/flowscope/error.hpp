#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace flowscope {

enum class Errc {
  // data errors
  OutOfOrderTimestamp,
  EmptyInput,
  FewerThanFourFlows,
  EmptyPairSet,
  DegenerateGraph,
  EmptyBackground,
  EmptyGroup,
  SingleCluster,
  LengthMismatch,
  MissingPartition,
  ParseError,
  Io,
  // config errors
  InvalidConfig,
  ConfigMismatch,
  InvalidArgument,
  // numeric failures
  ShapeMismatch,
  NonScalarLoss,
  NonConvergence,
  NaNLoss,
};

enum class ErrorClass { Config, Data, Numeric };

std::string_view errc_name(Errc code) noexcept;
ErrorClass error_class(Errc code) noexcept;

/// The single exception type thrown by the library; `code()` says what went
/// wrong, `error_class()` maps it onto the CLI exit-code families.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  Errc code() const noexcept { return code_; }
  ErrorClass klass() const noexcept { return error_class(code_); }

 private:
  Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace flowscope
