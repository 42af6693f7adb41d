#include "flowscope/error.hpp"

namespace flowscope {

std::string_view errc_name(Errc code) noexcept {
  switch (code) {
    case Errc::OutOfOrderTimestamp: return "OutOfOrderTimestamp";
    case Errc::EmptyInput: return "EmptyInput";
    case Errc::FewerThanFourFlows: return "FewerThanFourFlows";
    case Errc::EmptyPairSet: return "EmptyPairSet";
    case Errc::DegenerateGraph: return "DegenerateGraph";
    case Errc::EmptyBackground: return "EmptyBackground";
    case Errc::EmptyGroup: return "EmptyGroup";
    case Errc::SingleCluster: return "SingleCluster";
    case Errc::LengthMismatch: return "LengthMismatch";
    case Errc::MissingPartition: return "MissingPartition";
    case Errc::ParseError: return "ParseError";
    case Errc::Io: return "Io";
    case Errc::InvalidConfig: return "InvalidConfig";
    case Errc::ConfigMismatch: return "ConfigMismatch";
    case Errc::InvalidArgument: return "InvalidArgument";
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::NonScalarLoss: return "NonScalarLoss";
    case Errc::NonConvergence: return "NonConvergence";
    case Errc::NaNLoss: return "NaNLoss";
  }
  return "Unknown";
}

ErrorClass error_class(Errc code) noexcept {
  switch (code) {
    case Errc::InvalidConfig:
    case Errc::ConfigMismatch:
    case Errc::InvalidArgument:
      return ErrorClass::Config;
    case Errc::ShapeMismatch:
    case Errc::NonScalarLoss:
    case Errc::NonConvergence:
    case Errc::NaNLoss:
      return ErrorClass::Numeric;
    default:
      return ErrorClass::Data;
  }
}

}  // namespace flowscope
