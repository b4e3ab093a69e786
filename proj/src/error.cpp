#include "faxis/error.hpp"

namespace faxis {

std::string_view errc_name(Errc code) noexcept {
  switch (code) {
    case Errc::ZeroVector: return "ZeroVector";
    case Errc::SchemaMismatch: return "SchemaMismatch";
    case Errc::UnknownAxis: return "UnknownAxis";
    case Errc::DimMismatch: return "DimMismatch";
    case Errc::InvalidSchema: return "InvalidSchema";
    case Errc::BatchTooSmall: return "BatchTooSmall";
    case Errc::NoPositives: return "NoPositives";
    case Errc::NonFiniteLoss: return "NonFiniteLoss";
    case Errc::DegenerateHead: return "DegenerateHead";
    case Errc::DuplicateId: return "DuplicateId";
    case Errc::UnknownId: return "UnknownId";
    case Errc::ExcludedTarget: return "ExcludedTarget";
    case Errc::EmptyIndex: return "EmptyIndex";
    case Errc::MissingLabel: return "MissingLabel";
    case Errc::BadMagic: return "BadMagic";
    case Errc::TruncatedFile: return "TruncatedFile";
    case Errc::NonFinite: return "NonFinite";
    case Errc::MissingBlob: return "MissingBlob";
    case Errc::RefOutOfRange: return "RefOutOfRange";
    case Errc::NormViolation: return "NormViolation";
    case Errc::ConfigInvalid: return "ConfigInvalid";
    case Errc::BadFormat: return "BadFormat";
    case Errc::Io: return "Io";
  }
  return "Unknown";
}

Error::Error(Errc code, const std::string& message, std::vector<std::string> ids)
    : std::runtime_error(std::string(errc_name(code)) + ": " + message),
      code_(code),
      ids_(std::move(ids)) {}

}  // namespace faxis
