#pragma once

#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace faxis {

enum class Errc {
  ZeroVector,
  SchemaMismatch,
  UnknownAxis,
  DimMismatch,
  InvalidSchema,
  BatchTooSmall,
  NoPositives,
  NonFiniteLoss,
  DegenerateHead,
  DuplicateId,
  UnknownId,
  ExcludedTarget,
  EmptyIndex,
  MissingLabel,
  BadMagic,
  TruncatedFile,
  NonFinite,
  MissingBlob,
  RefOutOfRange,
  NormViolation,
  ConfigInvalid,
  BadFormat,
  Io,
};

std::string_view errc_name(Errc code) noexcept;

// Every failure raised by the library carries a machine-readable code and,
// where relevant, the ids of the offending items.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message, std::vector<std::string> ids = {});

  Errc code() const noexcept { return code_; }
  const std::vector<std::string>& ids() const noexcept { return ids_; }

 private:
  Errc code_;
  std::vector<std::string> ids_;
};

}  // namespace faxis
