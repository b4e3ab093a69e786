#pragma once

#include <map>
#include <string>

#include "faxis/core.hpp"

namespace faxis {

// Opaque attribute labels (speaker, sentence, dialect, ...). Equality is exact
// string match.
using Labels = std::map<std::string, std::string>;

struct ItemRecord {
  std::string id;
  std::string corpus;
  Labels labels;
  PartitionedEmbedding embedding;
};

// Standard label field names used by the synthetic generator and the
// evaluation protocol.
inline constexpr const char* kSentenceField = "sentence";
inline constexpr const char* kSpeakerField = "speaker";
inline constexpr const char* kDialectField = "dialect";

}  // namespace faxis
