#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "faxis/train.hpp"

namespace faxis {

inline constexpr std::uint16_t kHeadFormatVersion = 1;

struct HeadCheckpoint {
  ProjectionHead head;
  std::optional<AlignmentMatrix> alignment;
};

// "FPHD" layout, little-endian:
//   magic[4] u16 version  u16 name_len  name[name_len]  u32 D_enc  u32 D_axis
//   f32 W[D_axis * D_enc] (row-major)  u8 has_bias  [f32 bias[D_axis]]
//   [u32 D_teacher  f32 A[D_axis * D_teacher] (row-major)]
// The alignment block is present iff bytes remain after the bias.
std::string encode_head(const HeadCheckpoint& ckpt);
HeadCheckpoint decode_head(std::string_view bytes, const std::string& source = "<memory>");

void save_head(const std::filesystem::path& path, const HeadCheckpoint& ckpt);
HeadCheckpoint load_head(const std::filesystem::path& path);

}  // namespace faxis
