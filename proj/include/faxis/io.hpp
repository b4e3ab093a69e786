#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "faxis/core.hpp"
#include "faxis/item.hpp"
#include "faxis/train.hpp"

namespace faxis {

// ---- vector blob ----------------------------------------------------------
//
// "FPEB" u16 version u32 rows u32 dim, then rows*dim little-endian f32,
// row-major. File length is exactly 14 + 4*rows*dim.

using BlobMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr std::uint16_t kBlobFormatVersion = 1;
inline constexpr std::size_t kBlobHeaderBytes = 14;

std::string encode_blob(const BlobMatrix& m);
BlobMatrix decode_blob(std::string_view bytes, const std::string& source = "<memory>");
void write_blob(const std::filesystem::path& path, const BlobMatrix& m);
BlobMatrix read_blob(const std::filesystem::path& path);

BlobMatrix to_blob(const Eigen::MatrixXd& m);
Eigen::MatrixXd from_blob(const BlobMatrix& m);

constexpr std::uint64_t blob_row_offset(std::uint64_t dim, std::uint64_t row) {
  return kBlobHeaderBytes + 4 * dim * row;
}

// ---- manifest --------------------------------------------------------------
//
// JSON lines. The first line is a header
//   {"format":"faxis-manifest","version":1,"kind":"features"|"embeddings","schema":{...}}
// and every following line is one entry
//   {"id":..,"corpus":..,"labels":{..},"blob":"rel/path.fpeb","row":n,"offset":bytes}
// Blob paths are relative to the manifest's directory.

enum class ManifestKind { Features, Embeddings };

struct ManifestEntry {
  std::string id;
  std::string corpus;
  Labels labels;
  std::string blob;
  std::uint64_t row = 0;
  std::uint64_t offset = 0;

  bool operator==(const ManifestEntry&) const = default;
};

struct Manifest {
  ManifestKind kind = ManifestKind::Features;
  std::optional<AxisSchema> schema;  // required for embedding manifests
  std::vector<ManifestEntry> entries;
};

std::string encode_manifest(const Manifest& m);
Manifest decode_manifest(std::string_view text, const std::string& source = "<memory>");
void write_manifest(const std::filesystem::path& path, const Manifest& m);
Manifest read_manifest(const std::filesystem::path& path);

std::string schema_to_json(const AxisSchema& schema);
AxisSchema schema_from_json(std::string_view text);

// ---- dataset ---------------------------------------------------------------

struct Dataset {
  Manifest manifest;
  SchemaPtr schema;                 // embedding manifests only
  Eigen::MatrixXd features;         // feature manifests: one row per entry
  std::vector<ItemRecord> records;  // embedding manifests: one per entry
};

// Materializes every entry. Embedding rows must be unit-norm per axis within
// 1e-5; violations are reported together in one NormViolation error.
Dataset load_dataset(const std::filesystem::path& manifest_path);

// Feature rows plus labels, ready for train_axis. Missing labels become "".
TrainingSet to_training_set(const Dataset& ds);

}  // namespace faxis
