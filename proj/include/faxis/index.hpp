#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "faxis/core.hpp"
#include "faxis/item.hpp"

namespace faxis {

struct RetrievalResult {
  std::string item_id;
  double score = 0.0;
  std::size_t rank = 0;  // 1-based
  std::map<std::string, double> per_axis;
};

using ItemFilter = std::function<bool(const ItemRecord&)>;
using IdSet = std::set<std::string>;

struct QueryOutcome {
  std::vector<RetrievalResult> results;
  // Set when no item survived exclusion and filtering.
  bool empty_after_filter = false;
};

// Immutable item store with exact, deterministic top-k retrieval. Ordering is
// by score descending, ties broken by ascending id.
class Index {
 public:
  // Throws DuplicateId, SchemaMismatch, or EmptyIndex.
  static Index build(std::vector<ItemRecord> items);

  const AxisSchema& schema() const noexcept { return *schema_; }
  const SchemaPtr& schema_ptr() const noexcept { return schema_; }
  std::size_t size() const noexcept { return items_.size(); }
  const std::vector<ItemRecord>& items() const noexcept { return items_; }
  const ItemRecord& at(std::size_t i) const { return items_.at(i); }
  const ItemRecord* find(std::string_view id) const;

  QueryOutcome query(const PartitionedEmbedding& q, const QueryWeights& w, std::size_t k,
                     const ItemFilter& filter = {}, const IdSet& exclude_ids = {}) const;

  // Position of `target_id` in the full ranking (same order as query).
  std::size_t rank_of(const PartitionedEmbedding& q, const QueryWeights& w, std::string_view target_id,
                      const ItemFilter& filter = {}, const IdSet& exclude_ids = {}) const;

  // Every eligible item's position, in the order query() would return them.
  std::vector<std::size_t> ranking(const PartitionedEmbedding& q, std::span<const double> resolved_weights,
                                   const ItemFilter& filter = {}, const IdSet& exclude_ids = {},
                                   std::vector<double>* scores = nullptr) const;

  // Writes manifest.jsonl + vectors.fpeb into `dir`.
  void save(const std::filesystem::path& dir) const;
  static Index load(const std::filesystem::path& dir);
  // Reads only the schema from a saved index's manifest header.
  static AxisSchema load_schema(const std::filesystem::path& dir);

 private:
  Index() = default;
  void check_query(const PartitionedEmbedding& q) const;

  SchemaPtr schema_;
  std::vector<ItemRecord> items_;
  std::unordered_map<std::string, std::size_t> by_id_;
};

}  // namespace faxis
