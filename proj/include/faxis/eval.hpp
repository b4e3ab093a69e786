#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "faxis/core.hpp"
#include "faxis/index.hpp"
#include "faxis/item.hpp"

namespace faxis {

enum class FlipCategory { SsSameSpk, SsDiffSpk, DsSameSpk, DsDiffSpk };

inline constexpr std::array<FlipCategory, 4> kFlipCategories = {
    FlipCategory::SsSameSpk, FlipCategory::SsDiffSpk, FlipCategory::DsSameSpk, FlipCategory::DsDiffSpk};

std::string_view category_key(FlipCategory c) noexcept;     // "ss_same_spk"
std::string_view category_column(FlipCategory c) noexcept;  // "ss/same spk"

struct EvalQuery {
  std::string id;
  std::string corpus;
  Labels labels;
  PartitionedEmbedding embedding;
};

struct QuerySet {
  std::vector<EvalQuery> queries;
  std::string sentence_field = kSentenceField;
  std::string speaker_field = kSpeakerField;

  // Queries drawn from the index's own items (e.g. every item of one corpus).
  static QuerySet from_index(const Index& index, const ItemFilter& select);
};

// Exactly one category per (query, item) pair. Throws Error(MissingLabel).
FlipCategory categorize(const Labels& query, const Labels& item, const std::string& sentence_field,
                        const std::string& speaker_field, std::string_view item_id = {});

// P@1: the top item overall is cross-corpus and reads the query's sentence.
// P@k, k > 1: after keeping only cross-corpus items, one of the first k reads
// the query's sentence. The query's own record is excluded when exclude_self.
double precision_at_k(const QuerySet& qs, const Index& index, const QueryWeights& w, std::size_t k,
                      bool exclude_self = true);

struct Ceiling {
  std::size_t n_queries = 0;
  std::size_t n_retrievable = 0;
  double value() const noexcept {
    return n_queries == 0 ? 0.0 : static_cast<double>(n_retrievable) / static_cast<double>(n_queries);
  }
};

// Fraction of queries with at least one cross-corpus same-sentence item.
Ceiling metric_ceiling(const QuerySet& qs, const Index& index);

struct SettingReport {
  QueryWeights weights;
  std::array<std::optional<double>, 4> mean_rank{};  // indexed by FlipCategory
  std::array<std::size_t, 4> counts{};
  std::map<std::size_t, double> p_at;

  std::optional<double> mean_rank_of(FlipCategory c) const { return mean_rank[static_cast<std::size_t>(c)]; }
  bool operator==(const SettingReport&) const = default;
};

struct EvalReport {
  std::vector<SettingReport> settings;
  double ceiling = 0.0;
  std::size_t n_queries = 0;
  std::size_t n_retrievable = 0;
  // Mean ranks average over every (query, item) pair in a category.
  std::string mean_rank_aggregation = "item";
  bool self_excluded = false;
  std::optional<std::uint64_t> seed;
  std::string config_hash;

  bool operator==(const EvalReport&) const = default;
};

struct FlipOptions {
  bool exclude_self = false;
  std::vector<std::size_t> ks = {1, 10};
};

EvalReport preference_flip_report(const QuerySet& qs, const Index& index,
                                  const std::vector<QueryWeights>& settings, const FlipOptions& options = {});

// Mean-rank movement of one category between two settings of a report.
double rank_shift(const EvalReport& report, std::size_t from, std::size_t to, FlipCategory c);

// Percent with one decimal: 0.655 -> "65.5".
std::string format_percent(double fraction);
std::string render_ceiling(const Ceiling& c);  // "9.9%"

std::string render_text(const EvalReport& report);
std::string report_to_json(const EvalReport& report);
EvalReport report_from_json(std::string_view text);

}  // namespace faxis
