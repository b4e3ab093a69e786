#include "faxis/eval.hpp"

#include <algorithm>

#include "faxis/error.hpp"

namespace faxis {

namespace {

const std::string& label_or_throw(const Labels& labels, const std::string& field, std::string_view id) {
  auto it = labels.find(field);
  if (it == labels.end())
    throw Error(Errc::MissingLabel, "item '" + std::string(id) + "' has no '" + field + "' label", {std::string(id)});
  return it->second;
}

bool same_sentence(const EvalQuery& q, const ItemRecord& item, const std::string& field) {
  auto a = q.labels.find(field);
  auto b = item.labels.find(field);
  return a != q.labels.end() && b != item.labels.end() && a->second == b->second;
}

void require_queries(const QuerySet& qs) {
  if (qs.queries.empty()) throw Error(Errc::ConfigInvalid, "query set is empty");
}

IdSet self_exclusion(const EvalQuery& q, const Index& index, bool exclude_self) {
  if (exclude_self && index.find(q.id) != nullptr) return {q.id};
  return {};
}

// Hits for every requested k from one full ranking.
void score_hits(const EvalQuery& q, const Index& index, const std::vector<std::size_t>& order,
                const std::string& sentence_field, const std::vector<std::size_t>& ks,
                std::map<std::size_t, std::size_t>& hits) {
  auto is_hit = [&](const ItemRecord& it) { return it.corpus != q.corpus && same_sentence(q, it, sentence_field); };
  std::optional<std::size_t> first_cross_hit;  // 1-based position in the cross-corpus list
  std::size_t cross = 0;
  for (std::size_t pos : order) {
    const auto& it = index.at(pos);
    if (it.corpus == q.corpus) continue;
    ++cross;
    if (same_sentence(q, it, sentence_field)) {
      first_cross_hit = cross;
      break;
    }
  }
  for (std::size_t k : ks) {
    bool hit = false;
    if (k == 1) hit = !order.empty() && is_hit(index.at(order.front()));
    else hit = first_cross_hit && *first_cross_hit <= k;
    if (hit) ++hits[k];
  }
}

}  // namespace

std::string_view category_key(FlipCategory c) noexcept {
  switch (c) {
    case FlipCategory::SsSameSpk: return "ss_same_spk";
    case FlipCategory::SsDiffSpk: return "ss_diff_spk";
    case FlipCategory::DsSameSpk: return "ds_same_spk";
    case FlipCategory::DsDiffSpk: return "ds_diff_spk";
  }
  return "";
}

std::string_view category_column(FlipCategory c) noexcept {
  switch (c) {
    case FlipCategory::SsSameSpk: return "ss/same spk";
    case FlipCategory::SsDiffSpk: return "ss/diff spk";
    case FlipCategory::DsSameSpk: return "ds/same spk";
    case FlipCategory::DsDiffSpk: return "ds/diff spk";
  }
  return "";
}

QuerySet QuerySet::from_index(const Index& index, const ItemFilter& select) {
  QuerySet qs;
  for (const auto& it : index.items())
    if (!select || select(it)) qs.queries.push_back({it.id, it.corpus, it.labels, it.embedding});
  return qs;
}

FlipCategory categorize(const Labels& query, const Labels& item, const std::string& sentence_field,
                        const std::string& speaker_field, std::string_view item_id) {
  const bool ss = label_or_throw(query, sentence_field, "<query>") == label_or_throw(item, sentence_field, item_id);
  const bool spk = label_or_throw(query, speaker_field, "<query>") == label_or_throw(item, speaker_field, item_id);
  if (ss) return spk ? FlipCategory::SsSameSpk : FlipCategory::SsDiffSpk;
  return spk ? FlipCategory::DsSameSpk : FlipCategory::DsDiffSpk;
}

double precision_at_k(const QuerySet& qs, const Index& index, const QueryWeights& w, std::size_t k,
                      bool exclude_self) {
  if (k == 0) throw Error(Errc::ConfigInvalid, "k must be >= 1");
  if (index.size() == 0) throw Error(Errc::EmptyIndex, "index is empty");
  require_queries(qs);
  const auto resolved = w.resolve(index.schema());
  std::map<std::size_t, std::size_t> hits;
  for (const auto& q : qs.queries) {
    const auto order = index.ranking(q.embedding, resolved, {}, self_exclusion(q, index, exclude_self));
    score_hits(q, index, order, qs.sentence_field, {k}, hits);
  }
  return static_cast<double>(hits[k]) / static_cast<double>(qs.queries.size());
}

Ceiling metric_ceiling(const QuerySet& qs, const Index& index) {
  Ceiling c;
  c.n_queries = qs.queries.size();
  for (const auto& q : qs.queries) {
    const bool any = std::any_of(index.items().begin(), index.items().end(), [&](const ItemRecord& it) {
      return it.id != q.id && it.corpus != q.corpus && same_sentence(q, it, qs.sentence_field);
    });
    if (any) ++c.n_retrievable;
  }
  return c;
}

EvalReport preference_flip_report(const QuerySet& qs, const Index& index, const std::vector<QueryWeights>& settings,
                                  const FlipOptions& options) {
  require_queries(qs);
  if (settings.empty()) throw Error(Errc::ConfigInvalid, "at least one weight setting is required");
  for (std::size_t k : options.ks)
    if (k == 0) throw Error(Errc::ConfigInvalid, "k must be >= 1");

  // Categories depend only on labels; compute them once and fail fast.
  std::vector<std::vector<FlipCategory>> cats(qs.queries.size());
  for (std::size_t qi = 0; qi < qs.queries.size(); ++qi) {
    cats[qi].reserve(index.size());
    for (const auto& it : index.items())
      cats[qi].push_back(categorize(qs.queries[qi].labels, it.labels, qs.sentence_field, qs.speaker_field, it.id));
  }

  EvalReport report;
  const Ceiling ceiling = metric_ceiling(qs, index);
  report.ceiling = ceiling.value();
  report.n_queries = ceiling.n_queries;
  report.n_retrievable = ceiling.n_retrievable;
  report.self_excluded = options.exclude_self;

  for (const auto& w : settings) {
    const auto resolved = w.resolve(index.schema());
    SettingReport sr;
    sr.weights = w;
    std::array<double, 4> rank_sum{};
    std::map<std::size_t, std::size_t> hits;
    for (std::size_t qi = 0; qi < qs.queries.size(); ++qi) {
      const auto& q = qs.queries[qi];
      const auto order = index.ranking(q.embedding, resolved, {}, self_exclusion(q, index, options.exclude_self));
      for (std::size_t r = 0; r < order.size(); ++r) {
        const auto c = static_cast<std::size_t>(cats[qi][order[r]]);
        rank_sum[c] += static_cast<double>(r + 1);
        ++sr.counts[c];
      }
      score_hits(q, index, order, qs.sentence_field, options.ks, hits);
    }
    for (std::size_t c = 0; c < 4; ++c)
      if (sr.counts[c] > 0) sr.mean_rank[c] = rank_sum[c] / static_cast<double>(sr.counts[c]);
    for (std::size_t k : options.ks)
      sr.p_at[k] = static_cast<double>(hits[k]) / static_cast<double>(qs.queries.size());
    report.settings.push_back(std::move(sr));
  }
  return report;
}

double rank_shift(const EvalReport& report, std::size_t from, std::size_t to, FlipCategory c) {
  const auto a = report.settings.at(from).mean_rank_of(c);
  const auto b = report.settings.at(to).mean_rank_of(c);
  if (!a || !b) throw Error(Errc::ConfigInvalid, "category '" + std::string(category_key(c)) + "' is empty");
  return *b - *a;
}

}  // namespace faxis
