#include "faxis/index.hpp"

#include <algorithm>
#include <numeric>

#include "faxis/error.hpp"
#include "faxis/io.hpp"

namespace faxis {

Index Index::build(std::vector<ItemRecord> items) {
  if (items.empty()) throw Error(Errc::EmptyIndex, "cannot build an index with no items");
  Index index;
  index.schema_ = items.front().embedding.schema_ptr();
  index.by_id_.reserve(items.size());
  for (std::size_t i = 0; i < items.size(); ++i) {
    const auto& it = items[i];
    if (!(it.embedding.schema() == *index.schema_))
      throw Error(Errc::SchemaMismatch, "item '" + it.id + "' uses a different axis schema", {it.id});
    if (!index.by_id_.emplace(it.id, i).second)
      throw Error(Errc::DuplicateId, "duplicate item id '" + it.id + "'", {it.id});
  }
  index.items_ = std::move(items);
  return index;
}

const ItemRecord* Index::find(std::string_view id) const {
  auto it = by_id_.find(std::string(id));
  return it == by_id_.end() ? nullptr : &items_[it->second];
}

void Index::check_query(const PartitionedEmbedding& q) const {
  if (!(q.schema() == *schema_)) throw Error(Errc::SchemaMismatch, "query schema does not match the index");
}

std::vector<std::size_t> Index::ranking(const PartitionedEmbedding& q, std::span<const double> resolved_weights,
                                        const ItemFilter& filter, const IdSet& exclude_ids,
                                        std::vector<double>* scores) const {
  check_query(q);
  std::vector<double> local;
  std::vector<double>& s = scores ? *scores : local;
  s.assign(items_.size(), 0.0);
  std::vector<std::size_t> order;
  order.reserve(items_.size());
  for (std::size_t i = 0; i < items_.size(); ++i) {
    const auto& item = items_[i];
    if (!exclude_ids.empty() && exclude_ids.count(item.id)) continue;
    if (filter && !filter(item)) continue;
    s[i] = weighted_similarity(q, item.embedding, resolved_weights);
    order.push_back(i);
  }
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (s[a] != s[b]) return s[a] > s[b];
    return items_[a].id < items_[b].id;
  });
  return order;
}

QueryOutcome Index::query(const PartitionedEmbedding& q, const QueryWeights& w, std::size_t k,
                          const ItemFilter& filter, const IdSet& exclude_ids) const {
  if (k == 0) throw Error(Errc::ConfigInvalid, "k must be positive");
  check_query(q);
  const auto resolved = w.resolve(*schema_);

  std::vector<double> scores(items_.size(), 0.0);
  std::vector<std::size_t> eligible;
  eligible.reserve(items_.size());
  for (std::size_t i = 0; i < items_.size(); ++i) {
    const auto& item = items_[i];
    if (!exclude_ids.empty() && exclude_ids.count(item.id)) continue;
    if (filter && !filter(item)) continue;
    scores[i] = weighted_similarity(q, item.embedding, resolved);
    eligible.push_back(i);
  }
  auto before = [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return items_[a].id < items_[b].id;
  };
  const std::size_t take = std::min(k, eligible.size());
  std::partial_sort(eligible.begin(), eligible.begin() + static_cast<std::ptrdiff_t>(take), eligible.end(), before);

  QueryOutcome out;
  out.empty_after_filter = eligible.empty();
  out.results.reserve(take);
  for (std::size_t r = 0; r < take; ++r) {
    const auto& item = items_[eligible[r]];
    RetrievalResult res;
    res.item_id = item.id;
    res.score = scores[eligible[r]];
    res.rank = r + 1;
    for (std::size_t a = 0; a < schema_->size(); ++a)
      res.per_axis[schema_->axis(a).name] = axis_cosine(q, item.embedding, a);
    out.results.push_back(std::move(res));
  }
  return out;
}

std::size_t Index::rank_of(const PartitionedEmbedding& q, const QueryWeights& w, std::string_view target_id,
                           const ItemFilter& filter, const IdSet& exclude_ids) const {
  check_query(q);
  const ItemRecord* target = find(target_id);
  if (target == nullptr) throw Error(Errc::UnknownId, "no item '" + std::string(target_id) + "' in the index", {std::string(target_id)});
  if (exclude_ids.count(target->id) || (filter && !filter(*target)))
    throw Error(Errc::ExcludedTarget, "item '" + target->id + "' is excluded from the ranking", {target->id});
  const auto resolved = w.resolve(*schema_);
  const double ts = weighted_similarity(q, target->embedding, resolved);
  std::size_t rank = 1;
  for (const auto& item : items_) {
    if (&item == target) continue;
    if (!exclude_ids.empty() && exclude_ids.count(item.id)) continue;
    if (filter && !filter(item)) continue;
    const double s = weighted_similarity(q, item.embedding, resolved);
    if (s > ts || (s == ts && item.id < target->id)) ++rank;
  }
  return rank;
}

void Index::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  const auto dim = schema_->total_dim();
  BlobMatrix blob(static_cast<Eigen::Index>(items_.size()), static_cast<Eigen::Index>(dim));
  Manifest m;
  m.kind = ManifestKind::Embeddings;
  m.schema = *schema_;
  for (std::size_t i = 0; i < items_.size(); ++i) {
    const auto data = items_[i].embedding.data();
    for (std::size_t j = 0; j < dim; ++j) blob(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = static_cast<float>(data[j]);
    m.entries.push_back({items_[i].id, items_[i].corpus, items_[i].labels, "vectors.fpeb", i, blob_row_offset(dim, i)});
  }
  write_blob(dir / "vectors.fpeb", blob);
  write_manifest(dir / "manifest.jsonl", m);
}

Index Index::load(const std::filesystem::path& dir) {
  auto ds = load_dataset(dir / "manifest.jsonl");
  if (ds.manifest.kind != ManifestKind::Embeddings)
    throw Error(Errc::BadFormat, "'" + dir.string() + "' does not hold an embedding index");
  return build(std::move(ds.records));
}

AxisSchema Index::load_schema(const std::filesystem::path& dir) {
  auto m = read_manifest(dir / "manifest.jsonl");
  if (!m.schema) throw Error(Errc::BadFormat, "'" + dir.string() + "' manifest has no schema");
  return *m.schema;
}

}  // namespace faxis
