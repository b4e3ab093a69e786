#include <algorithm>
#include <numeric>

#include "doctest.h"
#include "faxis/error.hpp"
#include "faxis/index.hpp"
#include "test_util.hpp"

using namespace faxis;
using faxis::testing::random_embedding;
using faxis::testing::random_vector;
using faxis::testing::TempDir;

namespace {

Errc code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected faxis::Error");
  return Errc::Io;
}

SchemaPtr small_schema() { return make_schema({{"semantic", 4}, {"speaker_id", 3}}); }

std::vector<ItemRecord> random_items(Rng& rng, const SchemaPtr& s, std::size_t n) {
  std::vector<ItemRecord> items;
  for (std::size_t i = 0; i < n; ++i)
    items.push_back({"item" + std::to_string(1000 + i), i % 2 ? "b" : "a", {{"k", std::to_string(i % 3)}},
                     random_embedding(rng, s)});
  return items;
}

// Independent full sort: explicit per-axis dot products, score desc, id asc.
std::vector<std::string> brute_force(const std::vector<ItemRecord>& items, const PartitionedEmbedding& q,
                                     const std::map<std::string, double>& w) {
  std::vector<std::pair<double, std::string>> scored;
  for (const auto& it : items) {
    double s = 0.0;
    for (const auto& [axis, wi] : w) {
      if (wi == 0.0) continue;
      const auto a = q.slice(axis), b = it.embedding.slice(axis);
      double dot = 0.0;
      for (std::size_t j = 0; j < a.size(); ++j) dot += a[j] * b[j];
      s += wi * std::clamp(dot, -1.0, 1.0);
    }
    scored.emplace_back(s, it.id);
  }
  std::sort(scored.begin(), scored.end(), [](const auto& x, const auto& y) {
    return x.first != y.first ? x.first > y.first : x.second < y.second;
  });
  std::vector<std::string> ids;
  for (auto& [_, id] : scored) ids.push_back(id);
  return ids;
}

}  // namespace

TEST_CASE("build rejects bad item sets") {
  auto s = small_schema();
  Rng rng(1);
  CHECK(code_of([] { Index::build({}); }) == Errc::EmptyIndex);
  auto items = random_items(rng, s, 3);
  items[2].id = items[0].id;
  CHECK(code_of([&] { Index::build(items); }) == Errc::DuplicateId);
  items = random_items(rng, s, 2);
  items.push_back({"other", "a", {}, random_embedding(rng, make_schema({{"semantic", 4}}))});
  CHECK(code_of([&] { Index::build(items); }) == Errc::SchemaMismatch);
}

TEST_CASE("query examples") {
  auto s = make_schema({{"semantic", 2}, {"speaker_id", 2}});
  PartitionedEmbedding q(s, {1, 0, 1, 0});
  PartitionedEmbedding orth(s, {0, 1, 0, 1});
  auto index = Index::build({{"q", "a", {}, q}, {"o", "b", {}, orth}});

  auto out = index.query(q, {{"semantic", 1.0}}, 2);
  REQUIRE(out.results.size() == 2);
  CHECK(out.results[0].item_id == "q");
  CHECK(out.results[0].score == 1.0);
  CHECK(out.results[0].rank == 1);
  CHECK(out.results[1].item_id == "o");
  CHECK(out.results[1].score == 0.0);
  CHECK(out.results[0].per_axis.at("speaker_id") == 1.0);

  auto excl = index.query(q, {{"semantic", 1.0}}, 2, {}, {"q"});
  REQUIRE(excl.results.size() == 1);
  CHECK(excl.results[0].item_id == "o");

  auto none = index.query(q, {{"semantic", 1.0}}, 5, [](const ItemRecord& r) { return r.corpus == "z"; });
  CHECK(none.results.empty());
  CHECK(none.empty_after_filter);

  CHECK(code_of([&] { index.query(q, {{"semantic", 1.0}}, 0); }) == Errc::ConfigInvalid);
  CHECK(code_of([&] { index.query(q, {{"pitch", 1.0}}, 1); }) == Errc::UnknownAxis);
  PartitionedEmbedding alien(make_schema({{"semantic", 4}}), {1, 0, 0, 0});
  CHECK(code_of([&] { index.query(alien, {{"semantic", 1.0}}, 1); }) == Errc::SchemaMismatch);
}

TEST_CASE("planted index returns the same-sentence cross-speaker item") {
  // 10 sentences x 4 speakers; sentence and speaker prototypes are random.
  auto s = make_schema({{"semantic", 8}, {"speaker_id", 8}});
  Rng rng(2);
  std::vector<std::vector<double>> sent, spk;
  for (int i = 0; i < 10; ++i) sent.push_back(l2_normalize(random_vector(rng, 8)));
  for (int i = 0; i < 4; ++i) spk.push_back(l2_normalize(random_vector(rng, 8)));
  std::vector<ItemRecord> items;
  for (int p = 0; p < 4; ++p)
    for (int t = 0; t < 10; ++t)
      items.push_back({"s" + std::to_string(p) + "_t" + std::to_string(t), "c",
                       {{"sentence", std::to_string(t)}, {"speaker", std::to_string(p)}},
                       concat(s, {sent[t], spk[p]})});
  auto index = Index::build(items);
  const auto& q = items[3];  // speaker 0, sentence 3
  QueryWeights w{{"semantic", 1.0}, {"speaker_id", -1.0}};
  auto out = index.query(q.embedding, w, 5, {}, {q.id});
  REQUIRE_FALSE(out.results.empty());
  const auto* top = index.find(out.results[0].item_id);
  CHECK(top->labels.at("sentence") == "3");
  CHECK(top->labels.at("speaker") != "0");

  auto expected = brute_force(items, q.embedding, {{"semantic", 1.0}, {"speaker_id", -1.0}});
  expected.erase(std::find(expected.begin(), expected.end(), q.id));
  for (std::size_t i = 0; i < out.results.size(); ++i) CHECK(out.results[i].item_id == expected[i]);
}

TEST_CASE("ties break by ascending id") {
  auto s = make_schema({{"semantic", 2}});
  PartitionedEmbedding e(s, {1, 0});
  auto index = Index::build({{"c", "x", {}, e}, {"a", "x", {}, e}, {"b", "x", {}, e}});
  auto out = index.query(e, {{"semantic", 1.0}}, 3);
  CHECK(out.results[0].item_id == "a");
  CHECK(out.results[1].item_id == "b");
  CHECK(out.results[2].item_id == "c");
  CHECK(index.rank_of(e, {{"semantic", 1.0}}, "c") == 3);
  CHECK(code_of([&] { index.rank_of(e, {{"semantic", 1.0}}, "zz"); }) == Errc::UnknownId);
  CHECK(code_of([&] { index.rank_of(e, {{"semantic", 1.0}}, "a", {}, {"a"}); }) == Errc::ExcludedTarget);
}

TEST_CASE("query and rank_of agree with a brute-force oracle") {
  auto s = small_schema();
  Rng rng(3);
  for (int t = 0; t < 20; ++t) {
    auto items = random_items(rng, s, 50);
    auto index = Index::build(items);
    auto q = random_embedding(rng, s);
    std::map<std::string, double> wm = {{"semantic", 2 * uniform01(rng) - 1}, {"speaker_id", 2 * uniform01(rng) - 1}};
    const QueryWeights w(wm);
    auto expected = brute_force(items, q, wm);
    auto out = index.query(q, w, 50);
    for (std::size_t i = 0; i < expected.size(); ++i) {
      CHECK(out.results[i].item_id == expected[i]);
      CHECK(out.results[i].rank == i + 1);
    }
    const auto& target = expected[uniform_index(rng, expected.size())];
    CHECK(index.rank_of(q, w, target) ==
          static_cast<std::size_t>(std::find(expected.begin(), expected.end(), target) - expected.begin()) + 1);
  }
}

TEST_CASE("negating weights reverses a tie-free ranking") {
  auto s = small_schema();
  Rng rng(4);
  auto index = Index::build(random_items(rng, s, 30));
  auto q = random_embedding(rng, s);
  QueryWeights w{{"semantic", 0.8}, {"speaker_id", -0.5}};
  auto fwd = index.query(q, w, 30).results;
  auto rev = index.query(q, -w, 30).results;
  for (std::size_t i = 0; i < fwd.size(); ++i) CHECK(fwd[i].item_id == rev[fwd.size() - 1 - i].item_id);
}

TEST_CASE("filter keeps matching items in global order") {
  auto s = small_schema();
  Rng rng(5);
  auto index = Index::build(random_items(rng, s, 40));
  auto q = random_embedding(rng, s);
  QueryWeights w{{"semantic", 1.0}};
  auto all = index.query(q, w, 40).results;
  auto only_b = index.query(q, w, 40, [](const ItemRecord& r) { return r.corpus == "b"; }).results;
  std::vector<std::string> expected;
  for (auto& r : all)
    if (index.find(r.item_id)->corpus == "b") expected.push_back(r.item_id);
  REQUIRE(only_b.size() == expected.size());
  for (std::size_t i = 0; i < expected.size(); ++i) CHECK(only_b[i].item_id == expected[i]);
}

TEST_CASE("insertion order does not change results") {
  auto s = small_schema();
  Rng rng(6);
  auto items = random_items(rng, s, 25);
  auto shuffled = items;
  std::reverse(shuffled.begin(), shuffled.end());
  std::swap(shuffled[3], shuffled[17]);
  auto a = Index::build(items), b = Index::build(shuffled);
  auto q = random_embedding(rng, s);
  QueryWeights w{{"semantic", 1.0}, {"speaker_id", 0.5}};
  auto ra = a.query(q, w, 25).results, rb = b.query(q, w, 25).results;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    CHECK(ra[i].item_id == rb[i].item_id);
    CHECK(ra[i].score == rb[i].score);
  }
}

TEST_CASE("save and load preserve rankings") {
  TempDir dir("index");
  auto s = small_schema();
  Rng rng(7);
  auto index = Index::build(random_items(rng, s, 20));
  index.save(dir.path());
  CHECK(Index::load_schema(dir.path()) == *s);
  auto back = Index::load(dir.path());
  REQUIRE(back.size() == 20);
  CHECK(back.at(4).labels == index.at(4).labels);
  auto q = random_embedding(rng, s);
  QueryWeights w{{"semantic", 1.0}, {"speaker_id", -1.0}};
  auto a = index.query(q, w, 20).results, b = back.query(q, w, 20).results;
  std::size_t same = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    same += a[i].item_id == b[i].item_id;
    CHECK(a[i].score == doctest::Approx(b[i].score).epsilon(1e-6));
  }
  CHECK(same == a.size());
}
