#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "faxis/error.hpp"
#include "faxis/eval.hpp"
#include "json.hpp"

namespace faxis {

using nlohmann::json;

namespace {

constexpr std::string_view kEmptyCell = "—";

std::string pad(std::string_view s, std::size_t width) {
  // Width counts code points so the em dash lines up.
  std::size_t cps = 0;
  for (unsigned char c : s)
    if ((c & 0xC0) != 0x80) ++cps;
  std::string out(s);
  if (cps < width) out.insert(0, width - cps, ' ');
  return out;
}

std::string format_rank(const std::optional<double>& r) {
  if (!r) return std::string(kEmptyCell);
  return std::to_string(std::llround(*r));
}

}  // namespace

std::string format_percent(double fraction) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", fraction * 100.0);
  return buf;
}

std::string render_ceiling(const Ceiling& c) { return format_percent(c.value()) + "%"; }

std::string render_text(const EvalReport& report) {
  std::vector<std::size_t> ks;
  for (const auto& s : report.settings)
    for (const auto& [k, _] : s.p_at)
      if (std::find(ks.begin(), ks.end(), k) == ks.end()) ks.push_back(k);
  std::sort(ks.begin(), ks.end());

  std::vector<std::string> header = {"weights"};
  for (auto c : kFlipCategories) header.emplace_back(category_column(c));
  for (auto k : ks) header.push_back("P@" + std::to_string(k));

  std::vector<std::vector<std::string>> rows;
  for (const auto& s : report.settings) {
    std::vector<std::string> row = {s.weights.to_string()};
    for (auto c : kFlipCategories) row.push_back(format_rank(s.mean_rank_of(c)));
    for (auto k : ks) {
      auto it = s.p_at.find(k);
      row.push_back(it == s.p_at.end() ? std::string(kEmptyCell) : format_percent(it->second));
    }
    rows.push_back(std::move(row));
  }

  std::vector<std::size_t> width(header.size(), 0);
  auto measure = [&](const std::vector<std::string>& r) {
    for (std::size_t i = 0; i < r.size(); ++i) {
      std::size_t cps = 0;
      for (unsigned char ch : r[i])
        if ((ch & 0xC0) != 0x80) ++cps;
      width[i] = std::max(width[i], cps);
    }
  };
  measure(header);
  for (const auto& r : rows) measure(r);

  std::ostringstream os;
  auto emit = [&](const std::vector<std::string>& r) {
    for (std::size_t i = 0; i < r.size(); ++i) {
      if (i > 0) os << "  ";
      os << pad(r[i], width[i]);
    }
    os << '\n';
  };
  emit(header);
  for (const auto& r : rows) emit(r);
  Ceiling c{report.n_queries, report.n_retrievable};
  os << "ceiling " << render_ceiling(c) << " (" << report.n_retrievable << "/" << report.n_queries
     << " queries retrievable)\n";
  return os.str();
}

std::string report_to_json(const EvalReport& report) {
  json settings = json::array();
  for (const auto& s : report.settings) {
    json ranks = json::object();
    json counts = json::object();
    for (auto c : kFlipCategories) {
      const auto i = static_cast<std::size_t>(c);
      const std::string key(category_key(c));
      ranks[key] = s.mean_rank[i] ? json(*s.mean_rank[i]) : json(nullptr);
      counts[key] = s.counts[i];
    }
    json p_at = json::object();
    for (const auto& [k, v] : s.p_at) p_at[std::to_string(k)] = v;
    settings.push_back({{"weights", s.weights.entries()},
                        {"per_category_mean_rank", ranks},
                        {"category_counts", counts},
                        {"p_at", p_at}});
  }
  json j = {{"settings", settings},
            {"ceiling", report.ceiling},
            {"n_queries", report.n_queries},
            {"n_retrievable", report.n_retrievable},
            {"metadata",
             {{"mean_rank_aggregation", report.mean_rank_aggregation},
              {"self_excluded", report.self_excluded},
              {"seed", report.seed ? json(*report.seed) : json(nullptr)},
              {"config_hash", report.config_hash}}}};
  return j.dump(2);
}

EvalReport report_from_json(std::string_view text) {
  try {
    const json j = json::parse(text);
    EvalReport r;
    for (const auto& s : j.at("settings")) {
      SettingReport sr;
      sr.weights = QueryWeights(s.at("weights").get<std::map<std::string, double>>());
      for (auto c : kFlipCategories) {
        const auto i = static_cast<std::size_t>(c);
        const std::string key(category_key(c));
        const auto& v = s.at("per_category_mean_rank").at(key);
        if (!v.is_null()) sr.mean_rank[i] = v.get<double>();
        if (s.contains("category_counts")) sr.counts[i] = s.at("category_counts").at(key).get<std::size_t>();
      }
      for (const auto& [k, v] : s.at("p_at").items()) sr.p_at[std::stoul(k)] = v.get<double>();
      r.settings.push_back(std::move(sr));
    }
    r.ceiling = j.at("ceiling").get<double>();
    r.n_queries = j.at("n_queries").get<std::size_t>();
    r.n_retrievable = j.at("n_retrievable").get<std::size_t>();
    if (j.contains("metadata")) {
      const auto& m = j.at("metadata");
      r.mean_rank_aggregation = m.value("mean_rank_aggregation", "item");
      r.self_excluded = m.value("self_excluded", false);
      if (m.contains("seed") && !m.at("seed").is_null()) r.seed = m.at("seed").get<std::uint64_t>();
      r.config_hash = m.value("config_hash", "");
    }
    return r;
  } catch (const json::exception& e) {
    throw Error(Errc::BadFormat, std::string("invalid report JSON: ") + e.what());
  }
}

}  // namespace faxis
