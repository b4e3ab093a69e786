#include "faxis/service.hpp"

#include <chrono>
#include <cstdlib>
#include <iostream>

#include "faxis/error.hpp"
#include "faxis/eval.hpp"
#include "httplib.h"
#include "json.hpp"

namespace faxis::service {

using nlohmann::json;

namespace {

// Request-shape problems that are not library errors.
struct BadRequest {
  int status;
  std::string message;
};

Response error_response(int status, std::string_view code, const std::string& message) {
  return {status, json{{"error", code}, {"message", message}}.dump()};
}

int status_for(Errc c) {
  switch (c) {
    case Errc::UnknownId: return 404;
    case Errc::NormViolation:
    case Errc::ZeroVector:
    case Errc::DimMismatch: return 422;
    case Errc::EmptyIndex: return 503;
    default: return 400;
  }
}

template <typename Fn>
Response guarded(Fn&& fn) {
  try {
    return fn();
  } catch (const BadRequest& e) {
    return error_response(e.status, "BadRequest", e.message);
  } catch (const Error& e) {
    return error_response(status_for(e.code()), errc_name(e.code()), e.what());
  } catch (const json::exception& e) {
    return error_response(400, "BadRequest", std::string("malformed JSON: ") + e.what());
  }
}

json parse_body(std::string_view body) {
  json j = json::parse(body.empty() ? std::string_view("{}") : body);
  if (!j.is_object()) throw BadRequest{400, "request body must be a JSON object"};
  return j;
}

QueryWeights parse_weights(const json& j, const AxisSchema& schema) {
  if (!j.is_object()) throw BadRequest{400, "weights must be an object of axis -> number"};
  QueryWeights w;
  for (const auto& [axis, v] : j.items()) {
    if (!v.is_number()) throw BadRequest{400, "weight for axis '" + axis + "' is not a number"};
    w.set(axis, v.get<double>());
  }
  w.validate(schema);
  return w;
}

ItemFilter parse_filter(const json& j) {
  if (j.is_null()) return {};
  if (!j.is_object()) throw BadRequest{400, "filter must be an object"};
  std::optional<std::string> corpus;
  if (j.contains("corpus")) corpus = j.at("corpus").get<std::string>();
  const auto equals = j.value("equals", json::object()).get<std::map<std::string, std::string>>();
  const auto not_equals = j.value("not_equals", json::object()).get<std::map<std::string, std::string>>();
  return [=](const ItemRecord& item) {
    if (corpus && item.corpus != *corpus) return false;
    for (const auto& [field, value] : equals) {
      auto it = item.labels.find(field);
      if (it == item.labels.end() || it->second != value) return false;
    }
    for (const auto& [field, value] : not_equals) {
      auto it = item.labels.find(field);
      if (it != item.labels.end() && it->second == value) return false;
    }
    return true;
  };
}

PartitionedEmbedding parse_embedding(const json& j, const Index& index) {
  if (!j.is_object()) throw BadRequest{400, "query_embedding must be an object of axis -> vector"};
  const auto& schema = index.schema();
  for (const auto& [axis, _] : j.items()) schema.index_of(axis);
  std::vector<double> data;
  data.reserve(schema.total_dim());
  for (const auto& ax : schema.axes()) {
    if (!j.contains(ax.name)) throw BadRequest{400, "query_embedding lacks axis '" + ax.name + "'"};
    const auto v = j.at(ax.name).get<std::vector<double>>();
    if (v.size() != ax.dim)
      throw Error(Errc::DimMismatch, "query_embedding axis '" + ax.name + "' has dim " + std::to_string(v.size()) +
                                         ", expected " + std::to_string(ax.dim));
    data.insert(data.end(), v.begin(), v.end());
  }
  return PartitionedEmbedding::validated(index.schema_ptr(), std::move(data), "<query_embedding>");
}

std::shared_ptr<const Index> require(const std::shared_ptr<const Index>& index) {
  if (!index) throw Error(Errc::EmptyIndex, "no index loaded");
  return index;
}

}  // namespace

int port_from_env() {
  const char* v = std::getenv("FAXIS_PORT");
  if (v == nullptr || *v == '\0') return kDefaultPort;
  char* end = nullptr;
  const long p = std::strtol(v, &end, 10);
  if (*end != '\0' || p < 0 || p > 65535) return kDefaultPort;
  return static_cast<int>(p);
}

std::string result_json(const RetrievalResult& r, const ItemRecord& item) {
  return json{{"item_id", r.item_id}, {"corpus", item.corpus}, {"labels", item.labels},
              {"score", r.score},     {"rank", r.rank},        {"per_axis", r.per_axis}}
      .dump();
}

void QueryService::swap_index(std::shared_ptr<const Index> index) {
  std::lock_guard lock(mu_);
  index_ = std::move(index);
}

std::shared_ptr<const Index> QueryService::snapshot() const {
  std::lock_guard lock(mu_);
  return index_;
}

Response QueryService::axes() const {
  return guarded([&] {
    const auto index = require(snapshot());
    json axes = json::array();
    for (const auto& ax : index->schema().axes()) axes.push_back({{"name", ax.name}, {"dim", ax.dim}});
    std::set<std::string> fields, corpora;
    for (const auto& it : index->items()) {
      corpora.insert(it.corpus);
      for (const auto& [f, _] : it.labels) fields.insert(f);
    }
    return Response{200, json{{"axes", axes},
                              {"item_count", index->size()},
                              {"label_fields", fields},
                              {"corpora", corpora}}
                             .dump()};
  });
}

Response QueryService::query(std::string_view body) const {
  return guarded([&] {
    const auto start = std::chrono::steady_clock::now();
    const auto index = require(snapshot());
    const json req = parse_body(body);

    const bool by_id = req.contains("query_id"), by_vec = req.contains("query_embedding");
    if (by_id == by_vec) throw BadRequest{400, "exactly one of query_id or query_embedding is required"};
    const QueryWeights w = parse_weights(req.value("weights", json::object()), index->schema());
    const auto k = req.value("k", std::int64_t{10});
    if (k < 1 || k > static_cast<std::int64_t>(kMaxK))
      throw BadRequest{400, "k must be in [1, " + std::to_string(kMaxK) + "]"};
    const bool exclude_self = req.value("exclude_self", true);
    const ItemFilter filter = parse_filter(req.value("filter", json()));

    std::optional<PartitionedEmbedding> q;
    IdSet exclude;
    if (by_id) {
      const auto id = req.at("query_id").get<std::string>();
      const ItemRecord* item = index->find(id);
      if (item == nullptr) throw Error(Errc::UnknownId, "unknown query_id '" + id + "'", {id});
      q = item->embedding;
      if (exclude_self) exclude.insert(id);
    } else {
      q = parse_embedding(req.at("query_embedding"), *index);
    }

    const auto outcome = index->query(*q, w, static_cast<std::size_t>(k), filter, exclude);
    json results = json::array();
    for (const auto& r : outcome.results) results.push_back(json::parse(result_json(r, *index->find(r.item_id))));
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    return Response{200, json{{"results", results},
                              {"weights", w.entries()},
                              {"empty_after_filter", outcome.empty_after_filter},
                              {"timing_ms", ms}}
                             .dump()};
  });
}

Response QueryService::flip_report(std::string_view body) const {
  return guarded([&] {
    const auto index = require(snapshot());
    const json req = parse_body(body);

    QuerySet qs;
    if (req.contains("sentence_field")) qs.sentence_field = req.at("sentence_field").get<std::string>();
    if (req.contains("speaker_field")) qs.speaker_field = req.at("speaker_field").get<std::string>();
    if (req.contains("query_ids")) {
      for (const auto& id : req.at("query_ids").get<std::vector<std::string>>()) {
        const ItemRecord* item = index->find(id);
        if (item == nullptr) throw Error(Errc::UnknownId, "unknown query id '" + id + "'", {id});
        qs.queries.push_back({item->id, item->corpus, item->labels, item->embedding});
      }
    } else if (req.contains("query_corpus")) {
      const auto corpus = req.at("query_corpus").get<std::string>();
      qs = QuerySet::from_index(*index, [&](const ItemRecord& r) { return r.corpus == corpus; });
      qs.sentence_field = req.value("sentence_field", qs.sentence_field);
      qs.speaker_field = req.value("speaker_field", qs.speaker_field);
    } else {
      throw BadRequest{400, "one of query_ids or query_corpus is required"};
    }

    const json& js = req.value("settings", json::array());
    if (!js.is_array() || js.empty()) throw BadRequest{400, "settings must be a non-empty array of weight objects"};
    std::vector<QueryWeights> settings;
    for (const auto& s : js) settings.push_back(parse_weights(s, index->schema()));

    FlipOptions opts;
    opts.exclude_self = req.value("exclude_self", opts.exclude_self);
    if (req.contains("ks")) opts.ks = req.at("ks").get<std::vector<std::size_t>>();
    return Response{200, report_to_json(preference_flip_report(qs, *index, settings, opts))};
  });
}

struct HttpServer::Impl {
  Impl(QueryService& s, ServeOptions o) : service(s), options(std::move(o)) {}
  QueryService& service;
  ServeOptions options;
  httplib::Server server;
};

HttpServer::HttpServer(QueryService& service, ServeOptions options)
    : impl_(std::make_unique<Impl>(service, std::move(options))) {
  auto& srv = impl_->server;
  auto reply = [](httplib::Response& res, const Response& r) {
    res.status = r.status;
    res.set_content(r.body, "application/json");
  };
  QueryService& svc = impl_->service;
  srv.Get("/axes", [&svc, reply](const httplib::Request&, httplib::Response& res) { reply(res, svc.axes()); });
  srv.Post("/query",
           [&svc, reply](const httplib::Request& req, httplib::Response& res) { reply(res, svc.query(req.body)); });
  srv.Post("/flip-report", [&svc, reply](const httplib::Request& req, httplib::Response& res) {
    reply(res, svc.flip_report(req.body));
  });
  if (impl_->options.static_dir && !srv.set_mount_point("/", impl_->options.static_dir->string()))
    throw Error(Errc::Io, "static directory '" + impl_->options.static_dir->string() + "' does not exist");
}

HttpServer::~HttpServer() = default;

int HttpServer::bind() {
  auto& o = impl_->options;
  if (o.port == 0) {
    const int port = impl_->server.bind_to_any_port(o.host);
    if (port < 0) throw Error(Errc::Io, "cannot bind " + o.host);
    o.port = port;
    return port;
  }
  if (!impl_->server.bind_to_port(o.host, o.port))
    throw Error(Errc::Io, "cannot bind " + o.host + ":" + std::to_string(o.port));
  return o.port;
}

void HttpServer::run() { impl_->server.listen_after_bind(); }

void HttpServer::stop() { impl_->server.stop(); }

void serve(QueryService& service, const ServeOptions& options) {
  HttpServer server(service, options);
  const int port = server.bind();
  std::cerr << "serving on http://" << options.host << ":" << port << "\n";
  server.run();
}

}  // namespace faxis::service
