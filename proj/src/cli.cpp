#include "faxis/cli.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>

#include "CLI11.hpp"
#include "faxis/checkpoint.hpp"
#include "faxis/embed.hpp"
#include "faxis/error.hpp"
#include "faxis/eval.hpp"
#include "faxis/index.hpp"
#include "faxis/io.hpp"
#include "faxis/service.hpp"
#include "faxis/synth.hpp"
#include "json.hpp"

namespace faxis::cli {

using nlohmann::json;

namespace {

std::string read_text(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error(Errc::Io, "cannot read '" + p.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::filesystem::path& p, const std::string& text) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw Error(Errc::Io, "cannot write '" + p.string() + "'");
  out << text;
}

// Unknown axes are usage errors and are caught before any data is loaded.
QueryWeights checked_weights(const std::string& spec, const AxisSchema& schema) {
  auto w = parse_weight_spec(spec);
  for (const auto& [axis, _] : w.entries())
    if (!schema.contains(axis)) {
      std::string valid;
      for (const auto& n : schema.names()) valid += (valid.empty() ? "" : ", ") + n;
      throw UsageError("unknown axis '" + axis + "' in --weights; valid axes: " + valid);
    }
  return w;
}

// Each row paired with the next row sharing its `field` value, cyclically.
std::vector<std::optional<std::size_t>> pairs_from_field(const std::vector<std::string>& values) {
  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < values.size(); ++i)
    if (!values[i].empty()) groups[values[i]].push_back(i);
  std::vector<std::optional<std::size_t>> out(values.size());
  for (const auto& [_, rows] : groups) {
    if (rows.size() < 2) continue;
    for (std::size_t j = 0; j < rows.size(); ++j) out[rows[j]] = rows[(j + 1) % rows.size()];
  }
  return out;
}

struct SynthArgs {
  std::string out;
  SynthConfig config;
  std::string mixing = "orthogonal";
};

struct TrainArgs {
  std::string manifest, teacher, out, log, objective = "distill", pair_field;
  TrainConfig config;
};

struct EmbedArgs {
  std::string manifest, out;
  std::vector<std::string> heads;
};

struct BuildArgs {
  std::string manifest, out;
};

struct QueryArgs {
  std::string index, query_id, weights, corpus;
  std::size_t k = 10;
  bool exclude_self = false;
};

struct EvalArgs {
  std::string index, query_corpus, out, text;
  std::vector<std::string> weights;
  std::vector<std::size_t> ks = {1, 10};
  bool exclude_self = false;
  std::string sentence_field = kSentenceField, speaker_field = kSpeakerField;
  std::uint64_t seed = 0;
};

struct ServeArgs {
  std::string index, host = "127.0.0.1", static_dir;
  int port = service::kDefaultPort;
};

void do_synth(SynthArgs& a, std::ostream&, std::ostream& err) {
  a.config.mixing = parse_mixing(a.mixing);
  const auto data = generate_synthetic(a.config);
  write_synthetic(data, a.out);
  err << "wrote " << data.size() << " items to " << a.out << "\n";
}

void do_train(TrainArgs& a, std::ostream&, std::ostream& err) {
  auto& c = a.config;
  c.objective = parse_objective(a.objective);
  const auto ds = load_dataset(a.manifest);
  auto set = to_training_set(ds);
  if (c.objective == Objective::Distill) {
    if (a.teacher.empty()) throw UsageError("--teacher is required for the distill objective");
    const auto t = from_blob(read_blob(a.teacher));
    if (t.rows() != set.features.rows())
      throw Error(Errc::DimMismatch, "teacher blob '" + a.teacher + "' has " + std::to_string(t.rows()) +
                                         " rows, manifest has " + std::to_string(set.features.rows()));
    set.teachers = t;
    if (c.dim == 0) c.dim = static_cast<std::size_t>(t.cols());
  }
  if (c.objective == Objective::InfoncePairs) {
    if (a.pair_field.empty()) throw UsageError("--pair-field is required for the infonce_pairs objective");
    auto it = set.labels.find(a.pair_field);
    if (it == set.labels.end()) throw Error(Errc::MissingLabel, "manifest has no '" + a.pair_field + "' labels");
    set.positives = pairs_from_field(it->second);
    if (c.label_field.empty()) c.label_field = a.pair_field;
  }
  if (c.dim == 0) throw UsageError("--dim is required unless a teacher fixes it");
  try {
    c.validate();
  } catch (const Error& e) {
    throw UsageError(e.what());
  }

  const auto result = train_axis(c, set);
  save_head(a.out, {result.head, result.alignment});
  if (!a.log.empty()) write_text(a.log, log_to_jsonl(result.log));
  err << "trained " << c.axis << " (" << objective_name(c.objective) << ", " << c.steps << " steps)";
  if (!result.log.empty()) err << " final loss " << result.log.back().loss;
  err << " -> " << a.out << "\n";
}

void do_embed(EmbedArgs& a, std::ostream&, std::ostream& err) {
  std::vector<ProjectionHead> heads;
  for (const auto& p : a.heads) heads.push_back(load_head(p).head);
  const auto ds = load_dataset(a.manifest);
  if (ds.manifest.kind != ManifestKind::Features) throw Error(Errc::BadFormat, "'" + a.manifest + "' is not a feature manifest");
  auto records = embed_rows(heads, ds.manifest.entries, ds.features);
  Index::build(std::move(records)).save(a.out);
  err << "embedded " << ds.manifest.entries.size() << " items into " << a.out << "\n";
}

void do_build(BuildArgs& a, std::ostream&, std::ostream& err) {
  auto ds = load_dataset(a.manifest);
  if (ds.manifest.kind != ManifestKind::Embeddings)
    throw Error(Errc::BadFormat, "'" + a.manifest + "' is not an embedding manifest");
  const auto index = Index::build(std::move(ds.records));
  index.save(a.out);
  err << "indexed " << index.size() << " items into " << a.out << "\n";
}

void do_query(QueryArgs& a, std::ostream& out, std::ostream&) {
  const auto schema = Index::load_schema(a.index);
  const auto w = checked_weights(a.weights, schema);
  if (a.k == 0) throw UsageError("--k must be >= 1");
  const auto index = Index::load(a.index);
  const ItemRecord* q = index.find(a.query_id);
  if (q == nullptr) throw Error(Errc::UnknownId, "unknown query id '" + a.query_id + "'", {a.query_id});
  ItemFilter filter;
  if (!a.corpus.empty()) filter = [c = a.corpus](const ItemRecord& r) { return r.corpus == c; };
  IdSet exclude;
  if (a.exclude_self) exclude.insert(a.query_id);
  for (const auto& r : index.query(q->embedding, w, a.k, filter, exclude).results)
    out << service::result_json(r, *index.find(r.item_id)) << "\n";
}

void do_eval(EvalArgs& a, std::ostream& out, std::ostream& err) {
  const auto schema = Index::load_schema(a.index);
  std::vector<QueryWeights> settings;
  for (const auto& spec : a.weights) settings.push_back(checked_weights(spec, schema));
  for (auto k : a.ks)
    if (k == 0) throw UsageError("--k values must be >= 1");

  const auto index = Index::load(a.index);
  auto qs = QuerySet::from_index(index, [&](const ItemRecord& r) { return r.corpus == a.query_corpus; });
  if (qs.queries.empty()) throw Error(Errc::ConfigInvalid, "no items in query corpus '" + a.query_corpus + "'");
  qs.sentence_field = a.sentence_field;
  qs.speaker_field = a.speaker_field;
  FlipOptions opts;
  opts.exclude_self = a.exclude_self;
  opts.ks = a.ks;
  auto report = preference_flip_report(qs, index, settings, opts);

  json cfg = {{"index_manifest", fnv1a_hex(read_text(std::filesystem::path(a.index) / "manifest.jsonl"))},
              {"query_corpus", a.query_corpus},
              {"ks", a.ks},
              {"exclude_self", a.exclude_self},
              {"sentence_field", a.sentence_field},
              {"speaker_field", a.speaker_field}};
  for (const auto& w : settings) cfg["weights"].push_back(w.to_string());
  report.seed = a.seed;
  report.config_hash = fnv1a_hex(cfg.dump());

  const auto text = report_to_json(report) + "\n";
  if (a.out.empty()) out << text;
  else write_text(a.out, text);
  if (!a.text.empty()) write_text(a.text, render_text(report));
  err << render_text(report);
}

void do_serve(ServeArgs& a, std::ostream&, std::ostream&) {
  service::QueryService svc(std::make_shared<const Index>(Index::load(a.index)));
  service::ServeOptions opts;
  opts.host = a.host;
  opts.port = a.port;
  if (!a.static_dir.empty()) opts.static_dir = a.static_dir;
  service::serve(svc, opts);
}

void add_config(CLI::App* sub) {
  sub->add_option("--config", "JSON object of option values keyed by long option name; command-line flags win");
}

bool given(const std::vector<std::string>& args, const std::string& flag) {
  return std::any_of(args.begin(), args.end(),
                     [&](const std::string& a) { return a == flag || a.rfind(flag + "=", 0) == 0; });
}

// Expands `--config file.json` into ordinary flags for options not already
// on the command line. Keys may use '-' or '_'; a nested object under the
// subcommand name is also accepted.
std::vector<std::string> expand_config(const std::vector<std::string>& args) {
  std::string path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
    else if (args[i].rfind("--config=", 0) == 0) path = args[i].substr(9);
  }
  if (path.empty() || args.empty()) return args;

  json j;
  try {
    j = json::parse(read_text(path));
  } catch (const json::exception& e) {
    throw UsageError("invalid JSON config '" + path + "': " + e.what());
  }
  if (!j.is_object()) throw UsageError("JSON config '" + path + "' must be an object");
  if (j.contains(args.front()) && j.at(args.front()).is_object()) j = j.at(args.front());

  std::vector<std::string> out = args;
  for (const auto& [key, v] : j.items()) {
    std::string flag = "--" + key;
    std::replace(flag.begin(), flag.end(), '_', '-');
    if (flag == "--config" || given(args, flag)) continue;
    auto scalar = [](const json& x) { return x.is_string() ? x.get<std::string>() : x.dump(); };
    if (v.is_boolean()) {
      if (v.get<bool>()) out.push_back(flag);
    } else if (v.is_array()) {
      for (const auto& e : v) out.insert(out.end(), {flag, scalar(e)});
    } else if (!v.is_object() && !v.is_null()) {
      out.insert(out.end(), {flag, scalar(v)});
    }
  }
  return out;
}

}  // namespace

QueryWeights parse_weight_spec(std::string_view spec) {
  QueryWeights w;
  std::set<std::string> seen;
  std::size_t pos = 0;
  while (pos <= spec.size()) {
    const auto end = std::min(spec.find(',', pos), spec.size());
    const auto part = spec.substr(pos, end - pos);
    pos = end + 1;
    if (part.empty()) {
      if (spec.empty()) break;
      throw UsageError("empty entry in weights '" + std::string(spec) + "'");
    }
    const auto eq = part.find('=');
    if (eq == std::string_view::npos || eq == 0)
      throw UsageError("weight '" + std::string(part) + "' is not of the form axis=value");
    const std::string axis(part.substr(0, eq));
    const std::string value(part.substr(eq + 1));
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
    if (ec != std::errc() || ptr != value.data() + value.size() || !std::isfinite(v))
      throw UsageError("weight value '" + value + "' for axis '" + axis + "' is not a number");
    if (!seen.insert(axis).second) throw UsageError("axis '" + axis + "' appears twice in weights");
    w.set(axis, v);
  }
  return w;
}

std::string fnv1a_hex(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Factor-axis speech embeddings: train, index, query, evaluate", "faxis"};
  app.require_subcommand(1);

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "Generate a planted-factor synthetic feature set");
  add_config(synth);
  synth->add_option("--out", sa.out, "Output directory")->required();
  synth->add_option("--speakers", sa.config.n_speakers, "Number of speakers")->capture_default_str();
  synth->add_option("--sentences", sa.config.n_sentences, "Sentences per speaker")->capture_default_str();
  synth->add_option("--dialects", sa.config.n_dialects, "Number of dialect groups")->capture_default_str();
  synth->add_option("--enc-dim", sa.config.enc_dim, "Pooled feature dimension")->capture_default_str();
  synth->add_option("--noise", sa.config.noise_sigma, "Latent noise sigma")->capture_default_str();
  synth->add_option("--mixing", sa.mixing, "orthogonal or random_full_rank")->capture_default_str();
  synth->add_option("--speaker-scale", sa.config.speaker_scale, "Speaker latent scale")->capture_default_str();
  synth->add_option("--query-speakers", sa.config.query_speakers, "Speakers placed in corpus_a")->capture_default_str();
  synth->add_option("--semantic-dim", sa.config.semantic_dim, "Semantic latent dim")->capture_default_str();
  synth->add_option("--speaker-dim", sa.config.speaker_dim, "Speaker latent dim")->capture_default_str();
  synth->add_option("--dialect-dim", sa.config.dialect_dim, "Dialect latent dim")->capture_default_str();
  synth->add_option("--seed", sa.config.seed, "Random seed")->capture_default_str();

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Train one projection head");
  add_config(train);
  train->add_option("--manifest", ta.manifest, "Feature manifest")->required();
  train->add_option("--axis", ta.config.axis, "Axis name")->required();
  train->add_option("--objective", ta.objective, "distill, infonce_pairs or supcon_labels")->capture_default_str();
  train->add_option("--dim", ta.config.dim, "Head output dim (defaults to the teacher dim)");
  train->add_option("--teacher", ta.teacher, "Teacher embedding blob, row-aligned with the manifest");
  train->add_option("--label-field", ta.config.label_field, "Label field supervising this axis");
  train->add_option("--pair-field", ta.pair_field, "Label field whose shared values define positive pairs");
  train->add_option("--temperature", ta.config.temperature, "Contrastive temperature")->capture_default_str();
  train->add_option("--lr", ta.config.learning_rate, "Learning rate")->capture_default_str();
  train->add_option("--momentum", ta.config.momentum, "SGD momentum")->capture_default_str();
  train->add_option("--batch-size", ta.config.batch_size, "Batch size")->capture_default_str();
  train->add_option("--steps", ta.config.steps, "Optimizer steps")->capture_default_str();
  train->add_option("--ortho-lambda", ta.config.orthogonality_lambda, "Orthogonality penalty weight")->capture_default_str();
  train->add_flag("--bias", ta.config.bias, "Learn a bias term");
  train->add_option("--seed", ta.config.seed, "Random seed")->capture_default_str();
  train->add_option("--out", ta.out, "Output head checkpoint")->required();
  train->add_option("--log", ta.log, "Per-step training log (JSON lines)");

  EmbedArgs ea;
  auto* embed = app.add_subcommand("embed", "Apply heads to features and write an embedding manifest");
  add_config(embed);
  embed->add_option("--manifest", ea.manifest, "Feature manifest")->required();
  embed->add_option("--head", ea.heads, "Head checkpoint, repeat in axis order")->required();
  embed->add_option("--out", ea.out, "Output directory")->required();

  BuildArgs ba;
  auto* build = app.add_subcommand("build-index", "Validate an embedding manifest and write an index");
  add_config(build);
  build->add_option("--manifest", ba.manifest, "Embedding manifest")->required();
  build->add_option("--out", ba.out, "Index directory")->required();

  QueryArgs qa;
  auto* query = app.add_subcommand("query", "Weighted retrieval; prints JSON lines");
  add_config(query);
  query->add_option("--index", qa.index, "Index directory")->required();
  query->add_option("--query-id", qa.query_id, "Id of the query item")->required();
  query->add_option("--weights", qa.weights, "Axis weights, e.g. semantic=1,speaker_id=-1");
  query->add_option("--k", qa.k, "Number of results")->capture_default_str();
  query->add_option("--corpus", qa.corpus, "Only return items from this corpus");
  query->add_flag("--exclude-self", qa.exclude_self, "Drop the query item from the results");

  EvalArgs va;
  auto* eval = app.add_subcommand("eval", "Preference-flip report over a query corpus");
  add_config(eval);
  eval->add_option("--index", va.index, "Index directory")->required();
  eval->add_option("--query-corpus", va.query_corpus, "Corpus whose items are the queries")->required();
  eval->add_option("--weights", va.weights, "Weight setting; repeat for several")->required();
  eval->add_option("--k", va.ks, "Precision cutoffs")->capture_default_str();
  eval->add_flag("--exclude-self", va.exclude_self, "Drop each query's own item from its ranking");
  eval->add_option("--sentence-field", va.sentence_field, "Label field holding the sentence")->capture_default_str();
  eval->add_option("--speaker-field", va.speaker_field, "Label field holding the speaker")->capture_default_str();
  eval->add_option("--out", va.out, "Report JSON path (stdout when absent)");
  eval->add_option("--text", va.text, "Also write the rendered table here");
  eval->add_option("--seed", va.seed, "Seed recorded in the report")->capture_default_str();

  ServeArgs sv;
  sv.port = service::port_from_env();
  auto* serve = app.add_subcommand("serve", "HTTP query service over an index");
  add_config(serve);
  serve->add_option("--index", sv.index, "Index directory")->required();
  serve->add_option("--host", sv.host, "Bind address")->capture_default_str();
  serve->add_option("--port", sv.port, "Port (FAXIS_PORT or 7878 by default)")->capture_default_str();
  serve->add_option("--static-dir", sv.static_dir, "Directory served at /");

  try {
    std::vector<std::string> expanded;
    try {
      expanded = expand_config(args);
    } catch (const std::exception& e) {
      err << "error: " << e.what() << "\n";
      return kExitUsage;
    }
    std::vector<std::string> reversed(expanded.rbegin(), expanded.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*synth) do_synth(sa, out, err);
    else if (*train) do_train(ta, out, err);
    else if (*embed) do_embed(ea, out, err);
    else if (*build) do_build(ba, out, err);
    else if (*query) do_query(qa, out, err);
    else if (*eval) do_eval(va, out, err);
    else if (*serve) do_serve(sv, out, err);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitOk;
}

int run(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace faxis::cli
