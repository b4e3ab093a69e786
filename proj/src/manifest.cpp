#include <map>
#include <set>
#include <sstream>

#include "binary_io.hpp"
#include "faxis/io.hpp"
#include "json.hpp"

namespace faxis {

using nlohmann::json;

namespace {

constexpr std::string_view kFormat = "faxis-manifest";
constexpr int kManifestVersion = 1;

json schema_json(const AxisSchema& schema) {
  json axes = json::array();
  for (const auto& a : schema.axes()) axes.push_back({{"name", a.name}, {"dim", a.dim}});
  return {{"axes", axes}};
}

AxisSchema parse_schema(const json& j) {
  std::vector<Axis> axes;
  for (const auto& a : j.at("axes")) axes.push_back({a.at("name").get<std::string>(), a.at("dim").get<std::size_t>()});
  return AxisSchema(std::move(axes));
}

}  // namespace

std::string schema_to_json(const AxisSchema& schema) { return schema_json(schema).dump(); }

AxisSchema schema_from_json(std::string_view text) {
  try {
    return parse_schema(json::parse(text));
  } catch (const json::exception& e) {
    throw Error(Errc::BadFormat, std::string("invalid schema JSON: ") + e.what());
  }
}

std::string encode_manifest(const Manifest& m) {
  if (m.kind == ManifestKind::Embeddings && !m.schema)
    throw Error(Errc::BadFormat, "embedding manifest needs a schema block");
  json header = {{"format", kFormat},
                 {"version", kManifestVersion},
                 {"kind", m.kind == ManifestKind::Features ? "features" : "embeddings"}};
  if (m.schema) header["schema"] = schema_json(*m.schema);
  std::string out = header.dump() + "\n";
  for (const auto& e : m.entries) {
    json j = {{"id", e.id}, {"corpus", e.corpus}, {"labels", e.labels},
              {"blob", e.blob}, {"row", e.row},   {"offset", e.offset}};
    out += j.dump();
    out += '\n';
  }
  return out;
}

Manifest decode_manifest(std::string_view text, const std::string& source) {
  Manifest m;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  bool have_header = false;
  std::set<std::string> ids;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw Error(Errc::BadFormat, source + ":" + std::to_string(lineno) + ": " + e.what());
    }
    try {
      if (!have_header) {
        if (j.value("format", "") != kFormat)
          throw Error(Errc::BadFormat, source + ": missing faxis-manifest header line");
        const auto kind = j.at("kind").get<std::string>();
        if (kind == "features") m.kind = ManifestKind::Features;
        else if (kind == "embeddings") m.kind = ManifestKind::Embeddings;
        else throw Error(Errc::BadFormat, source + ": unknown manifest kind '" + kind + "'");
        if (j.contains("schema")) m.schema = parse_schema(j.at("schema"));
        if (m.kind == ManifestKind::Embeddings && !m.schema)
          throw Error(Errc::BadFormat, source + ": embedding manifest has no schema block");
        have_header = true;
        continue;
      }
      ManifestEntry e;
      e.id = j.at("id").get<std::string>();
      e.corpus = j.value("corpus", "");
      if (j.contains("labels")) e.labels = j.at("labels").get<Labels>();
      e.blob = j.at("blob").get<std::string>();
      e.row = j.at("row").get<std::uint64_t>();
      e.offset = j.value("offset", std::uint64_t{0});
      if (!ids.insert(e.id).second)
        throw Error(Errc::DuplicateId, source + ": duplicate id '" + e.id + "'", {e.id});
      m.entries.push_back(std::move(e));
    } catch (const json::exception& e) {
      throw Error(Errc::BadFormat, source + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (!have_header) throw Error(Errc::BadFormat, source + ": empty manifest");
  return m;
}

void write_manifest(const std::filesystem::path& path, const Manifest& m) {
  detail::write_file(path, encode_manifest(m));
}

Manifest read_manifest(const std::filesystem::path& path) {
  return decode_manifest(detail::read_file(path, Errc::Io), path.string());
}

Dataset load_dataset(const std::filesystem::path& manifest_path) {
  Dataset ds;
  ds.manifest = read_manifest(manifest_path);
  const auto base = manifest_path.parent_path();

  std::map<std::string, BlobMatrix> blobs;
  auto blob_for = [&](const ManifestEntry& e) -> const BlobMatrix& {
    auto it = blobs.find(e.blob);
    if (it != blobs.end()) return it->second;
    const auto path = base / e.blob;
    if (!std::filesystem::exists(path))
      throw Error(Errc::MissingBlob, "entry '" + e.id + "' references missing blob '" + path.string() + "'", {e.id});
    return blobs.emplace(e.blob, read_blob(path)).first->second;
  };

  const auto& entries = ds.manifest.entries;
  if (ds.manifest.kind == ManifestKind::Features) {
    std::optional<Eigen::Index> dim;
    for (std::size_t i = 0; i < entries.size(); ++i) {
      const auto& e = entries[i];
      const auto& blob = blob_for(e);
      if (e.row >= static_cast<std::uint64_t>(blob.rows()))
        throw Error(Errc::RefOutOfRange, "entry '" + e.id + "' references row " + std::to_string(e.row) + " of a " +
                                             std::to_string(blob.rows()) + "-row blob",
                    {e.id});
      if (!dim) {
        dim = blob.cols();
        ds.features.resize(static_cast<Eigen::Index>(entries.size()), *dim);
      } else if (*dim != blob.cols()) {
        throw Error(Errc::DimMismatch, "entry '" + e.id + "' has feature dim " + std::to_string(blob.cols()) +
                                           ", expected " + std::to_string(*dim),
                    {e.id});
      }
      ds.features.row(static_cast<Eigen::Index>(i)) =
          blob.row(static_cast<Eigen::Index>(e.row)).cast<double>();
    }
    return ds;
  }

  ds.schema = std::make_shared<const AxisSchema>(*ds.manifest.schema);
  std::vector<std::string> violations;
  std::string first_message;
  ds.records.reserve(entries.size());
  for (const auto& e : entries) {
    const auto& blob = blob_for(e);
    if (e.row >= static_cast<std::uint64_t>(blob.rows()))
      throw Error(Errc::RefOutOfRange, "entry '" + e.id + "' references row " + std::to_string(e.row) + " of a " +
                                           std::to_string(blob.rows()) + "-row blob",
                  {e.id});
    if (static_cast<std::size_t>(blob.cols()) != ds.schema->total_dim())
      throw Error(Errc::DimMismatch, "blob '" + e.blob + "' has dim " + std::to_string(blob.cols()) +
                                         " but the schema needs " + std::to_string(ds.schema->total_dim()),
                  {e.id});
    const auto row = blob.row(static_cast<Eigen::Index>(e.row));
    std::vector<double> data(row.data(), row.data() + row.size());
    try {
      ds.records.push_back({e.id, e.corpus, e.labels, PartitionedEmbedding::validated(ds.schema, std::move(data), e.id)});
    } catch (const Error& err) {
      if (err.code() != Errc::NormViolation) throw;
      if (first_message.empty()) first_message = err.what();
      violations.push_back(e.id);
    }
  }
  if (!violations.empty())
    throw Error(Errc::NormViolation,
                std::to_string(violations.size()) + " embedding(s) violate the unit-norm check; first: " + first_message,
                std::move(violations));
  return ds;
}

TrainingSet to_training_set(const Dataset& ds) {
  if (ds.manifest.kind != ManifestKind::Features)
    throw Error(Errc::BadFormat, "training needs a feature manifest");
  TrainingSet set;
  set.features = ds.features;
  std::set<std::string> fields;
  for (const auto& e : ds.manifest.entries) {
    set.ids.push_back(e.id);
    for (const auto& [k, _] : e.labels) fields.insert(k);
  }
  for (const auto& f : fields) {
    auto& col = set.labels[f];
    col.reserve(ds.manifest.entries.size());
    for (const auto& e : ds.manifest.entries) {
      auto it = e.labels.find(f);
      col.push_back(it == e.labels.end() ? std::string() : it->second);
    }
  }
  return set;
}

}  // namespace faxis
