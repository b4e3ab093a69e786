#include "faxis/core.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "faxis/error.hpp"

namespace faxis {

namespace {

std::string join_names(const std::vector<std::string>& names) {
  std::string out;
  for (const auto& n : names) {
    if (!out.empty()) out += ", ";
    out += n;
  }
  return out;
}

double dot(std::span<const double> a, std::span<const double> b) noexcept {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

void require_same_schema(const PartitionedEmbedding& a, const PartitionedEmbedding& b) {
  if (!same_schema(a, b)) throw Error(Errc::SchemaMismatch, "embeddings use different axis schemas");
}

}  // namespace

AxisSchema::AxisSchema(std::vector<Axis> axes) : axes_(std::move(axes)) {
  if (axes_.empty()) throw Error(Errc::InvalidSchema, "schema has no axes");
  std::set<std::string> seen;
  offsets_.reserve(axes_.size());
  for (const auto& a : axes_) {
    if (a.name.empty()) throw Error(Errc::InvalidSchema, "axis name is empty");
    if (a.dim == 0) throw Error(Errc::InvalidSchema, "axis '" + a.name + "' has dim 0");
    if (!seen.insert(a.name).second) throw Error(Errc::InvalidSchema, "duplicate axis '" + a.name + "'");
    offsets_.push_back(total_dim_);
    total_dim_ += a.dim;
  }
}

AxisSchema AxisSchema::default_schema(std::size_t speaker_dim) {
  return AxisSchema({{"semantic", 384}, {"speaker_id", speaker_dim}, {"dialect", 12}});
}

std::size_t AxisSchema::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < axes_.size(); ++i)
    if (axes_[i].name == name) return i;
  throw Error(Errc::UnknownAxis,
              "unknown axis '" + std::string(name) + "'; valid axes: " + join_names(names()),
              {std::string(name)});
}

bool AxisSchema::contains(std::string_view name) const noexcept {
  return std::any_of(axes_.begin(), axes_.end(), [&](const Axis& a) { return a.name == name; });
}

std::vector<std::string> AxisSchema::names() const {
  std::vector<std::string> out;
  out.reserve(axes_.size());
  for (const auto& a : axes_) out.push_back(a.name);
  return out;
}

SchemaPtr make_schema(std::vector<Axis> axes) {
  return std::make_shared<const AxisSchema>(std::move(axes));
}

double l2_norm(std::span<const double> v) noexcept { return std::sqrt(dot(v, v)); }

std::vector<double> l2_normalize(std::span<const double> v) {
  if (v.empty()) throw Error(Errc::DimMismatch, "cannot normalize an empty vector");
  const double n = l2_norm(v);
  if (!(n >= kZeroNormThreshold)) throw Error(Errc::ZeroVector, "vector norm below 1e-12");
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] / n;
  return out;
}

PartitionedEmbedding::PartitionedEmbedding(SchemaPtr schema, std::vector<double> data, bool renormalized)
    : schema_(std::move(schema)), data_(std::move(data)), renormalized_(renormalized) {}

PartitionedEmbedding::PartitionedEmbedding(SchemaPtr schema, std::vector<double> data)
    : schema_(std::move(schema)), data_(std::move(data)) {
  if (!schema_) throw Error(Errc::SchemaMismatch, "null schema");
  if (data_.size() != schema_->total_dim())
    throw Error(Errc::DimMismatch, "embedding length " + std::to_string(data_.size()) +
                                       " != schema total_dim " + std::to_string(schema_->total_dim()));
  for (std::size_t i = 0; i < schema_->size(); ++i) {
    std::span<double> s(data_.data() + schema_->offset(i), schema_->axis(i).dim);
    const double sq = dot(s, s);
    // Unit up to rounding: leave the bits alone so concat/split round-trips.
    if (std::abs(sq - 1.0) <= 1e-12) continue;
    const double n = std::sqrt(sq);
    if (!(n >= kZeroNormThreshold))
      throw Error(Errc::ZeroVector, "axis '" + schema_->axis(i).name + "' slice has zero norm");
    if (std::abs(n - 1.0) > kIngestNormTolerance) renormalized_ = true;
    for (auto& x : s) x /= n;
  }
}

PartitionedEmbedding PartitionedEmbedding::validated(SchemaPtr schema, std::vector<double> data,
                                                     const std::string& id, double tolerance) {
  if (!schema) throw Error(Errc::SchemaMismatch, "null schema");
  if (data.size() != schema->total_dim())
    throw Error(Errc::DimMismatch, "embedding '" + id + "' has length " + std::to_string(data.size()) +
                                       ", expected " + std::to_string(schema->total_dim()),
                {id});
  for (std::size_t i = 0; i < schema->size(); ++i) {
    std::span<const double> s(data.data() + schema->offset(i), schema->axis(i).dim);
    const double n = l2_norm(s);
    if (!std::isfinite(n) || std::abs(n - 1.0) > tolerance) {
      std::ostringstream msg;
      msg << "embedding '" << id << "' axis '" << schema->axis(i).name << "' has norm " << n;
      throw Error(Errc::NormViolation, msg.str(), {id});
    }
  }
  // Within tolerance; normalize exactly through the regular path.
  PartitionedEmbedding e(std::move(schema), std::move(data));
  e.renormalized_ = false;
  return e;
}

std::span<const double> PartitionedEmbedding::slice(std::size_t axis_index) const {
  return std::span<const double>(data_).subspan(schema_->offset(axis_index), schema_->axis(axis_index).dim);
}

std::span<const double> PartitionedEmbedding::slice(std::string_view axis) const {
  return slice(schema_->index_of(axis));
}

bool same_schema(const PartitionedEmbedding& a, const PartitionedEmbedding& b) noexcept {
  return a.schema_ptr() == b.schema_ptr() || a.schema() == b.schema();
}

QueryWeights::QueryWeights(std::initializer_list<std::pair<const std::string, double>> init)
    : weights_(init) {}

QueryWeights::QueryWeights(std::map<std::string, double> weights) : weights_(std::move(weights)) {}

double QueryWeights::get(std::string_view axis) const noexcept {
  auto it = weights_.find(std::string(axis));
  return it == weights_.end() ? 0.0 : it->second;
}

void QueryWeights::validate(const AxisSchema& schema) const {
  for (const auto& [name, _] : weights_) schema.index_of(name);
}

std::vector<double> QueryWeights::resolve(const AxisSchema& schema) const {
  validate(schema);
  std::vector<double> out(schema.size(), 0.0);
  for (std::size_t i = 0; i < schema.size(); ++i) out[i] = get(schema.axis(i).name);
  return out;
}

QueryWeights QueryWeights::operator-() const { return scaled(-1.0); }

QueryWeights QueryWeights::scaled(double factor) const {
  QueryWeights out = *this;
  for (auto& [_, w] : out.weights_) w *= factor;
  return out;
}

std::string QueryWeights::to_string() const {
  std::ostringstream os;
  bool first = true;
  for (const auto& [name, w] : weights_) {
    if (!first) os << ',';
    first = false;
    os << name << '=' << w;
  }
  return os.str();
}

double axis_cosine(const PartitionedEmbedding& a, const PartitionedEmbedding& b, std::size_t axis_index) {
  require_same_schema(a, b);
  if (axis_index >= a.schema().size()) throw Error(Errc::UnknownAxis, "axis index out of range");
  return std::clamp(dot(a.slice(axis_index), b.slice(axis_index)), -1.0, 1.0);
}

double axis_cosine(const PartitionedEmbedding& a, const PartitionedEmbedding& b, std::string_view axis) {
  require_same_schema(a, b);
  return axis_cosine(a, b, a.schema().index_of(axis));
}

double weighted_similarity(const PartitionedEmbedding& a, const PartitionedEmbedding& b,
                           std::span<const double> resolved_weights) {
  require_same_schema(a, b);
  const auto& schema = a.schema();
  if (resolved_weights.size() != schema.size())
    throw Error(Errc::DimMismatch, "resolved weight count does not match schema");
  double score = 0.0;
  for (std::size_t i = 0; i < schema.size(); ++i) {
    const double w = resolved_weights[i];
    if (w == 0.0) continue;
    score += w * std::clamp(dot(a.slice(i), b.slice(i)), -1.0, 1.0);
  }
  return score;
}

double weighted_similarity(const PartitionedEmbedding& a, const PartitionedEmbedding& b,
                           const QueryWeights& w) {
  require_same_schema(a, b);
  return weighted_similarity(a, b, w.resolve(a.schema()));
}

std::vector<double> split(const PartitionedEmbedding& e, std::string_view axis) {
  auto s = e.slice(axis);
  return {s.begin(), s.end()};
}

PartitionedEmbedding concat(SchemaPtr schema, const std::vector<std::vector<double>>& slices) {
  if (!schema) throw Error(Errc::SchemaMismatch, "null schema");
  if (slices.size() != schema->size())
    throw Error(Errc::DimMismatch, "expected " + std::to_string(schema->size()) + " slices, got " +
                                       std::to_string(slices.size()));
  std::vector<double> data;
  data.reserve(schema->total_dim());
  for (std::size_t i = 0; i < slices.size(); ++i) {
    if (slices[i].size() != schema->axis(i).dim)
      throw Error(Errc::DimMismatch, "axis '" + schema->axis(i).name + "' expects dim " +
                                         std::to_string(schema->axis(i).dim) + ", got " +
                                         std::to_string(slices[i].size()));
    data.insert(data.end(), slices[i].begin(), slices[i].end());
  }
  return PartitionedEmbedding(std::move(schema), std::move(data));
}

}  // namespace faxis
