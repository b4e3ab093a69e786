#pragma once

#include <cstddef>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace faxis {

inline constexpr double kIngestNormTolerance = 1e-5;
inline constexpr double kUnitNormTolerance = 1e-7;
inline constexpr double kZeroNormThreshold = 1e-12;

struct Axis {
  std::string name;
  std::size_t dim = 0;

  bool operator==(const Axis&) const = default;
};

// Ordered list of named axes. Slice offsets follow from the order and the
// per-axis dims and never change after construction.
class AxisSchema {
 public:
  explicit AxisSchema(std::vector<Axis> axes);

  // semantic / speaker_id / dialect with the teacher-matched dims. The speaker
  // dim is 256 for a Resemblyzer teacher and 512 for the WavLM x-vector one.
  static AxisSchema default_schema(std::size_t speaker_dim = 256);

  std::size_t size() const noexcept { return axes_.size(); }
  std::size_t total_dim() const noexcept { return total_dim_; }
  const std::vector<Axis>& axes() const noexcept { return axes_; }
  const Axis& axis(std::size_t i) const { return axes_.at(i); }
  std::size_t offset(std::size_t i) const { return offsets_.at(i); }

  // Throws Error(UnknownAxis) listing the valid names.
  std::size_t index_of(std::string_view name) const;
  bool contains(std::string_view name) const noexcept;
  std::vector<std::string> names() const;

  bool operator==(const AxisSchema& other) const { return axes_ == other.axes_; }

 private:
  std::vector<Axis> axes_;
  std::vector<std::size_t> offsets_;
  std::size_t total_dim_ = 0;
};

using SchemaPtr = std::shared_ptr<const AxisSchema>;

SchemaPtr make_schema(std::vector<Axis> axes);

// Throws Error(ZeroVector) when the norm is below kZeroNormThreshold.
std::vector<double> l2_normalize(std::span<const double> v);

double l2_norm(std::span<const double> v) noexcept;

// Concatenated vector whose axis slices are unit-norm. The constructor
// renormalizes every slice; slices already unit up to rounding keep their bits.
class PartitionedEmbedding {
 public:
  PartitionedEmbedding(SchemaPtr schema, std::vector<double> data);

  // Rejects, rather than repairs, any slice whose norm is off by more than
  // `tolerance`. Throws Error(NormViolation) naming `id`.
  static PartitionedEmbedding validated(SchemaPtr schema, std::vector<double> data,
                                        const std::string& id = {},
                                        double tolerance = kIngestNormTolerance);

  const AxisSchema& schema() const noexcept { return *schema_; }
  const SchemaPtr& schema_ptr() const noexcept { return schema_; }
  std::span<const double> data() const noexcept { return data_; }
  std::span<const double> slice(std::size_t axis_index) const;
  std::span<const double> slice(std::string_view axis) const;

  // True if any slice drifted from unit norm by more than kIngestNormTolerance
  // before construction fixed it.
  bool renormalized() const noexcept { return renormalized_; }

 private:
  PartitionedEmbedding(SchemaPtr schema, std::vector<double> data, bool renormalized);

  SchemaPtr schema_;
  std::vector<double> data_;
  bool renormalized_ = false;
};

bool same_schema(const PartitionedEmbedding& a, const PartitionedEmbedding& b) noexcept;

// Signed per-axis weights. Axes without an entry weigh zero.
class QueryWeights {
 public:
  QueryWeights() = default;
  QueryWeights(std::initializer_list<std::pair<const std::string, double>> init);
  explicit QueryWeights(std::map<std::string, double> weights);

  void set(const std::string& axis, double weight) { weights_[axis] = weight; }
  double get(std::string_view axis) const noexcept;
  const std::map<std::string, double>& entries() const noexcept { return weights_; }

  // Throws Error(UnknownAxis) if any key is not a schema axis.
  void validate(const AxisSchema& schema) const;

  // One weight per schema axis, in schema order.
  std::vector<double> resolve(const AxisSchema& schema) const;

  QueryWeights operator-() const;
  QueryWeights scaled(double factor) const;

  // "semantic=1,speaker_id=-1" with keys in sorted order.
  std::string to_string() const;

  bool operator==(const QueryWeights&) const = default;

 private:
  std::map<std::string, double> weights_;
};

double axis_cosine(const PartitionedEmbedding& a, const PartitionedEmbedding& b,
                   std::string_view axis);
double axis_cosine(const PartitionedEmbedding& a, const PartitionedEmbedding& b,
                   std::size_t axis_index);

// Sum over axes, in schema order, of weight times per-axis cosine.
double weighted_similarity(const PartitionedEmbedding& a, const PartitionedEmbedding& b,
                           const QueryWeights& w);

// Hot-path variant over weights already resolved against the shared schema.
double weighted_similarity(const PartitionedEmbedding& a, const PartitionedEmbedding& b,
                           std::span<const double> resolved_weights);

std::vector<double> split(const PartitionedEmbedding& e, std::string_view axis);

PartitionedEmbedding concat(SchemaPtr schema, const std::vector<std::vector<double>>& slices);

}  // namespace faxis
