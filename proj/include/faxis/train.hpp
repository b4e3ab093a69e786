#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "faxis/rng.hpp"

namespace faxis {

enum class Objective { Distill, InfoncePairs, SupconLabels };

std::string_view objective_name(Objective o) noexcept;
Objective parse_objective(std::string_view name);

// Linear map from pooled-feature space into one axis subspace.
struct ProjectionHead {
  std::string axis;
  Eigen::MatrixXd weight;  // output_dim x input_dim
  Eigen::VectorXd bias;    // output_dim; ignored unless has_bias
  bool has_bias = false;

  std::size_t input_dim() const noexcept { return static_cast<std::size_t>(weight.cols()); }
  std::size_t output_dim() const noexcept { return static_cast<std::size_t>(weight.rows()); }
};

// Maps teacher space into the axis subspace (output_dim x teacher_dim).
struct AlignmentMatrix {
  Eigen::MatrixXd matrix;
};

// Unit-norm head output. Throws Error(DegenerateHead) naming `item_id` if the
// affine output vanishes.
Eigen::VectorXd project(const ProjectionHead& head, const Eigen::VectorXd& x, std::string_view item_id = {});

struct TrainConfig {
  std::string axis;
  std::size_t dim = 0;  // output dim of the head
  Objective objective = Objective::Distill;
  // Label field supervising this axis (SupCon labels); excluded from the
  // sampler's collision checks.
  std::string label_field;
  double temperature = 0.07;
  double learning_rate = 1e-3;
  double momentum = 0.9;
  std::size_t batch_size = 64;
  std::size_t steps = 1000;
  std::uint64_t seed = 0;
  double orthogonality_lambda = 1.0;
  bool bias = false;

  void validate() const;
};

// Pooled features plus every supervision source, row-aligned.
struct TrainingSet {
  std::vector<std::string> ids;
  Eigen::MatrixXd features;  // one item per row
  std::map<std::string, std::vector<std::string>> labels;
  std::optional<Eigen::MatrixXd> teachers;            // one teacher per row
  std::vector<std::optional<std::size_t>> positives;  // explicit partner row

  std::size_t size() const noexcept { return static_cast<std::size_t>(features.rows()); }
  void validate() const;
};

struct TrainExample {
  std::size_t row = 0;
  std::optional<std::size_t> positive;
  std::optional<std::string> label;
  bool has_teacher = false;
};

inline constexpr std::size_t kSamplerRetries = 10;

// Draws `batch_size` distinct rows from `pool` (all rows when empty). A
// candidate sharing any label outside `trained_label_field` with an already
// chosen row is redrawn up to kSamplerRetries times, then accepted.
std::vector<TrainExample> sample_batch(const TrainingSet& set, std::string_view trained_label_field,
                                       std::size_t batch_size, Rng& rng,
                                       std::span<const std::size_t> pool = {});

// Number of (i, j) pairs in a batch that share the value of `field`.
std::size_t count_collisions(const TrainingSet& set, std::span<const TrainExample> batch,
                             std::string_view field);

// Flat parameter layout: W (column-major), then bias, then alignment matrix.
struct ParameterLayout {
  std::size_t output_dim = 0;
  std::size_t input_dim = 0;
  bool bias = false;
  std::size_t teacher_dim = 0;  // 0 when no alignment matrix is learned

  std::size_t size() const noexcept;
};

std::vector<double> pack_parameters(const ProjectionHead& head, const AlignmentMatrix* alignment);
ProjectionHead unpack_head(const ParameterLayout& layout, std::span<const double> params, std::string axis);
std::optional<AlignmentMatrix> unpack_alignment(const ParameterLayout& layout, std::span<const double> params);

// Loss of a fixed batch as a function of the flat parameters. Writes the
// gradient into `grad` unless it is empty.
using ObjectiveFn = std::function<double(std::span<const double> params, std::span<double> grad)>;

struct BatchLoss {
  double loss = 0.0;     // objective term
  double penalty = 0.0;  // unweighted orthogonality penalty
  double total = 0.0;    // loss + lambda * penalty
  std::size_t dropped = 0;
};

BatchLoss evaluate_batch(const TrainConfig& config, const TrainingSet& set,
                         std::span<const TrainExample> batch, const ParameterLayout& layout,
                         std::span<const double> params, std::span<double> grad);

ObjectiveFn batch_objective(const TrainConfig& config, const TrainingSet& set,
                            std::vector<TrainExample> batch, ParameterLayout layout);

// Central-difference check of `fn` at `params` on `coordinates` randomly
// chosen coordinates. Returns the max relative error.
double finite_difference_check(const ObjectiveFn& fn, std::span<const double> params, double epsilon,
                               std::uint64_t seed = 0, std::size_t coordinates = 100);

struct TrainLogEntry {
  std::size_t step = 0;
  double loss = 0.0;
  double penalty = 0.0;
  double grad_norm = 0.0;

  bool operator==(const TrainLogEntry&) const = default;
};

struct TrainResult {
  ProjectionHead head;
  std::optional<AlignmentMatrix> alignment;
  std::vector<TrainLogEntry> log;
  // ||G - I||_F of the smaller-side Gram before and after the final polar
  // projection; zero when no alignment matrix is used.
  double orthogonality_before_projection = 0.0;
  double orthogonality_after_projection = 0.0;
};

ProjectionHead initial_head(const TrainConfig& config, std::size_t input_dim);

TrainResult train_axis(const TrainConfig& config, const TrainingSet& set);

// Mean cosine between projected rows and their (aligned) teachers.
double mean_teacher_cosine(const ProjectionHead& head, const AlignmentMatrix* alignment,
                           const Eigen::MatrixXd& features, const Eigen::MatrixXd& teachers);

std::string log_to_jsonl(std::span<const TrainLogEntry> log);

}  // namespace faxis
