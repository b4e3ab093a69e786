#include "faxis/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include "json.hpp"

#include "faxis/error.hpp"
#include "faxis/losses.hpp"

namespace faxis {

namespace {

struct Forward {
  std::size_t row = 0;
  Eigen::VectorXd z;
  double norm = 0.0;
};

std::optional<Forward> forward(const Eigen::Map<const Eigen::MatrixXd>& w, const Eigen::VectorXd* b,
                               const Eigen::MatrixXd& features, std::size_t row) {
  Eigen::VectorXd u = w * features.row(static_cast<Eigen::Index>(row)).transpose();
  if (b != nullptr) u += *b;
  const double n = u.norm();
  if (!(n >= 1e-12)) return std::nullopt;
  return Forward{row, u / n, n};
}

// Chain dL/dz through z = u / |u| and u = W x + b.
void backprop(const Forward& f, const Eigen::VectorXd& d_z, const Eigen::MatrixXd& features,
              Eigen::Map<Eigen::MatrixXd>& d_w, Eigen::VectorXd* d_b) {
  const Eigen::VectorXd d_u = (d_z - f.z * f.z.dot(d_z)) / f.norm;
  d_w.noalias() += d_u * features.row(static_cast<Eigen::Index>(f.row));
  if (d_b != nullptr) *d_b += d_u;
}

}  // namespace

std::string_view objective_name(Objective o) noexcept {
  switch (o) {
    case Objective::Distill: return "distill";
    case Objective::InfoncePairs: return "infonce_pairs";
    case Objective::SupconLabels: return "supcon_labels";
  }
  return "unknown";
}

Objective parse_objective(std::string_view name) {
  if (name == "distill") return Objective::Distill;
  if (name == "infonce_pairs" || name == "infonce") return Objective::InfoncePairs;
  if (name == "supcon_labels" || name == "supcon") return Objective::SupconLabels;
  throw Error(Errc::ConfigInvalid, "unknown objective '" + std::string(name) +
                                       "'; expected distill, infonce_pairs or supcon_labels");
}

Eigen::VectorXd project(const ProjectionHead& head, const Eigen::VectorXd& x, std::string_view item_id) {
  if (static_cast<std::size_t>(x.size()) != head.input_dim())
    throw Error(Errc::DimMismatch, "feature dim " + std::to_string(x.size()) + " != head input dim " +
                                       std::to_string(head.input_dim()),
                {std::string(item_id)});
  Eigen::VectorXd u = head.weight * x;
  if (head.has_bias) u += head.bias;
  const double n = u.norm();
  if (!(n >= 1e-12))
    throw Error(Errc::DegenerateHead,
                "head '" + head.axis + "' output vanishes for item '" + std::string(item_id) + "'",
                {std::string(item_id)});
  return u / n;
}

void TrainConfig::validate() const {
  if (axis.empty()) throw Error(Errc::ConfigInvalid, "axis name is empty");
  if (dim == 0) throw Error(Errc::ConfigInvalid, "axis dim must be positive");
  if (!(temperature > 0.0)) throw Error(Errc::ConfigInvalid, "temperature must be positive");
  if (!(learning_rate > 0.0)) throw Error(Errc::ConfigInvalid, "learning rate must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw Error(Errc::ConfigInvalid, "momentum must be in [0, 1)");
  if (batch_size == 0) throw Error(Errc::ConfigInvalid, "batch size must be positive");
  if (objective != Objective::Distill && batch_size < 2)
    throw Error(Errc::ConfigInvalid, "contrastive objectives need batch size >= 2");
  if (!(orthogonality_lambda >= 0.0)) throw Error(Errc::ConfigInvalid, "orthogonality lambda must be >= 0");
  if (objective == Objective::SupconLabels && label_field.empty())
    throw Error(Errc::ConfigInvalid, "supcon objective needs a label field");
}

void TrainingSet::validate() const {
  const auto n = size();
  if (n == 0) throw Error(Errc::ConfigInvalid, "training set is empty");
  if (ids.size() != n) throw Error(Errc::DimMismatch, "id count does not match feature rows");
  if (!features.allFinite()) throw Error(Errc::NonFinite, "features contain non-finite values");
  for (const auto& [field, values] : labels)
    if (values.size() != n) throw Error(Errc::DimMismatch, "label field '" + field + "' has wrong length");
  if (teachers && static_cast<std::size_t>(teachers->rows()) != n)
    throw Error(Errc::DimMismatch, "teacher rows do not match feature rows");
  if (!positives.empty() && positives.size() != n)
    throw Error(Errc::DimMismatch, "positive partner list has wrong length");
  for (const auto& p : positives)
    if (p && *p >= n) throw Error(Errc::RefOutOfRange, "positive partner row out of range");
}

std::vector<TrainExample> sample_batch(const TrainingSet& set, std::string_view trained_label_field,
                                       std::size_t batch_size, Rng& rng, std::span<const std::size_t> pool) {
  std::vector<std::size_t> remaining;
  if (pool.empty()) {
    remaining.resize(set.size());
    std::iota(remaining.begin(), remaining.end(), std::size_t{0});
  } else {
    remaining.assign(pool.begin(), pool.end());
  }
  if (remaining.empty()) throw Error(Errc::ConfigInvalid, "cannot sample from an empty dataset");

  std::vector<const std::vector<std::string>*> fields;
  for (const auto& [name, values] : set.labels)
    if (name != trained_label_field) fields.push_back(&values);
  std::vector<std::set<std::string>> taken(fields.size());

  auto collides = [&](std::size_t row) {
    for (std::size_t f = 0; f < fields.size(); ++f) {
      const auto& v = (*fields[f])[row];
      if (!v.empty() && taken[f].count(v)) return true;
    }
    return false;
  };

  const std::size_t target = std::min(batch_size, remaining.size());
  std::vector<TrainExample> batch;
  batch.reserve(target);
  while (batch.size() < target) {
    std::size_t pick = uniform_index(rng, remaining.size());
    for (std::size_t retry = 0; retry < kSamplerRetries && collides(remaining[pick]); ++retry)
      pick = uniform_index(rng, remaining.size());
    const std::size_t row = remaining[pick];
    remaining[pick] = remaining.back();
    remaining.pop_back();
    for (std::size_t f = 0; f < fields.size(); ++f)
      if (!(*fields[f])[row].empty()) taken[f].insert((*fields[f])[row]);

    TrainExample ex;
    ex.row = row;
    if (!set.positives.empty()) ex.positive = set.positives[row];
    if (auto it = set.labels.find(std::string(trained_label_field)); it != set.labels.end())
      ex.label = it->second[row];
    ex.has_teacher = set.teachers.has_value();
    batch.push_back(std::move(ex));
  }
  return batch;
}

std::size_t count_collisions(const TrainingSet& set, std::span<const TrainExample> batch, std::string_view field) {
  auto it = set.labels.find(std::string(field));
  if (it == set.labels.end()) return 0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < batch.size(); ++i)
    for (std::size_t j = i + 1; j < batch.size(); ++j)
      if (it->second[batch[i].row] == it->second[batch[j].row]) ++n;
  return n;
}

std::size_t ParameterLayout::size() const noexcept {
  return output_dim * input_dim + (bias ? output_dim : 0) + output_dim * teacher_dim;
}

std::vector<double> pack_parameters(const ProjectionHead& head, const AlignmentMatrix* alignment) {
  std::vector<double> p(head.weight.data(), head.weight.data() + head.weight.size());
  if (head.has_bias) p.insert(p.end(), head.bias.data(), head.bias.data() + head.bias.size());
  if (alignment != nullptr)
    p.insert(p.end(), alignment->matrix.data(), alignment->matrix.data() + alignment->matrix.size());
  return p;
}

ProjectionHead unpack_head(const ParameterLayout& layout, std::span<const double> params, std::string axis) {
  if (params.size() != layout.size()) throw Error(Errc::DimMismatch, "parameter vector has wrong length");
  const auto out = static_cast<Eigen::Index>(layout.output_dim);
  const auto in = static_cast<Eigen::Index>(layout.input_dim);
  ProjectionHead head;
  head.axis = std::move(axis);
  head.weight = Eigen::Map<const Eigen::MatrixXd>(params.data(), out, in);
  head.has_bias = layout.bias;
  head.bias = layout.bias ? Eigen::VectorXd(Eigen::Map<const Eigen::VectorXd>(params.data() + out * in, out))
                          : Eigen::VectorXd::Zero(out);
  return head;
}

std::optional<AlignmentMatrix> unpack_alignment(const ParameterLayout& layout, std::span<const double> params) {
  if (layout.teacher_dim == 0) return std::nullopt;
  const std::size_t offset = layout.output_dim * layout.input_dim + (layout.bias ? layout.output_dim : 0);
  return AlignmentMatrix{Eigen::Map<const Eigen::MatrixXd>(params.data() + offset,
                                                           static_cast<Eigen::Index>(layout.output_dim),
                                                           static_cast<Eigen::Index>(layout.teacher_dim))};
}

BatchLoss evaluate_batch(const TrainConfig& config, const TrainingSet& set, std::span<const TrainExample> batch,
                         const ParameterLayout& layout, std::span<const double> params, std::span<double> grad) {
  if (params.size() != layout.size()) throw Error(Errc::DimMismatch, "parameter vector has wrong length");
  const bool want_grad = !grad.empty();
  if (want_grad && grad.size() != params.size()) throw Error(Errc::DimMismatch, "gradient buffer has wrong length");

  const auto out = static_cast<Eigen::Index>(layout.output_dim);
  const auto in = static_cast<Eigen::Index>(layout.input_dim);
  const auto tdim = static_cast<Eigen::Index>(layout.teacher_dim);
  const std::size_t bias_off = layout.output_dim * layout.input_dim;
  const std::size_t align_off = bias_off + (layout.bias ? layout.output_dim : 0);

  Eigen::Map<const Eigen::MatrixXd> w(params.data(), out, in);
  std::optional<Eigen::VectorXd> b;
  if (layout.bias) b = Eigen::Map<const Eigen::VectorXd>(params.data() + bias_off, out);
  std::optional<Eigen::MatrixXd> a;
  if (tdim > 0) a = Eigen::Map<const Eigen::MatrixXd>(params.data() + align_off, out, tdim);

  std::vector<double> scratch(want_grad ? 0 : layout.size());
  double* g_data = want_grad ? grad.data() : scratch.data();
  std::fill(g_data, g_data + layout.size(), 0.0);
  Eigen::Map<Eigen::MatrixXd> d_w(g_data, out, in);
  Eigen::VectorXd d_b = Eigen::VectorXd::Zero(out);
  Eigen::MatrixXd d_a = Eigen::MatrixXd::Zero(out, tdim);
  Eigen::VectorXd* d_b_ptr = layout.bias ? &d_b : nullptr;
  const Eigen::VectorXd* b_ptr = b ? &*b : nullptr;

  BatchLoss result;
  switch (config.objective) {
    case Objective::Distill: {
      if (!set.teachers) throw Error(Errc::ConfigInvalid, "distill objective needs teacher embeddings");
      std::vector<Forward> fw;
      for (const auto& ex : batch) {
        if (auto f = forward(w, b_ptr, set.features, ex.row)) fw.push_back(std::move(*f));
        else ++result.dropped;
      }
      if (fw.empty()) break;
      const double scale = 1.0 / static_cast<double>(fw.size());
      for (const auto& f : fw) {
        const Eigen::VectorXd t = set.teachers->row(static_cast<Eigen::Index>(f.row)).transpose();
        const DistillResult dr = distill_loss_grad(f.z, t, a ? &*a : nullptr);
        result.loss += dr.loss * scale;
        backprop(f, dr.d_student * scale, set.features, d_w, d_b_ptr);
        if (a) d_a += dr.d_alignment * scale;
      }
      break;
    }
    case Objective::InfoncePairs: {
      std::vector<std::pair<Forward, Forward>> pairs;
      for (const auto& ex : batch) {
        if (!ex.positive) continue;
        auto fa = forward(w, b_ptr, set.features, ex.row);
        auto fp = forward(w, b_ptr, set.features, *ex.positive);
        if (fa && fp) pairs.emplace_back(std::move(*fa), std::move(*fp));
        else ++result.dropped;
      }
      if (pairs.empty()) break;
      const auto n = static_cast<Eigen::Index>(pairs.size());
      Eigen::MatrixXd anchors(n, out), positives(n, out);
      for (Eigen::Index i = 0; i < n; ++i) {
        anchors.row(i) = pairs[i].first.z.transpose();
        positives.row(i) = pairs[i].second.z.transpose();
      }
      const ContrastiveResult cr = infonce_loss_grad(anchors, positives, config.temperature);
      result.loss = cr.loss;
      for (Eigen::Index i = 0; i < n; ++i) {
        backprop(pairs[i].first, cr.d_first.row(i).transpose(), set.features, d_w, d_b_ptr);
        backprop(pairs[i].second, cr.d_second.row(i).transpose(), set.features, d_w, d_b_ptr);
      }
      break;
    }
    case Objective::SupconLabels: {
      std::vector<Forward> fw;
      std::vector<std::string> labels;
      for (const auto& ex : batch) {
        if (!ex.label) throw Error(Errc::MissingLabel, "supcon example lacks a label");
        if (auto f = forward(w, b_ptr, set.features, ex.row)) {
          fw.push_back(std::move(*f));
          labels.push_back(*ex.label);
        } else {
          ++result.dropped;
        }
      }
      const auto n = static_cast<Eigen::Index>(fw.size());
      Eigen::MatrixXd z(n, out);
      for (Eigen::Index i = 0; i < n; ++i) z.row(i) = fw[i].z.transpose();
      const ContrastiveResult cr = supcon_loss_grad(z, labels, config.temperature);
      result.loss = cr.loss;
      for (Eigen::Index i = 0; i < n; ++i) backprop(fw[i], cr.d_first.row(i).transpose(), set.features, d_w, d_b_ptr);
      break;
    }
  }

  if (a) {
    result.penalty = orthogonality_penalty(*a);
    d_a += config.orthogonality_lambda * orthogonality_penalty_grad(*a);
  }
  result.total = result.loss + config.orthogonality_lambda * result.penalty;

  if (want_grad) {
    if (layout.bias) std::copy(d_b.data(), d_b.data() + out, grad.data() + bias_off);
    if (a) std::copy(d_a.data(), d_a.data() + d_a.size(), grad.data() + align_off);
  }
  return result;
}

ObjectiveFn batch_objective(const TrainConfig& config, const TrainingSet& set, std::vector<TrainExample> batch,
                            ParameterLayout layout) {
  return [&config, &set, batch = std::move(batch), layout](std::span<const double> p, std::span<double> g) {
    return evaluate_batch(config, set, batch, layout, p, g).total;
  };
}

double finite_difference_check(const ObjectiveFn& fn, std::span<const double> params, double epsilon,
                               std::uint64_t seed, std::size_t coordinates) {
  if (!(epsilon >= 1e-7 && epsilon <= 1e-3)) throw Error(Errc::ConfigInvalid, "epsilon must be in [1e-7, 1e-3]");
  std::vector<double> analytic(params.size());
  fn(params, analytic);

  std::vector<std::size_t> coords(params.size());
  std::iota(coords.begin(), coords.end(), std::size_t{0});
  Rng rng = substream(seed, "gradcheck");
  const std::size_t n = std::min(coordinates, coords.size());
  for (std::size_t i = 0; i < n; ++i) std::swap(coords[i], coords[i + uniform_index(rng, coords.size() - i)]);
  coords.resize(n);

  std::vector<double> p(params.begin(), params.end());
  double worst = 0.0;
  for (std::size_t c : coords) {
    const double orig = p[c];
    p[c] = orig + epsilon;
    const double f_plus = fn(p, {});
    p[c] = orig - epsilon;
    const double f_minus = fn(p, {});
    p[c] = orig;
    const double numeric = (f_plus - f_minus) / (2.0 * epsilon);
    const double denom = std::max({std::abs(numeric), std::abs(analytic[c]), 1e-7});
    worst = std::max(worst, std::abs(numeric - analytic[c]) / denom);
  }
  return worst;
}

ProjectionHead initial_head(const TrainConfig& config, std::size_t input_dim) {
  ProjectionHead head;
  head.axis = config.axis;
  const auto out = static_cast<Eigen::Index>(config.dim);
  const auto in = static_cast<Eigen::Index>(input_dim);
  head.weight.resize(out, in);
  Rng rng = substream(config.seed, "init");
  const double bound = 1.0 / std::sqrt(static_cast<double>(input_dim));
  for (Eigen::Index r = 0; r < out; ++r)
    for (Eigen::Index c = 0; c < in; ++c) head.weight(r, c) = (2.0 * uniform01(rng) - 1.0) * bound;
  head.has_bias = config.bias;
  head.bias = Eigen::VectorXd::Zero(out);
  return head;
}

namespace {

AlignmentMatrix initial_alignment(const TrainConfig& config, std::size_t teacher_dim) {
  Rng rng = substream(config.seed, "init-alignment");
  Eigen::MatrixXd a(static_cast<Eigen::Index>(config.dim), static_cast<Eigen::Index>(teacher_dim));
  for (Eigen::Index r = 0; r < a.rows(); ++r)
    for (Eigen::Index c = 0; c < a.cols(); ++c) a(r, c) = standard_normal(rng);
  return {polar_project(a)};
}

}  // namespace

TrainResult train_axis(const TrainConfig& config, const TrainingSet& set) {
  config.validate();
  set.validate();

  ParameterLayout layout;
  layout.output_dim = config.dim;
  layout.input_dim = static_cast<std::size_t>(set.features.cols());
  layout.bias = config.bias;

  std::vector<std::size_t> pool;
  switch (config.objective) {
    case Objective::Distill:
      if (!set.teachers) throw Error(Errc::ConfigInvalid, "distill objective needs teacher embeddings");
      if (static_cast<std::size_t>(set.teachers->cols()) != config.dim)
        layout.teacher_dim = static_cast<std::size_t>(set.teachers->cols());
      break;
    case Objective::InfoncePairs:
      for (std::size_t i = 0; i < set.positives.size(); ++i)
        if (set.positives[i]) pool.push_back(i);
      if (pool.empty()) throw Error(Errc::ConfigInvalid, "infonce objective needs explicit positive pairs");
      break;
    case Objective::SupconLabels:
      if (!set.labels.count(config.label_field))
        throw Error(Errc::MissingLabel, "training set has no label field '" + config.label_field + "'");
      break;
  }

  const ProjectionHead init = initial_head(config, layout.input_dim);
  std::optional<AlignmentMatrix> init_align;
  if (layout.teacher_dim > 0) init_align = initial_alignment(config, layout.teacher_dim);

  std::vector<double> params = pack_parameters(init, init_align ? &*init_align : nullptr);
  std::vector<double> velocity(params.size(), 0.0);
  std::vector<double> grad(params.size(), 0.0);
  Rng sampler = substream(config.seed, "sampler");

  TrainResult result;
  result.log.reserve(config.steps);
  for (std::size_t step = 1; step <= config.steps; ++step) {
    const auto batch = sample_batch(set, config.label_field, config.batch_size, sampler, pool);
    BatchLoss bl;
    try {
      bl = evaluate_batch(config, set, batch, layout, params, grad);
    } catch (const Error& e) {
      if (e.code() != Errc::NoPositives) throw;
      result.log.push_back({step, 0.0, 0.0, 0.0});
      continue;
    }
    if (!std::isfinite(bl.total))
      throw Error(Errc::NonFiniteLoss, "non-finite loss at step " + std::to_string(step));
    double gn = 0.0;
    for (double g : grad) gn += g * g;
    gn = std::sqrt(gn);
    for (std::size_t i = 0; i < params.size(); ++i) {
      velocity[i] = config.momentum * velocity[i] - config.learning_rate * grad[i];
      params[i] += velocity[i];
    }
    result.log.push_back({step, bl.loss, bl.penalty, gn});
  }

  result.head = unpack_head(layout, params, config.axis);
  result.alignment = unpack_alignment(layout, params);
  if (result.alignment) {
    result.orthogonality_before_projection = std::sqrt(orthogonality_penalty(result.alignment->matrix));
    result.alignment->matrix = polar_project(result.alignment->matrix);
    result.orthogonality_after_projection = std::sqrt(orthogonality_penalty(result.alignment->matrix));
  }

  std::size_t degenerate = 0;
  std::vector<std::string> bad_ids;
  for (std::size_t r = 0; r < set.size(); ++r) {
    Eigen::VectorXd u = result.head.weight * set.features.row(static_cast<Eigen::Index>(r)).transpose();
    if (result.head.has_bias) u += result.head.bias;
    if (!(u.norm() >= 1e-12)) {
      ++degenerate;
      if (bad_ids.size() < 16) bad_ids.push_back(set.ids[r]);
    }
  }
  if (2 * degenerate > set.size())
    throw Error(Errc::DegenerateHead,
                std::to_string(degenerate) + " of " + std::to_string(set.size()) + " items project to zero",
                std::move(bad_ids));
  return result;
}

double mean_teacher_cosine(const ProjectionHead& head, const AlignmentMatrix* alignment,
                           const Eigen::MatrixXd& features, const Eigen::MatrixXd& teachers) {
  if (features.rows() != teachers.rows()) throw Error(Errc::DimMismatch, "feature and teacher rows differ");
  if (features.rows() == 0) return 0.0;
  double sum = 0.0;
  for (Eigen::Index r = 0; r < features.rows(); ++r) {
    const Eigen::VectorXd z = project(head, features.row(r).transpose());
    sum += 1.0 - distill_loss(z, teachers.row(r).transpose(), alignment ? &alignment->matrix : nullptr);
  }
  return sum / static_cast<double>(features.rows());
}

std::string log_to_jsonl(std::span<const TrainLogEntry> log) {
  std::string out;
  for (const auto& e : log) {
    nlohmann::json j = {{"step", e.step}, {"loss", e.loss}, {"penalty", e.penalty}, {"grad_norm", e.grad_norm}};
    out += j.dump();
    out += '\n';
  }
  return out;
}

}  // namespace faxis
