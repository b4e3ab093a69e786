#include "faxis/losses.hpp"

#include <cmath>
#include <limits>

#include "faxis/error.hpp"

namespace faxis {

namespace {

Eigen::VectorXd aligned_teacher(const Eigen::VectorXd& student, const Eigen::VectorXd& teacher,
                                const Eigen::MatrixXd* alignment) {
  if (alignment == nullptr) {
    if (teacher.size() != student.size())
      throw Error(Errc::DimMismatch, "identity alignment needs teacher dim " + std::to_string(teacher.size()) +
                                         " == student dim " + std::to_string(student.size()));
    return teacher;
  }
  if (alignment->rows() != student.size() || alignment->cols() != teacher.size())
    throw Error(Errc::DimMismatch, "alignment matrix is " + std::to_string(alignment->rows()) + "x" +
                                       std::to_string(alignment->cols()) + ", expected " +
                                       std::to_string(student.size()) + "x" + std::to_string(teacher.size()));
  return *alignment * teacher;
}

double log_sum_exp(const Eigen::Ref<const Eigen::RowVectorXd>& row) {
  const double m = row.maxCoeff();
  return m + std::log((row.array() - m).exp().sum());
}

}  // namespace

DistillResult distill_loss_grad(const Eigen::VectorXd& student, const Eigen::VectorXd& teacher,
                                const Eigen::MatrixXd* alignment) {
  const Eigen::VectorXd v = aligned_teacher(student, teacher, alignment);
  const double n = v.norm();
  if (!(n >= 1e-12)) throw Error(Errc::ZeroVector, "aligned teacher has zero norm");
  const Eigen::VectorXd t_hat = v / n;
  const double cos = student.dot(t_hat);

  DistillResult r;
  r.loss = 1.0 - cos;
  r.d_student = -t_hat;
  if (alignment != nullptr) {
    const Eigen::VectorXd d_v = -(student - t_hat * cos) / n;
    r.d_alignment = d_v * teacher.transpose();
  }
  return r;
}

double distill_loss(const Eigen::VectorXd& student, const Eigen::VectorXd& teacher,
                    const Eigen::MatrixXd* alignment) {
  return distill_loss_grad(student, teacher, alignment).loss;
}

double orthogonality_penalty(const Eigen::MatrixXd& a) {
  if (a.size() == 0) return 0.0;
  if (a.rows() <= a.cols()) {
    const Eigen::MatrixXd g = a * a.transpose();
    return (g - Eigen::MatrixXd::Identity(g.rows(), g.cols())).squaredNorm();
  }
  const Eigen::MatrixXd g = a.transpose() * a;
  return (g - Eigen::MatrixXd::Identity(g.rows(), g.cols())).squaredNorm();
}

Eigen::MatrixXd orthogonality_penalty_grad(const Eigen::MatrixXd& a) {
  if (a.rows() <= a.cols()) {
    const Eigen::MatrixXd g = a * a.transpose() - Eigen::MatrixXd::Identity(a.rows(), a.rows());
    return 4.0 * g * a;
  }
  const Eigen::MatrixXd g = a.transpose() * a - Eigen::MatrixXd::Identity(a.cols(), a.cols());
  return 4.0 * a * g;
}

Eigen::MatrixXd polar_project(const Eigen::MatrixXd& a) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
  return svd.matrixU() * svd.matrixV().transpose();
}

ContrastiveResult infonce_loss_grad(const Eigen::MatrixXd& anchors, const Eigen::MatrixXd& positives,
                                    double tau, bool strict) {
  if (!(tau > 0.0)) throw Error(Errc::ConfigInvalid, "temperature must be positive");
  if (anchors.rows() != positives.rows() || anchors.cols() != positives.cols())
    throw Error(Errc::DimMismatch, "anchors and positives must have the same shape");
  const Eigen::Index n = anchors.rows();
  if (n == 0) throw Error(Errc::BatchTooSmall, "empty batch");
  if (n == 1 && strict) throw Error(Errc::BatchTooSmall, "InfoNCE with one pair has no negatives");

  const Eigen::MatrixXd logits = (anchors * positives.transpose()) / tau;
  Eigen::MatrixXd g(n, n);
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double lse = log_sum_exp(logits.row(i));
    total += lse - logits(i, i);
    g.row(i) = (logits.row(i).array() - lse).exp();
    g(i, i) -= 1.0;
  }
  g /= static_cast<double>(n);

  ContrastiveResult r;
  r.loss = total / static_cast<double>(n);
  r.d_first = g * positives / tau;
  r.d_second = g.transpose() * anchors / tau;
  return r;
}

double infonce_loss(const Eigen::MatrixXd& anchors, const Eigen::MatrixXd& positives, double tau, bool strict) {
  return infonce_loss_grad(anchors, positives, tau, strict).loss;
}

ContrastiveResult supcon_loss_grad(const Eigen::MatrixXd& embeddings, std::span<const std::string> labels,
                                   double tau) {
  if (!(tau > 0.0)) throw Error(Errc::ConfigInvalid, "temperature must be positive");
  const Eigen::Index n = embeddings.rows();
  if (static_cast<std::size_t>(n) != labels.size())
    throw Error(Errc::DimMismatch, "label count does not match batch size");

  const Eigen::MatrixXd logits = (embeddings * embeddings.transpose()) / tau;
  Eigen::MatrixXd g = Eigen::MatrixXd::Zero(n, n);
  double total = 0.0;
  std::size_t valid = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    std::size_t n_pos = 0;
    for (Eigen::Index k = 0; k < n; ++k)
      if (k != i && labels[k] == labels[i]) ++n_pos;
    if (n_pos == 0) continue;
    ++valid;

    double m = -std::numeric_limits<double>::infinity();
    for (Eigen::Index k = 0; k < n; ++k)
      if (k != i) m = std::max(m, logits(i, k));
    double z = 0.0;
    for (Eigen::Index k = 0; k < n; ++k)
      if (k != i) z += std::exp(logits(i, k) - m);
    const double lse = m + std::log(z);

    double pos_sum = 0.0;
    const double inv_pos = 1.0 / static_cast<double>(n_pos);
    for (Eigen::Index k = 0; k < n; ++k) {
      if (k == i) continue;
      g(i, k) = std::exp(logits(i, k) - lse);
      if (labels[k] == labels[i]) {
        pos_sum += logits(i, k);
        g(i, k) -= inv_pos;
      }
    }
    total += lse - pos_sum * inv_pos;
  }
  if (valid == 0) throw Error(Errc::NoPositives, "no anchor has a same-label partner in the batch");
  g /= static_cast<double>(valid);

  ContrastiveResult r;
  r.loss = total / static_cast<double>(valid);
  r.d_first = (g + g.transpose()) * embeddings / tau;
  return r;
}

double supcon_loss(const Eigen::MatrixXd& embeddings, std::span<const std::string> labels, double tau) {
  return supcon_loss_grad(embeddings, labels, tau).loss;
}

}  // namespace faxis
