#pragma once

#include <span>
#include <string>

#include <Eigen/Dense>

namespace faxis {

// Losses over batches stored one vector per row. Inputs named "unit" are
// expected to be L2-normalized already, so cosines reduce to dot products.

struct DistillResult {
  double loss = 0.0;
  Eigen::VectorXd d_student;
  Eigen::MatrixXd d_alignment;  // empty when no alignment matrix is used
};

// 1 - cos(student, normalize(A * teacher)). Pass alignment == nullptr for the
// identity map, which requires equal dims.
double distill_loss(const Eigen::VectorXd& student, const Eigen::VectorXd& teacher,
                    const Eigen::MatrixXd* alignment = nullptr);
DistillResult distill_loss_grad(const Eigen::VectorXd& student, const Eigen::VectorXd& teacher,
                                const Eigen::MatrixXd* alignment = nullptr);

// Squared Frobenius distance of the smaller-side Gram matrix from identity:
// ||A A^T - I||^2 for wide A, ||A^T A - I||^2 otherwise.
double orthogonality_penalty(const Eigen::MatrixXd& a);
Eigen::MatrixXd orthogonality_penalty_grad(const Eigen::MatrixXd& a);

// Nearest matrix with orthonormal rows/columns (polar factor U V^T).
Eigen::MatrixXd polar_project(const Eigen::MatrixXd& a);

struct ContrastiveResult {
  double loss = 0.0;
  Eigen::MatrixXd d_first;   // anchors (InfoNCE) or embeddings (SupCon)
  Eigen::MatrixXd d_second;  // positives (InfoNCE); empty for SupCon
};

// One-directional InfoNCE: row i of `positives` is the positive for anchor i,
// every other row is an in-batch negative. With strict = true a single-row
// batch throws Error(BatchTooSmall) instead of returning 0.
double infonce_loss(const Eigen::MatrixXd& anchors, const Eigen::MatrixXd& positives, double tau,
                    bool strict = false);
ContrastiveResult infonce_loss_grad(const Eigen::MatrixXd& anchors, const Eigen::MatrixXd& positives,
                                    double tau, bool strict = false);

// Supervised contrastive loss over in-batch label matches. Anchors with no
// same-label partner are skipped; throws Error(NoPositives) if all are.
double supcon_loss(const Eigen::MatrixXd& embeddings, std::span<const std::string> labels, double tau);
ContrastiveResult supcon_loss_grad(const Eigen::MatrixXd& embeddings, std::span<const std::string> labels,
                                   double tau);

}  // namespace faxis
