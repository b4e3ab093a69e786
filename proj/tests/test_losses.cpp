#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "faxis/error.hpp"
#include "faxis/losses.hpp"
#include "faxis/rng.hpp"
#include "faxis/train.hpp"

using namespace faxis;

namespace {

Eigen::MatrixXd random_matrix(Rng& rng, Eigen::Index r, Eigen::Index c) {
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = standard_normal(rng);
  return m;
}

Eigen::MatrixXd unit_rows(Eigen::MatrixXd m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) m.row(i).normalize();
  return m;
}

// Classical Gram-Schmidt on the columns; independent of the library code.
Eigen::MatrixXd gram_schmidt(const Eigen::MatrixXd& m) {
  Eigen::MatrixXd q = m;
  for (Eigen::Index j = 0; j < q.cols(); ++j) {
    for (Eigen::Index k = 0; k < j; ++k) q.col(j) -= q.col(k).dot(m.col(j)) * q.col(k);
    for (Eigen::Index k = 0; k < j; ++k) q.col(j) -= q.col(k).dot(q.col(j)) * q.col(k);  // re-orthogonalize
    q.col(j) /= q.col(j).norm();
  }
  return q;
}

Errc code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected faxis::Error");
  return Errc::Io;
}

}  // namespace

TEST_CASE("distill loss examples") {
  Eigen::VectorXd t(3);
  t << 2, 0, 0;
  Eigen::VectorXd s(3);
  s << 1, 0, 0;
  CHECK(distill_loss(s, t) == doctest::Approx(0.0));
  Eigen::VectorXd perp(3);
  perp << 0, 1, 0;
  CHECK(distill_loss(perp, t) == doctest::Approx(1.0));
  CHECK(distill_loss(-s, t) == doctest::Approx(2.0));

  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(3, 2);
  a(0, 1) = 1.0;
  Eigen::VectorXd t2(2);
  t2 << 0, 5;
  CHECK(distill_loss(s, t2, &a) == doctest::Approx(0.0));

  CHECK(code_of([&] { distill_loss(s, t2); }) == Errc::DimMismatch);
  CHECK(code_of([&] { distill_loss(s, Eigen::VectorXd::Zero(3)); }) == Errc::ZeroVector);
  Eigen::MatrixXd bad = Eigen::MatrixXd::Ones(2, 2);
  CHECK(code_of([&] { distill_loss(s, t2, &bad); }) == Errc::DimMismatch);
}

TEST_CASE("orthogonality penalty examples") {
  CHECK(orthogonality_penalty(Eigen::MatrixXd::Identity(4, 4)) == 0.0);
  CHECK(orthogonality_penalty(2.0 * Eigen::MatrixXd::Identity(2, 2)) == doctest::Approx(18.0));

  Rng rng(17);
  for (int t = 0; t < 10; ++t) {
    const Eigen::MatrixXd q = gram_schmidt(random_matrix(rng, 12, 7));  // tall: orthonormal columns
    CHECK(orthogonality_penalty(q) <= 1e-10);
    CHECK(orthogonality_penalty(Eigen::MatrixXd(q.transpose())) <= 1e-10);  // wide: orthonormal rows
  }
}

TEST_CASE("polar projection yields orthonormal rows") {
  Rng rng(3);
  const Eigen::MatrixXd a = random_matrix(rng, 5, 9);
  CHECK(orthogonality_penalty(polar_project(a)) <= 1e-20);
  const Eigen::MatrixXd q = gram_schmidt(random_matrix(rng, 6, 6));
  CHECK((polar_project(q) - q).norm() <= 1e-12);
}

TEST_CASE("infonce examples") {
  Eigen::MatrixXd one(1, 2);
  one << 1, 0;
  CHECK(infonce_loss(one, one, 0.07) == 0.0);
  CHECK(code_of([&] { infonce_loss(one, one, 0.07, true); }) == Errc::BatchTooSmall);

  Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(2, 2);
  // softmax over cosines {1, 0} at tau = 1
  CHECK(infonce_loss(eye, eye, 1.0) == doctest::Approx(0.3132616875182228).epsilon(1e-14));

  Eigen::MatrixXd same = Eigen::MatrixXd::Zero(4, 3);
  same.col(0).setOnes();
  CHECK(infonce_loss(same, same, 0.07) == doctest::Approx(1.3862943611198906).epsilon(1e-14));
}

TEST_CASE("infonce properties") {
  Rng rng(99);
  for (int t = 0; t < 50; ++t) {
    const auto n = 2 + t % 7;
    const Eigen::MatrixXd a = unit_rows(random_matrix(rng, n, 5));
    const Eigen::MatrixXd p = unit_rows(random_matrix(rng, n, 5));
    const double tau = 0.05 + uniform01(rng);
    CHECK(infonce_loss(a, p, tau) >= 0.0);
    // doubling tau is the same softmax argument as halving every cosine
    CHECK(infonce_loss(a, p, 2.0 * tau) == infonce_loss(Eigen::MatrixXd(0.5 * a), p, tau));
  }
}

TEST_CASE("supcon examples") {
  Eigen::MatrixXd two(2, 2);
  two << 1, 0, 1, 0;
  std::vector<std::string> xx = {"x", "x"};
  CHECK(supcon_loss(two, xx, 1.0) == doctest::Approx(0.0));

  std::vector<std::string> distinct = {"a", "b", "c"};
  CHECK(code_of([&] { supcon_loss(Eigen::MatrixXd::Identity(3, 3), distinct, 1.0); }) == Errc::NoPositives);

  std::vector<std::string> xxy = {"x", "x", "y"};
  CHECK(supcon_loss(Eigen::MatrixXd::Identity(3, 3), xxy, 1.0) == doctest::Approx(0.6931471805599453).epsilon(1e-14));
}

TEST_CASE("supcon is permutation invariant") {
  Rng rng(5);
  for (int t = 0; t < 30; ++t) {
    const Eigen::Index n = 8;
    const Eigen::MatrixXd z = unit_rows(random_matrix(rng, n, 6));
    std::vector<std::string> labels;
    for (Eigen::Index i = 0; i < n; ++i) labels.push_back(std::to_string(uniform_index(rng, 3)));
    std::vector<Eigen::Index> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    for (Eigen::Index i = n - 1; i > 0; --i) std::swap(perm[i], perm[uniform_index(rng, i + 1)]);
    Eigen::MatrixXd zp(n, 6);
    std::vector<std::string> lp(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      zp.row(i) = z.row(perm[i]);
      lp[i] = labels[perm[i]];
    }
    double a = 0, b = 0;
    try {
      a = supcon_loss(z, labels, 0.1);
      b = supcon_loss(zp, lp, 0.1);
    } catch (const Error&) {
      continue;
    }
    CHECK(std::abs(a - b) < 1e-10);
  }
}

// Input-level gradients of each loss against central differences.
TEST_CASE("loss gradients match finite differences") {
  Rng rng(41);
  SUBCASE("distill w.r.t. student and alignment") {
    const Eigen::VectorXd t = random_matrix(rng, 7, 1);
    const Eigen::Index sd = 4;
    std::vector<double> params(sd + sd * 7);
    for (auto& x : params) x = standard_normal(rng);
    ObjectiveFn fn = [&](std::span<const double> p, std::span<double> g) {
      Eigen::VectorXd s = Eigen::Map<const Eigen::VectorXd>(p.data(), sd);
      Eigen::MatrixXd a = Eigen::Map<const Eigen::MatrixXd>(p.data() + sd, sd, 7);
      auto r = distill_loss_grad(s, t, &a);
      if (!g.empty()) {
        std::copy(r.d_student.data(), r.d_student.data() + sd, g.data());
        std::copy(r.d_alignment.data(), r.d_alignment.data() + r.d_alignment.size(), g.data() + sd);
      }
      return r.loss;
    };
    CHECK(finite_difference_check(fn, params, 1e-5) <= 1e-6);
  }
  SUBCASE("orthogonality penalty, wide and tall") {
    for (auto [r, c] : {std::pair{3, 5}, std::pair{5, 3}}) {
      std::vector<double> params(static_cast<std::size_t>(r * c));
      for (auto& x : params) x = standard_normal(rng);
      ObjectiveFn fn = [&, r = r, c = c](std::span<const double> p, std::span<double> g) {
        Eigen::MatrixXd a = Eigen::Map<const Eigen::MatrixXd>(p.data(), r, c);
        if (!g.empty()) {
          Eigen::MatrixXd d = orthogonality_penalty_grad(a);
          std::copy(d.data(), d.data() + d.size(), g.data());
        }
        return orthogonality_penalty(a);
      };
      CHECK(finite_difference_check(fn, params, 1e-5) <= 1e-6);
    }
  }
  SUBCASE("infonce w.r.t. anchors and positives") {
    const Eigen::Index n = 4, d = 5;
    std::vector<double> params(2 * n * d);
    for (auto& x : params) x = 0.4 * standard_normal(rng);
    ObjectiveFn fn = [&](std::span<const double> p, std::span<double> g) {
      Eigen::MatrixXd a = Eigen::Map<const Eigen::MatrixXd>(p.data(), n, d);
      Eigen::MatrixXd q = Eigen::Map<const Eigen::MatrixXd>(p.data() + n * d, n, d);
      auto r = infonce_loss_grad(a, q, 0.5);
      if (!g.empty()) {
        std::copy(r.d_first.data(), r.d_first.data() + n * d, g.data());
        std::copy(r.d_second.data(), r.d_second.data() + n * d, g.data() + n * d);
      }
      return r.loss;
    };
    CHECK(finite_difference_check(fn, params, 1e-5) <= 1e-6);
  }
  SUBCASE("supcon w.r.t. embeddings") {
    const Eigen::Index n = 6, d = 4;
    std::vector<std::string> labels = {"a", "b", "a", "c", "b", "a"};
    std::vector<double> params(n * d);
    for (auto& x : params) x = 0.4 * standard_normal(rng);
    ObjectiveFn fn = [&](std::span<const double> p, std::span<double> g) {
      Eigen::MatrixXd z = Eigen::Map<const Eigen::MatrixXd>(p.data(), n, d);
      auto r = supcon_loss_grad(z, labels, 0.5);
      if (!g.empty()) std::copy(r.d_first.data(), r.d_first.data() + n * d, g.data());
      return r.loss;
    };
    CHECK(finite_difference_check(fn, params, 1e-5) <= 1e-6);
  }
}
