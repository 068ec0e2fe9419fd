#pragma once

// Shared fixtures and dense reference computations for the tests. The
// references use only Eigen dense factorizations of the original (untransformed)
// problem, so they are independent of the multilevel code paths.

#include <Eigen/Dense>
#include <cmath>
#include <memory>

#include "mlkrig/mlbasis.hpp"
#include "mlkrig/random.hpp"
#include "mlkrig/solver.hpp"

namespace mlkrig::test {

inline Matrix uniform_points(Index n, Index d, std::uint64_t seed) {
  CounterRng rng(seed, 11);
  Matrix x(n, d);
  for (Index i = 0; i < n; ++i)
    for (Index k = 0; k < d; ++k) x(i, k) = rng.uniform();
  return x;
}

inline Vector normals(Index n, std::uint64_t seed, std::uint64_t stream = 12) {
  CounterRng rng(seed, stream);
  Vector v(n);
  for (Index i = 0; i < n; ++i) v(i) = rng.normal();
  return v;
}

inline double rel_err(const Vector& a, const Vector& b) {
  const double scale = std::max(b.norm(), 1e-300);
  return (a - b).norm() / scale;
}

/// A random GP problem with a polynomial trend.
struct Instance {
  Matrix locations;
  Vector responses;
  TrendBasis trend;
  Matrix x;
  Matrix c;
  CovarianceModel model;
  std::shared_ptr<const MultilevelBasis> basis;
};

inline Instance make_instance(Index n, Index d, int w, const CovarianceModel& model, std::uint64_t seed,
                              Index leaf_min = 0) {
  Instance in;
  in.model = model;
  in.locations = uniform_points(n, d, seed);
  in.trend = TrendBasis::fitted(in.locations, w);
  in.x = build_design_matrix(in.trend, in.locations);
  in.c = assemble_covariance(in.locations, model);
  const Eigen::LLT<Matrix> llt(in.c);
  const Vector beta = normals(in.trend.size(), seed, 13);
  in.responses = in.x * beta + Matrix(llt.matrixL()) * normals(n, seed, 14);
  const Index lm = leaf_min > 0 ? leaf_min : default_leaf_min(in.trend.size());
  in.basis = std::make_shared<const MultilevelBasis>(build_multilevel_basis(in.x, build_kdtree(in.locations, lm)));
  return in;
}

/// Solution of the bordered system [C X; X^T 0] [gamma; beta] = [Y; 0].
struct KktSolution {
  Vector gamma;
  Vector beta;
};

inline KktSolution dense_kkt(const Matrix& c, const Matrix& x, const Vector& y) {
  const Index n = c.rows();
  const Index p = x.cols();
  Matrix k = Matrix::Zero(n + p, n + p);
  k.topLeftCorner(n, n) = c;
  k.topRightCorner(n, p) = x;
  k.bottomLeftCorner(p, n) = x.transpose();
  Vector rhs = Vector::Zero(n + p);
  rhs.head(n) = y;
  const Vector sol = k.fullPivLu().solve(rhs);
  return {sol.head(n), sol.tail(p)};
}

inline double dense_predict(const Instance& in, const KktSolution& s, const Vector& x0) {
  return in.trend.eval(x0).dot(s.beta) + cross_covariance(in.locations, x0, in.model).dot(s.gamma);
}

/// Universal kriging variance from the bordered system:
/// [C X; X^T 0][lambda; mu] = [c0; k0], mse = sigma2 - 2 lambda^T c0 + lambda^T C lambda.
inline double bordered_mse(const Instance& in, const Vector& x0) {
  const Index n = in.c.rows();
  const Index p = in.x.cols();
  Matrix k = Matrix::Zero(n + p, n + p);
  k.topLeftCorner(n, n) = in.c;
  k.topRightCorner(n, p) = in.x;
  k.bottomLeftCorner(p, n) = in.x.transpose();
  Vector rhs(n + p);
  const Vector c0 = cross_covariance(in.locations, x0, in.model);
  rhs.head(n) = c0;
  rhs.tail(p) = in.trend.eval(x0);
  const Vector lambda = k.fullPivLu().solve(rhs).head(n);
  return in.model.sigma2 - 2.0 * lambda.dot(c0) + lambda.dot(in.c * lambda);
}

/// Gaussian log density of W Y under W C W^T, with W any dense
/// orthonormal complement of span(X).
inline double dense_loglik_W(const Matrix& x, const Matrix& c, const Vector& y) {
  const Matrix w = dense_orthogonal_complement(x);
  const Matrix cw = w * c * w.transpose();
  const Vector yw = w * y;
  const Eigen::SelfAdjointEigenSolver<Matrix> eig(0.5 * (cw + cw.transpose()));
  const double log_det = eig.eigenvalues().array().log().sum();
  const Vector coeff = eig.eigenvectors().transpose() * yw;
  const double quad = (coeff.array().square() / eig.eigenvalues().array()).sum();
  const auto n = static_cast<double>(cw.rows());
  return -0.5 * n * std::log(2.0 * M_PI) - 0.5 * log_det - 0.5 * quad;
}

}  // namespace mlkrig::test
