#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <span>

namespace mlkrig {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

/// Locations are stored one point per row (N x d_loc).
using ConstMatrixRef = Eigen::Ref<const Matrix>;
using ConstVectorRef = Eigen::Ref<const Vector>;

/// Matérn covariance sigma2 * phi(r; nu, rho). phi(0) = 1.
struct CovarianceModel {
  double nu = 1.25;
  double rho = 1.0;
  double sigma2 = 1.0;

  /// Throws ParameterError unless all three parameters are finite and positive.
  void validate() const;
  CovarianceModel correlation() const { return {nu, rho, 1.0}; }
};

double matern(double r, const CovarianceModel& model);

namespace detail {
/// Evaluates through K_nu even when a half-integer closed form exists.
double matern_bessel(double r, const CovarianceModel& model);
/// Closed form for nu = n + 1/2; caller guarantees half-integer nu.
double matern_half_integer(double r, const CovarianceModel& model);
bool is_half_integer(double nu);
}  // namespace detail

/// Dense C with C_ij = matern(|x_i - x_j|). Throws DegenerateInputError on duplicate points.
Matrix assemble_covariance(ConstMatrixRef locations, const CovarianceModel& model);

Vector cross_covariance(ConstMatrixRef locations, ConstVectorRef x0, const CovarianceModel& model);

/// C(theta) v by streaming row blocks; C is never stored.
Vector cov_matvec(ConstMatrixRef locations, const CovarianceModel& model, ConstVectorRef v,
                  Index block_rows = 256);

/// Covariance operator for repeated products. C is cached densely when
/// N^2 doubles fit in the memory budget, otherwise rows are recomputed per
/// product. Row blocks are independent, so results do not depend on the
/// thread count.
class CovarianceOperator {
 public:
  static constexpr std::size_t default_memory_budget = std::size_t{512} << 20;

  CovarianceOperator(ConstMatrixRef locations, const CovarianceModel& model,
                     std::size_t memory_budget_bytes = default_memory_budget, Index block_rows = 256);

  Index size() const { return points_.cols(); }
  bool is_dense() const { return dense_.size() > 0; }
  const CovarianceModel& model() const { return model_; }

  Vector apply(ConstVectorRef v) const;
  double entry(Index i, Index j) const;
  /// C restricted to the given row and column index sets.
  Matrix block(std::span<const Index> rows, std::span<const Index> cols) const;
  /// Full dense C; returns the cache when present.
  Matrix dense() const;

 private:
  Matrix points_;  // d x N, one point per column
  CovarianceModel model_;
  Index block_rows_;
  Matrix dense_;
};

}  // namespace mlkrig
