#pragma once

#include <optional>

#include "mlkrig/solver.hpp"

namespace mlkrig {

struct Prediction {
  double y_hat = 0.0;
  std::optional<double> mse;  // present only when requested and available
  Vector x0;
};

/// k(x0)^T beta + c(x0)^T gamma. O(N) per point, no new solve.
Prediction predict(const FittedModel& model, ConstVectorRef x0);
Vector predict_batch(const FittedModel& model, ConstMatrixRef points);

/// Kriging variance in the dense regime. Holds the Cholesky factor of C and
/// of X^T C^{-1} X so many targets can share one factorization.
class KrigingVariance {
 public:
  /// Throws NotPositiveDefiniteError if C cannot be factored.
  explicit KrigingVariance(const FittedModel& model);

  /// sigma2 [1 + u^T (X^T C^-1 X)^-1 u - c^T C^-1 c] with u = X^T C^-1 c - k(x0),
  /// written here with the scaled kernel so sigma2 is already inside c and C.
  double mse(ConstVectorRef x0) const;

  /// Kriging weights lambda with y_hat = lambda^T Y and X^T lambda = k(x0).
  Vector weights(ConstVectorRef x0) const;

 private:
  const FittedModel* model_;
  Matrix x_;
  Eigen::LLT<Matrix> c_factor_;
  Matrix c_inv_x_;
  Eigen::LLT<Matrix> g_factor_;  // X^T C^-1 X
};

/// Dense-regime MSE; nullopt when N exceeds dense_limit.
std::optional<double> predict_mse(const FittedModel& model, ConstVectorRef x0, Index dense_limit = 2000);

}  // namespace mlkrig
