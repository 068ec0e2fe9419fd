#pragma once

#include <Eigen/SparseCore>
#include <iosfwd>
#include <limits>
#include <optional>
#include <vector>

#include "mlkrig/solver.hpp"

namespace mlkrig {

using SparseSymmetric = Eigen::SparseMatrix<double>;

struct LikelihoodConfig {
  /// Distance criterion tau, in units of rho. 0 disables sparsification
  /// (the full dense C_W is used).
  double sparse_threshold = 3.0;
  double nu_lower = 0.25;
  double nu_upper = 4.0;
  /// rho bounds as multiples of the median pairwise distance.
  double rho_lower_factor = 1e-3;
  double rho_upper_factor = 1e3;
  double nu_init = 1.0;
  std::optional<double> rho_init;  // default: the median pairwise distance
  int max_evals = 200;
  Index dense_fallback_N = 2000;   // factor C~_W densely when N - p is at most this
  bool profile_sigma2 = true;      // false keeps sigma2 = 1 (unit-variance kernel)
  double x_tolerance = 1e-4;       // simplex diameter in log-parameter space
  double f_tolerance = 1e-9;
  std::size_t memory_budget = CovarianceOperator::default_memory_budget;

  void validate() const;
};

/// Entry (i, j) of W C W^T is kept iff the bounding boxes of the supports of
/// rows i and j lie within tau * rho of each other; the diagonal is always
/// kept. tau = +infinity keeps everything.
SparseSymmetric sparsify_CW(const MultilevelBasis& basis, const CovarianceOperator& cov, double tau);
SparseSymmetric sparsify_CW(const MultilevelBasis& basis, ConstMatrixRef locations, const CovarianceModel& model,
                            double tau);

struct LikelihoodTerms {
  double loglik = -std::numeric_limits<double>::infinity();
  double log_det = 0.0;    // log det C~_W
  double quadratic = 0.0;  // Y_W^T C~_W^{-1} Y_W
  Index dimension = 0;     // N - p
};

/// -(n/2) log(2 pi) - 1/2 log det C~_W - 1/2 Y_W^T C~_W^{-1} Y_W with n = N - p,
/// from one Cholesky factorization. Throws NotPositiveDefiniteError if the
/// factorization fails.
double loglik_W(ConstVectorRef y_w, const MultilevelBasis& basis, ConstMatrixRef locations,
                const CovarianceModel& model, const LikelihoodConfig& config);
LikelihoodTerms loglik_W_terms(ConstVectorRef y_w, const MultilevelBasis& basis, const CovarianceOperator& cov,
                               const LikelihoodConfig& config);

struct ProfiledLikelihood {
  double loglik = -std::numeric_limits<double>::infinity();
  double sigma2 = 1.0;
  bool feasible = false;
};

/// The likelihood maximized over sigma2 in closed form (sigma2 = q / n) when
/// config.profile_sigma2, else evaluated at sigma2 = 1. Never throws for a
/// non-positive-definite C~_W; feasible is false instead.
ProfiledLikelihood profiled_loglik_W(ConstVectorRef y_w, const MultilevelBasis& basis, ConstMatrixRef locations,
                                     double nu, double rho, const LikelihoodConfig& config);

struct ThetaTraceEntry {
  int eval = 0;
  double nu = 0.0;
  double rho = 0.0;
  double sigma2 = 0.0;
  double loglik = 0.0;
  double wall_time = 0.0;
  bool feasible = false;
};

struct ThetaFit {
  CovarianceModel model;
  double loglik = 0.0;
  std::vector<ThetaTraceEntry> trace;
};

/// Bounded Nelder-Mead over (log nu, log rho). Throws EstimationFailedError
/// when no evaluated point is feasible.
ThetaFit fit_theta(ConstMatrixRef locations, ConstVectorRef responses, const MultilevelBasis& basis,
                   const LikelihoodConfig& config = {});

/// Median of pairwise distances over at most `max_points` evenly strided points.
double median_pairwise_distance(ConstMatrixRef locations, Index max_points = 1000);

/// CSV with header eval,nu,rho,sigma2,loglik,wall_time.
void write_trace_csv(std::ostream& out, const std::vector<ThetaTraceEntry>& trace);

}  // namespace mlkrig
