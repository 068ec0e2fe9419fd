#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mlkrig/errors.hpp"
#include "mlkrig/mlbasis.hpp"

namespace mlkrig {

/// Outcome of one (preconditioned) conjugate gradient solve.
struct SolveReport {
  int iterations = 0;
  double final_relative_residual = 0.0;  // ||b - A x|| / ||b||, unpreconditioned
  bool preconditioned = false;
  int matvec_count = 0;
  double wall_time = 0.0;  // seconds
  /// Condition estimate from the CG Lanczos coefficients, when one was taken.
  std::optional<double> kappa_estimate;
  std::vector<double> residual_history;  // relative residual after each iteration, entry 0 = start
  /// x^T A x - 2 b^T x after each iteration; CG decreases it monotonically.
  std::vector<double> objective_history;

  std::string to_json() const;
};

class NonConvergenceError : public Error {
 public:
  NonConvergenceError(const std::string& what, SolveReport report)
      : Error(ErrorKind::numerical, what), report_(std::move(report)) {}
  const SolveReport& report() const { return report_; }

 private:
  SolveReport report_;
};

using LinearOperator = std::function<Vector(const Vector&)>;

enum class Preconditioning {
  automatic,  // diagonal scaling only if the operator looks ill conditioned
  always,
  never,
};

struct CgOptions {
  double tol = 1e-3;
  int max_iter = 0;  // 0 selects 10 sqrt(N) (at least 50)
  Preconditioning preconditioning = Preconditioning::automatic;
  double skip_kappa = 50.0;       // automatic mode: precondition iff estimate >= this
  int kappa_probe_iterations = 10;
};

struct CgResult {
  Vector x;
  SolveReport report;
};

/// Conjugate gradients on A x = b starting from zero. `diagonal` supplies the
/// Jacobi preconditioner on demand (it is only evaluated if used). In
/// automatic mode the iteration starts unpreconditioned, estimates kappa(A)
/// from the Lanczos tridiagonal implied by the CG coefficients after
/// `kappa_probe_iterations` steps and, if the estimate reaches `skip_kappa`,
/// restarts from the current iterate with the preconditioner.
CgResult conjugate_gradient(const LinearOperator& a, const Vector& b, const std::function<Vector()>& diagonal,
                            const CgOptions& options);

struct SolverOptions {
  CgOptions cg;
  std::size_t memory_budget = CovarianceOperator::default_memory_budget;
};

/// The solved BLUP system: everything needed to predict at new points.
struct FittedModel {
  CovarianceModel theta;
  Vector beta;     // trend coefficients, length p
  Vector gamma;    // length N, gamma = W^T gamma_W
  Vector gamma_W;  // length N - p
  std::shared_ptr<const MultilevelBasis> basis;
  TrendBasis trend;
  Matrix locations;
  Vector responses;
};

/// W C W^T u via W^T, the covariance product, then W.
Vector multilevel_matvec(const MultilevelBasis& basis, const CovarianceOperator& cov, ConstVectorRef u);
Vector multilevel_matvec(const MultilevelBasis& basis, ConstMatrixRef locations, const CovarianceModel& model,
                         ConstVectorRef u);

/// diag(W C W^T), entry i computed as w_i^T C w_i over the support of row i.
/// Throws NotPositiveDefiniteError on a nonpositive entry.
Vector build_preconditioner(const MultilevelBasis& basis, const CovarianceOperator& cov);
Vector build_preconditioner(const MultilevelBasis& basis, ConstMatrixRef locations, const CovarianceModel& model);

/// Dense W C W^T from a dense C.
Matrix dense_transformed_covariance(const MultilevelBasis& basis, const Matrix& c);

/// Solves C_W gamma_W = W Y by CG, then gamma = W^T gamma_W and
/// beta = argmin ||X beta - (Y - C gamma)|| by Householder QR of X.
/// Throws NonConvergenceError or NotPositiveDefiniteError.
std::pair<FittedModel, SolveReport> solve_blup(ConstMatrixRef locations, ConstVectorRef responses,
                                               const TrendBasis& trend,
                                               std::shared_ptr<const MultilevelBasis> basis,
                                               const CovarianceModel& model, const SolverOptions& options = {});

struct ConditionOptions {
  int lanczos_iterations = 50;
  Index dense_limit = 2000;
  std::uint64_t seed = 0x5eed;
};

/// kappa = lambda_max / lambda_min of a symmetric positive definite operator.
/// Exact (dense eigenvalues) for dim <= dense_limit, Lanczos otherwise.
/// Returns nullopt on breakdown or a nonpositive eigenvalue estimate.
std::optional<double> estimate_condition_number(const LinearOperator& op, Index dim,
                                                const ConditionOptions& options = {});
std::optional<double> condition_number_dense(const Matrix& a);

}  // namespace mlkrig
