#include "mlkrig/solver.hpp"

#include <Eigen/Eigenvalues>
#include <chrono>
#include <cmath>
#include <json.hpp>
#include <sstream>

#include "mlkrig/random.hpp"

namespace mlkrig {

std::string SolveReport::to_json() const {
  nlohmann::json j;
  j["iterations"] = iterations;
  j["final_relative_residual"] = final_relative_residual;
  j["preconditioned"] = preconditioned;
  j["matvec_count"] = matvec_count;
  j["wall_time"] = wall_time;
  j["kappa_estimate"] = kappa_estimate ? nlohmann::json(*kappa_estimate) : nlohmann::json(nullptr);
  return j.dump();
}

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

// Extreme eigenvalue ratio of the Lanczos tridiagonal implied by CG steps.
std::optional<double> cg_lanczos_kappa(const std::vector<double>& alpha, const std::vector<double>& beta) {
  const auto k = static_cast<Index>(alpha.size());
  if (k == 0) return std::nullopt;
  Vector diag(k);
  Vector off(std::max<Index>(k - 1, 0));
  for (Index j = 0; j < k; ++j) {
    diag(j) = 1.0 / alpha[static_cast<std::size_t>(j)];
    if (j > 0) diag(j) += beta[static_cast<std::size_t>(j - 1)] / alpha[static_cast<std::size_t>(j - 1)];
    if (j + 1 < k) off(j) = std::sqrt(beta[static_cast<std::size_t>(j)]) / alpha[static_cast<std::size_t>(j)];
  }
  Eigen::SelfAdjointEigenSolver<Matrix> eig;
  eig.computeFromTridiagonal(diag, off, Eigen::EigenvaluesOnly);
  const double lo = eig.eigenvalues().minCoeff();
  const double hi = eig.eigenvalues().maxCoeff();
  if (!(lo > 0.0)) return std::nullopt;
  return hi / lo;
}

}  // namespace

CgResult conjugate_gradient(const LinearOperator& a, const Vector& b, const std::function<Vector()>& diagonal,
                            const CgOptions& options) {
  if (!(options.tol > 0.0 && options.tol < 1.0)) throw ParameterError("conjugate_gradient: tol must lie in (0, 1)");
  const auto start = Clock::now();
  const Index n = b.size();
  const int max_iter = options.max_iter > 0
                           ? options.max_iter
                           : std::max(50, static_cast<int>(std::ceil(10.0 * std::sqrt(static_cast<double>(n)))));

  CgResult result;
  SolveReport& report = result.report;
  Vector& x = result.x;
  x = Vector::Zero(n);
  const double b_norm = b.norm();
  report.residual_history.push_back(b_norm > 0.0 ? 1.0 : 0.0);
  report.objective_history.push_back(0.0);
  if (n == 0 || b_norm == 0.0) {
    report.wall_time = seconds_since(start);
    return result;
  }

  Vector inv_diag;
  auto enable_preconditioner = [&] {
    const Vector d = diagonal();
    if ((d.array() <= 0.0).any()) throw NotPositiveDefiniteError("preconditioner has a nonpositive diagonal entry");
    inv_diag = d.cwiseInverse();
    report.preconditioned = true;
  };
  if (options.preconditioning == Preconditioning::always) enable_preconditioner();
  bool probed = options.preconditioning != Preconditioning::automatic;

  Vector r = b;
  Vector z = report.preconditioned ? Vector(r.cwiseProduct(inv_diag)) : r;
  Vector p = z;
  double rz = r.dot(z);
  std::vector<double> alphas;
  std::vector<double> betas;

  while (true) {
    const Vector ap = a(p);
    ++report.matvec_count;
    const double curvature = p.dot(ap);
    if (!(curvature > 0.0)) {
      std::ostringstream os;
      os << "conjugate_gradient: nonpositive curvature " << curvature << " at iteration " << report.iterations
         << "; operator is not positive definite";
      throw NotPositiveDefiniteError(os.str());
    }
    const double alpha = rz / curvature;
    x.noalias() += alpha * p;
    r.noalias() -= alpha * ap;
    ++report.iterations;
    const double rel = r.norm() / b_norm;
    report.residual_history.push_back(rel);
    report.objective_history.push_back(-x.dot(b + r));
    report.final_relative_residual = rel;
    if (rel <= options.tol) break;
    if (report.iterations >= max_iter) {
      report.wall_time = seconds_since(start);
      std::ostringstream os;
      os << "conjugate_gradient: no convergence after " << report.iterations << " iterations (relative residual "
         << rel << ", tol " << options.tol << ")";
      throw NonConvergenceError(os.str(), report);
    }
    if (report.preconditioned) z = r.cwiseProduct(inv_diag);
    else z = r;
    const double rz_next = r.dot(z);
    const double beta = rz_next / rz;
    rz = rz_next;
    p = z + beta * p;

    if (!probed) {
      alphas.push_back(alpha);
      betas.push_back(beta);
      if (static_cast<int>(alphas.size()) >= options.kappa_probe_iterations) {
        probed = true;
        report.kappa_estimate = cg_lanczos_kappa(alphas, betas);
        if (!report.kappa_estimate || *report.kappa_estimate >= options.skip_kappa) {
          enable_preconditioner();
          z = r.cwiseProduct(inv_diag);
          p = z;
          rz = r.dot(z);
        }
      }
    }
  }

  report.wall_time = seconds_since(start);
  return result;
}

Vector multilevel_matvec(const MultilevelBasis& basis, const CovarianceOperator& cov, ConstVectorRef u) {
  if (u.size() != basis.detail_size()) throw ShapeError("multilevel_matvec: vector length must equal N - p");
  if (cov.size() != basis.size()) throw ShapeError("multilevel_matvec: covariance and basis sizes differ");
  const Vector single_level = basis.apply_Wt(u);
  const Vector product = cov.apply(single_level);
  return basis.apply_W(product);
}

Vector multilevel_matvec(const MultilevelBasis& basis, ConstMatrixRef locations, const CovarianceModel& model,
                         ConstVectorRef u) {
  const CovarianceOperator cov(locations, model);
  return multilevel_matvec(basis, cov, u);
}

Vector build_preconditioner(const MultilevelBasis& basis, const CovarianceOperator& cov) {
  if (cov.size() != basis.size()) throw ShapeError("build_preconditioner: covariance and basis sizes differ");
  Vector diag(basis.detail_size());
  const auto& perm = basis.tree().permutation();
  for (const auto& block : basis.blocks()) {
    const std::span<const Index> support(perm.data() + block.begin, static_cast<std::size_t>(block.end - block.begin));
    const Matrix local = cov.block(support, support);
    const Matrix projected = block.rows * local;
    diag.segment(block.row_offset, block.row_count()) = projected.cwiseProduct(block.rows).rowwise().sum();
  }
  for (Index i = 0; i < diag.size(); ++i) {
    if (!(diag(i) > 0.0)) {
      std::ostringstream os;
      os << "build_preconditioner: diagonal entry " << i << " of C_W is " << diag(i)
         << "; covariance is not positive definite for this theta";
      throw NotPositiveDefiniteError(os.str());
    }
  }
  return diag;
}

Vector build_preconditioner(const MultilevelBasis& basis, ConstMatrixRef locations, const CovarianceModel& model) {
  const CovarianceOperator cov(locations, model);
  return build_preconditioner(basis, cov);
}

Matrix dense_transformed_covariance(const MultilevelBasis& basis, const Matrix& c) {
  const Matrix wc = basis.apply_W_cols(c);                    // (N-p) x N
  const Matrix wcw = basis.apply_W_cols(Matrix(wc.transpose()));  // (N-p) x (N-p)
  return 0.5 * (wcw + wcw.transpose());
}

std::pair<FittedModel, SolveReport> solve_blup(ConstMatrixRef locations, ConstVectorRef responses,
                                               const TrendBasis& trend,
                                               std::shared_ptr<const MultilevelBasis> basis,
                                               const CovarianceModel& model, const SolverOptions& options) {
  model.validate();
  if (!basis) throw ParameterError("solve_blup: basis is required");
  const Index n = locations.rows();
  if (responses.size() != n) throw ShapeError("solve_blup: responses must have one entry per location");
  if (basis->size() != n) throw ShapeError("solve_blup: basis was built for a different number of points");
  if (trend.dimension() != locations.cols()) throw ShapeError("solve_blup: trend dimension mismatch");
  if (trend.size() != basis->trend_size()) throw ShapeError("solve_blup: trend size differs from basis p");

  const auto start = Clock::now();
  const Matrix x = build_design_matrix(trend, locations);
  const CovarianceOperator cov(locations, model, options.memory_budget);

  const Vector y_w = basis->apply_W(responses);
  const LinearOperator c_w = [&](const Vector& u) { return multilevel_matvec(*basis, cov, u); };
  const auto diagonal = [&] { return build_preconditioner(*basis, cov); };
  CgResult cg = conjugate_gradient(c_w, y_w, diagonal, options.cg);

  FittedModel fit;
  fit.theta = model;
  fit.gamma_W = std::move(cg.x);
  fit.gamma = basis->apply_Wt(fit.gamma_W);
  const Vector trend_residual = responses - cov.apply(fit.gamma);
  ++cg.report.matvec_count;
  fit.beta = x.householderQr().solve(trend_residual);
  fit.basis = std::move(basis);
  fit.trend = trend;
  fit.locations = locations;
  fit.responses = responses;
  cg.report.wall_time = seconds_since(start);
  return {std::move(fit), std::move(cg.report)};
}

std::optional<double> condition_number_dense(const Matrix& a) {
  if (a.rows() == 0) return std::nullopt;
  const Matrix sym = 0.5 * (a + a.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> eig(sym, Eigen::EigenvaluesOnly);
  if (eig.info() != Eigen::Success) return std::nullopt;
  const double lo = eig.eigenvalues().minCoeff();
  const double hi = eig.eigenvalues().maxCoeff();
  if (!(lo > 0.0)) return std::nullopt;
  return hi / lo;
}

std::optional<double> estimate_condition_number(const LinearOperator& op, Index dim, const ConditionOptions& options) {
  if (dim <= 0) return std::nullopt;
  if (dim <= options.dense_limit) {
    Matrix a(dim, dim);
    for (Index j = 0; j < dim; ++j) a.col(j) = op(Vector::Unit(dim, j));
    return condition_number_dense(a);
  }

  // Lanczos with full reorthogonalization from a seeded random start.
  const int steps = static_cast<int>(std::min<Index>(options.lanczos_iterations, dim));
  CounterRng rng(options.seed);
  Matrix q(dim, steps + 1);
  Vector start(dim);
  for (Index i = 0; i < dim; ++i) start(i) = rng.normal();
  q.col(0) = start.normalized();
  Vector alpha(steps);
  Vector beta(steps);
  int used = 0;
  for (int j = 0; j < steps; ++j) {
    Vector w = op(q.col(j));
    alpha(j) = q.col(j).dot(w);
    w -= alpha(j) * q.col(j);
    if (j > 0) w -= beta(j - 1) * q.col(j - 1);
    for (int pass = 0; pass < 2; ++pass) w -= q.leftCols(j + 1) * (q.leftCols(j + 1).transpose() * w);
    beta(j) = w.norm();
    used = j + 1;
    if (beta(j) <= 1e-14 * std::abs(alpha(j))) {
      if (used < steps) return std::nullopt;  // breakdown
      break;
    }
    q.col(j + 1) = w / beta(j);
  }
  Eigen::SelfAdjointEigenSolver<Matrix> eig;
  eig.computeFromTridiagonal(alpha.head(used), beta.head(std::max(used - 1, 0)), Eigen::EigenvaluesOnly);
  const double lo = eig.eigenvalues().minCoeff();
  const double hi = eig.eigenvalues().maxCoeff();
  if (!(lo > 0.0)) return std::nullopt;
  return hi / lo;
}

}  // namespace mlkrig
