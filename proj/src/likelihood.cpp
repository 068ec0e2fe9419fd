#include "mlkrig/likelihood.hpp"

#include <Eigen/Cholesky>
#include <Eigen/SparseCholesky>
#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <numbers>
#include <ostream>
#include <sstream>

namespace mlkrig {

void LikelihoodConfig::validate() const {
  if (!(sparse_threshold >= 0.0)) throw ParameterError("likelihood: sparse threshold must be nonnegative");
  if (!(std::isfinite(nu_lower) && std::isfinite(nu_upper) && 0.0 < nu_lower && nu_lower < nu_upper))
    throw ParameterError("likelihood: nu bounds must satisfy 0 < lower < upper");
  if (!(std::isfinite(rho_lower_factor) && std::isfinite(rho_upper_factor) && 0.0 < rho_lower_factor &&
        rho_lower_factor < rho_upper_factor))
    throw ParameterError("likelihood: rho bounds must satisfy 0 < lower < upper");
  if (max_evals < 1) throw ParameterError("likelihood: max_evals must be positive");
}

namespace {

double box_distance(const KdNode& a, const KdNode& b) {
  const Vector gap = (b.box_lo - a.box_hi).cwiseMax(a.box_lo - b.box_hi).cwiseMax(0.0);
  return gap.norm();
}

double effective_tau(const LikelihoodConfig& config) {
  return config.sparse_threshold == 0.0 ? std::numeric_limits<double>::infinity() : config.sparse_threshold;
}

// Zeroes the entries of a dense C_W whose row supports are farther apart than the cutoff.
void mask_far_blocks(Matrix& c_w, const MultilevelBasis& basis, double cutoff) {
  const auto& blocks = basis.blocks();
  for (std::size_t a = 0; a < blocks.size(); ++a) {
    for (std::size_t b = a + 1; b < blocks.size(); ++b) {
      if (box_distance(basis.support_node(blocks[a]), basis.support_node(blocks[b])) <= cutoff) continue;
      const DetailBlock& ba = blocks[a];
      const DetailBlock& bb = blocks[b];
      c_w.block(ba.row_offset, bb.row_offset, ba.row_count(), bb.row_count()).setZero();
      c_w.block(bb.row_offset, ba.row_offset, bb.row_count(), ba.row_count()).setZero();
    }
  }
}

}  // namespace

SparseSymmetric sparsify_CW(const MultilevelBasis& basis, const CovarianceOperator& cov, double tau) {
  if (!(tau >= 0.0)) throw ParameterError("sparsify_CW: tau must be nonnegative");
  if (cov.size() != basis.size()) throw ShapeError("sparsify_CW: covariance and basis sizes differ");
  const double cutoff = tau * cov.model().rho;
  const auto& blocks = basis.blocks();
  const auto& perm = basis.tree().permutation();
  std::vector<Eigen::Triplet<double>> triplets;
  for (std::size_t a = 0; a < blocks.size(); ++a) {
    const DetailBlock& ba = blocks[a];
    const std::span<const Index> sa(perm.data() + ba.begin, static_cast<std::size_t>(ba.end - ba.begin));
    for (std::size_t b = a; b < blocks.size(); ++b) {
      const DetailBlock& bb = blocks[b];
      if (a != b && !(box_distance(basis.support_node(ba), basis.support_node(bb)) <= cutoff)) continue;
      const std::span<const Index> sb(perm.data() + bb.begin, static_cast<std::size_t>(bb.end - bb.begin));
      const Matrix entries = ba.rows * cov.block(sa, sb) * bb.rows.transpose();
      for (Index j = 0; j < entries.cols(); ++j) {
        for (Index i = 0; i < entries.rows(); ++i) {
          const Index gi = ba.row_offset + i;
          const Index gj = bb.row_offset + j;
          if (a == b) {
            if (i <= j) {
              // Symmetrize the diagonal block exactly.
              const double v = 0.5 * (entries(i, j) + entries(j, i));
              triplets.emplace_back(gi, gj, v);
              if (i != j) triplets.emplace_back(gj, gi, v);
            }
          } else {
            triplets.emplace_back(gi, gj, entries(i, j));
            triplets.emplace_back(gj, gi, entries(i, j));
          }
        }
      }
    }
  }
  SparseSymmetric m(basis.detail_size(), basis.detail_size());
  m.setFromTriplets(triplets.begin(), triplets.end());
  return m;
}

SparseSymmetric sparsify_CW(const MultilevelBasis& basis, ConstMatrixRef locations, const CovarianceModel& model,
                            double tau) {
  const CovarianceOperator cov(locations, model);
  return sparsify_CW(basis, cov, tau);
}

LikelihoodTerms loglik_W_terms(ConstVectorRef y_w, const MultilevelBasis& basis, const CovarianceOperator& cov,
                               const LikelihoodConfig& config) {
  const Index n = basis.detail_size();
  if (y_w.size() != n) throw ShapeError("loglik_W: Y_W must have length N - p");
  LikelihoodTerms terms;
  terms.dimension = n;
  if (n == 0) {
    terms.loglik = 0.0;
    return terms;
  }
  const double tau = effective_tau(config);

  auto fail = [&] {
    std::ostringstream os;
    os << "loglik_W: C~_W is not positive definite at nu=" << cov.model().nu << ", rho=" << cov.model().rho;
    throw NotPositiveDefiniteError(os.str());
  };

  if (n <= config.dense_fallback_N) {
    Matrix c_w = dense_transformed_covariance(basis, cov.dense());
    if (!std::isinf(tau)) mask_far_blocks(c_w, basis, tau * cov.model().rho);
    Eigen::LLT<Matrix> llt(c_w);
    if (llt.info() != Eigen::Success) fail();
    const Matrix& l = llt.matrixLLT();
    terms.log_det = 2.0 * l.diagonal().array().log().sum();
    if (!std::isfinite(terms.log_det)) fail();
    terms.quadratic = y_w.dot(llt.solve(y_w));
  } else {
    const SparseSymmetric c_w = sparsify_CW(basis, cov, tau);
    Eigen::SimplicialLLT<SparseSymmetric> llt(c_w);
    if (llt.info() != Eigen::Success) fail();
    const Vector d = llt.matrixL().nestedExpression().diagonal();
    terms.log_det = 2.0 * d.array().log().sum();
    if (!std::isfinite(terms.log_det)) fail();
    terms.quadratic = y_w.dot(llt.solve(Vector(y_w)));
  }
  terms.loglik = -0.5 * static_cast<double>(n) * std::log(2.0 * std::numbers::pi) - 0.5 * terms.log_det -
                 0.5 * terms.quadratic;
  return terms;
}

double loglik_W(ConstVectorRef y_w, const MultilevelBasis& basis, ConstMatrixRef locations,
                const CovarianceModel& model, const LikelihoodConfig& config) {
  config.validate();
  const CovarianceOperator cov(locations, model, config.memory_budget);
  return loglik_W_terms(y_w, basis, cov, config).loglik;
}

ProfiledLikelihood profiled_loglik_W(ConstVectorRef y_w, const MultilevelBasis& basis, ConstMatrixRef locations,
                                     double nu, double rho, const LikelihoodConfig& config) {
  ProfiledLikelihood out;
  try {
    const CovarianceOperator cov(locations, CovarianceModel{nu, rho, 1.0}, config.memory_budget);
    const LikelihoodTerms t = loglik_W_terms(y_w, basis, cov, config);
    const auto n = static_cast<double>(t.dimension);
    if (!config.profile_sigma2 || t.dimension == 0) {
      out.loglik = t.loglik;
      out.sigma2 = 1.0;
    } else {
      out.sigma2 = t.quadratic / n;
      if (!(out.sigma2 > 0.0)) return out;
      out.loglik = -0.5 * n * std::log(2.0 * std::numbers::pi) - 0.5 * t.log_det - 0.5 * n * std::log(out.sigma2) -
                   0.5 * n;
    }
    out.feasible = std::isfinite(out.loglik);
  } catch (const NotPositiveDefiniteError&) {
    out.feasible = false;
  } catch (const DegenerateInputError&) {
    out.feasible = false;
  }
  return out;
}

double median_pairwise_distance(ConstMatrixRef locations, Index max_points) {
  const Index n = locations.rows();
  if (n < 2) return 1.0;
  const Index m = std::min(n, max_points);
  std::vector<Index> picks(static_cast<std::size_t>(m));
  for (Index k = 0; k < m; ++k) picks[static_cast<std::size_t>(k)] = k * n / m;
  std::vector<double> d;
  d.reserve(static_cast<std::size_t>(m * (m - 1) / 2));
  for (Index a = 0; a < m; ++a)
    for (Index b = a + 1; b < m; ++b)
      d.push_back((locations.row(picks[static_cast<std::size_t>(a)]) - locations.row(picks[static_cast<std::size_t>(b)])).norm());
  auto mid = d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2);
  std::nth_element(d.begin(), mid, d.end());
  return *mid > 0.0 ? *mid : 1.0;
}

ThetaFit fit_theta(ConstMatrixRef locations, ConstVectorRef responses, const MultilevelBasis& basis,
                   const LikelihoodConfig& config) {
  config.validate();
  if (responses.size() != locations.rows()) throw ShapeError("fit_theta: responses must match locations");
  const auto start = std::chrono::steady_clock::now();
  const Vector y_w = basis.apply_W(responses);
  const double scale = median_pairwise_distance(locations);
  const std::array<double, 2> lo{std::log(config.nu_lower), std::log(config.rho_lower_factor * scale)};
  const std::array<double, 2> hi{std::log(config.nu_upper), std::log(config.rho_upper_factor * scale)};
  using Point = std::array<double, 2>;
  auto clamp = [&](Point x) {
    for (std::size_t k = 0; k < 2; ++k) x[k] = std::clamp(x[k], lo[k], hi[k]);
    return x;
  };

  ThetaFit fit;
  double best = -std::numeric_limits<double>::infinity();
  // Objective to minimize: -loglik, +inf when infeasible.
  auto objective = [&](const Point& x) {
    const double nu = std::exp(x[0]);
    const double rho = std::exp(x[1]);
    const ProfiledLikelihood value = profiled_loglik_W(y_w, basis, locations, nu, rho, config);
    ThetaTraceEntry entry;
    entry.eval = static_cast<int>(fit.trace.size());
    entry.nu = nu;
    entry.rho = rho;
    entry.sigma2 = value.sigma2;
    entry.loglik = value.loglik;
    entry.feasible = value.feasible;
    entry.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    fit.trace.push_back(entry);
    if (value.feasible && value.loglik > best) {
      best = value.loglik;
      fit.model = CovarianceModel{nu, rho, value.sigma2};
      fit.loglik = value.loglik;
    }
    return value.feasible ? -value.loglik : std::numeric_limits<double>::infinity();
  };
  auto budget_left = [&] { return static_cast<int>(fit.trace.size()) < config.max_evals; };

  const Point x0 = clamp({std::log(config.nu_init), std::log(config.rho_init.value_or(scale))});
  std::array<Point, 3> simplex{x0, clamp({x0[0] + 0.5, x0[1]}), clamp({x0[0], x0[1] + 0.7})};
  if (simplex[1] == x0) simplex[1] = clamp({x0[0] - 0.5, x0[1]});
  if (simplex[2] == x0) simplex[2] = clamp({x0[0], x0[1] - 0.7});
  std::array<double, 3> f{};
  for (std::size_t k = 0; k < 3 && budget_left(); ++k) f[k] = objective(simplex[k]);

  auto combine = [](const Point& a, const Point& b, double t) { return Point{a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])}; };
  while (budget_left()) {
    std::array<std::size_t, 3> idx{0, 1, 2};
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return f[a] < f[b]; });
    const Point best_pt = simplex[idx[0]];
    const Point mid_pt = simplex[idx[1]];
    const Point worst_pt = simplex[idx[2]];
    const double diameter = std::max({std::hypot(mid_pt[0] - best_pt[0], mid_pt[1] - best_pt[1]),
                                      std::hypot(worst_pt[0] - best_pt[0], worst_pt[1] - best_pt[1])});
    const double spread = std::abs(f[idx[2]] - f[idx[0]]);
    if (std::isfinite(f[idx[2]]) && diameter < config.x_tolerance &&
        spread <= config.f_tolerance * (1.0 + std::abs(f[idx[0]])))
      break;
    if (diameter < 1e-12) break;

    const Point centroid{0.5 * (best_pt[0] + mid_pt[0]), 0.5 * (best_pt[1] + mid_pt[1])};
    const Point reflected = clamp(combine(centroid, worst_pt, -1.0));
    const double fr = objective(reflected);
    if (fr < f[idx[0]]) {
      if (!budget_left()) {
        simplex[idx[2]] = reflected;
        f[idx[2]] = fr;
        break;
      }
      const Point expanded = clamp(combine(centroid, worst_pt, -2.0));
      const double fe = objective(expanded);
      if (fe < fr) {
        simplex[idx[2]] = expanded;
        f[idx[2]] = fe;
      } else {
        simplex[idx[2]] = reflected;
        f[idx[2]] = fr;
      }
    } else if (fr < f[idx[1]]) {
      simplex[idx[2]] = reflected;
      f[idx[2]] = fr;
    } else {
      if (!budget_left()) break;
      const bool outside = fr < f[idx[2]];
      const Point contracted = clamp(outside ? combine(centroid, reflected, 0.5) : combine(centroid, worst_pt, 0.5));
      const double fc = objective(contracted);
      if (fc < std::min(fr, f[idx[2]])) {
        simplex[idx[2]] = contracted;
        f[idx[2]] = fc;
      } else {
        // Shrink toward the best vertex.
        for (std::size_t k : {idx[1], idx[2]}) {
          if (!budget_left()) break;
          simplex[k] = combine(best_pt, simplex[k], 0.5);
          f[k] = objective(simplex[k]);
        }
      }
    }
  }

  if (!std::isfinite(best)) throw EstimationFailedError("fit_theta: every likelihood evaluation was infeasible");
  return fit;
}

void write_trace_csv(std::ostream& out, const std::vector<ThetaTraceEntry>& trace) {
  out << "eval,nu,rho,sigma2,loglik,wall_time\n";
  out.precision(17);
  for (const auto& e : trace)
    out << e.eval << ',' << e.nu << ',' << e.rho << ',' << e.sigma2 << ',' << e.loglik << ',' << e.wall_time << '\n';
}

}  // namespace mlkrig
