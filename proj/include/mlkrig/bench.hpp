#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "mlkrig/solver.hpp"

namespace mlkrig {

/// N-sphere conditioning benchmark.
struct SphereBenchSpec {
  int d = 20;                                // ambient dimension
  std::vector<Index> sizes{1000, 2000, 4000};  // strictly increasing
  CovarianceModel theta{1.25, 10.0, 1.0};
  int degree = 2;
  double tol = 1e-3;
  std::uint64_t seed = 42;
  Index kappa_dense_limit = 4000;  // above this, kappa comes from Lanczos
  int lanczos_iterations = 100;

  void validate() const;  // throws ParameterError
  /// Trend columns over the d-1 covariates: C(d-1+w, w).
  Index trend_size() const;
};

struct ObservationSet {
  Matrix locations;  // N x (d-1): first d-1 sphere coordinates
  Vector responses;  // last coordinate
};

/// Unit-sphere points in R^d (normalized Gaussian draws); row i depends only
/// on (seed, i), so smaller sets are prefixes of larger ones.
Matrix sphere_points(Index n, int d, std::uint64_t seed);

/// One observation set per entry of spec.sizes.
std::vector<ObservationSet> generate_sphere_dataset(const SphereBenchSpec& spec);

struct BenchRow {
  Index n = 0;
  std::optional<double> kappa_c;
  std::optional<double> kappa_cw;
  int itr_c = 0;
  bool c_converged = true;
  int itr_cw = 0;
  bool cw_converged = true;
  double mb_s = 0.0;     // multilevel basis construction
  double itr_s = 0.0;    // multilevel solve
  double total_s = 0.0;  // mb_s + itr_s
  double single_solve_s = 0.0;
  double eff = 0.0;
  std::string note;
};

/// p times the cost of one single-level solve, divided by the multilevel total.
double efficiency_ratio(double single_level_cost, double multilevel_cost);
double extrapolated_single_level_cost(Index p, double one_solve_seconds);

/// Rows run sequentially. Single level: unpreconditioned CG on C z = Y.
/// Multilevel: basis build, then PCG on C_W at the same tolerance.
std::vector<BenchRow> run_conditioning_sweep(const SphereBenchSpec& spec);
BenchRow run_bench_row(const ObservationSet& data, const SphereBenchSpec& spec);

/// Columns N,kappa_C,kappa_CW,itr_C,itr_CW,MB_s,Itr_s,Total_s,Eff; "-" marks an
/// unavailable value and a trailing "+" an iteration count that hit the cap.
void write_bench_csv(std::ostream& out, const std::vector<BenchRow>& rows);
void write_bench_manifest(std::ostream& out, const SphereBenchSpec& spec, const std::vector<BenchRow>& rows);

extern const char* const kExtrapolationRule;

}  // namespace mlkrig
