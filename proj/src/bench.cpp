#include "mlkrig/bench.hpp"

#include <chrono>
#include <cmath>
#include <iomanip>
#include <json.hpp>
#include <ostream>
#include <sstream>
#include <thread>
#include <unistd.h>

#include "mlkrig/parallel.hpp"
#include "mlkrig/random.hpp"

namespace mlkrig {

const char* const kExtrapolationRule =
    "Eff = p * (wall time of one single-level CG solve) / (MB_s + Itr_s); the p single-level solves are extrapolated, "
    "not run";

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

}  // namespace

void SphereBenchSpec::validate() const {
  if (d < 3) throw ParameterError("sphere bench: d must be at least 3");
  if (degree < 0) throw ParameterError("sphere bench: degree must be nonnegative");
  if (!(tol > 0.0 && tol < 1.0)) throw ParameterError("sphere bench: tol must lie in (0, 1)");
  if (sizes.empty()) throw ParameterError("sphere bench: no sizes given");
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    if (sizes[i] < 1) throw ParameterError("sphere bench: sizes must be positive");
    if (i > 0 && sizes[i] <= sizes[i - 1]) throw ParameterError("sphere bench: sizes must be strictly increasing");
  }
  theta.validate();
}

Index SphereBenchSpec::trend_size() const { return binomial(d - 1 + degree, degree); }

Matrix sphere_points(Index n, int d, std::uint64_t seed) {
  Matrix pts(n, d);
  for (Index i = 0; i < n; ++i) {
    CounterRng rng(seed, static_cast<std::uint64_t>(i));
    double norm = 0.0;
    do {
      for (int k = 0; k < d; ++k) pts(i, k) = rng.normal();
      norm = pts.row(i).norm();
    } while (norm == 0.0);
    pts.row(i) /= norm;
  }
  return pts;
}

std::vector<ObservationSet> generate_sphere_dataset(const SphereBenchSpec& spec) {
  spec.validate();
  const Matrix all = sphere_points(spec.sizes.back(), spec.d, spec.seed);
  std::vector<ObservationSet> out;
  for (Index n : spec.sizes) {
    ObservationSet set;
    set.locations = all.topLeftCorner(n, spec.d - 1);
    set.responses = all.col(spec.d - 1).head(n);
    out.push_back(std::move(set));
  }
  return out;
}

double efficiency_ratio(double single_level_cost, double multilevel_cost) {
  if (!(multilevel_cost > 0.0)) throw ParameterError("efficiency_ratio: multilevel cost must be positive");
  return single_level_cost / multilevel_cost;
}

double extrapolated_single_level_cost(Index p, double one_solve_seconds) {
  return static_cast<double>(p) * one_solve_seconds;
}

BenchRow run_bench_row(const ObservationSet& data, const SphereBenchSpec& spec) {
  BenchRow row;
  const Index n = data.locations.rows();
  row.n = n;
  const Index p = spec.trend_size();
  if (n < p) {
    std::ostringstream os;
    os << "sphere bench: N = " << n << " is below the trend size p = " << p;
    throw InsufficientDataError(os.str());
  }

  // Single level.
  const CovarianceOperator cov(data.locations, spec.theta);
  CgOptions single;
  single.tol = spec.tol;
  single.preconditioning = Preconditioning::never;
  single.max_iter = static_cast<int>(std::max<Index>(n, 50));
  const LinearOperator c_op = [&](const Vector& v) { return cov.apply(v); };
  try {
    const CgResult r = conjugate_gradient(c_op, data.responses, {}, single);
    row.itr_c = r.report.iterations;
    row.single_solve_s = r.report.wall_time;
  } catch (const NonConvergenceError& e) {
    row.itr_c = e.report().iterations;
    row.single_solve_s = e.report().wall_time;
    row.c_converged = false;
  }

  // Multilevel.
  const auto mb_start = Clock::now();
  const TrendBasis trend = TrendBasis::fitted(data.locations, spec.degree);
  const Matrix x = build_design_matrix(trend, data.locations);
  auto basis = std::make_shared<const MultilevelBasis>(
      build_multilevel_basis(x, build_kdtree(data.locations, default_leaf_min(p))));
  row.mb_s = seconds_since(mb_start);

  if (basis->detail_size() == 0) {
    row.note = "N = p: the multilevel system is zero-dimensional";
  } else {
    SolverOptions options;
    options.cg.tol = spec.tol;
    options.cg.max_iter = static_cast<int>(std::max<Index>(basis->detail_size(), 50));
    const auto itr_start = Clock::now();
    try {
      const CgResult r = conjugate_gradient(
          [&](const Vector& u) { return multilevel_matvec(*basis, cov, u); }, basis->apply_W(data.responses),
          [&] { return build_preconditioner(*basis, cov); }, options.cg);
      row.itr_cw = r.report.iterations;
    } catch (const NonConvergenceError& e) {
      row.itr_cw = e.report().iterations;
      row.cw_converged = false;
    }
    row.itr_s = seconds_since(itr_start);
  }
  row.total_s = row.mb_s + row.itr_s;
  if (row.total_s > 0.0)
    row.eff = efficiency_ratio(extrapolated_single_level_cost(p, row.single_solve_s), row.total_s);

  // Condition numbers.
  if (n <= spec.kappa_dense_limit) {
    const Matrix c = cov.dense();
    row.kappa_c = condition_number_dense(c);
    if (basis->detail_size() > 0) row.kappa_cw = condition_number_dense(dense_transformed_covariance(*basis, c));
  } else {
    ConditionOptions opts;
    opts.dense_limit = 0;
    opts.lanczos_iterations = spec.lanczos_iterations;
    opts.seed = spec.seed;
    row.kappa_c = estimate_condition_number(c_op, n, opts);
    if (basis->detail_size() > 0)
      row.kappa_cw = estimate_condition_number(
          [&](const Vector& u) { return multilevel_matvec(*basis, cov, u); }, basis->detail_size(), opts);
  }
  return row;
}

std::vector<BenchRow> run_conditioning_sweep(const SphereBenchSpec& spec) {
  std::vector<BenchRow> rows;
  for (const auto& set : generate_sphere_dataset(spec)) rows.push_back(run_bench_row(set, spec));
  return rows;
}

namespace {

std::string fmt_optional(const std::optional<double>& v) {
  if (!v) return "-";
  std::ostringstream os;
  os << std::setprecision(4) << *v;
  return os.str();
}

std::string fmt_seconds(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(3) << v;
  return os.str();
}

}  // namespace

void write_bench_csv(std::ostream& out, const std::vector<BenchRow>& rows) {
  out << "N,kappa_C,kappa_CW,itr_C,itr_CW,MB_s,Itr_s,Total_s,Eff\n";
  for (const auto& r : rows) {
    out << r.n << ',' << fmt_optional(r.kappa_c) << ',' << fmt_optional(r.kappa_cw) << ',' << r.itr_c
        << (r.c_converged ? "" : "+") << ',' << r.itr_cw << (r.cw_converged ? "" : "+") << ',' << fmt_seconds(r.mb_s)
        << ',' << fmt_seconds(r.itr_s) << ',' << fmt_seconds(r.total_s) << ','
        << (r.total_s > 0.0 ? fmt_seconds(r.eff) : std::string("-")) << '\n';
  }
}

void write_bench_manifest(std::ostream& out, const SphereBenchSpec& spec, const std::vector<BenchRow>& rows) {
  nlohmann::json j;
  j["spec"] = {{"d", spec.d},
               {"sizes", spec.sizes},
               {"nu", spec.theta.nu},
               {"rho", spec.theta.rho},
               {"sigma2", spec.theta.sigma2},
               {"degree", spec.degree},
               {"tol", spec.tol},
               {"kappa_dense_limit", spec.kappa_dense_limit},
               {"lanczos_iterations", spec.lanczos_iterations}};
  j["seed"] = spec.seed;
  j["trend_size_covariates"] = spec.trend_size();
  j["trend_size_ambient_label"] = binomial(spec.d + spec.degree, spec.degree);
  j["single_level"] = "unpreconditioned CG on C z = Y";
  j["multilevel"] = "CG on C_W gamma_W = W Y, Jacobi preconditioning when the probe estimate of kappa reaches 50";
  j["extrapolation_rule"] = kExtrapolationRule;
  char host[256] = {0};
  if (gethostname(host, sizeof host - 1) != 0) host[0] = 0;
  j["host"] = {{"hostname", host},
               {"hardware_concurrency", std::thread::hardware_concurrency()},
               {"threads", thread_count()},
               {"compiler", __VERSION__}};
  nlohmann::json notes = nlohmann::json::array();
  for (const auto& r : rows) {
    nlohmann::json row = {{"N", r.n},
                          {"kappa_C", r.kappa_c ? nlohmann::json(*r.kappa_c) : nlohmann::json(nullptr)},
                          {"kappa_CW", r.kappa_cw ? nlohmann::json(*r.kappa_cw) : nlohmann::json(nullptr)},
                          {"itr_C", r.itr_c},
                          {"itr_C_converged", r.c_converged},
                          {"itr_CW", r.itr_cw},
                          {"itr_CW_converged", r.cw_converged},
                          {"single_solve_s", r.single_solve_s}};
    if (!r.note.empty()) row["note"] = r.note;
    notes.push_back(row);
  }
  j["rows"] = notes;
  out << j.dump(2) << '\n';
}

}  // namespace mlkrig
