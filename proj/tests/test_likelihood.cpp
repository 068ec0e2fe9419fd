#include <doctest.h>

#include <cmath>
#include <numbers>
#include <sstream>

#include "mlkrig/errors.hpp"
#include "mlkrig/likelihood.hpp"
#include "mlkrig/bench.hpp"
#include "support.hpp"

using namespace mlkrig;

namespace {

LikelihoodConfig dense_config() {
  LikelihoodConfig c;
  c.sparse_threshold = 0.0;
  return c;
}

}  // namespace

TEST_CASE("scalar case") {
  Matrix pts(2, 1);
  pts << 0.0, 0.7;
  const Matrix x = Matrix::Ones(2, 1);
  const MultilevelBasis b = build_multilevel_basis(x, build_kdtree(pts, 1));
  REQUIRE(b.detail_size() == 1);
  const CovarianceModel m{0.5, 1.0, 1.3};
  Vector y(2);
  y << 0.4, -1.1;
  const Vector yw = b.apply_W(y);
  const double c = dense_transformed_covariance(b, assemble_covariance(pts, m))(0, 0);
  const double expect = -0.5 * std::log(2.0 * std::numbers::pi) - 0.5 * std::log(c) - yw(0) * yw(0) / (2.0 * c);
  CHECK(loglik_W(yw, b, pts, m, dense_config()) == doctest::Approx(expect).epsilon(1e-14));
}

TEST_CASE("dense path equals the direct evaluation") {
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    const auto in = test::make_instance(150 + 100 * static_cast<Index>(seed), 2 + static_cast<Index>(seed % 2),
                                        static_cast<int>(seed % 3), {1.25, 0.3, 1.4}, seed);
    const Vector yw = in.basis->apply_W(in.responses);
    const double ours = loglik_W(yw, *in.basis, in.locations, in.model, dense_config());
    const double ref = test::dense_loglik_W(in.x, in.c, in.responses);
    CAPTURE(seed);
    CHECK(std::abs(ours - ref) <= 1e-8);
    // Sparse factorization path with tau = infinity.
    LikelihoodConfig sparse = dense_config();
    sparse.dense_fallback_N = 0;
    CHECK(std::abs(loglik_W(yw, *in.basis, in.locations, in.model, sparse) - ref) <= 1e-8);
  }
}

TEST_CASE("trend invariance") {
  const auto in = test::make_instance(300, 3, 2, {1.25, 0.4, 1.0}, 3);
  const Vector shift = in.x * test::normals(in.x.cols(), 77) * 50.0;
  for (double tau : {0.0, 1.0, 3.0}) {
    LikelihoodConfig c;
    c.sparse_threshold = tau;
    const double a = loglik_W(in.basis->apply_W(in.responses), *in.basis, in.locations, in.model, c);
    const double b = loglik_W(in.basis->apply_W(in.responses + shift), *in.basis, in.locations, in.model, c);
    CAPTURE(tau);
    CHECK(std::abs(a - b) <= 1e-9);
  }
}

TEST_CASE("sparsified C_W") {
  const auto in = test::make_instance(400, 2, 1, {1.25, 0.05, 1.0}, 4);
  const CovarianceOperator cov(in.locations, in.model);
  const Matrix full = dense_transformed_covariance(*in.basis, in.c);
  const Matrix inf = Matrix(sparsify_CW(*in.basis, cov, std::numeric_limits<double>::infinity()));
  CHECK((inf - full).cwiseAbs().maxCoeff() <= 1e-12);

  const Matrix zero = Matrix(sparsify_CW(*in.basis, cov, 0.0));
  CHECK((zero - zero.transpose()).cwiseAbs().maxCoeff() == 0.0);
  CHECK((zero.diagonal() - full.diagonal()).cwiseAbs().maxCoeff() <= 1e-12);
  // Rows on leaves whose boxes are apart are structurally zero.
  const auto& blocks = in.basis->blocks();
  Index checked = 0;
  for (std::size_t a = 0; a < blocks.size(); ++a) {
    for (std::size_t b = a + 1; b < blocks.size(); ++b) {
      const KdNode& na = in.basis->support_node(blocks[a]);
      const KdNode& nb = in.basis->support_node(blocks[b]);
      const bool apart = ((na.box_hi - nb.box_lo).array() < 0.0).any() || ((nb.box_hi - na.box_lo).array() < 0.0).any();
      if (!apart) continue;
      ++checked;
      CHECK(zero.block(blocks[a].row_offset, blocks[b].row_offset, blocks[a].row_count(), blocks[b].row_count())
                .cwiseAbs()
                .maxCoeff() == 0.0);
    }
  }
  CHECK(checked > 0);
}

TEST_CASE("sparsification error on the sphere") {
  SphereBenchSpec spec;
  spec.sizes = {400};
  const auto set = generate_sphere_dataset(spec).front();
  const TrendBasis t = TrendBasis::fitted(set.locations, 1);
  const MultilevelBasis b = build_multilevel_basis(build_design_matrix(t, set.locations),
                                                   build_kdtree(set.locations, t.size()));
  const CovarianceModel m{1.25, 10.0, 1.0};
  const CovarianceOperator cov(set.locations, m);
  const Matrix full = dense_transformed_covariance(b, cov.dense());
  const Matrix approx = Matrix(sparsify_CW(b, cov, 3.0));
  CHECK((approx - full).norm() / full.norm() <= 0.05);
}

TEST_CASE("factorization log-det equals eigenvalue log-det") {
  const auto in = test::make_instance(250, 2, 1, {1.25, 0.3, 1.0}, 5);
  const CovarianceOperator cov(in.locations, in.model);
  const Vector yw = in.basis->apply_W(in.responses);
  const LikelihoodTerms t = loglik_W_terms(yw, *in.basis, cov, dense_config());
  const Eigen::SelfAdjointEigenSolver<Matrix> eig(dense_transformed_covariance(*in.basis, in.c));
  CHECK(std::abs(t.log_det - eig.eigenvalues().array().log().sum()) <= 1e-8);
  CHECK(t.dimension == in.basis->detail_size());
}

TEST_CASE("profiled sigma2 is stationary") {
  const auto in = test::make_instance(300, 2, 1, {1.5, 0.3, 2.0}, 6);
  const Vector yw = in.basis->apply_W(in.responses);
  const LikelihoodConfig c = dense_config();
  const ProfiledLikelihood p = profiled_loglik_W(yw, *in.basis, in.locations, 1.5, 0.3, c);
  REQUIRE(p.feasible);
  const double s = p.sigma2;
  CHECK(loglik_W(yw, *in.basis, in.locations, {1.5, 0.3, s}, c) == doctest::Approx(p.loglik).epsilon(1e-12));
  const double h = 1e-4 * s;
  const double up = loglik_W(yw, *in.basis, in.locations, {1.5, 0.3, s + h}, c);
  const double down = loglik_W(yw, *in.basis, in.locations, {1.5, 0.3, s - h}, c);
  const double derivative = (up - down) / (2.0 * h);
  const double scale = static_cast<double>(yw.size()) / (2.0 * s);  // size of either term of the derivative
  CHECK(std::abs(derivative) / scale <= 1e-5);
  CHECK(up < p.loglik);
  CHECK(down < p.loglik);

  LikelihoodConfig unit = c;
  unit.profile_sigma2 = false;
  const ProfiledLikelihood q = profiled_loglik_W(yw, *in.basis, in.locations, 1.5, 0.3, unit);
  CHECK(q.sigma2 == 1.0);
  CHECK(q.loglik == doctest::Approx(loglik_W(yw, *in.basis, in.locations, {1.5, 0.3, 1.0}, c)).epsilon(1e-12));
}

TEST_CASE("fit_theta on a GP draw") {
  const CovarianceModel truth{1.5, 0.5, 2.0};
  const auto in = test::make_instance(1000, 2, 1, truth, 7);
  LikelihoodConfig c;
  const ThetaFit fit = fit_theta(in.locations, in.responses, *in.basis, c);
  const Vector yw = in.basis->apply_W(in.responses);
  const ProfiledLikelihood at_truth = profiled_loglik_W(yw, *in.basis, in.locations, truth.nu, truth.rho, c);
  CHECK(fit.loglik >= at_truth.loglik - 1e-6);
  CHECK(fit.model.rho > truth.rho / 2.0);
  CHECK(fit.model.rho < truth.rho * 2.0);
  CHECK(fit.model.sigma2 > truth.sigma2 / 2.0);
  CHECK(fit.model.sigma2 < truth.sigma2 * 2.0);
  CHECK(static_cast<int>(fit.trace.size()) <= c.max_evals);

  std::ostringstream csv;
  write_trace_csv(csv, fit.trace);
  CHECK(csv.str().rfind("eval,nu,rho,sigma2,loglik,wall_time\n", 0) == 0);
}

TEST_CASE("fit_theta is reproducible and respects bounds") {
  const auto in = test::make_instance(400, 2, 1, {1.0, 0.2, 1.0}, 8);
  LikelihoodConfig c;
  c.max_evals = 40;
  const ThetaFit a = fit_theta(in.locations, in.responses, *in.basis, c);
  const ThetaFit b = fit_theta(in.locations, in.responses, *in.basis, c);
  CHECK(a.model.nu == b.model.nu);
  CHECK(a.model.rho == b.model.rho);
  CHECK(a.trace.size() <= 40);
  const double scale = median_pairwise_distance(in.locations);
  for (const auto& e : a.trace) {
    CHECK(e.nu >= c.nu_lower * (1 - 1e-12));
    CHECK(e.nu <= c.nu_upper * (1 + 1e-12));
    CHECK(e.rho >= c.rho_lower_factor * scale * (1 - 1e-12));
    CHECK(e.rho <= c.rho_upper_factor * scale * (1 + 1e-12));
  }
}

TEST_CASE("fit_theta fails when nothing is feasible") {
  Matrix pts = test::uniform_points(30, 2, 9);
  pts.row(5) = pts.row(4);
  const Matrix x = Matrix::Ones(30, 1);
  const MultilevelBasis b = build_multilevel_basis(x, build_kdtree(pts, 1));
  LikelihoodConfig c;
  c.max_evals = 10;
  CHECK_THROWS_AS(fit_theta(pts, test::normals(30, 1), b, c), EstimationFailedError);
}

TEST_CASE("configuration checks") {
  LikelihoodConfig c;
  c.nu_lower = 5.0;
  CHECK_THROWS_AS(c.validate(), ParameterError);
  c = {};
  c.sparse_threshold = -1.0;
  CHECK_THROWS_AS(c.validate(), ParameterError);
  c = {};
  c.rho_upper_factor = INFINITY;
  CHECK_THROWS_AS(c.validate(), ParameterError);
  c = {};
  c.max_evals = 0;
  CHECK_THROWS_AS(c.validate(), ParameterError);
}
