#include <doctest.h>

#include "mlkrig/errors.hpp"
#include "mlkrig/predict.hpp"
#include "support.hpp"

using namespace mlkrig;

namespace {

SolverOptions tight() {
  SolverOptions o;
  o.cg.tol = 1e-12;
  o.cg.max_iter = 5000;
  return o;
}

FittedModel fit(const test::Instance& in, const Vector& y) {
  return solve_blup(in.locations, y, in.trend, in.basis, in.model, tight()).first;
}

}  // namespace

TEST_CASE("interpolation and zero variance at training points") {
  const auto in = test::make_instance(300, 2, 1, {1.25, 0.3, 1.7}, 1);
  const FittedModel m = fit(in, in.responses);
  const KrigingVariance var(m);
  for (Index i = 0; i < 300; i += 7) {
    const Vector x0 = in.locations.row(i).transpose();
    CHECK(std::abs(predict(m, x0).y_hat - in.responses(i)) <= 1e-6 * std::abs(in.responses(i)));
    CHECK(var.mse(x0) <= 1e-8 * in.model.sigma2);
    CHECK(*predict_mse(m, x0) >= 0.0);
  }
}

TEST_CASE("predictions match the bordered KKT oracle") {
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    const auto in = test::make_instance(200 + 100 * static_cast<Index>(seed), 3, static_cast<int>(seed % 3),
                                        {seed % 2 ? 0.5 : 1.25, 0.4, 1.0}, seed + 10);
    const FittedModel m = fit(in, in.responses);
    const auto oracle = test::dense_kkt(in.c, in.x, in.responses);
    const Matrix targets = test::uniform_points(25, 3, seed + 99);
    const Vector batch = predict_batch(m, targets);
    for (Index j = 0; j < 25; ++j) {
      const Vector x0 = targets.row(j).transpose();
      const double ref = test::dense_predict(in, oracle, x0);
      CAPTURE(seed);
      CHECK(std::abs(predict(m, x0).y_hat - ref) <= 1e-8 * std::max(1.0, std::abs(ref)));
      CHECK(batch(j) == predict(m, x0).y_hat);
    }
  }
}

TEST_CASE("MSE matches the bordered-system variance") {
  const auto in = test::make_instance(250, 2, 2, {1.25, 0.3, 2.0}, 3);
  const FittedModel m = fit(in, in.responses);
  const KrigingVariance var(m);
  const Matrix targets = test::uniform_points(30, 2, 4);
  for (Index j = 0; j < 30; ++j) {
    const Vector x0 = targets.row(j).transpose();
    const double ref = test::bordered_mse(in, x0);
    CHECK(std::abs(var.mse(x0) - ref) <= 1e-8 * std::max(ref, in.model.sigma2));
    // Unbiasedness of the implicit weights.
    const Vector lambda = var.weights(x0);
    const Vector k0 = in.trend.eval(x0);
    CHECK((in.x.transpose() * lambda - k0).cwiseAbs().maxCoeff() <= 1e-8 * std::max(1.0, k0.cwiseAbs().maxCoeff()));
    CHECK(lambda.dot(in.responses) == doctest::Approx(predict(m, x0).y_hat).epsilon(1e-8));
  }
  // Far from the data: prior variance plus trend uncertainty.
  Vector far(2);
  far << 40.0, -35.0;
  CHECK(var.mse(far) >= in.model.sigma2);
  CHECK(std::abs(var.mse(far) - test::bordered_mse(in, far)) <= 1e-8 * var.mse(far));
}

TEST_CASE("pure-trend fit predicts the trend") {
  const auto in = test::make_instance(200, 2, 1, {1.25, 0.3, 1.0}, 5);
  const Vector y = in.x * test::normals(3, 6);
  const FittedModel m = fit(in, y);
  Vector x0(2);
  x0 << 0.31, 0.72;
  CHECK(predict(m, x0).y_hat == doctest::Approx(in.trend.eval(x0).dot(m.beta)).epsilon(1e-12));
}

TEST_CASE("prediction is linear in the responses") {
  const auto in = test::make_instance(300, 2, 1, {1.25, 0.3, 1.0}, 7);
  const Vector y1 = in.responses;
  const Vector y2 = test::normals(300, 8);
  const FittedModel m1 = fit(in, y1);
  const FittedModel m2 = fit(in, y2);
  const FittedModel m3 = fit(in, 2.0 * y1 - 0.5 * y2);
  const Matrix targets = test::uniform_points(20, 2, 9);
  const Vector combo = 2.0 * predict_batch(m1, targets) - 0.5 * predict_batch(m2, targets);
  CHECK(test::rel_err(predict_batch(m3, targets), combo) <= 1e-8);
}

TEST_CASE("availability and errors") {
  const auto in = test::make_instance(120, 2, 1, {1.25, 0.3, 1.0}, 11);
  const FittedModel m = fit(in, in.responses);
  Vector x0(2);
  x0 << 0.5, 0.5;
  CHECK(predict_mse(m, x0).has_value());
  CHECK_FALSE(predict_mse(m, x0, 100).has_value());
  CHECK_THROWS_AS(predict(m, Vector::Zero(3)), ShapeError);
}
