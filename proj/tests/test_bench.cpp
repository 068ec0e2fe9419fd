#include <doctest.h>

#include <sstream>

#include "mlkrig/bench.hpp"
#include "mlkrig/errors.hpp"

using namespace mlkrig;

TEST_CASE("sphere points lie on the unit sphere and nest") {
  const Matrix big = sphere_points(300, 5, 3);
  const Matrix small = sphere_points(100, 5, 3);
  CHECK((big.rowwise().norm().array() - 1.0).abs().maxCoeff() <= 1e-12);
  CHECK(big.topRows(100) == small);
  CHECK(sphere_points(100, 5, 4) != small);
}

TEST_CASE("sphere observation sets") {
  SphereBenchSpec spec;
  spec.d = 6;
  spec.sizes = {50, 120};
  const auto sets = generate_sphere_dataset(spec);
  REQUIRE(sets.size() == 2);
  CHECK(sets[0].locations.rows() == 50);
  CHECK(sets[1].locations.cols() == 5);
  CHECK(sets[1].locations.topRows(50) == sets[0].locations);
  CHECK((sets[1].responses.array().abs() <= 1.0).all());
  CHECK(spec.trend_size() == 21);
  spec.d = 20;
  CHECK(spec.trend_size() == 210);
}

TEST_CASE("bench spec validation") {
  SphereBenchSpec spec;
  spec.sizes = {2000, 1000};
  CHECK_THROWS_AS(spec.validate(), ParameterError);
  spec.sizes = {};
  CHECK_THROWS_AS(spec.validate(), ParameterError);
  spec.sizes = {1000};
  spec.d = 1;
  CHECK_THROWS_AS(spec.validate(), ParameterError);
  spec.d = 20;
  spec.tol = 0.0;
  CHECK_THROWS_AS(spec.validate(), ParameterError);
}

TEST_CASE("efficiency ratio") {
  CHECK(efficiency_ratio(extrapolated_single_level_cost(210, 0.5), 2.0) == doctest::Approx(52.5));
  CHECK_THROWS_AS(efficiency_ratio(1.0, 0.0), ParameterError);
}

TEST_CASE("small conditioning sweep") {
  SphereBenchSpec spec;
  spec.d = 4;
  spec.degree = 1;
  spec.sizes = {200, 400};
  spec.theta = {1.25, 2.0, 1.0};
  const auto rows = run_conditioning_sweep(spec);
  REQUIRE(rows.size() == 2);
  for (const auto& r : rows) {
    REQUIRE(r.kappa_c.has_value());
    REQUIRE(r.kappa_cw.has_value());
    CHECK(*r.kappa_cw < *r.kappa_c);
    CHECK(r.cw_converged);
    CHECK(r.itr_cw <= r.itr_c);
    CHECK(r.total_s == doctest::Approx(r.mb_s + r.itr_s));
    CHECK(r.eff > 0.0);
  }
  std::ostringstream csv;
  write_bench_csv(csv, rows);
  const std::string text = csv.str();
  CHECK(text.rfind("N,kappa_C,kappa_CW,itr_C,itr_CW,MB_s,Itr_s,Total_s,Eff\n", 0) == 0);
  CHECK(std::count(text.begin(), text.end(), '\n') == 3);

  std::ostringstream manifest;
  write_bench_manifest(manifest, spec, rows);
  CHECK(manifest.str().find("\"seed\"") != std::string::npos);
  CHECK(manifest.str().find("hardware_concurrency") != std::string::npos);

  const auto again = run_conditioning_sweep(spec);
  CHECK(again[1].itr_c == rows[1].itr_c);
  CHECK(again[1].itr_cw == rows[1].itr_cw);
  CHECK(*again[1].kappa_cw == *rows[1].kappa_cw);
}

TEST_CASE("N equal to p gives an empty multilevel system") {
  SphereBenchSpec spec;
  spec.d = 4;
  spec.degree = 1;
  spec.sizes = {4};
  spec.theta = {1.25, 2.0, 1.0};
  const auto rows = run_conditioning_sweep(spec);
  REQUIRE(rows.size() == 1);
  CHECK(rows[0].itr_cw == 0);
  CHECK_FALSE(rows[0].kappa_cw.has_value());
  CHECK_FALSE(rows[0].note.empty());
  std::ostringstream csv;
  write_bench_csv(csv, rows);
  CHECK(csv.str().find(",-,") != std::string::npos);
}
