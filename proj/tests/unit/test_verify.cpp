#include "cellflow/io.hpp"
#include "cellflow/verify.hpp"

#include <doctest.h>

#include <cmath>

using namespace cellflow;

TEST_CASE("report summary and JSON") {
  TestReport r;
  r.name = "demo";
  r.criterion = 3;
  r.description = "a check";
  r.statistic = 0.5;
  r.lo = 0.4;
  r.hi = 0.6;
  r.add_p("ks", 0.2);
  r.passed = true;
  r.config = {{"eps", 1e-3}};
  CHECK(r.summary().rfind("PASS [#3] demo: a check", 0) == 0);
  const auto j = r.to_json();
  CHECK(j["p_values"][0]["label"] == "ks");
  CHECK(j["cfg_hash"] == config_hash(r.config));
  TestReport empty;
  CHECK(empty.to_json()["statistic"].is_null());
}

TEST_CASE("signed graph coordinate") {
  const auto f = HamiltonianField::sin_sin();
  const int pos = f.cell_of(Vec2(1.0, 1.0));
  const int neg = f.cell_of(Vec2(1.0 + kPi, 1.0));
  CHECK(signed_coordinate(f, {pos, 0.7}) == doctest::Approx(0.7));
  CHECK(signed_coordinate(f, {neg, 0.7}) == doctest::Approx(-0.7));
  CHECK(signed_coordinate(f, kVertex) == 0.0);
}

TEST_CASE("perimeter weight criterion") {
  const auto r = test_perimeter_weights(HamiltonianField::sin_sin());
  CHECK(r.passed);
  CHECK(r.criterion == 1);
  CHECK(test_perimeter_weights(HamiltonianField::skewed(0.3)).passed);
}

TEST_CASE("period fit criterion") {
  const auto r = test_period_fit(HamiltonianField::sin_sin());
  CHECK(r.passed);
  CHECK(r.criterion == 2);
}

TEST_CASE("solver criteria") {
  CHECK(test_caputo_l1().passed);
  Mat2 q;
  q << 1.8, 0.3, 0.3, 1.8;
  CHECK(test_fpde_routes(q, 1.0 / std::sqrt(2.0)).passed);
  auto c = edge_coefficients(HamiltonianField::sin_sin());
  c.has_Q = true;
  c.Q = q;
  const auto r = test_coupled_trace(c);
  CHECK(r.passed);
  CHECK(r.criterion == 13);
}

TEST_CASE("suite configuration") {
  const auto full = SuiteConfig::full(3, 2);
  const auto quick = SuiteConfig::reduced(3, 2);
  CHECK(!full.quick);
  CHECK(quick.quick);
  CHECK(quick.ensemble_n < full.ensemble_n);
  CHECK(full.wants(7));
  SuiteConfig only = full;
  only.only = {1, 11};
  CHECK(only.wants(11));
  CHECK(!only.wants(7));
  CHECK(full.to_json()["seed"] == 3);
}

TEST_CASE("suite on the fast criteria") {
  SuiteConfig cfg = SuiteConfig::reduced(1, 1);
  cfg.only = {1, 2, 11};
  int seen = 0;
  const auto res = run_suite(HamiltonianField::sin_sin(), cfg, [&](const TestReport&) { ++seen; });
  CHECK(seen == 3);
  REQUIRE(res.reports.size() == 3);
  CHECK(res.corrected_pass.size() == 3);
  CHECK(res.all_pass);
  for (std::size_t k = 1; k < res.reports.size(); ++k) CHECK(res.reports[k - 1].criterion < res.reports[k].criterion);
  CHECK(res.to_json()["reports"].size() == 3);
}
