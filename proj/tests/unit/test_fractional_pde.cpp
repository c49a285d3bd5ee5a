#include "cellflow/contour.hpp"
#include "cellflow/fractional_pde.hpp"

#include <boost/math/special_functions/erf.hpp>
#include <boost/math/special_functions/gamma.hpp>
#include <doctest.h>

#include <cmath>
#include <limits>

using namespace cellflow;

namespace {

// E_{1/2}(-x) from its power series, in long double for moderate x.
double ml_series(double x) {
  long double s = 0.0L, p = 1.0L;
  for (int k = 0; k < 400; ++k) {
    s += p / std::tgamma(0.5L * k + 1.0L);
    p *= -static_cast<long double>(x);
  }
  return static_cast<double>(s);
}

// E_{1/2}(-x) = exp(x^2) erfc(x), from Boost.
double ml_erfc(double x) { return std::exp(x * x) * boost::math::erfc(x); }

Mat2 test_q() {
  Mat2 q;
  q << 1.8, 0.3, 0.3, 1.8;
  return q;
}

}  // namespace

TEST_CASE("erfcx") {
  CHECK(erfcx(0.0) == doctest::Approx(1.0));
  for (double x : {-2.0, -0.5, 0.3, 1.0, 4.0, 5.5}) {
    const double ref = std::exp(x * x) * boost::math::erfc(x);
    CHECK(erfcx(x) == doctest::Approx(ref).epsilon(1e-12));
  }
  // Large-x asymptote 1 / (x sqrt(pi)).
  for (double x : {50.0, 1e4}) CHECK(erfcx(x) * x * std::sqrt(kPi) == doctest::Approx(1.0).epsilon(1.0 / (x * x)));
}

TEST_CASE("Mittag-Leffler of order one half") {
  for (double x : {0.0, 0.1, 0.7, 1.5, 3.0}) CHECK(mittag_leffler_half(x) == doctest::Approx(ml_series(x)).epsilon(1e-10));
}

TEST_CASE("Caputo L1 derivative") {
  const int n = 256;
  const double dt = 1.0 / n;
  std::vector<double> lin(n + 1), quad(n + 1), times(n + 1);
  for (int k = 0; k <= n; ++k) {
    times[k] = k * dt;
    lin[k] = times[k];
    quad[k] = times[k] * times[k];
  }
  const auto d1 = caputo_half(lin, dt);
  const auto d2 = caputo_half(times, quad);
  CHECK(d1[0] == 0.0);
  for (int k = 1; k <= n; ++k) {
    // D^{1/2} t = t^{1/2} / Gamma(3/2), exact for the L1 scheme.
    CHECK(d1[k] == doctest::Approx(std::sqrt(times[k]) / boost::math::tgamma(1.5)).epsilon(1e-12));
  }
  const double ref = 2.0 / boost::math::tgamma(2.5);
  CHECK(d2[n] == doctest::Approx(ref).epsilon(2e-3));
  times[3] += 1e-3;
  CHECK_THROWS_AS(caputo_half(times, quad), DomainError);
}

TEST_CASE("constant datum stays constant") {
  const auto theta0 = GridField::sample(16, kTwoPi, [](const Vec2&) { return 2.5; });
  const auto res = solve_fpde(theta0, test_q(), 0.7, {0.5, 1.0});
  for (const auto& g : res.spectral)
    for (double v : g.values) CHECK(v == doctest::Approx(2.5).epsilon(1e-13));
  for (const auto& g : res.stepped)
    for (double v : g.values) CHECK(v == doctest::Approx(2.5).epsilon(1e-13));
  CHECK(res.discrepancy < 1e-12);
}

TEST_CASE("single Fourier mode decays like E_{1/2}") {
  const Mat2 q = test_q();
  const double r0 = 1.0 / std::sqrt(2.0);
  const auto theta0 = GridField::sample(16, kTwoPi, [](const Vec2& x) { return std::cos(x.x() + 2.0 * x.y()); });
  const std::vector<double> t{0.25, 1.0};
  const auto res = solve_fpde(theta0, q, r0, t);
  const Eigen::Vector2d k(1.0, 2.0);
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double lam = 0.5 * k.dot(q * k) / r0;
    const double factor = ml_erfc(lam * std::sqrt(t[i]));
    CHECK(fpde_mode_factor(q, r0, {1, 2}, kTwoPi, t[i]) == doctest::Approx(factor).epsilon(1e-9));
    for (int a = 0; a < 16; a += 5)
      for (int b = 0; b < 16; b += 3) {
        const double x1 = kTwoPi * a / 16, x2 = kTwoPi * b / 16;
        CHECK(res.spectral[i](a, b) == doctest::Approx(factor * std::cos(x1 + 2.0 * x2)).epsilon(1e-10));
      }
    const Vec2 x(0.3, 1.1);
    CHECK(fpde_point(theta0, q, r0, x, t[i]) == doctest::Approx(factor * std::cos(0.3 + 2.2)).epsilon(1e-10));
  }
  CHECK(res.discrepancy < 1e-3);
}

TEST_CASE("maximum principle and route agreement") {
  const auto theta0 =
      GridField::sample(32, kTwoPi, [](const Vec2& x) { return std::exp(std::cos(x.x()) + 0.5 * std::sin(x.y()) - 1.5); });
  double lo = std::numeric_limits<double>::max(), hi = -lo;
  for (double v : theta0.values) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const auto res = solve_fpde(theta0, test_q(), 0.7, {0.1, 0.5, 1.0});
  for (const auto* route : {&res.spectral, &res.stepped})
    for (const auto& g : *route)
      for (double v : g.values) {
        CHECK(v >= lo - 1e-9);
        CHECK(v <= hi + 1e-9);
      }
  CHECK(res.discrepancy < 1e-3);
  FpdeOptions tight;
  tight.steps = 16;
  tight.alarm_tol = 1e-12;
  CHECK_THROWS_AS(solve_fpde(theta0, test_q(), 0.7, {1.0}, tight), NumericalError);
}

TEST_CASE("coupled system: constant datum and trace agreement") {
  const auto coeffs = [] {
    auto c = edge_coefficients(HamiltonianField::sin_sin());
    c.has_Q = true;
    c.Q = test_q();
    return c;
  }();
  const auto flat = GridField::sample(8, kTwoPi, [](const Vec2&) { return 1.0; });
  const auto rc = solve_coupled(flat, coeffs, {0.5, 1.0});
  for (const auto& g : rc.trace)
    for (double v : g.values) CHECK(v == doctest::Approx(1.0).epsilon(1e-10));

  const auto theta0 = GridField::sample(16, kTwoPi, [](const Vec2& x) { return std::cos(x.x()) + 0.5 * std::sin(2 * x.y()); });
  CoupledOptions opt;
  opt.steps = 200;
  opt.edge_points = 200;
  const auto res = solve_coupled(theta0, coeffs, {0.25, 0.5, 1.0}, opt);
  CHECK(res.max_vertex_residual < 1e-10);
  CHECK(!res.truncation_warning);
  CHECK(res.y_max == doctest::Approx(6.0 * std::sqrt(coeffs.a_max())).epsilon(1e-6));
  CHECK(trace_l2_error(res, theta0, coeffs.Q, coeffs.r0) < 1e-3);
  CHECK(res.profiles.size() == 3);
  CHECK(res.profiles[0].size() == 4);
  CHECK_THROWS_AS(solve_coupled(theta0, coeffs, {0.3333, 1.0}, opt), ConfigError);
}
