#include "cellflow/contour.hpp"

#include <boost/math/special_functions/ellint_1.hpp>
#include <doctest.h>

#include <cmath>

using namespace cellflow;

namespace {

// Period of the orbit {sin x1 sin x2 = h}: 4 K(k) with k^2 = 1 - h^2, taken
// as pi / (2 AGM(1, h)) so that the complementary modulus h is exact.
double sin_sin_period(double h) {
  double a = 1.0, b = h;
  for (int it = 0; it < 64; ++it) {
    const double m = 0.5 * (a + b);
    b = std::sqrt(a * b);
    a = m;
  }
  return 4.0 * kPi / (2.0 * a);
}

}  // namespace

TEST_CASE("sin_sin perimeter weights equal 8") {
  const auto f = HamiltonianField::sin_sin();
  for (int i = 0; i < f.cell_count(); ++i) CHECK(perimeter_weight(f, i) == doctest::Approx(8.0).epsilon(1e-9));
}

TEST_CASE("skewed perimeter weights are positive and unequal") {
  const auto f = HamiltonianField::skewed(0.3);
  double lo = 1e300, hi = 0.0;
  for (int i = 0; i < f.cell_count(); ++i) {
    const double q = perimeter_weight(f, i);
    CHECK(q > 0.0);
    lo = std::min(lo, q);
    hi = std::max(hi, q);
  }
  CHECK(hi - lo > 1e-3);
}

TEST_CASE("rotation period matches the elliptic integral") {
  const auto f = HamiltonianField::sin_sin();
  CHECK(sin_sin_period(0.5) == doctest::Approx(4.0 * boost::math::ellint_1(std::sqrt(0.75))).epsilon(1e-14));
  for (double h : {0.5, 1e-2, 1e-4, 1e-6}) {
    for (int i = 0; i < f.cell_count(); ++i)
      CHECK(rotation_period(f, i, h) == doctest::Approx(sin_sin_period(h)).epsilon(1e-7));
  }
}

TEST_CASE("closed orbit flux is the enclosed vorticity integral") {
  // By Green, the flux of grad H through {|H| = h} equals the integral of
  // |lap H| = 2 |H| over the enclosed region; check it shrinks to 0 at the centre.
  const auto f = HamiltonianField::sin_sin();
  const auto o = trace_closed_orbit(f, 0, 0.999);
  CHECK(o.flux > 0.0);
  CHECK(o.flux < 0.05);
  CHECK(o.period == doctest::Approx(sin_sin_period(0.999)).epsilon(1e-7));
}

TEST_CASE("level points lie on the level set") {
  const auto f = HamiltonianField::sin_sin();
  for (int i = 0; i < f.cell_count(); ++i) {
    const Vec2 x = level_point(f, i, 0.3);
    CHECK(std::abs(f.value(x)) == doctest::Approx(0.3).epsilon(1e-10));
    CHECK(f.cell_of(x) == i);
  }
  CHECK_THROWS_AS(level_point(f, 0, 2.0), DomainError);
}

TEST_CASE("separatrix orbits of sin_sin") {
  const auto f = HamiltonianField::sin_sin();
  const auto orbits = separatrix_orbits(f);
  CHECK(orbits.size() == 8);
  for (const auto& o : orbits) {
    CHECK(o.weight == doctest::Approx(2.0).epsilon(1e-8));
    CHECK(o.length == doctest::Approx(kPi).epsilon(1e-8));
    CHECK(o.left_cell != o.right_cell);
  }
}

TEST_CASE("sin_sin edge coefficients") {
  const auto c = edge_coefficients(HamiltonianField::sin_sin());
  REQUIRE(c.edges() == 4);
  for (int i = 0; i < 4; ++i) {
    CHECK(c.q[i] == doctest::Approx(8.0).epsilon(1e-9));
    CHECK(c.slope[i] == doctest::Approx(4.0).epsilon(1e-4));
    CHECK(c.intercept[i] == doctest::Approx(4.0 * std::log(4.0)).epsilon(1e-3));
    CHECK(c.r2[i] > 0.999999);
    CHECK(c.c_bar[i] == doctest::Approx(2.0).epsilon(1e-4));
    CHECK(c.a[i] == doctest::Approx(4.0).epsilon(1e-4));
    CHECK(c.q_bar[i] == doctest::Approx(0.25));
  }
  CHECK(c.r0 == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-4));
  CHECK(c.a_max() == doctest::Approx(4.0).epsilon(1e-4));
}

TEST_CASE("coefficient JSON round trip") {
  auto c = edge_coefficients(HamiltonianField::sin_sin());
  c.has_Q = true;
  c.Q << 1.5, 0.2, 0.2, 1.7;
  const auto d = FlowCoefficients::from_json(c.to_json());
  CHECK(d.edges() == c.edges());
  CHECK(d.r0 == doctest::Approx(c.r0));
  CHECK(d.has_Q);
  CHECK(d.Q(0, 1) == doctest::Approx(0.2));
}

TEST_CASE("symmetric coefficients") {
  const auto c = FlowCoefficients::symmetric(3, 2.0);
  CHECK(c.edges() == 3);
  for (double w : c.label_weight) CHECK(w == doctest::Approx(1.0 / 3.0));
  CHECK(c.r0 == doctest::Approx(1.0));
}
