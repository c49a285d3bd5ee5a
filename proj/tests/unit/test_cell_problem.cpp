#include "cellflow/cell_problem.hpp"
#include "cellflow/contour.hpp"

#include <doctest.h>

#include <cmath>
#include <sstream>

using namespace cellflow;

TEST_CASE("grid rules") {
  CHECK(default_grid(1.0) == 64);
  CHECK(default_grid(1e-2) == 128);
  CHECK(default_grid(1e-4) == 1024);
  CHECK(band_limit(64) == 21);
  CHECK_THROWS_AS(default_grid(0.0), ConfigError);
}

TEST_CASE("large epsilon: D11 = eps + 1/(2 eps) + O(eps^-3)") {
  // For eps >> 1 the corrector is chi_1 = v_1 / eps + O(eps^-3), so
  // eps <|grad chi_1|^2> = <|grad v_1|^2> / eps = 1 / (2 eps).
  const auto f = HamiltonianField::sin_sin();
  for (double eps : {20.0, 40.0}) {
    const auto sol = solve_corrector(f, eps);
    const Mat2 d = effective_diffusivity(sol);
    CHECK(d(0, 0) - eps == doctest::Approx(0.5 / eps).epsilon(4.0 / (eps * eps)));
    CHECK(d(1, 1) == doctest::Approx(d(0, 0)).epsilon(1e-10));
    CHECK(std::abs(d(0, 1)) < 1e-10);
  }
}

TEST_CASE("corrector residual and symmetry at moderate epsilon") {
  const auto f = HamiltonianField::sin_sin();
  const auto sol = solve_corrector(f, 1e-2);
  CHECK(sol.n == 128);
  for (int i = 0; i < 2; ++i) {
    CHECK(sol.residual[i] < 1e-9);
    CHECK(corrector_residual(f, 1e-2, sol.chi[i], i) < 1e-9);
    CHECK(std::abs(sol.chi[i].at(0, 0)) < 1e-12);
    CHECK(!sol.residual_history[i].empty());
  }
  const Mat2 d = effective_diffusivity(sol);
  CHECK(d(0, 0) == doctest::Approx(d(1, 1)).epsilon(1e-8));
  CHECK(std::abs(d(0, 1)) < 1e-8 * d(0, 0));
  // Enhanced well above eps and of order sqrt(eps).
  CHECK(d(0, 0) > 10.0 * 1e-2);
  CHECK(d(0, 0) / std::sqrt(1e-2) > 1.0);
  CHECK(d(0, 0) / std::sqrt(1e-2) < 2.5);
}

TEST_CASE("preconditioners agree") {
  const auto f = HamiltonianField::sin_sin();
  CellOptions a, b;
  b.preconditioner = CellPreconditioner::laplacian;
  b.max_iter = 2000;
  const double da = effective_diffusivity(solve_corrector(f, 5e-2, a))(0, 0);
  const double db = effective_diffusivity(solve_corrector(f, 5e-2, b))(0, 0);
  CHECK(da == doctest::Approx(db).epsilon(1e-7));
}

TEST_CASE("a perturbed corrector has a larger residual") {
  const auto f = HamiltonianField::sin_sin();
  auto sol = solve_corrector(f, 1e-2);
  sol.chi[0].coeffs[1] += 1e-3;
  CHECK(corrector_residual(f, 1e-2, sol.chi[0], 0) > 1e-5);
}

TEST_CASE("spectral field grid values and binary dump") {
  SpectralField s;
  s.n = 8;
  s.coeffs.assign(64, {0.0, 0.0});
  // cos(x1) = (e^{ix1} + e^{-ix1}) / 2
  s.coeffs[1 * 8 + 0] = {0.5, 0.0};
  s.coeffs[7 * 8 + 0] = {0.5, 0.0};
  const auto g = s.grid_values();
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 8; ++j) CHECK(g[i * 8 + j] == doctest::Approx(std::cos(kTwoPi * i / 8)).epsilon(1e-12));
  CHECK(s.at(-1, 0).real() == doctest::Approx(0.5));
  std::ostringstream os;
  s.write_binary(os);
  CHECK(os.str().size() == 16 + 64 * 16);
}

TEST_CASE("scaling fit on exact power-law points") {
  std::vector<DeffPoint> pts;
  for (double e : {1e-2, 3e-3, 1e-3, 3e-4, 1e-4}) {
    DeffPoint p;
    p.epsilon = e;
    p.d = 1.5 * std::sqrt(e) * Mat2::Identity();
    p.n = 4096;
    pts.push_back(p);
  }
  const auto fit = scaling_fit(pts);
  CHECK(fit.exponent == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(fit.prefactor == doctest::Approx(1.5).epsilon(1e-10));
  CHECK(fit.r2 == doctest::Approx(1.0));
  CHECK(!fit.under_resolved);
  pts.pop_back();
  CHECK_THROWS_AS(scaling_fit(pts), ConfigError);
}

TEST_CASE("boundary-layer Q is symmetric and positive") {
  const auto f = HamiltonianField::sin_sin();
  const auto sol = solve_corrector(f, 1e-3);
  const Mat2 q = q_matrix_boundary_layer(f, sol, 8.0, 32.0);
  CHECK(std::abs(q(0, 1) - q(1, 0)) < 1e-12);
  CHECK(q(0, 0) > 0.0);
  CHECK(q(0, 0) == doctest::Approx(q(1, 1)).epsilon(1e-6));
}
