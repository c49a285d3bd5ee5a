#include "cellflow/sde_engine.hpp"
#include "cellflow/stats.hpp"

#include <doctest.h>

#include <cmath>
#include <sstream>

using namespace cellflow;

TEST_CASE("scales of the rescaled process") {
  SimConfig c;
  c.epsilon = 1e-3;
  c.alpha = 0.5;
  CHECK(c.time_scale() == doctest::Approx(0.5 * std::log(1e3) / std::sqrt(1e-3)));
  CHECK(c.space_scale() == doctest::Approx(std::pow(1e-3, 0.125)));
  CHECK(c.graph_scale() == doctest::Approx(std::pow(1e-3, -0.25)));
  const auto d = SimConfig::from_json(c.to_json());
  CHECK(d.epsilon == c.epsilon);
  CHECK(d.alpha == c.alpha);
}

TEST_CASE("config validation") {
  SimConfig c;
  c.epsilon = 1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.epsilon = 1e-3;
  c.alpha = 1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.alpha = 0.5;
  c.n_paths = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK_THROWS_AS(SimConfig::from_json({{"epsilon", "x"}}), ConfigError);
}

TEST_CASE("step size rule") {
  const auto f = HamiltonianField::sin_sin();
  const SdeEngine e(f, 1e-3, 0.1, 5.0);
  CHECK(e.dt_for(0.25) == doctest::Approx(5e-3));
  CHECK(e.dt_for(4.0) == doctest::Approx(5e-3 / 4.0));
  const SdeEngine big(f, 0.5, 0.1, 5.0);
  CHECK(big.dt_for(0.0) == doctest::Approx(0.1));
}

TEST_CASE("deterministic flow conserves H") {
  const auto f = HamiltonianField::sin_sin();
  const SdeEngine e(f, 1e-3, 0.1, 1.0);
  Vec2 x(1.0, 0.4);
  const double h0 = f.value(x);
  for (int k = 0; k < 1000; ++k) x = e.flow(x, 0.05);
  CHECK(std::abs(f.value(x) - h0) < 1e-6);
}

TEST_CASE("zero field gives Brownian motion with variance eps t") {
  const auto f = HamiltonianField::zero();
  SimConfig c;
  c.epsilon = 1e-2;
  c.alpha = 0.5;
  c.dt_safety = 5.0;
  c.seed = 11;
  c.n_paths = 4000;
  const auto m = sample_marginals(f, c, Vec2(0.3, -0.2), {0.5, 1.0});
  for (std::size_t k = 0; k < 2; ++k) {
    const double var = c.epsilon * c.time_scale() * m.times[k];
    for (int i = 0; i < 2; ++i) {
      std::vector<double> z;
      for (const auto& row : m.positions) z.push_back(row[k][i] - (i == 0 ? 0.3 : -0.2));
      CHECK(std::abs(stats::mean(z)) < 4.0 * std::sqrt(var / z.size()));
      CHECK(stats::variance(z) == doctest::Approx(var).epsilon(0.06));
    }
  }
}

TEST_CASE("marginals do not depend on the worker count") {
  const auto f = HamiltonianField::sin_sin();
  SimConfig c;
  c.epsilon = 1e-2;
  c.dt_safety = 5.0;
  c.n_paths = 12;
  const auto a = sample_marginals(f, c, Vec2::Zero(), {0.1, 0.2}, 1);
  const auto b = sample_marginals(f, c, Vec2::Zero(), {0.1, 0.2}, 4);
  for (std::size_t i = 0; i < a.positions.size(); ++i)
    for (std::size_t k = 0; k < 2; ++k) CHECK(a.positions[i][k] == b.positions[i][k]);
}

TEST_CASE("path samples and graph projection") {
  const auto f = HamiltonianField::sin_sin();
  SimConfig c;
  c.epsilon = 1e-2;
  c.dt_safety = 5.0;
  c.record_stride = 50;
  c.horizon = 0.2;
  const auto p = simulate_rescaled(f, c, Vec2(1.0, 1.0));
  REQUIRE(p.size() > 2);
  CHECK(p.times.front() == 0.0);
  CHECK(p.times.back() == doctest::Approx(0.2));
  for (std::size_t k = 0; k < p.size(); ++k) {
    CHECK(p.h_values[k] == doctest::Approx(f.value(p.positions[k])).epsilon(1e-12));
    if (p.cells[k] != kSeparatrix) {
      CHECK(p.graph_points[k].edge == p.cells[k]);
      CHECK(p.graph_points[k].y == doctest::Approx(c.graph_scale() * std::abs(p.h_values[k])));
    }
  }
  const auto g = p.graph_path();
  CHECK(g.size() == p.size());
}

TEST_CASE("binary frame round trip") {
  const auto f = HamiltonianField::sin_sin();
  SimConfig c;
  c.epsilon = 1e-2;
  c.dt_safety = 5.0;
  c.record_stride = 20;
  c.horizon = 0.05;
  const auto p = simulate_rescaled(f, c, Vec2(0.5, 0.5), 3);
  std::stringstream ss;
  write_binary(ss, p, c.to_json());
  nlohmann::json echo;
  const auto q = read_binary(ss, &echo);
  CHECK(echo == c.to_json());
  REQUIRE(q.size() == p.size());
  for (std::size_t k = 0; k < p.size(); ++k) {
    CHECK(q.times[k] == p.times[k]);
    CHECK(q.positions[k] == p.positions[k]);
    CHECK(q.winding[k] == p.winding[k]);
    CHECK(q.cells[k] == p.cells[k]);
    CHECK(q.graph_points[k] == p.graph_points[k]);
  }
  std::stringstream bad("XXXXXXXX");
  CHECK_THROWS_AS(read_binary(bad), ConfigError);
}

TEST_CASE("crossing tracker on a hand-made path") {
  const auto f = HamiltonianField::sin_sin();
  const double eps = 1e-2, alpha = 0.5, delta = 0.1;
  const double level = delta * std::pow(eps, alpha / 2);
  CrossingTracker t(f, delta, eps, alpha);
  auto feed = [&](double time, Vec2 x) { t.observe(time, x, f.value(x)); };
  feed(0.0, Vec2(0.0, 0.5));  // on the separatrix: kappa_0
  CHECK(t.phase() == 1);
  feed(1.0, Vec2(0.1, 0.5));  // |H| passes the level: mu_1
  CHECK(t.phase() == 2);
  feed(2.0, Vec2(0.02, 0.6));
  feed(3.0, Vec2(-0.01, 0.8));  // sign change: kappa_1
  const auto& r = t.record();
  REQUIRE(r.kappa.size() == 2);
  REQUIRE(r.mu.size() == 1);
  CHECK(r.kappa[0] == 0.0);
  const double x_mu = std::asin(level / std::sin(0.5));
  CHECK(r.mu[0] == doctest::Approx(x_mu / 0.1).epsilon(2e-3));
  CHECK(std::abs(f.value(r.mu_points[0])) == doctest::Approx(level).epsilon(2e-3));
  CHECK(r.exit_edges[0] == f.cell_of(Vec2(0.05, 0.5)));
  CHECK(r.kappa[1] == doctest::Approx(2.0 + 0.02 / 0.03).epsilon(2e-3));
  REQUIRE(r.displacements.size() == 1);
  CHECK(r.displacements[0].y() == doctest::Approx(0.6 + 0.2 * 0.02 / 0.03 - 0.5).epsilon(5e-3));
  CHECK(r.up_displacements[0].x() == doctest::Approx(x_mu).epsilon(2e-3));
}

TEST_CASE("hitting and exit times") {
  const auto f = HamiltonianField::sin_sin();
  SimConfig c;
  c.epsilon = 1e-2;
  c.dt_safety = 5.0;
  c.horizon = 20.0;
  const auto on = hitting_time(f, c, Vec2(0.0, 1.0), 0.0);
  CHECK(on.time == 0.0);
  const auto h = hitting_time(f, c, Vec2(0.3, 1.0), 0.0);
  CHECK(!h.censored);
  CHECK(std::abs(f.value(h.point)) < 1e-6);
  CHECK_THROWS_AS(hitting_time(f, c, Vec2(1.0, 1.0), 2.0), DomainError);
  CHECK_THROWS_AS(exit_band(f, c, Vec2(1.5, 1.5), 0.1), DomainError);
  const auto e = exit_band(f, c, Vec2(0.05, 1.5), 0.2);
  CHECK(!e.censored);
  CHECK(e.time > 0.0);
}
