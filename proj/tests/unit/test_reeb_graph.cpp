#include "cellflow/reeb_graph.hpp"
#include "cellflow/stats.hpp"

#include <doctest.h>

#include <cmath>
#include <sstream>

using namespace cellflow;

TEST_CASE("graph distance") {
  CHECK(graph_distance({0, 0.3}, {0, 0.5}) == doctest::Approx(0.2));
  CHECK(graph_distance({0, 0.3}, {2, 0.5}) == doctest::Approx(0.8));
  CHECK(graph_distance(kVertex, {1, 0.4}) == doctest::Approx(0.4));
  CHECK(graph_distance({3, 0.0}, {1, 0.4}) == doctest::Approx(0.4));
  CHECK(GraphPoint{3, 0.0} == GraphPoint{1, 0.0});
}

TEST_CASE("projection to the graph") {
  const auto f = HamiltonianField::sin_sin();
  const double eps = 1e-2, alpha = 0.5;
  CHECK(project(Vec2(0.0, 1.0), eps, alpha, f).at_vertex());
  const Vec2 x(1.0, 2.0);
  const auto p = project(x, eps, alpha, f);
  CHECK(p.edge == f.cell_of(x));
  CHECK(p.y == doctest::Approx(std::abs(f.value(x)) * std::pow(eps, -alpha / 2)));
}

TEST_CASE("Y on a symmetric star is sqrt(a) |B| with uniform labels") {
  const auto c = FlowCoefficients::symmetric(4, 4.0);
  const std::size_t n = 2000;
  std::vector<double> y;
  std::vector<std::size_t> counts(4, 0);
  YOptions opt;
  opt.dt = 1e-3;
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng(21, i);
    const auto p = simulate_Y(c, kVertex, 1.0, rng, opt);
    y.push_back(p.points.back().y);
    ++counts[p.points.back().edge];
  }
  const double mean = 2.0 * std::sqrt(2.0 / kPi);
  const double sd = std::sqrt(4.0 - mean * mean);
  CHECK(std::abs(stats::mean(y) - mean) < 4.0 * sd / std::sqrt(double(n)));
  CHECK(stats::chi_square_gof(counts, {0.25, 0.25, 0.25, 0.25}).p_value > 1e-3);
}

TEST_CASE("excursions reaching delta are labelled in proportion to q") {
  FlowCoefficients c;
  c.q = {1.0, 1.0, 1.0};
  c.a = {1.0, 4.0, 9.0};
  c.c_bar = {1.0, 0.25, 1.0 / 9.0};
  c.finalize();
  // Driving excursions pick edge j with weight q_j / sqrt(a_j); those reaching
  // y = delta on edge j reach delta / sqrt(a_j) in B, which adds a factor
  // sqrt(a_j), so the labels seen at level delta are uniform here.
  CHECK(c.label_weight[0] == doctest::Approx(1.0 / (1.0 + 0.5 + 1.0 / 3.0)));
  std::vector<std::size_t> counts(3, 0);
  YOptions opt;
  opt.dt = 1e-4;
  for (std::size_t i = 0; i < 200; ++i) {
    Rng rng(22, i);
    const auto p = simulate_Y(c, kVertex, 1.0, rng, opt);
    for (const auto& e : excursion_project(p, 0.1).excursions) ++counts[e.label];
  }
  CHECK(counts[0] + counts[1] + counts[2] > 1000);
  CHECK(stats::chi_square_gof(counts, {1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0}).p_value > 1e-3);
}

TEST_CASE("Y started off the vertex stays on its edge until it returns") {
  const auto c = FlowCoefficients::symmetric(4, 1.0);
  Rng rng(3, 0);
  YOptions opt;
  opt.dt = 1e-4;
  const auto p = simulate_Y(c, {2, 3.0}, 0.1, rng, opt);
  for (const auto& g : p.points) CHECK(g.edge == 2);
  CHECK(p.points.front().y == doctest::Approx(3.0));
}

TEST_CASE("downcrossing and occupation local times agree") {
  const auto c = FlowCoefficients::symmetric(4, 4.0);
  YOptions opt;
  opt.dt = 1e-5;
  double down = 0.0, occ = 0.0;
  const int n = 60;
  for (int i = 0; i < n; ++i) {
    Rng rng(23, i);
    const auto p = simulate_Y(c, kVertex, 1.0, rng, opt);
    down += local_time(p, 1.0, LocalTimeMethod::downcrossing, 0.05, c);
    occ += local_time(p, 1.0, LocalTimeMethod::occupation, 0.05, c);
  }
  CHECK(down / n == doctest::Approx(occ / n).epsilon(0.1));
}

TEST_CASE("local time guards") {
  const auto c = FlowCoefficients::symmetric(2, 1.0);
  Rng rng(1, 0);
  YOptions opt;
  opt.dt = 1e-4;
  const auto p = simulate_Y(c, kVertex, 0.1, rng, opt);
  CHECK_THROWS_AS(local_time(p, 0.1, LocalTimeMethod::downcrossing, 1e-4, c), ResolutionError);
  CHECK_THROWS_AS(local_time(p, 0.5, LocalTimeMethod::occupation, 0.1, c), DomainError);
  CHECK_THROWS_AS(local_time(p, 0.1, LocalTimeMethod::occupation, 0.0, c), ConfigError);
}

TEST_CASE("excursion projection on a hand-made path") {
  GraphPath p;
  p.times = {0, 1, 2, 3, 4, 5, 6};
  p.points = {kVertex, {0, 0.05}, {0, 0.2}, {0, 0.05}, kVertex, {1, 0.3}, {1, 0.2}};
  p.vertex_visit = {1, 0, 0, 0, 1, 0, 0};
  const std::vector<Vec2> plane{{0, 0}, {0, 1}, {0, 2}, {0, 3}, {0, 4}, {1, 4}, {2, 4}};
  const auto set = excursion_project(p, 0.1, &plane);
  REQUIRE(set.excursions.size() == 2);
  const auto& a = set.excursions[0];
  CHECK(a.label == 0);
  CHECK(a.t_mu == 2.0);
  CHECK(a.t_kappa == 4.0);
  CHECK(a.up_duration == 2.0);
  CHECK(a.down_duration == 2.0);
  CHECK(!a.censored);
  CHECK(a.displacement == Vec2(0, 2));
  CHECK(a.path.points.back().at_vertex());
  const auto& b = set.excursions[1];
  CHECK(b.label == 1);
  CHECK(b.censored);
  CHECK(b.up_duration == 1.0);
  CHECK(b.displacement == Vec2(1, 0));
  CHECK(set.to_json()["excursions"].size() == 2);
}

TEST_CASE("graph path CSV") {
  GraphPath p;
  p.times = {0.0, 0.5};
  p.points = {kVertex, {2, 0.25}};
  std::ostringstream os;
  p.write_csv(os);
  CHECK(os.str() == "t,edge,y\n0,-1,0\n0.5,2,0.25\n");
}
