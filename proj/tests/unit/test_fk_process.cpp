#include "cellflow/fk_process.hpp"
#include "cellflow/stats.hpp"

#include <doctest.h>

#include <cmath>

using namespace cellflow;

namespace {

Mat2 second_moment(const std::vector<Vec2>& x) {
  Mat2 m = Mat2::Zero();
  for (const auto& v : x) m += v * v.transpose();
  return m / static_cast<double>(x.size());
}

}  // namespace

TEST_CASE("Cholesky factor of Q") {
  Mat2 q;
  q << 2.0, 0.5, 0.5, 1.0;
  const Mat2 l = cholesky_factor(q);
  CHECK((l * l.transpose() - q).norm() < 1e-14);
  CHECK(l(0, 1) == 0.0);
  Mat2 bad;
  bad << 1.0, 2.0, 2.0, 1.0;
  CHECK_THROWS_AS(cholesky_factor(bad), ConfigError);
  bad << 1.0, 0.1, 0.2, 1.0;
  CHECK_THROWS_AS(cholesky_factor(bad), ConfigError);
}

TEST_CASE("time-changed Brownian motion has covariance Q times the clock") {
  Mat2 q;
  q << 1.5, 0.4, 0.4, 0.8;
  const std::vector<double> clock{0.5, 0.5, 2.0};
  std::vector<std::vector<Vec2>> at(3);
  for (std::size_t i = 0; i < 4000; ++i) {
    Rng rng(31, i);
    const auto w = time_changed_bm(q, clock, rng);
    for (int k = 0; k < 3; ++k) at[k].push_back(w[k]);
  }
  for (int k = 0; k < 3; ++k) {
    const Mat2 m = second_moment(at[k]);
    CHECK((m - clock[k] * q).norm() < 0.08 * clock[k] * q.norm());
  }
  for (std::size_t i = 0; i < at[0].size(); ++i) CHECK(at[0][i] == at[1][i]);
  Rng rng(1, 0);
  CHECK_THROWS_AS(time_changed_bm(q, {1.0, 0.5}, rng), DomainError);
}

TEST_CASE("FK marginals: second moment Q E L_t with E L_t = factor sqrt(2t/pi)") {
  auto c = FlowCoefficients::symmetric(4, 4.0);
  c.has_Q = true;
  c.Q << 1.5, 0.3, 0.3, 1.0;
  YOptions opt;
  opt.dt = 1e-4;
  const std::vector<double> t{0.25, 1.0};
  const auto m = sample_fk_marginals(c, t, 4000, 32, opt);
  for (std::size_t k = 0; k < t.size(); ++k) {
    std::vector<Vec2> x;
    for (const auto& row : m) x.push_back(row[k]);
    const double el = c.local_time_factor * std::sqrt(2.0 * t[k] / kPi);
    CHECK((second_moment(x) - el * c.Q).norm() < 0.08 * el * c.Q.norm());
  }
  const auto m2 = sample_fk_marginals(c, t, 8, 32, opt, 3);
  for (std::size_t i = 0; i < 8; ++i) CHECK(m2[i][1] == m[i][1]);
  c.has_Q = false;
  CHECK_THROWS_AS(sample_fk_marginals(c, t, 1, 1, opt), ConfigError);
}

TEST_CASE("single FK path is consistent") {
  auto c = FlowCoefficients::symmetric(4, 4.0);
  c.has_Q = true;
  c.Q = Mat2::Identity();
  Rng rng(33, 0);
  YOptions opt;
  opt.dt = 1e-4;
  const auto p = sample_fk(c, 0.5, rng, opt);
  REQUIRE(p.times.size() == 5001);
  CHECK(p.positions.front() == Vec2::Zero());
  for (std::size_t k = 1; k < p.times.size(); ++k) {
    CHECK(p.local_time[k] >= p.local_time[k - 1]);
    if (p.local_time[k] == p.local_time[k - 1]) CHECK(p.positions[k] == p.positions[k - 1]);
  }
  CHECK(p.y.size() == p.times.size());
}

TEST_CASE("local time at exit is exponential with mean factor * delta / sqrt(a)") {
  const auto c = FlowCoefficients::symmetric(4, 4.0);
  YOptions opt;
  opt.dt = 1e-6;
  const double delta = 0.1;
  const auto l = local_time_to_exit(c, delta, 2000, 34, opt);
  const double mean = c.local_time_factor * delta / 2.0;
  CHECK(std::abs(stats::mean(l) - mean) < 4.0 * mean / std::sqrt(2000.0) + 0.02 * mean);
  const auto ks = stats::ks_one_sample(l, [&](double x) { return 1.0 - std::exp(-x / mean); });
  CHECK(ks.p_value > 1e-3);
  CHECK_THROWS_AS(local_time_to_exit(c, 1e-4, 1, 1, opt), ResolutionError);
}

TEST_CASE("separatrix sampler") {
  const auto f = HamiltonianField::sin_sin();
  const SeparatrixSampler s(f);
  std::vector<std::size_t> counts(2, 0);
  for (std::size_t i = 0; i < 2000; ++i) {
    Rng rng(35, i);
    const Vec2 x = s.sample(rng);
    CHECK(std::abs(f.value(x)) < 1e-10);
    // Vertical segments have sin x1 = 0.
    ++counts[std::abs(std::sin(x.x())) < 1e-4 ? 0 : 1];
  }
  CHECK(stats::chi_square_gof(counts, {0.5, 0.5}).p_value > 1e-3);
  CHECK_THROWS_AS(SeparatrixSampler(HamiltonianField::zero()), ConfigError);
}

TEST_CASE("Q estimator on Gaussian displacements") {
  Mat2 sigma;
  sigma << 0.04, 0.01, 0.01, 0.02;
  const Mat2 l = cholesky_factor(sigma);
  std::vector<Vec2> d;
  Rng rng(36, 0);
  for (int i = 0; i < 5000; ++i) d.push_back(l * Vec2(rng.normal(), rng.normal()));
  const double eps = 1e-2, alpha = 0.5, delta = 0.1;
  const auto q = estimate_Q(d, delta, eps, alpha, 1, 400);
  const Mat2 expect = std::pow(eps, 0.25) / delta * sigma;
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) {
      CHECK(q.lo(i, j) <= q.q(i, j));
      CHECK(q.q(i, j) <= q.hi(i, j));
      CHECK(std::abs(q.q(i, j) - expect(i, j)) < 0.06 * expect(0, 0));
    }
  for (int i = 0; i < 2; ++i) {
    CHECK(q.kurtosis_lo[i] < 3.0);
    CHECK(q.kurtosis_hi[i] > 3.0);
  }
  CHECK(q.n == 5000);
  d.resize(50);
  CHECK_THROWS_AS(estimate_Q(d, delta, eps, alpha), StatisticalError);
}

TEST_CASE("exit probabilities") {
  const auto e = estimate_exit_probs(std::vector<int>{0, 1, 1, 2, 1}, 4);
  CHECK(e.n == 5);
  CHECK(e.counts == std::vector<std::size_t>{1, 3, 1, 0});
  CHECK(e.p[1] == doctest::Approx(0.6));
  CHECK(e.lo[3] == 0.0);
  CHECK(e.hi[3] > 0.0);
  CHECK_THROWS_AS(estimate_exit_probs(std::vector<int>{4}, 4), DomainError);
}

TEST_CASE("upcrossing pool at moderate epsilon") {
  const auto f = HamiltonianField::sin_sin();
  SimConfig c;
  c.epsilon = 1e-2;
  c.alpha = 0.5;
  c.dt_safety = 5.0;
  c.horizon = 4.0;
  c.seed = 37;
  StartSampler start;
  start.kind = StartSampler::Kind::uniform_separatrix;
  const auto pool = sample_upcrossings(f, c, 0.1, 200, start, 1);
  CHECK(pool.attempted == 200);
  CHECK(pool.exit_edges.size() == pool.up_displacements.size());
  CHECK(pool.durations.size() == pool.up_displacements.size());
  CHECK(pool.displacements.size() + pool.censored == 200);
  CHECK(pool.censoring_fraction() < 0.1);
  for (int e : pool.exit_edges) CHECK((e >= 0 && e < 4));
  for (double d : pool.durations) CHECK(d > 0.0);
  const auto again = sample_upcrossings(f, c, 0.1, 200, start, 3);
  CHECK(again.displacements == pool.displacements);
  CHECK(pool.to_json()["cycles"] == pool.displacements.size());
}
