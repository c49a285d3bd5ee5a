#include "cellflow/rng.hpp"
#include "cellflow/stats.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

using namespace cellflow;

namespace {

std::vector<double> normals(std::uint64_t seed, std::uint64_t stream, std::size_t n, double shift = 0.0) {
  Rng rng(seed, stream);
  std::vector<double> x(n);
  for (auto& v : x) v = rng.normal() + shift;
  return x;
}

std::vector<Vec2> normals2(std::uint64_t seed, std::uint64_t stream, std::size_t n, double scale = 1.0) {
  Rng rng(seed, stream);
  std::vector<Vec2> x(n);
  for (auto& v : x) v = scale * Vec2(rng.normal(), rng.normal());
  return x;
}

// KS distance of p-values from the uniform law.
double uniform_ks_p(const std::vector<double>& p) {
  return stats::ks_one_sample(p, [](double u) { return std::clamp(u, 0.0, 1.0); }).p_value;
}

}  // namespace

TEST_CASE("Philox streams are reproducible and distinct") {
  Rng a(1, 2, 3), b(1, 2, 3), c(1, 3, 3), d(1, 2, 4);
  std::set<std::uint64_t> seen;
  for (int i = 0; i < 100; ++i) {
    const auto x = a();
    CHECK(x == b());
    seen.insert(x);
    seen.insert(c());
    seen.insert(d());
  }
  CHECK(seen.size() == 300);
  CHECK(mix_seed(7, 1) != mix_seed(7, 2));
  CHECK(mix_seed(7, 1) == mix_seed(7, 1));
}

TEST_CASE("uniform, normal and exponential draws") {
  Rng rng(41, 0);
  std::vector<double> u, z, e;
  for (int i = 0; i < 20000; ++i) {
    u.push_back(rng.uniform());
    z.push_back(rng.normal());
    e.push_back(rng.exponential());
  }
  for (double v : u) CHECK((v > 0.0 && v < 1.0));
  CHECK(stats::ks_one_sample(u, [](double x) { return x; }).p_value > 1e-3);
  CHECK(stats::ks_one_sample(z, stats::normal_cdf).p_value > 1e-3);
  CHECK(stats::ks_one_sample(e, [](double x) { return 1.0 - std::exp(-x); }).p_value > 1e-3);
}

TEST_CASE("moments and linear fit") {
  const std::vector<double> x{1, 2, 3, 4};
  CHECK(stats::mean(x) == doctest::Approx(2.5));
  CHECK(stats::variance(x) == doctest::Approx(5.0 / 3.0));
  CHECK(stats::kurtosis(normals(42, 0, 200000)) == doctest::Approx(3.0).epsilon(0.02));
  const auto fit = stats::linear_fit({0, 1, 2, 3}, {1, 3, 5, 7});
  CHECK(fit.slope == doctest::Approx(2.0));
  CHECK(fit.intercept == doctest::Approx(1.0));
  CHECK(fit.r2 == doctest::Approx(1.0));
  CHECK(fit.slope_se == doctest::Approx(0.0));
}

TEST_CASE("normal quantile and Kolmogorov tail") {
  CHECK(stats::normal_quantile(0.975) == doctest::Approx(1.959963984540054).epsilon(1e-10));
  CHECK(stats::normal_cdf(stats::normal_quantile(0.1)) == doctest::Approx(0.1).epsilon(1e-10));
  CHECK(stats::kolmogorov_survival(1.3580986) == doctest::Approx(0.05).epsilon(1e-4));
  CHECK(stats::kolmogorov_survival(0.0) == doctest::Approx(1.0));
}

TEST_CASE("two-sample KS is calibrated under the null and has power") {
  std::vector<double> p;
  for (std::uint64_t r = 0; r < 300; ++r) p.push_back(stats::ks_two_sample(normals(43, 2 * r, 400), normals(43, 2 * r + 1, 300)).p_value);
  CHECK(uniform_ks_p(p) > 1e-3);
  CHECK(stats::ks_two_sample(normals(44, 0, 1000), normals(44, 1, 1000, 0.3)).p_value < 1e-6);
}

TEST_CASE("energy test is calibrated under the null and has power") {
  std::vector<double> p;
  for (std::uint64_t r = 0; r < 100; ++r)
    p.push_back(stats::energy_test(normals2(45, 2 * r, 150), normals2(45, 2 * r + 1, 150), 199, r).p_value);
  const auto small = std::count_if(p.begin(), p.end(), [](double v) { return v < 0.05; });
  CHECK(small <= 14);
  CHECK(uniform_ks_p(p) > 1e-3);
  CHECK(stats::energy_test(normals2(46, 0, 500), normals2(46, 1, 500, 1.3), 199, 1).p_value < 0.01);
}

TEST_CASE("energy statistic approximates the exact form") {
  const auto x = normals2(47, 0, 60), y = normals2(47, 1, 50, 1.5);
  auto mean_dist = [](const std::vector<Vec2>& a, const std::vector<Vec2>& b) {
    double s = 0.0;
    for (const auto& u : a)
      for (const auto& v : b) s += (u - v).norm();
    return s / static_cast<double>(a.size() * b.size());
  };
  const double nm = 60.0 * 50.0 / 110.0;
  const double exact = nm * (2.0 * mean_dist(x, y) - mean_dist(x, x) - mean_dist(y, y));
  const double approx = stats::energy_statistic(x, y, 256);
  // Direction averaging recovers |z| up to the E|u.z| = (2 / pi) |z| constant.
  CHECK(approx > 0.0);
  CHECK(std::abs(approx / exact - 1.0) < 0.05);
}

TEST_CASE("chi-square goodness of fit") {
  CHECK(stats::chi_square_gof({25, 25, 25, 25}, {0.25, 0.25, 0.25, 0.25}).p_value == doctest::Approx(1.0));
  CHECK(stats::chi_square_gof({90, 10}, {0.5, 0.5}).p_value < 1e-10);
}

TEST_CASE("Wilson interval") {
  const auto [lo, hi] = stats::wilson_interval(5, 10);
  CHECK(lo == doctest::Approx(0.2366).epsilon(1e-3));
  CHECK(hi == doctest::Approx(0.7634).epsilon(1e-3));
  const auto [z0, z1] = stats::wilson_interval(0, 20);
  CHECK(z0 == 0.0);
  CHECK(z1 == doctest::Approx(0.1611).epsilon(1e-3));
}

TEST_CASE("bootstrap interval covers the mean") {
  const auto x = normals(48, 0, 500);
  const auto [lo, hi] = stats::bootstrap_ci(
      x.size(),
      [&](const std::vector<std::size_t>& idx) {
        double s = 0.0;
        for (auto i : idx) s += x[i];
        return s / static_cast<double>(idx.size());
      },
      500, 0.95, 1);
  const double m = stats::mean(x);
  CHECK(lo < m);
  CHECK(hi > m);
  CHECK(hi - lo == doctest::Approx(2 * 1.96 / std::sqrt(500.0)).epsilon(0.2));
}

TEST_CASE("Holm step-down") {
  const auto h = stats::holm({0.01, 0.04, 0.03, 0.005}, 0.05);
  CHECK(h.adjusted[3] == doctest::Approx(0.02));
  CHECK(h.adjusted[0] == doctest::Approx(0.03));
  CHECK(h.adjusted[2] == doctest::Approx(0.06));
  CHECK(h.adjusted[1] == doctest::Approx(0.06));
  CHECK(h.reject == std::vector<bool>{true, false, false, true});
}

TEST_CASE("distance correlation detects dependence") {
  const auto x = normals2(49, 0, 400);
  std::vector<int> indep, dep;
  Rng rng(49, 1);
  for (const auto& v : x) {
    indep.push_back(static_cast<int>(rng.uniform() * 4));
    dep.push_back(v.x() > 0 ? 1 : 0);
  }
  CHECK(stats::distance_correlation_test(x, indep, 199, 1).p_value > 1e-3);
  CHECK(stats::distance_correlation_test(x, dep, 199, 1).p_value < 0.01);
}

TEST_CASE("runs test") {
  std::vector<int> alt;
  for (int i = 0; i < 100; ++i) alt.push_back(i % 2);
  CHECK(stats::runs_test(alt).p_value < 1e-6);
  Rng rng(50, 0);
  std::vector<int> rnd;
  for (int i = 0; i < 400; ++i) rnd.push_back(rng.uniform() < 0.5);
  CHECK(stats::runs_test(rnd).p_value > 1e-3);
}
