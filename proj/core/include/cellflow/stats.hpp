#pragma once

#include "cellflow/common.hpp"

#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

namespace cellflow::stats {

struct TestResult {
  double statistic = 0.0;
  double p_value = 1.0;
};

double mean(const std::vector<double>& x);
double variance(const std::vector<double>& x);  // unbiased
// Non-excess kurtosis m4 / m2^2.
double kurtosis(const std::vector<double>& x);

struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
  double slope_se = 0.0;
};
LinearFit linear_fit(const std::vector<double>& x, const std::vector<double>& y);

double normal_quantile(double p);
double normal_cdf(double x);

// Survival function of the Kolmogorov distribution.
double kolmogorov_survival(double lambda);
TestResult ks_two_sample(std::vector<double> a, std::vector<double> b);
TestResult ks_one_sample(std::vector<double> x, const std::function<double(double)>& cdf);

// Two-sample energy statistic for planar samples. |z| is written as the
// average of |u.z| over directions u, so each direction costs one sort of the
// pooled sample and one linear pass per permutation.
double energy_statistic(const std::vector<Vec2>& x, const std::vector<Vec2>& y, int n_dirs = 64);
TestResult energy_test(const std::vector<Vec2>& x, const std::vector<Vec2>& y, int n_perm, std::uint64_t seed,
                       int n_dirs = 64);

TestResult chi_square_gof(const std::vector<std::size_t>& counts, const std::vector<double>& probs);

std::pair<double, double> wilson_interval(std::size_t k, std::size_t n, double z = 1.959963984540054);

// Percentile bootstrap interval of stat over resamples of the index set.
std::pair<double, double> bootstrap_ci(std::size_t n, const std::function<double(const std::vector<std::size_t>&)>& stat,
                                       int n_boot, double level, std::uint64_t seed);

struct HolmResult {
  std::vector<double> adjusted;
  std::vector<bool> reject;
};
HolmResult holm(const std::vector<double>& p_values, double alpha);

// Distance correlation between planar points and categorical labels, with a
// permutation p-value. At most max_n points are used.
TestResult distance_correlation_test(const std::vector<Vec2>& x, const std::vector<int>& labels, int n_perm,
                                     std::uint64_t seed, std::size_t max_n = 1500);

// Wald-Wolfowitz runs test on a two-valued sequence.
TestResult runs_test(const std::vector<int>& sequence);

}  // namespace cellflow::stats
