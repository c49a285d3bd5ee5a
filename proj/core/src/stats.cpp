#include "cellflow/stats.hpp"

#include "cellflow/rng.hpp"

#include <boost/math/distributions/normal.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace cellflow::stats {

double mean(const std::vector<double>& x) {
  if (x.empty()) return 0.0;
  return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

double variance(const std::vector<double>& x) {
  if (x.size() < 2) return 0.0;
  const double m = mean(x);
  double s = 0.0;
  for (double v : x) s += (v - m) * (v - m);
  return s / static_cast<double>(x.size() - 1);
}

double kurtosis(const std::vector<double>& x) {
  if (x.size() < 2) return 0.0;
  const double m = mean(x);
  double m2 = 0.0, m4 = 0.0;
  for (double v : x) {
    const double d2 = (v - m) * (v - m);
    m2 += d2;
    m4 += d2 * d2;
  }
  const double n = static_cast<double>(x.size());
  m2 /= n;
  m4 /= n;
  return m2 > 0.0 ? m4 / (m2 * m2) : 0.0;
}

LinearFit linear_fit(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw ConfigError("linear_fit: need at least two paired points");
  const double n = static_cast<double>(x.size());
  const double mx = mean(x), my = mean(y);
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0) throw ConfigError("linear_fit: abscissae are all equal");
  LinearFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  f.r2 = syy > 0.0 ? sxy * sxy / (sxx * syy) : 1.0;
  if (x.size() > 2) {
    const double sse = std::max(0.0, syy - f.slope * sxy);
    f.slope_se = std::sqrt(sse / (n - 2.0) / sxx);
  }
  return f;
}

double normal_quantile(double p) {
  return boost::math::quantile(boost::math::normal_distribution<double>(), p);
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

double kolmogorov_survival(double lambda) {
  if (lambda <= 0.0) return 1.0;
  if (lambda < 1.18) {
    // Jacobi-transformed series converges fast for small lambda.
    const double c = -kPi * kPi / (8.0 * lambda * lambda);
    double s = 0.0;
    for (int k = 1; k <= 20; ++k) s += std::exp(c * (2 * k - 1) * (2 * k - 1));
    return std::clamp(1.0 - std::sqrt(kTwoPi) / lambda * s, 0.0, 1.0);
  }
  double s = 0.0;
  for (int k = 1; k <= 100; ++k) {
    const double term = std::exp(-2.0 * k * k * lambda * lambda);
    s += (k % 2 == 1 ? 1.0 : -1.0) * term;
    if (term < 1e-300) break;
  }
  return std::clamp(2.0 * s, 0.0, 1.0);
}

TestResult ks_two_sample(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) throw ConfigError("ks_two_sample: empty sample");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < a.size() && j < b.size()) {
    const double v = std::min(a[i], b[j]);
    while (i < a.size() && a[i] == v) ++i;
    while (j < b.size() && b[j] == v) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
  }
  const double en = std::sqrt(na * nb / (na + nb));
  return {d, kolmogorov_survival((en + 0.12 + 0.11 / en) * d)};
}

TestResult ks_one_sample(std::vector<double> x, const std::function<double(double)>& cdf) {
  if (x.empty()) throw ConfigError("ks_one_sample: empty sample");
  std::sort(x.begin(), x.end());
  const double n = static_cast<double>(x.size());
  double d = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double f = cdf(x[i]);
    d = std::max({d, static_cast<double>(i + 1) / n - f, f - static_cast<double>(i) / n});
  }
  const double en = std::sqrt(n);
  return {d, kolmogorov_survival((en + 0.12 + 0.11 / en) * d)};
}

namespace {

// Pooled projections sorted once per direction; E|z| = (pi / 2) E_u |u.z| in
// the plane, with the direction average done by the midpoint rule.
struct Projections {
  std::size_t n = 0, m = 0;
  std::vector<std::vector<double>> sorted;         // per direction
  std::vector<std::vector<std::uint32_t>> origin;  // pooled index per sorted slot
  std::vector<double> total;                       // sum over all pairs i < j
};

Projections project_pool(const std::vector<Vec2>& x, const std::vector<Vec2>& y, int n_dirs) {
  Projections p;
  p.n = x.size();
  p.m = y.size();
  const std::size_t nn = p.n + p.m;
  std::vector<std::uint32_t> idx(nn);
  std::vector<double> proj(nn);
  for (int d = 0; d < n_dirs; ++d) {
    const double th = kPi * (d + 0.5) / n_dirs;
    const Vec2 u(std::cos(th), std::sin(th));
    for (std::size_t i = 0; i < nn; ++i) proj[i] = u.dot(i < p.n ? x[i] : y[i - p.n]);
    std::iota(idx.begin(), idx.end(), 0u);
    std::sort(idx.begin(), idx.end(), [&](std::uint32_t a, std::uint32_t b) { return proj[a] < proj[b]; });
    std::vector<double> s(nn);
    for (std::size_t k = 0; k < nn; ++k) s[k] = proj[idx[k]];
    double tot = 0.0, acc = 0.0;
    for (std::size_t k = 0; k < nn; ++k) {
      tot += s[k] * static_cast<double>(k) - acc;
      acc += s[k];
    }
    p.sorted.push_back(std::move(s));
    p.origin.push_back(idx);
    p.total.push_back(tot);
  }
  return p;
}

// Energy statistic for a labelling of the pooled sample (label 1 = first sample).
double energy_from(const Projections& p, const std::vector<char>& label) {
  const double n = static_cast<double>(p.n), m = static_cast<double>(p.m);
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (std::size_t d = 0; d < p.sorted.size(); ++d) {
    const auto& s = p.sorted[d];
    const auto& o = p.origin[d];
    double cx = 0.0, ax = 0.0, cy = 0.0, ay = 0.0, xx = 0.0, yy = 0.0;
    for (std::size_t k = 0; k < s.size(); ++k) {
      if (label[o[k]]) {
        xx += s[k] * cx - ax;
        cx += 1.0;
        ax += s[k];
      } else {
        yy += s[k] * cy - ay;
        cy += 1.0;
        ay += s[k];
      }
    }
    sxx += xx;
    syy += yy;
    sxy += p.total[d] - xx - yy;
  }
  const double scale = 0.5 * kPi / static_cast<double>(p.sorted.size());
  sxx *= 2.0 * scale;  // ordered pairs
  syy *= 2.0 * scale;
  sxy *= scale;
  return n * m / (n + m) * (2.0 * sxy / (n * m) - sxx / (n * n) - syy / (m * m));
}

}  // namespace

double energy_statistic(const std::vector<Vec2>& x, const std::vector<Vec2>& y, int n_dirs) {
  if (x.empty() || y.empty()) throw ConfigError("energy test: empty sample");
  const Projections p = project_pool(x, y, n_dirs);
  std::vector<char> label(x.size() + y.size(), 0);
  std::fill(label.begin(), label.begin() + static_cast<long>(x.size()), 1);
  return energy_from(p, label);
}

TestResult energy_test(const std::vector<Vec2>& x, const std::vector<Vec2>& y, int n_perm, std::uint64_t seed,
                       int n_dirs) {
  if (x.empty() || y.empty()) throw ConfigError("energy test: empty sample");
  if (n_perm < 1) throw ConfigError("energy test: need at least one permutation");
  const Projections p = project_pool(x, y, n_dirs);
  std::vector<char> label(x.size() + y.size(), 0);
  std::fill(label.begin(), label.begin() + static_cast<long>(x.size()), 1);
  const double e0 = energy_from(p, label);
  Rng rng(seed, 0x656e6572);
  int exceed = 0;
  for (int b = 0; b < n_perm; ++b) {
    for (std::size_t i = label.size() - 1; i > 0; --i) {
      const auto j = static_cast<std::size_t>(rng.uniform() * static_cast<double>(i + 1));
      std::swap(label[i], label[std::min(j, i)]);
    }
    if (energy_from(p, label) >= e0) ++exceed;
  }
  return {e0, (1.0 + exceed) / (1.0 + n_perm)};
}

TestResult chi_square_gof(const std::vector<std::size_t>& counts, const std::vector<double>& probs) {
  if (counts.size() != probs.size() || counts.size() < 2) throw ConfigError("chi_square_gof: size mismatch");
  const double n = static_cast<double>(std::accumulate(counts.begin(), counts.end(), std::size_t{0}));
  double stat = 0.0;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    const double e = n * probs[i];
    if (!(e > 0.0)) throw ConfigError("chi_square_gof: expected count must be positive");
    stat += (static_cast<double>(counts[i]) - e) * (static_cast<double>(counts[i]) - e) / e;
  }
  const double df = static_cast<double>(counts.size() - 1);
  return {stat, boost::math::gamma_q(0.5 * df, 0.5 * stat)};
}

std::pair<double, double> wilson_interval(std::size_t k, std::size_t n, double z) {
  if (n == 0) return {0.0, 1.0};
  const double nn = static_cast<double>(n);
  const double ph = static_cast<double>(k) / nn;
  const double den = 1.0 + z * z / nn;
  const double centre = (ph + z * z / (2.0 * nn)) / den;
  const double half = z * std::sqrt(ph * (1.0 - ph) / nn + z * z / (4.0 * nn * nn)) / den;
  return {std::max(0.0, centre - half), std::min(1.0, centre + half)};
}

std::pair<double, double> bootstrap_ci(std::size_t n, const std::function<double(const std::vector<std::size_t>&)>& stat,
                                       int n_boot, double level, std::uint64_t seed) {
  if (n == 0 || n_boot < 2) throw ConfigError("bootstrap_ci: empty sample or too few resamples");
  Rng rng(seed, 0x626f6f74);
  std::vector<double> vals(static_cast<std::size_t>(n_boot));
  std::vector<std::size_t> idx(n);
  for (auto& v : vals) {
    for (auto& i : idx) i = std::min(n - 1, static_cast<std::size_t>(rng.uniform() * static_cast<double>(n)));
    v = stat(idx);
  }
  std::sort(vals.begin(), vals.end());
  const double tail = 0.5 * (1.0 - level);
  auto at = [&](double q) {
    const double pos = q * static_cast<double>(vals.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, vals.size() - 1);
    return vals[lo] + (pos - static_cast<double>(lo)) * (vals[hi] - vals[lo]);
  };
  return {at(tail), at(1.0 - tail)};
}

HolmResult holm(const std::vector<double>& p_values, double alpha) {
  const std::size_t m = p_values.size();
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return p_values[a] < p_values[b]; });
  HolmResult r;
  r.adjusted.assign(m, 1.0);
  r.reject.assign(m, false);
  double running = 0.0;
  for (std::size_t k = 0; k < m; ++k) {
    const double adj = std::min(1.0, static_cast<double>(m - k) * p_values[order[k]]);
    running = std::max(running, adj);
    r.adjusted[order[k]] = running;
    r.reject[order[k]] = running <= alpha;
  }
  return r;
}

TestResult distance_correlation_test(const std::vector<Vec2>& x, const std::vector<int>& labels, int n_perm,
                                     std::uint64_t seed, std::size_t max_n) {
  if (x.size() != labels.size() || x.size() < 4) throw ConfigError("distance correlation: need paired samples");
  const std::size_t n = std::min(x.size(), max_n);
  auto centred = [n](const std::function<double(std::size_t, std::size_t)>& dist) {
    std::vector<double> a(n * n);
    std::vector<double> row(n, 0.0);
    double all = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        a[i * n + j] = dist(i, j);
        row[i] += a[i * n + j];
      }
    for (double r : row) all += r;
    const double nn = static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) a[i * n + j] += all / (nn * nn) - row[i] / nn - row[j] / nn;
    return a;
  };
  const auto a = centred([&](std::size_t i, std::size_t j) { return (x[i] - x[j]).norm(); });
  const auto b = centred([&](std::size_t i, std::size_t j) { return labels[i] == labels[j] ? 0.0 : 1.0; });
  auto dcov = [&](const std::vector<std::size_t>& perm) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double* ar = &a[i * n];
      const double* br = &b[perm[i] * n];
      for (std::size_t j = 0; j < n; ++j) s += ar[j] * br[perm[j]];
    }
    return s;
  };
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  const double s0 = dcov(perm);
  double saa = 0.0, sbb = 0.0;
  for (std::size_t k = 0; k < n * n; ++k) {
    saa += a[k] * a[k];
    sbb += b[k] * b[k];
  }
  const double dcor = saa > 0.0 && sbb > 0.0 ? std::sqrt(std::max(0.0, s0) / std::sqrt(saa * sbb)) : 0.0;
  Rng rng(seed, 0x64636f72);
  int exceed = 0;
  for (int p = 0; p < n_perm; ++p) {
    for (std::size_t i = n - 1; i > 0; --i) {
      const auto j = static_cast<std::size_t>(rng.uniform() * static_cast<double>(i + 1));
      std::swap(perm[i], perm[std::min(j, i)]);
    }
    if (dcov(perm) >= s0) ++exceed;
  }
  return {dcor, (1.0 + exceed) / (1.0 + n_perm)};
}

TestResult runs_test(const std::vector<int>& sequence) {
  if (sequence.size() < 2) throw ConfigError("runs test: sequence too short");
  double n1 = 0.0, n0 = 0.0, runs = 1.0;
  for (std::size_t i = 0; i < sequence.size(); ++i) {
    (sequence[i] ? n1 : n0) += 1.0;
    if (i > 0 && (sequence[i] != 0) != (sequence[i - 1] != 0)) runs += 1.0;
  }
  if (n1 == 0.0 || n0 == 0.0) return {0.0, 1.0};
  const double n = n1 + n0;
  const double mu = 2.0 * n1 * n0 / n + 1.0;
  const double var = 2.0 * n1 * n0 * (2.0 * n1 * n0 - n) / (n * n * (n - 1.0));
  const double z = (runs - mu) / std::sqrt(var);
  return {z, std::erfc(std::abs(z) / std::sqrt(2.0))};
}

}  // namespace cellflow::stats
