#include "cellflow/fk_process.hpp"

#include "cellflow/parallel.hpp"
#include "cellflow/stats.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace cellflow {

Mat2 cholesky_factor(const Mat2& q) {
  if (!q.allFinite() || std::abs(q(0, 1) - q(1, 0)) > 1e-12 * std::max(1.0, q.cwiseAbs().maxCoeff()))
    throw ConfigError("Q must be a finite symmetric matrix");
  Eigen::LLT<Mat2> llt(q);
  if (llt.info() != Eigen::Success || !(q(0, 0) * q(1, 1) - q(0, 1) * q(1, 0) > 0.0))
    throw ConfigError("Q must be positive definite");
  return llt.matrixL();
}

FKPath sample_fk(const FlowCoefficients& coeffs, double horizon, Rng& rng, const YOptions& opt) {
  if (!coeffs.has_Q) throw ConfigError("sample_fk: coefficients carry no Q");
  if (!(horizon >= 0.0)) throw ConfigError("sample_fk: horizon must be nonnegative");
  const Mat2 chol = cholesky_factor(coeffs.Q);
  YProcess y(coeffs, kVertex, opt.dt, rng);
  const auto n = static_cast<std::size_t>(std::llround(horizon / opt.dt));
  FKPath out;
  out.y.resolution = opt.exc_resolution * std::sqrt(opt.dt);
  Vec2 w = Vec2::Zero();
  auto push = [&](double t) {
    out.times.push_back(t);
    out.positions.push_back(w);
    out.local_time.push_back(y.local_time());
    out.y.times.push_back(t);
    out.y.points.push_back(y.point());
    out.y.vertex_visit.push_back(y.crossed() || y.driving() == 0.0 ? 1 : 0);
    out.y.driving.push_back(y.driving());
    out.y.local_time.push_back(y.local_time());
  };
  push(0.0);
  out.y.points.back() = kVertex;
  for (std::size_t k = 1; k <= n; ++k) {
    const double l0 = y.local_time();
    y.step();
    const double dl = y.local_time() - l0;
    if (dl > 0.0) w += chol * (std::sqrt(dl) * Vec2(rng.normal(), rng.normal()));
    push(static_cast<double>(k) * opt.dt);
  }
  return out;
}

std::vector<Vec2> time_changed_bm(const Mat2& q, const std::vector<double>& clock, Rng& rng) {
  const Mat2 chol = cholesky_factor(q);
  std::vector<Vec2> out;
  out.reserve(clock.size());
  Vec2 w = Vec2::Zero();
  double prev = 0.0;
  for (double c : clock) {
    if (!(c >= prev)) throw DomainError("time_changed_bm: clock must be nonnegative and nondecreasing");
    if (c > prev) w += chol * (std::sqrt(c - prev) * Vec2(rng.normal(), rng.normal()));
    prev = c;
    out.push_back(w);
  }
  return out;
}

std::vector<std::vector<Vec2>> sample_fk_marginals(const FlowCoefficients& coeffs, const std::vector<double>& probes,
                                                   std::size_t n, std::uint64_t seed, const YOptions& opt,
                                                   unsigned workers) {
  if (!coeffs.has_Q) throw ConfigError("sample_fk_marginals: coefficients carry no Q");
  if (!std::is_sorted(probes.begin(), probes.end()) || (!probes.empty() && probes.front() < 0.0))
    throw ConfigError("sample_fk_marginals: probe times must be nonnegative and increasing");
  const Mat2 chol = cholesky_factor(coeffs.Q);
  std::vector<std::size_t> at;
  for (double t : probes) at.push_back(static_cast<std::size_t>(std::llround(t / opt.dt)));
  std::vector<std::vector<Vec2>> out(n);
  parallel_for(n, workers, [&](std::size_t i) {
    Rng rng(seed, i, 0x464b);
    YProcess y(coeffs, kVertex, opt.dt, rng);
    Vec2 w = Vec2::Zero();
    std::size_t k = 0;
    auto& row = out[i];
    row.reserve(at.size());
    for (std::size_t target : at) {
      while (k < target) {
        const double l0 = y.local_time();
        y.step();
        ++k;
        const double dl = y.local_time() - l0;
        if (dl > 0.0) w += chol * (std::sqrt(dl) * Vec2(rng.normal(), rng.normal()));
      }
      row.push_back(w);
    }
  });
  return out;
}

std::vector<double> local_time_to_exit(const FlowCoefficients& coeffs, double delta, std::size_t n,
                                       std::uint64_t seed, const YOptions& opt, unsigned workers) {
  if (!(delta > 0.0)) throw ConfigError("local_time_to_exit: delta must be positive");
  if (delta < opt.exc_resolution * std::sqrt(opt.dt))
    throw ResolutionError("local_time_to_exit: delta is below the excursion resolution");
  std::vector<double> out(n);
  parallel_for(n, workers, [&](std::size_t i) {
    Rng rng(seed, i, 0x4c54);
    YProcess y(coeffs, kVertex, opt.dt, rng);
    while (y.point().y < delta) y.step();
    out[i] = y.local_time();
  });
  return out;
}

SeparatrixSampler::SeparatrixSampler(const HamiltonianField& field) : field_(&field) {
  if (field.saddles().empty()) throw ConfigError("separatrix sampler: field has no saddles");
  double acc = 0.0;
  for (auto& orbit : separatrix_orbits(field)) {
    if (orbit.trail.size() < 2) continue;
    acc += orbit.trail.back().first;
    cumulative_.push_back(acc);
    polylines_.push_back(std::move(orbit.trail));
  }
  if (polylines_.empty()) throw NumericalError("separatrix sampler: no traced orbits");
}

Vec2 SeparatrixSampler::sample(Rng& rng) const {
  const double u = rng.uniform() * cumulative_.back();
  const auto k = static_cast<std::size_t>(std::upper_bound(cumulative_.begin(), cumulative_.end(), u) -
                                          cumulative_.begin());
  const auto& line = polylines_[std::min(k, polylines_.size() - 1)];
  const double s = std::min(u - (k == 0 ? 0.0 : cumulative_[k - 1]), line.back().first);
  auto it = std::upper_bound(line.begin(), line.end(), s,
                             [](double v, const std::pair<double, Vec2>& p) { return v < p.first; });
  if (it == line.end()) it = std::prev(line.end());
  if (it == line.begin()) it = std::next(line.begin());
  const auto& [s1, x1] = *it;
  const auto& [s0, x0] = *std::prev(it);
  Vec2 x = s1 > s0 ? x0 + (s - s0) / (s1 - s0) * (x1 - x0) : x0;
  for (int i = 0; i < 4; ++i) {
    const double h = field_->value(x);
    const Vec2 g = field_->gradient(x);
    if (g.squaredNorm() == 0.0 || h == 0.0) break;
    x -= h * g / g.squaredNorm();
  }
  return x;
}

nlohmann::json UpcrossingPool::to_json() const {
  auto pairs = [](const std::vector<Vec2>& v) {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& p : v) a.push_back({p.x(), p.y()});
    return a;
  };
  return {{"delta", delta},
          {"epsilon", epsilon},
          {"alpha", alpha},
          {"cycles", displacements.size()},
          {"attempted", attempted},
          {"censored", censored},
          {"censoring_fraction", censoring_fraction()},
          {"displacements", pairs(displacements)},
          {"up_displacements", pairs(up_displacements)},
          {"exit_edges", exit_edges},
          {"durations", durations}};
}

UpcrossingPool sample_upcrossings(const HamiltonianField& field, const SimConfig& cfg, double delta,
                                  std::size_t n_cycles, const StartSampler& start, unsigned workers) {
  cfg.validate();
  if (!(delta > 0.0)) throw ConfigError("upcrossings: delta must be positive");
  std::optional<SeparatrixSampler> sampler;
  if (start.kind == StartSampler::Kind::uniform_separatrix) sampler.emplace(field);
  const SdeEngine engine(field, cfg.epsilon, cfg.dt_max, cfg.dt_safety);
  const double scale = cfg.time_scale();
  const double t_end = cfg.horizon * scale;
  struct Cycle {
    Vec2 disp = Vec2::Zero();
    Vec2 up = Vec2::Zero();
    int edge = -1;
    double duration = 0.0;
    bool complete = false;
  };
  std::vector<Cycle> cycles(n_cycles);
  parallel_for(n_cycles, workers, [&](std::size_t i) {
    Rng start_rng(cfg.seed, i, 1);
    const Vec2 x0 = sampler ? sampler->sample(start_rng) : start.point;
    Rng rng(cfg.seed, i);
    PathIntegrator path(engine, x0, rng);
    CrossingTracker tracker(field, delta, cfg.epsilon, cfg.alpha);
    tracker.observe(0.0, x0, path.h());
    path.advance_to(t_end, [&](double t, const Vec2& x, double h) {
      tracker.observe(t, x, h);
      return tracker.record().displacements.empty();
    });
    const auto& rec = tracker.record();
    Cycle& c = cycles[i];
    if (!rec.mu.empty()) {
      c.up = rec.up_displacements[0];
      c.edge = rec.exit_edges[0];
      c.duration = (rec.mu[0] - rec.kappa[0]) / scale;
    }
    if (!rec.displacements.empty()) {
      c.disp = rec.displacements[0];
      c.complete = true;
    }
  });
  UpcrossingPool pool;
  pool.delta = delta;
  pool.epsilon = cfg.epsilon;
  pool.alpha = cfg.alpha;
  pool.attempted = n_cycles;
  for (const auto& c : cycles) {
    if (c.edge >= 0) {
      pool.up_displacements.push_back(c.up);
      pool.exit_edges.push_back(c.edge);
      pool.durations.push_back(c.duration);
    }
    if (c.complete)
      pool.displacements.push_back(c.disp);
    else
      ++pool.censored;
  }
  return pool;
}

namespace {

void covariance_and_kurtosis(const std::vector<Vec2>& d, const std::vector<std::size_t>* idx, Mat2& cov,
                             std::array<double, 2>& kurt) {
  const std::size_t n = idx ? idx->size() : d.size();
  auto at = [&](std::size_t k) -> const Vec2& { return idx ? d[(*idx)[k]] : d[k]; };
  Vec2 m = Vec2::Zero();
  for (std::size_t k = 0; k < n; ++k) m += at(k);
  m /= static_cast<double>(n);
  cov.setZero();
  Vec2 m4 = Vec2::Zero();
  for (std::size_t k = 0; k < n; ++k) {
    const Vec2 c = at(k) - m;
    cov += c * c.transpose();
    m4 += c.cwiseProduct(c).cwiseProduct(c.cwiseProduct(c));
  }
  const Vec2 m2 = cov.diagonal() / static_cast<double>(n);
  m4 /= static_cast<double>(n);
  cov /= static_cast<double>(n - 1);
  cov = 0.5 * (cov + cov.transpose()).eval();
  for (int c = 0; c < 2; ++c) kurt[c] = m2[c] > 0.0 ? m4[c] / (m2[c] * m2[c]) : 0.0;
}

double quantile_sorted(std::vector<double>& v, double q) {
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

}  // namespace

QEstimate estimate_Q(const std::vector<Vec2>& displacements, double delta, double epsilon, double alpha,
                     std::uint64_t seed, int n_boot, double level) {
  constexpr std::size_t kMinSamples = 100;
  if (displacements.size() < kMinSamples) {
    std::ostringstream msg;
    msg << "estimate_Q: " << displacements.size() << " displacement samples, at least " << kMinSamples
        << " required";
    throw StatisticalError(msg.str());
  }
  if (!(delta > 0.0) || !(epsilon > 0.0)) throw ConfigError("estimate_Q: delta and epsilon must be positive");
  const double factor = std::pow(epsilon, 0.5 * (1.0 - alpha)) / delta;
  QEstimate est;
  est.n = displacements.size();
  Mat2 cov;
  covariance_and_kurtosis(displacements, nullptr, cov, est.kurtosis);
  est.q = factor * cov;
  if (n_boot >= 2) {
    const std::size_t n = displacements.size();
    std::array<std::vector<double>, 5> draws;
    Rng rng(seed, 0x51);
    std::vector<std::size_t> idx(n);
    std::array<double, 2> k;
    for (int b = 0; b < n_boot; ++b) {
      for (auto& i : idx) i = std::min(n - 1, static_cast<std::size_t>(rng.uniform() * static_cast<double>(n)));
      covariance_and_kurtosis(displacements, &idx, cov, k);
      draws[0].push_back(factor * cov(0, 0));
      draws[1].push_back(factor * cov(0, 1));
      draws[2].push_back(factor * cov(1, 1));
      draws[3].push_back(k[0]);
      draws[4].push_back(k[1]);
    }
    const double tail = 0.5 * (1.0 - level);
    auto ci = [&](int j) { return std::pair{quantile_sorted(draws[j], tail), quantile_sorted(draws[j], 1.0 - tail)}; };
    const auto [a_lo, a_hi] = ci(0);
    const auto [b_lo, b_hi] = ci(1);
    const auto [c_lo, c_hi] = ci(2);
    est.lo << a_lo, b_lo, b_lo, c_lo;
    est.hi << a_hi, b_hi, b_hi, c_hi;
    std::tie(est.kurtosis_lo[0], est.kurtosis_hi[0]) = ci(3);
    std::tie(est.kurtosis_lo[1], est.kurtosis_hi[1]) = ci(4);
  } else {
    est.lo = est.hi = est.q;
    est.kurtosis_lo = est.kurtosis_hi = est.kurtosis;
  }
  return est;
}

QEstimate estimate_Q(const std::vector<CrossingRecord>& records, double delta, double epsilon, double alpha,
                     std::uint64_t seed, int n_boot, double level) {
  std::vector<Vec2> d;
  for (const auto& r : records) d.insert(d.end(), r.displacements.begin(), r.displacements.end());
  return estimate_Q(d, delta, epsilon, alpha, seed, n_boot, level);
}

QEstimate estimate_Q(const UpcrossingPool& pool, std::uint64_t seed, int n_boot, double level) {
  QEstimate est = estimate_Q(pool.displacements, pool.delta, pool.epsilon, pool.alpha, seed, n_boot, level);
  est.censoring_fraction = pool.censoring_fraction();
  return est;
}

nlohmann::json QEstimate::to_json() const {
  auto mat = [](const Mat2& m) { return nlohmann::json{{m(0, 0), m(0, 1)}, {m(1, 0), m(1, 1)}}; };
  return {{"Q", mat(q)},
          {"Q_lo", mat(lo)},
          {"Q_hi", mat(hi)},
          {"kurtosis", kurtosis},
          {"kurtosis_lo", kurtosis_lo},
          {"kurtosis_hi", kurtosis_hi},
          {"n", n},
          {"censoring_fraction", censoring_fraction}};
}

ExitProbEstimate estimate_exit_probs(const std::vector<int>& exit_edges, int edges, double z) {
  if (edges < 1) throw ConfigError("estimate_exit_probs: need at least one edge");
  ExitProbEstimate est;
  est.counts.assign(static_cast<std::size_t>(edges), 0);
  for (int e : exit_edges) {
    if (e < 0 || e >= edges) throw DomainError("estimate_exit_probs: exit edge out of range");
    ++est.counts[static_cast<std::size_t>(e)];
  }
  est.n = exit_edges.size();
  for (std::size_t c : est.counts) {
    est.p.push_back(est.n ? static_cast<double>(c) / static_cast<double>(est.n) : 0.0);
    const auto [lo, hi] = stats::wilson_interval(c, est.n, z);
    est.lo.push_back(lo);
    est.hi.push_back(hi);
  }
  return est;
}

ExitProbEstimate estimate_exit_probs(const std::vector<CrossingRecord>& records, int edges, double z) {
  std::vector<int> e;
  for (const auto& r : records) e.insert(e.end(), r.exit_edges.begin(), r.exit_edges.end());
  return estimate_exit_probs(e, edges, z);
}

nlohmann::json ExitProbEstimate::to_json() const {
  return {{"p", p}, {"lo", lo}, {"hi", hi}, {"counts", counts}, {"n", n}};
}

}  // namespace cellflow
