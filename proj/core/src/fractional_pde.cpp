#include "cellflow/fractional_pde.hpp"

#include "fft.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>

namespace cellflow {

namespace {

using cplx = std::complex<double>;
using detail::Fft2;
using detail::wavenumber;

constexpr double kGamma32 = 0.88622692545275801365;  // Gamma(3/2)

// Continued fraction for erfcx at large x, evaluated by the modified Lentz method:
// sqrt(pi) erfcx(x) = 1 / (x + (1/2) / (x + 1 / (x + (3/2) / (x + ...)))).
double erfcx_cf(double x) {
  constexpr double tiny = 1e-300;
  double f = x, c = x, d = 0.0;
  for (int n = 1; n < 500; ++n) {
    const double an = 0.5 * n;
    d = x + an * d;
    if (d == 0.0) d = tiny;
    c = x + an / c;
    if (c == 0.0) c = tiny;
    d = 1.0 / d;
    const double delta = c * d;
    f *= delta;
    if (std::abs(delta - 1.0) < 1e-16) break;
  }
  return 1.0 / (std::sqrt(kPi) * f);
}

void check_times(const std::vector<double>& times) {
  if (times.empty()) throw ConfigError("at least one output time is required");
  for (std::size_t i = 0; i < times.size(); ++i)
    if (!(times[i] >= 0.0) || (i > 0 && !(times[i] > times[i - 1])))
      throw ConfigError("output times must be nonnegative and increasing");
}

void check_grid(const GridField& f) {
  if (f.n < 2 || f.values.size() != static_cast<std::size_t>(f.n) * f.n)
    throw ConfigError("grid field has inconsistent size");
}

std::array<int, 2> mode_of(std::size_t q, int n) {
  return {wavenumber(static_cast<int>(q / n), n), wavenumber(static_cast<int>(q % n), n)};
}

double symbol(const Mat2& q, const std::array<int, 2>& k, double w) {
  return 0.5 * w * w * (q(0, 0) * k[0] * k[0] + 2.0 * q(0, 1) * k[0] * k[1] + q(1, 1) * k[1] * k[1]);
}

// Value of a piecewise-linear series g on the grid n dt at time t.
double interpolate(const std::vector<double>& g, double dt, double t) {
  const double pos = t / dt;
  const auto lo = std::min(static_cast<std::size_t>(std::floor(pos)), g.size() - 1);
  if (lo + 1 >= g.size()) return g.back();
  const double w = pos - static_cast<double>(lo);
  return (1.0 - w) * g[lo] + w * g[lo + 1];
}

// Implicit L1 solution of r0 D^{1/2} g = -lambda g, g(0) = 1.
std::vector<double> l1_relaxation(double lambda, double r0, double dt, int steps, const std::vector<double>& b) {
  std::vector<double> g(static_cast<std::size_t>(steps) + 1, 1.0);
  if (lambda == 0.0) return g;
  const double c = r0 / (std::sqrt(dt) * kGamma32);
  for (int n = 1; n <= steps; ++n) {
    double hist = 0.0;
    for (int j = 0; j + 1 < n; ++j) hist += b[n - 1 - j] * (g[j + 1] - g[j]);
    g[n] = (c * g[n - 1] - c * hist) / (c + lambda);
  }
  return g;
}

}  // namespace

double erfcx(double x) {
  if (std::isnan(x)) return x;
  if (x < 0.0) {
    if (x < -26.0) return std::numeric_limits<double>::infinity();
    return 2.0 * std::exp(x * x) - erfcx(-x);
  }
  if (x <= 5.0) return std::exp(x * x) * std::erfc(x);
  return erfcx_cf(x);
}

double mittag_leffler_half(double x) {
  if (!(x >= 0.0)) throw DomainError("mittag_leffler_half: argument must be nonnegative");
  return erfcx(x);
}

std::vector<double> caputo_half(const std::vector<double>& f, double dt) {
  if (f.size() < 2) throw DomainError("caputo_half: need at least two samples");
  if (!(dt > 0.0)) throw DomainError("caputo_half: spacing must be positive");
  const std::size_t n = f.size();
  std::vector<double> b(n);
  for (std::size_t m = 0; m < n; ++m) b[m] = std::sqrt(m + 1.0) - std::sqrt(static_cast<double>(m));
  const double c = 1.0 / (std::sqrt(dt) * kGamma32);
  std::vector<double> out(n, 0.0);
  for (std::size_t k = 1; k < n; ++k) {
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) s += b[k - 1 - j] * (f[j + 1] - f[j]);
    out[k] = c * s;
  }
  return out;
}

std::vector<double> caputo_half(const std::vector<double>& times, const std::vector<double>& f) {
  if (times.size() != f.size() || times.size() < 2) throw DomainError("caputo_half: need matching samples");
  const double dt = times[1] - times[0];
  for (std::size_t k = 1; k < times.size(); ++k)
    if (std::abs((times[k] - times[k - 1]) - dt) > 1e-9 * std::max(dt, std::abs(times[k])))
      throw DomainError("caputo_half: time grid is not uniform");
  return caputo_half(f, dt);
}

GridField GridField::sample(int n, double period, const std::function<double(const Vec2&)>& f) {
  GridField g;
  g.n = n;
  g.period = period;
  g.values.resize(static_cast<std::size_t>(n) * n);
  const double h = period / n;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) g.values[static_cast<std::size_t>(i) * n + j] = f(Vec2(i * h, j * h));
  return g;
}

double fpde_mode_factor(const Mat2& q, double r0, const std::array<int, 2>& k, double period, double t) {
  return mittag_leffler_half(symbol(q, k, kTwoPi / period) / r0 * std::sqrt(t));
}

FpdeResult solve_fpde(const GridField& theta0, const Mat2& q, double r0, const std::vector<double>& times,
                      const FpdeOptions& opt) {
  check_grid(theta0);
  check_times(times);
  if (!(r0 > 0.0)) throw ConfigError("solve_fpde: r0 must be positive");
  if (opt.steps < 1) throw ConfigError("solve_fpde: steps must be positive");
  Eigen::SelfAdjointEigenSolver<Mat2> eig(0.5 * (q + q.transpose()));
  if (!(eig.eigenvalues().minCoeff() > 0.0) || std::abs(q(0, 1) - q(1, 0)) > 1e-12)
    throw ConfigError("solve_fpde: Q must be symmetric positive definite");
  const int n = theta0.n;
  const double w = kTwoPi / theta0.period;
  const Fft2 fft(n);
  const std::vector<cplx> c0 = fft.spectrum(theta0.values);
  const double t_end = times.back();
  const double dt = t_end > 0.0 ? t_end / opt.steps : 1.0;
  std::vector<double> b(static_cast<std::size_t>(opt.steps) + 1);
  for (std::size_t m = 0; m < b.size(); ++m) b[m] = std::sqrt(m + 1.0) - std::sqrt(static_cast<double>(m));
  std::map<double, std::vector<double>> relax;
  FpdeResult res;
  res.times = times;
  for (std::size_t q0 = 0; q0 < c0.size(); ++q0) {
    const double lam = symbol(q, mode_of(q0, n), w);
    if (!relax.count(lam)) relax.emplace(lam, l1_relaxation(lam, r0, dt, opt.steps, b));
  }
  for (double t : times) {
    std::vector<cplx> cs(c0.size()), cl(c0.size());
    for (std::size_t q0 = 0; q0 < c0.size(); ++q0) {
      const double lam = symbol(q, mode_of(q0, n), w);
      cs[q0] = c0[q0] * mittag_leffler_half(lam / r0 * std::sqrt(t));
      cl[q0] = c0[q0] * interpolate(relax.at(lam), dt, t);
    }
    GridField s{n, theta0.period, fft.synthesize(cs)};
    GridField l{n, theta0.period, fft.synthesize(cl)};
    for (std::size_t k = 0; k < s.values.size(); ++k)
      res.discrepancy = std::max(res.discrepancy, std::abs(s.values[k] - l.values[k]));
    res.spectral.push_back(std::move(s));
    res.stepped.push_back(std::move(l));
  }
  if (res.discrepancy > opt.alarm_tol) {
    std::ostringstream msg;
    msg << "solve_fpde: spectral and L1 routes differ by " << res.discrepancy << " (tolerance " << opt.alarm_tol
        << "); increase the step count";
    throw NumericalError(msg.str());
  }
  return res;
}

double fpde_point(const GridField& theta0, const Mat2& q, double r0, const Vec2& x, double t) {
  check_grid(theta0);
  if (!(r0 > 0.0) || !(t >= 0.0)) throw ConfigError("fpde_point: need r0 > 0 and t >= 0");
  const int n = theta0.n;
  const double w = kTwoPi / theta0.period;
  const Fft2 fft(n);
  const std::vector<cplx> c0 = fft.spectrum(theta0.values);
  cplx acc = 0.0;
  for (std::size_t q0 = 0; q0 < c0.size(); ++q0) {
    if (c0[q0] == 0.0) continue;
    const auto k = mode_of(q0, n);
    const double phase = w * (k[0] * x.x() + k[1] * x.y());
    acc += c0[q0] * mittag_leffler_half(symbol(q, k, w) / r0 * std::sqrt(t)) * cplx(std::cos(phase), std::sin(phase));
  }
  return acc.real();
}

nlohmann::json FpdeResult::to_json() const {
  return {{"times", times}, {"discrepancy", discrepancy}, {"n", spectral.empty() ? 0 : spectral.front().n}};
}

namespace {

// Thomas factorisation of the per-edge tridiagonal matrix
// rows 1..J: (1 + 2 b mu) u_j - b mu (u_{j-1} + u_{j+1}), Neumann at J.
struct EdgeSystem {
  std::vector<double> diag_inv;  // 1 / modified diagonal
  std::vector<double> upper;     // modified super-diagonal
  double beta_mu = 0.0;
  std::vector<double> xe;        // response to a unit vertex value

  EdgeSystem(double mu, double beta, int j_max) : beta_mu(beta * mu) {
    const int m = j_max;
    std::vector<double> lo(m, -beta_mu), di(m, 1.0 + 2.0 * beta_mu), up(m, -beta_mu);
    lo[m - 1] = -2.0 * beta_mu;
    diag_inv.resize(m);
    upper.resize(m);
    double prev_up = 0.0;
    for (int j = 0; j < m; ++j) {
      const double d = di[j] - (j > 0 ? lo[j] * prev_up : 0.0);
      diag_inv[j] = 1.0 / d;
      upper[j] = j + 1 < m ? up[j] / d : 0.0;
      prev_up = upper[j];
      lower_.push_back(lo[j]);
    }
    std::vector<double> e(m, 0.0);
    e[0] = beta_mu;
    xe = solve(e);
  }

  std::vector<double> solve(std::vector<double> r) const {
    const int m = static_cast<int>(r.size());
    r[0] *= diag_inv[0];
    for (int j = 1; j < m; ++j) r[j] = (r[j] - lower_[j] * r[j - 1]) * diag_inv[j];
    for (int j = m - 2; j >= 0; --j) r[j] -= upper[j] * r[j + 1];
    return r;
  }

 private:
  std::vector<double> lower_;
};

struct ModeRun {
  std::vector<double> trace;                              // per requested time
  std::vector<std::vector<std::vector<double>>> profile;  // [time][edge][j], j = 0..J
  double far = 0.0;                                       // max |u(Y_max) - 1|
  double vertex_residual = 0.0;
};

ModeRun run_mode(double lambda, const FlowCoefficients& c, double h, int j_max, double dt, int steps,
                 const std::vector<int>& out_steps, int rannacher, bool keep_profile) {
  const int m_edges = c.edges();
  std::vector<std::vector<double>> u(m_edges, std::vector<double>(j_max + 1, 1.0));
  double uo = 1.0;
  ModeRun run;
  auto systems = [&](double tau, double beta) {
    std::vector<EdgeSystem> s;
    for (int i = 0; i < m_edges; ++i) s.emplace_back(0.5 * c.a[i] * tau / (h * h), beta, j_max);
    return s;
  };
  const auto cn = systems(dt, 0.5);
  const auto be = systems(0.5 * dt, 1.0);
  auto step = [&](const std::vector<EdgeSystem>& sys, double beta) {
    std::vector<std::vector<double>> xr(m_edges);
    double acc_r = 0.0, acc_e = 0.0;
    for (int i = 0; i < m_edges; ++i) {
      const double bm = sys[i].beta_mu;
      const double em = beta < 1.0 ? bm : 0.0;  // explicit weight (1 - beta) mu, equal to beta mu for CN
      const auto& ui = u[i];
      std::vector<double> r(j_max);
      for (int j = 1; j <= j_max; ++j) {
        const double left = ui[j - 1];
        const double right = j < j_max ? ui[j + 1] : ui[j_max - 1];
        r[j - 1] = (1.0 - 2.0 * em) * ui[j] + em * (left + right);
      }
      xr[i] = sys[i].solve(std::move(r));
      const auto& xe = sys[i].xe;
      acc_r += c.q_bar[i] * (4.0 * xr[i][0] - xr[i][1]) / (2.0 * h);
      acc_e += c.q_bar[i] * (-3.0 + 4.0 * xe[0] - xe[1]) / (2.0 * h);
    }
    uo = acc_r / (lambda - acc_e);
    double res = -lambda * uo;
    for (int i = 0; i < m_edges; ++i) {
      u[i][0] = uo;
      for (int j = 1; j <= j_max; ++j) u[i][j] = xr[i][j - 1] + uo * sys[i].xe[j - 1];
      res += c.q_bar[i] * (-3.0 * u[i][0] + 4.0 * u[i][1] - u[i][2]) / (2.0 * h);
    }
    const double scale = std::max({1.0, std::abs(lambda * uo), std::abs(acc_r)});
    run.vertex_residual = std::max(run.vertex_residual, std::abs(res) / scale);
  };
  std::size_t next = 0;
  auto record = [&](int n) {
    while (next < out_steps.size() && out_steps[next] == n) {
      run.trace.push_back(uo);
      if (keep_profile) run.profile.push_back(u);
      ++next;
    }
  };
  record(0);
  for (int n = 1; n <= steps; ++n) {
    if (n <= rannacher) {
      step(be, 1.0);
      step(be, 1.0);
    } else {
      step(cn, 0.5);
    }
    for (int i = 0; i < m_edges; ++i) run.far = std::max(run.far, std::abs(u[i][j_max] - 1.0));
    record(n);
  }
  return run;
}

}  // namespace

CoupledResult solve_coupled(const GridField& theta0, const FlowCoefficients& coeffs, const std::vector<double>& times,
                            const CoupledOptions& opt) {
  check_grid(theta0);
  check_times(times);
  if (coeffs.edges() < 1 || static_cast<int>(coeffs.a.size()) != coeffs.edges() ||
      static_cast<int>(coeffs.q_bar.size()) != coeffs.edges())
    throw ConfigError("solve_coupled: incomplete coefficients");
  if (!coeffs.has_Q) throw ConfigError("solve_coupled: coefficients carry no Q");
  if (opt.steps < 1 || opt.edge_points < 2) throw ConfigError("solve_coupled: invalid grid sizes");
  const double t_end = times.back();
  const double dt = t_end > 0.0 ? t_end / opt.steps : 1.0;
  std::vector<int> out_steps;
  for (double t : times) {
    const double pos = t / dt;
    const auto k = static_cast<int>(std::llround(pos));
    if (std::abs(pos - k) > 1e-6) throw ConfigError("solve_coupled: output times must lie on the time grid");
    out_steps.push_back(k);
  }
  CoupledResult res;
  res.times = times;
  res.y_max = opt.y_max > 0.0 ? opt.y_max : opt.y_max_factor * std::sqrt(coeffs.a_max() * std::max(t_end, 1e-12));
  const int jm = opt.edge_points;
  const double h = res.y_max / jm;
  for (int j = 0; j <= jm; ++j) res.y_grid.push_back(j * h);

  const int n = theta0.n;
  const double w = kTwoPi / theta0.period;
  const Fft2 fft(n);
  const std::vector<cplx> c0 = fft.spectrum(theta0.values);
  double cmax = 0.0;
  for (const auto& c : c0) cmax = std::max(cmax, std::abs(c));
  double theta_max = 0.0;
  for (double v : theta0.values) theta_max = std::max(theta_max, std::abs(v));

  // Modes sharing a symbol share the scalar solution.
  std::map<double, std::vector<std::size_t>> groups;
  for (std::size_t q0 = 0; q0 < c0.size(); ++q0)
    if (std::abs(c0[q0]) > 1e-14 * cmax) groups[symbol(coeffs.Q, mode_of(q0, n), w)].push_back(q0);

  std::vector<std::vector<cplx>> trace(times.size(), std::vector<cplx>(c0.size(), 0.0));
  const int m_edges = coeffs.edges();
  res.profiles.assign(times.size(), std::vector<std::vector<double>>(m_edges, std::vector<double>(jm + 1, 0.0)));
  double far = 0.0;
  for (const auto& [lam, members] : groups) {
    const ModeRun run = run_mode(lam, coeffs, h, jm, dt, opt.steps, out_steps, opt.rannacher_steps, true);
    res.max_vertex_residual = std::max(res.max_vertex_residual, run.vertex_residual);
    cplx sum = 0.0;
    double abs_sum = 0.0;
    for (std::size_t q0 : members) {
      sum += c0[q0];
      abs_sum += std::abs(c0[q0]);
      for (std::size_t m = 0; m < times.size(); ++m) trace[m][q0] = c0[q0] * run.trace[m];
    }
    far += abs_sum * run.far;
    for (std::size_t m = 0; m < times.size(); ++m)
      for (int i = 0; i < m_edges; ++i)
        for (int j = 0; j <= jm; ++j) res.profiles[m][i][j] += (sum * run.profile[m][i][j]).real();
  }
  for (std::size_t m = 0; m < times.size(); ++m) res.trace.push_back({n, theta0.period, fft.synthesize(trace[m])});
  res.truncation = theta_max > 0.0 ? far / theta_max : far;
  res.truncation_warning = res.truncation > opt.truncation_tol;
  return res;
}

nlohmann::json CoupledResult::to_json() const {
  return {{"times", times},
          {"y_max", y_max},
          {"edge_points", y_grid.empty() ? 0 : y_grid.size() - 1},
          {"max_vertex_residual", max_vertex_residual},
          {"truncation", truncation},
          {"truncation_warning", truncation_warning}};
}

double trace_l2_error(const CoupledResult& coupled, const GridField& theta0, const Mat2& q, double r0) {
  FpdeOptions opt;
  opt.steps = 1;
  opt.alarm_tol = std::numeric_limits<double>::infinity();
  const FpdeResult exact = solve_fpde(theta0, q, r0, coupled.times, opt);
  double num = 0.0, den = 0.0;
  for (std::size_t m = 0; m < coupled.times.size(); ++m)
    for (std::size_t k = 0; k < theta0.values.size(); ++k) {
      const double e = exact.spectral[m].values[k];
      num += (coupled.trace[m].values[k] - e) * (coupled.trace[m].values[k] - e);
      den += e * e;
    }
  return den > 0.0 ? std::sqrt(num / den) : std::sqrt(num);
}

std::vector<FKEstimate> feynman_kac_mc(const HamiltonianField& field, const std::function<double(const Vec2&)>& theta0,
                                       const SimConfig& cfg, const std::vector<FKProbe>& probes, unsigned workers) {
  cfg.validate();
  if (field.saddles().empty()) throw ConfigError("feynman_kac_mc: field has no saddles");
  std::vector<double> times;
  for (const auto& p : probes) {
    if (!(p.t >= 0.0)) throw ConfigError("feynman_kac_mc: probe times must be nonnegative");
    times.push_back(p.t);
  }
  std::sort(times.begin(), times.end());
  times.erase(std::unique(times.begin(), times.end()), times.end());
  const Marginals ens = sample_marginals(field, cfg, field.saddles().front().x, times, workers);
  return feynman_kac_mc(field, theta0, cfg, ens, probes);
}

std::vector<FKEstimate> feynman_kac_mc(const HamiltonianField& field, const std::function<double(const Vec2&)>& theta0,
                                       const SimConfig& cfg, const Marginals& ens, const std::vector<FKProbe>& probes) {
  if (field.saddles().empty()) throw ConfigError("feynman_kac_mc: field has no saddles");
  const Vec2 base = field.saddles().front().x;
  const double s = cfg.space_scale();
  const double period = field.period();
  std::vector<FKEstimate> out;
  for (const auto& p : probes) {
    const auto it = std::find(ens.times.begin(), ens.times.end(), p.t);
    if (it == ens.times.end()) throw ConfigError("feynman_kac_mc: probe time not in the ensemble");
    const auto ti = static_cast<std::size_t>(it - ens.times.begin());
    FKEstimate e;
    e.x = p.x;
    e.t = p.t;
    const Vec2 z = p.x / s - base;
    e.start = base + period * Vec2(std::floor(z.x() / period), std::floor(z.y() / period));
    e.x_eff = s * e.start;
    const std::size_t n = ens.positions.size();
    double sum = 0.0, sum2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double v = theta0(s * (ens.positions[i][ti] - base + e.start));
      sum += v;
      sum2 += v * v;
    }
    e.n = n;
    e.mean = n ? sum / static_cast<double>(n) : 0.0;
    const double var = n > 1 ? std::max(0.0, (sum2 - sum * e.mean) / static_cast<double>(n - 1)) : 0.0;
    e.se = n ? std::sqrt(var / static_cast<double>(n)) : 0.0;
    out.push_back(e);
  }
  return out;
}

}  // namespace cellflow
