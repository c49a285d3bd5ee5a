#include "cellflow/verify.hpp"

#include "cellflow/io.hpp"
#include "cellflow/parallel.hpp"

#include <boost/math/special_functions/gamma.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace cellflow {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

nlohmann::json mat_json(const Mat2& m) { return {{m(0, 0), m(0, 1)}, {m(1, 0), m(1, 1)}}; }

std::size_t time_index(const std::vector<double>& times, double t) {
  for (std::size_t k = 0; k < times.size(); ++k)
    if (std::abs(times[k] - t) <= 1e-12 * std::max(1.0, t)) return k;
  throw ConfigError("verify: time " + std::to_string(t) + " is not recorded in the ensemble");
}

SimConfig sim_config(double eps, double alpha, double dt_safety, double horizon, std::uint64_t seed, std::size_t n) {
  SimConfig c;
  c.epsilon = eps;
  c.alpha = alpha;
  c.dt_safety = dt_safety;
  c.horizon = horizon;
  c.seed = seed;
  c.n_paths = n;
  return c;
}

double ks_critical(std::size_t n, std::size_t m) {
  return 1.3580986393225505 * std::sqrt((static_cast<double>(n) + m) / (static_cast<double>(n) * m));
}

std::vector<Vec2> scaled_displacements(const Ensemble& ens, std::size_t k, std::size_t n) {
  const double s = ens.cfg.space_scale();
  const std::size_t count = std::min(n, ens.marginals.positions.size());
  std::vector<Vec2> out(count);
  for (std::size_t i = 0; i < count; ++i) out[i] = s * (ens.marginals.positions[i][k] - ens.start);
  return out;
}

double mean_component_variance(const std::vector<Vec2>& z) {
  std::vector<double> a, b;
  for (const auto& v : z) {
    a.push_back(v.x());
    b.push_back(v.y());
  }
  return 0.5 * (stats::variance(a) + stats::variance(b));
}

double correlation(const std::vector<Vec2>& z) {
  std::vector<double> a, b;
  for (const auto& v : z) {
    a.push_back(v.x());
    b.push_back(v.y());
  }
  const double ma = stats::mean(a), mb = stats::mean(b);
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return saa > 0.0 && sbb > 0.0 ? sab / std::sqrt(saa * sbb) : 0.0;
}

GridField smooth_datum(int n) {
  return GridField::sample(n, kTwoPi, [](const Vec2& x) { return std::exp(std::cos(x.x()) + 0.5 * std::sin(x.y()) - 1.5); });
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

}  // namespace

std::string TestReport::cfg_hash() const { return config_hash(config); }

void TestReport::add_p(const std::string& label, double p) {
  p_labels.push_back(label);
  p_values.push_back(p);
}

std::string TestReport::summary() const {
  std::ostringstream os;
  os << (passed ? "PASS" : "FAIL") << " [#" << criterion << "] " << name << ": " << description;
  if (!std::isnan(statistic)) os << "; statistic=" << fmt(statistic);
  if (!std::isnan(lo) || !std::isnan(hi)) os << " band=[" << fmt(lo) << ", " << fmt(hi) << "]";
  if (!p_values.empty()) os << " min_p=" << fmt(*std::min_element(p_values.begin(), p_values.end()));
  os << " (" << fmt(seconds) << " s)";
  return os.str();
}

nlohmann::json TestReport::to_json() const {
  nlohmann::json p = nlohmann::json::array();
  for (std::size_t k = 0; k < p_values.size(); ++k) p.push_back({{"label", p_labels[k]}, {"p", p_values[k]}});
  auto num = [](double v) { return std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v); };
  return {{"name", name},
          {"criterion", criterion},
          {"description", description},
          {"statistic", num(statistic)},
          {"lo", num(lo)},
          {"hi", num(hi)},
          {"p_values", p},
          {"p_threshold", p_threshold},
          {"sample_sizes", sample_sizes},
          {"passed", passed},
          {"seed", seed},
          {"cfg_hash", cfg_hash()},
          {"config", config},
          {"data", data},
          {"seconds", seconds}};
}

Ensemble saddle_ensemble(const HamiltonianField& field, const SimConfig& cfg, const std::vector<double>& times,
                         unsigned workers) {
  if (field.saddles().empty()) throw ConfigError("ensemble: field has no saddles");
  Ensemble e;
  e.cfg = cfg;
  e.start = field.saddles().front().x;
  e.marginals = sample_marginals(field, cfg, e.start, times, workers);
  return e;
}

double signed_coordinate(const HamiltonianField& field, const GraphPoint& p) {
  if (p.at_vertex()) return 0.0;
  return field.cells()[p.edge].sign * p.y;
}

TestReport test_perimeter_weights(const HamiltonianField& field, double tol) {
  const auto t0 = Clock::now();
  TestReport r;
  r.name = "perimeter_weights";
  r.criterion = 1;
  r.config = {{"field", field.to_json()}, {"tol", tol}};
  std::vector<double> q;
  for (int i = 0; i < field.cell_count(); ++i) q.push_back(perimeter_weight(field, i));
  r.data["q"] = q;
  if (field.name() == "sin_sin") {
    double err = 0.0;
    for (double v : q) err = std::max(err, std::abs(v - 8.0));
    r.description = "q_i = 8 for every cell of sin x1 sin x2";
    r.statistic = err;
    r.lo = 0.0;
    r.hi = tol;
    r.passed = q.size() == 4 && err <= tol;
  } else {
    const double qmin = q.empty() ? 0.0 : *std::min_element(q.begin(), q.end());
    r.description = "q_i positive (no closed form for this field)";
    r.statistic = qmin;
    r.lo = 0.0;
    r.passed = qmin > 0.0;
  }
  r.seconds = seconds_since(t0);
  return r;
}

TestReport test_period_fit(const HamiltonianField& field, const CoefficientOptions& opt) {
  const auto t0 = Clock::now();
  TestReport r;
  r.name = "period_fit";
  r.criterion = 2;
  r.description = "T_i(h) = c|log h| + b over [h_min, h_max], minimum R^2 over cells";
  r.config = {{"field", field.to_json()}, {"h_min", opt.h_min}, {"h_max", opt.h_max}, {"n_levels", opt.n_levels},
              {"min_r2", opt.min_r2}};
  CoefficientOptions relaxed = opt;
  relaxed.min_r2 = 0.0;
  const FlowCoefficients c = edge_coefficients(field, relaxed);
  r.statistic = *std::min_element(c.r2.begin(), c.r2.end());
  r.lo = opt.min_r2;
  r.hi = 1.0;
  r.passed = r.statistic >= opt.min_r2;
  r.data = c.to_json();
  r.sample_sizes = {static_cast<std::size_t>(opt.n_levels)};
  r.seconds = seconds_since(t0);
  return r;
}

TestReport test_deff_scaling(const HamiltonianField& field, const DeffScalingConfig& cfg) {
  const auto t0 = Clock::now();
  TestReport r;
  r.name = "deff_scaling";
  r.criterion = 3;
  r.description = "exponent of D_eff,11 in eps and grid-doubling change at eps = " + fmt(cfg.refine_eps);
  r.config = {{"field", field.to_json()}, {"eps", cfg.eps}, {"refine_eps", cfg.refine_eps},
              {"exponent", cfg.exponent}, {"exponent_tol", cfg.exponent_tol}, {"refine_tol", cfg.refine_tol}};
  const ScalingFit fit = scaling_fit(field, cfg.eps, CellOptions{}, cfg.workers);
  CellOptions coarse;
  coarse.grid = default_grid(cfg.refine_eps, field.period());
  CellOptions fine = coarse;
  fine.grid = 2 * coarse.grid;
  const double d1 = effective_diffusivity(solve_corrector(field, cfg.refine_eps, coarse))(0, 0);
  const double d2 = effective_diffusivity(solve_corrector(field, cfg.refine_eps, fine))(0, 0);
  const double change = std::abs(d2 / d1 - 1.0);
  r.statistic = fit.exponent;
  r.lo = cfg.exponent - cfg.exponent_tol;
  r.hi = cfg.exponent + cfg.exponent_tol;
  r.passed = fit.exponent >= r.lo && fit.exponent <= r.hi && change < cfg.refine_tol;
  r.data = {{"fit", fit.to_json()}, {"grid_change", change}, {"grids", {coarse.grid, fine.grid}}, {"d11", {d1, d2}}};
  r.seconds = seconds_since(t0);
  return r;
}

TestReport test_deff_monte_carlo(const HamiltonianField& field, const DeffMonteCarloConfig& cfg) {
  const auto t0 = Clock::now();
  TestReport r;
  r.name = "deff_monte_carlo";
  r.criterion = 4;
  r.description = "cell-problem D_eff against the long-time covariance rate of the SDE at eps = " + fmt(cfg.eps);
  r.seed = cfg.seed;
  r.config = {{"field", field.to_json()}, {"eps", cfg.eps},       {"block_time", cfg.block_time},
              {"blocks", cfg.blocks},     {"paths", cfg.paths},   {"dt_safety", cfg.dt_safety},
              {"tol", cfg.tol},           {"seed", cfg.seed}};
  const Mat2 d = effective_diffusivity(solve_corrector(field, cfg.eps));
  const MonteCarloDiffusivity mc = mc_effective_diffusivity(field, cfg.eps, cfg.block_time, cfg.blocks, cfg.paths,
                                                            cfg.seed, cfg.dt_safety, 0.1, cfg.workers);
  double worst = 0.0;
  for (int k = 0; k < 2; ++k) worst = std::max(worst, std::abs(mc.d(k, k) / d(k, k) - 1.0));
  r.statistic = worst;
  r.lo = 0.0;
  r.hi = cfg.tol;
  r.passed = worst <= cfg.tol;
  r.sample_sizes = {cfg.paths * cfg.blocks};
  r.data = {{"cell", mat_json(d)}, {"monte_carlo", mc.to_json()}};
  r.seconds = seconds_since(t0);
  return r;
}

TestReport test_exit_linearity(const HamiltonianField& field, const ExitConfig& cfg) {
  const auto t0 = Clock::now();
  TestReport r;
  r.name = "exit_linearity";
  r.criterion = 5;
  r.description = "P(reach |H| = h before the separatrix) against H(x)/h, h = eps^" + fmt(cfg.h_exponent);
  r.seed = cfg.seed;
  r.config = {{"field", field.to_json()}, {"eps", cfg.eps},         {"alpha", cfg.alpha},
              {"h_exponent", cfg.h_exponent}, {"fractions", cfg.fractions}, {"n", cfg.n},
              {"slack", cfg.slack},       {"dt_safety", cfg.dt_safety}, {"horizon", cfg.horizon},
              {"cell", cfg.cell},         {"seed", cfg.seed}};
  const double h = std::pow(cfg.eps, cfg.h_exponent);
  bool ok = true;
  double worst = 0.0;
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t f = 0; f < cfg.fractions.size(); ++f) {
    const double frac = cfg.fractions[f];
    const Vec2 x0 = level_point(field, cfg.cell, frac * h);
    const SimConfig sc = sim_config(cfg.eps, cfg.alpha, cfg.dt_safety, cfg.horizon, mix_seed(cfg.seed, f), cfg.n);
    std::vector<ExitResult> res(cfg.n);
    parallel_for(cfg.n, cfg.workers, [&](std::size_t i) { res[i] = exit_band(field, sc, x0, h, i); });
    std::size_t upper = 0, censored = 0;
    for (const auto& e : res) {
      if (e.censored)
        ++censored;
      else if (e.upper)
        ++upper;
    }
    const std::size_t decided = cfg.n - censored;
    const double p = decided ? static_cast<double>(upper) / static_cast<double>(decided) : 0.0;
    const double sigma = std::sqrt(frac * (1.0 - frac) / static_cast<double>(std::max<std::size_t>(decided, 1)));
    const double dev = std::abs(p - frac);
    const double allowed = 3.0 * sigma + cfg.slack;
    ok = ok && decided > 0 && dev <= allowed;
    worst = std::max(worst, dev / allowed);
    rows.push_back({{"fraction", frac}, {"p_hat", p}, {"sigma", sigma}, {"deviation", dev}, {"allowed", allowed},
                    {"censored", censored}, {"n", cfg.n}});
  }
  r.statistic = worst;
  r.lo = 0.0;
  r.hi = 1.0;
  r.passed = ok;
  r.sample_sizes = {cfg.n};
  r.data = {{"h", h}, {"points", rows}};
  r.seconds = seconds_since(t0);
  return r;
}

TestReport test_upcrossing_limits(const HamiltonianField& field, const FlowCoefficients& coeffs,
                                  const UpcrossingConfig& cfg, QEstimate* q_out) {
  const auto t0 = Clock::now();
  TestReport r;
  r.name = "upcrossing_limits";
  r.criterion = 6;
  r.description = "cycle displacement kurtosis 6, exit edges p_i = q_i / sum q, exponential local time to exit";
  r.seed = cfg.seed;
  r.config = {{"field", field.to_json()},
              {"eps", cfg.eps},
              {"alpha", cfg.alpha},
              {"delta", cfg.delta},
              {"stability_deltas", cfg.stability_deltas},
              {"n", cfg.n},
              {"n_stability", cfg.n_stability},
              {"n_exit_local_time", cfg.n_exit_local_time},
              {"y_dt", cfg.y_dt},
              {"dt_safety", cfg.dt_safety},
              {"horizon", cfg.horizon},
              {"n_boot", cfg.n_boot},
              {"n_perm", cfg.n_perm},
              {"seed", cfg.seed}};
  StartSampler start;
  start.kind = StartSampler::Kind::uniform_separatrix;
  const SimConfig sc = sim_config(cfg.eps, cfg.alpha, cfg.dt_safety, cfg.horizon, cfg.seed, cfg.n);
  const UpcrossingPool pool = sample_upcrossings(field, sc, cfg.delta, cfg.n, start, cfg.workers);
  const QEstimate q = estimate_Q(pool, mix_seed(cfg.seed, 1), cfg.n_boot);
  if (q_out) *q_out = q;

  bool kurt_ok = true;
  for (int c = 0; c < 2; ++c) kurt_ok = kurt_ok && q.kurtosis_lo[c] <= 6.0 && 6.0 <= q.kurtosis_hi[c];

  const ExitProbEstimate ex = estimate_exit_probs(pool.exit_edges, coeffs.edges());
  bool exit_ok = true;
  for (int i = 0; i < coeffs.edges(); ++i) exit_ok = exit_ok && ex.lo[i] <= coeffs.q_bar[i] && coeffs.q_bar[i] <= ex.hi[i];

  YOptions yo;
  yo.dt = cfg.y_dt;
  const std::vector<double> lt =
      local_time_to_exit(coeffs, cfg.delta, cfg.n_exit_local_time, mix_seed(cfg.seed, 2), yo, cfg.workers);
  const double delta = cfg.delta;
  const auto ks = stats::ks_one_sample(lt, [delta](double x) { return x <= 0.0 ? 0.0 : 1.0 - std::exp(-x / delta); });
  r.add_p("local_time_to_exit_exponential", ks.p_value);
  const bool ks_ok = ks.p_value > r.p_threshold;

  const bool censor_ok = q.censoring_fraction < 0.05;
  const auto dcor = stats::distance_correlation_test(pool.up_displacements, pool.exit_edges, cfg.n_perm,
                                                     mix_seed(cfg.seed, 3));

  nlohmann::json stability = nlohmann::json::array();
  for (std::size_t k = 0; k < cfg.stability_deltas.size(); ++k) {
    const double d = cfg.stability_deltas[k];
    const SimConfig sk = sim_config(cfg.eps, cfg.alpha, cfg.dt_safety, cfg.horizon, mix_seed(cfg.seed, 10 + k),
                                    cfg.n_stability);
    const UpcrossingPool pk = sample_upcrossings(field, sk, d, cfg.n_stability, start, cfg.workers);
    const ExitProbEstimate ek = estimate_exit_probs(pk.exit_edges, coeffs.edges());
    nlohmann::json entry = {{"delta", d}, {"exit", ek.to_json()}, {"censoring_fraction", pk.censoring_fraction()}};
    if (pk.displacements.size() >= 100) entry["Q"] = estimate_Q(pk, mix_seed(cfg.seed, 20 + k), 0).to_json();
    stability.push_back(entry);
  }

  r.statistic = 0.5 * (q.kurtosis[0] + q.kurtosis[1]);
  r.lo = std::min(q.kurtosis_lo[0], q.kurtosis_lo[1]);
  r.hi = std::max(q.kurtosis_hi[0], q.kurtosis_hi[1]);
  r.checks_passed = kurt_ok && exit_ok && censor_ok;
  r.passed = r.checks_passed && ks_ok;
  r.sample_sizes = {pool.displacements.size(), pool.exit_edges.size(), lt.size()};
  r.data = {{"Q", q.to_json()},
            {"kurtosis_contains_6", kurt_ok},
            {"exit", ex.to_json()},
            {"exit_within_ci", exit_ok},
            {"local_time_ks", {{"statistic", ks.statistic}, {"p", ks.p_value}, {"mean", stats::mean(lt)}}},
            {"censoring_fraction", q.censoring_fraction},
            {"independence", {{"statistic", dcor.statistic}, {"p", dcor.p_value}}},
            {"delta_stability", stability}};
  r.seconds = seconds_since(t0);
  return r;
}

TestReport test_averaging(const HamiltonianField& field, const FlowCoefficients& coeffs,
                          const std::vector<const Ensemble*>& ensembles, const AveragingConfig& cfg) {
  const auto t0 = Clock::now();
  TestReport r;
  r.name = "averaging";
  r.criterion = 7;
  r.description = "KS distance between the graph projection of Z_t and Y_t, trend in eps and p at the smallest eps";
  r.seed = cfg.seed;
  if (ensembles.empty()) throw ConfigError("test_averaging: no ensembles");
  nlohmann::json eps_list = nlohmann::json::array();
  for (const auto* e : ensembles) eps_list.push_back(e->cfg.to_json());
  r.config = {{"field", field.to_json()}, {"t", cfg.t},
              {"y_dt", cfg.y_dt},         {"seed", cfg.seed},
              {"ensembles", eps_list},    {"uniform_start", cfg.uniform_start}};

  std::size_t n_y = 0;
  for (const auto* e : ensembles) n_y = std::max(n_y, e->marginals.positions.size());
  const auto steps = static_cast<long>(std::llround(cfg.t / cfg.y_dt));
  std::vector<GraphPoint> yv(n_y);
  parallel_for(n_y, cfg.workers, [&](std::size_t i) {
    Rng rng(cfg.seed, i, 0x5941);
    YProcess y(coeffs, kVertex, cfg.y_dt, rng);
    for (long k = 0; k < steps; ++k) y.step();
    yv[i] = y.point();
  });
  const int m = coeffs.edges();
  std::vector<double> ys;
  std::vector<double> y_occ(m, 0.0);
  for (const auto& p : yv) {
    ys.push_back(signed_coordinate(field, p));
    if (!p.at_vertex()) y_occ[p.edge] += 1.0;
  }
  for (auto& v : y_occ) v /= static_cast<double>(n_y);

  nlohmann::json rows = nlohmann::json::array();
  std::vector<double> dist;
  std::vector<std::size_t> sizes;
  double last_p = 0.0;
  for (const auto* e : ensembles) {
    const std::size_t k = time_index(e->marginals.times, cfg.t);
    const double gs = e->cfg.graph_scale();
    std::vector<double> zs;
    std::vector<std::vector<double>> per_edge(m);
    std::vector<double> z_occ(m, 0.0);
    for (std::size_t i = 0; i < e->marginals.positions.size(); ++i) {
      const GraphPoint g = project_value(field, e->marginals.positions[i][k], e->marginals.h[i][k], gs);
      zs.push_back(signed_coordinate(field, g));
      if (!g.at_vertex()) {
        per_edge[g.edge].push_back(g.y);
        z_occ[g.edge] += 1.0;
      }
    }
    const std::size_t n = zs.size();
    for (auto& v : z_occ) v /= static_cast<double>(n);
    const auto ks = stats::ks_two_sample(zs, ys);
    nlohmann::json edges = nlohmann::json::array();
    bool occ_ok = true;
    for (int j = 0; j < m; ++j) {
      std::vector<double> yj;
      for (const auto& p : yv)
        if (!p.at_vertex() && p.edge == j) yj.push_back(p.y);
      nlohmann::json ej = {{"edge", j}, {"z_fraction", z_occ[j]}, {"y_fraction", y_occ[j]}};
      const double sig = std::sqrt(y_occ[j] * (1.0 - y_occ[j]) * (1.0 / n + 1.0 / n_y));
      ej["fraction_within_3sigma"] = std::abs(z_occ[j] - y_occ[j]) <= 3.0 * sig;
      occ_ok = occ_ok && std::abs(z_occ[j] - y_occ[j]) <= 3.0 * sig;
      if (per_edge[j].size() > 1 && yj.size() > 1) {
        const auto kj = stats::ks_two_sample(per_edge[j], yj);
        ej["ks"] = kj.statistic;
        ej["p"] = kj.p_value;
      }
      edges.push_back(ej);
    }
    rows.push_back({{"epsilon", e->cfg.epsilon},
                    {"ks", ks.statistic},
                    {"p", ks.p_value},
                    {"n", n},
                    {"occupation_within_3sigma", occ_ok},
                    {"edges", edges}});
    dist.push_back(ks.statistic);
    sizes.push_back(n);
    last_p = ks.p_value;
  }
  bool trend = true;
  for (std::size_t k = 1; k < dist.size(); ++k)
    trend = trend && dist[k] <= dist[k - 1] + ks_critical(sizes[k], sizes[k - 1]);
  r.add_p("ks_smallest_eps", last_p);
  r.passed = trend && last_p > r.p_threshold;
  nlohmann::json uniform = nullptr;
  if (cfg.uniform_start) {
    const Ensemble& e = *ensembles.back();
    SimConfig sc = e.cfg;
    sc.seed = mix_seed(cfg.seed, 0x554e);
    const SeparatrixSampler sampler(field);
    const Marginals mu = sample_marginals(
        field, sc, [&](std::size_t i) {
          Rng rng(sc.seed, i, 1);
          return sampler.sample(rng);
        },
        {cfg.t}, cfg.workers);
    std::vector<double> zs;
    for (std::size_t i = 0; i < mu.positions.size(); ++i)
      zs.push_back(signed_coordinate(field, project_value(field, mu.positions[i][0], mu.h[i][0], sc.graph_scale())));
    const auto ks = stats::ks_two_sample(zs, ys);
    r.add_p("ks_uniform_start", ks.p_value);
    r.passed = r.passed && ks.p_value > r.p_threshold;
    uniform = {{"epsilon", sc.epsilon}, {"ks", ks.statistic}, {"p", ks.p_value}, {"n", zs.size()}};
  }
  r.statistic = dist.back();
  r.checks_passed = trend;
  r.sample_sizes = sizes;
  r.sample_sizes.push_back(n_y);
  r.data = {{"per_eps", rows}, {"trend_ok", trend}, {"y_fraction", y_occ}, {"uniform_start", uniform}};
  r.seconds = seconds_since(t0);
  return r;
}

TestReport test_main_theorem(const HamiltonianField& field, const FlowCoefficients& coeffs, const Ensemble& ens,
                             const MainTheoremConfig& cfg) {
  const auto t0 = Clock::now();
  TestReport r;
  r.name = "main_theorem_marginals";
  r.criterion = 8;
  r.description = "energy test of eps^((1-a)/4) Z_t against W^Q_{L_t}, variance ratios and isotropy";
  r.seed = cfg.seed;
  r.config = {{"field", field.to_json()}, {"ensemble", ens.cfg.to_json()}, {"t", cfg.t},
              {"n", cfg.n},               {"n_perm", cfg.n_perm},          {"n_dirs", cfg.n_dirs},
              {"significance", cfg.significance}, {"ratio_band", {cfg.ratio_lo, cfg.ratio_hi}},
              {"y_dt", cfg.y.dt},         {"Q", mat_json(coeffs.Q)},       {"seed", cfg.seed}};
  r.p_threshold = cfg.significance;
  const auto w = sample_fk_marginals(coeffs, cfg.t, cfg.n, cfg.seed, cfg.y, cfg.workers);
  bool ok = true;
  nlohmann::json rows = nlohmann::json::array();
  double worst_ratio = 1.0;
  for (std::size_t j = 0; j < cfg.t.size(); ++j) {
    const std::size_t k = time_index(ens.marginals.times, cfg.t[j]);
    const std::vector<Vec2> z = scaled_displacements(ens, k, cfg.n);
    std::vector<Vec2> wj;
    for (const auto& row : w) wj.push_back(row[j]);
    const auto e = stats::energy_test(z, wj, cfg.n_perm, mix_seed(cfg.seed, j), cfg.n_dirs);
    std::array<double, 2> ratio{};
    for (int c = 0; c < 2; ++c) {
      std::vector<double> a, b;
      for (const auto& v : z) a.push_back(v[c]);
      for (const auto& v : wj) b.push_back(v[c]);
      ratio[c] = stats::variance(a) / stats::variance(b);
      if (std::abs(std::log(ratio[c])) > std::abs(std::log(worst_ratio))) worst_ratio = ratio[c];
    }
    const double rho = correlation(z);
    const bool iso = std::abs(rho) <= 3.0 / std::sqrt(static_cast<double>(z.size()));
    const bool ratio_ok = ratio[0] >= cfg.ratio_lo && ratio[0] <= cfg.ratio_hi && ratio[1] >= cfg.ratio_lo &&
                          ratio[1] <= cfg.ratio_hi;
    r.add_p("energy_t=" + fmt(cfg.t[j]), e.p_value);
    ok = ok && e.p_value > cfg.significance && ratio_ok && iso;
    r.checks_passed = r.checks_passed && ratio_ok && iso;
    rows.push_back({{"t", cfg.t[j]},
                    {"energy", e.statistic},
                    {"p", e.p_value},
                    {"variance_ratio", ratio},
                    {"ratio_ok", ratio_ok},
                    {"correlation", rho},
                    {"isotropic", iso},
                    {"n", z.size()}});
  }
  r.statistic = worst_ratio;
  r.lo = cfg.ratio_lo;
  r.hi = cfg.ratio_hi;
  r.passed = ok;
  r.sample_sizes = {std::min(cfg.n, ens.marginals.positions.size()), cfg.n};
  r.data = {{"per_t", rows}};
  r.seconds = seconds_since(t0);
  return r;
}

TestReport test_variance_scaling(const HamiltonianField& field, const FlowCoefficients& coeffs, const Ensemble& ens,
                                 const VarianceScalingConfig& cfg) {
  const auto t0 = Clock::now();
  TestReport r;
  r.name = "variance_scaling";
  r.criterion = 9;
  r.description = "log-log slope of Var(eps^((1-a)/4) Z_t) for separatrix starts, interior plateau, FK control";
  r.seed = cfg.seed;
  r.config = {{"field", field.to_json()},   {"ensemble", ens.cfg.to_json()}, {"t_lo", cfg.t_lo},
              {"t_hi", cfg.t_hi},           {"slope", cfg.slope},            {"slope_tol", cfg.slope_tol},
              {"fk_slope_tol", cfg.fk_slope_tol}, {"plateau_tol", cfg.plateau_tol},
              {"interior_level", cfg.interior_level}, {"interior_n", cfg.interior_n}, {"fk_n", cfg.fk_n},
              {"y_dt", cfg.y.dt},           {"Q", mat_json(coeffs.Q)},       {"seed", cfg.seed}};
  std::vector<double> times;
  std::vector<std::size_t> idx;
  for (std::size_t k = 0; k < ens.marginals.times.size(); ++k) {
    const double t = ens.marginals.times[k];
    if (t >= cfg.t_lo * (1 - 1e-12) && t <= cfg.t_hi * (1 + 1e-12)) {
      times.push_back(t);
      idx.push_back(k);
    }
  }
  if (times.size() < 3) throw ConfigError("test_variance_scaling: need at least three times in the decade");
  std::vector<double> lt, lv;
  for (std::size_t j = 0; j < times.size(); ++j) {
    lt.push_back(std::log(times[j]));
    lv.push_back(std::log(mean_component_variance(scaled_displacements(ens, idx[j], ens.marginals.positions.size()))));
  }
  const auto sep = stats::linear_fit(lt, lv);

  const CellInfo& cell = field.cells().front();
  const Vec2 x_in = level_point(field, 0, cfg.interior_level * std::abs(cell.extremum));
  SimConfig ic = ens.cfg;
  ic.seed = cfg.seed;
  ic.n_paths = cfg.interior_n;
  const Marginals in = sample_marginals(field, ic, x_in, times, cfg.workers);
  std::vector<double> lt_late, lv_late;
  const double t_mid = std::sqrt(cfg.t_lo * cfg.t_hi);
  bool stayed = true;
  for (std::size_t j = 0; j < times.size(); ++j) {
    std::vector<Vec2> z;
    for (std::size_t i = 0; i < in.positions.size(); ++i) {
      z.push_back(ic.space_scale() * (in.positions[i][j] - x_in));
      stayed = stayed && field.cell_of(in.positions[i][j]) == field.cell_of(x_in) &&
               (in.positions[i][j] - x_in).cwiseAbs().maxCoeff() < field.period();
    }
    if (times[j] >= t_mid * (1 - 1e-12)) {
      lt_late.push_back(std::log(times[j]));
      lv_late.push_back(std::log(mean_component_variance(z)));
    }
  }
  const auto interior = stats::linear_fit(lt_late, lv_late);

  const auto w = sample_fk_marginals(coeffs, times, cfg.fk_n, mix_seed(cfg.seed, 1), cfg.y, cfg.workers);
  std::vector<double> lw;
  for (std::size_t j = 0; j < times.size(); ++j) {
    std::vector<Vec2> wj;
    for (const auto& row : w) wj.push_back(row[j]);
    lw.push_back(std::log(mean_component_variance(wj)));
  }
  const auto fk = stats::linear_fit(lt, lw);

  const bool sep_ok = std::abs(sep.slope - cfg.slope) <= cfg.slope_tol;
  const bool in_ok = lt_late.size() >= 2 && std::abs(interior.slope) <= cfg.plateau_tol;
  const bool fk_ok = std::abs(fk.slope - cfg.slope) <= cfg.fk_slope_tol;
  r.statistic = sep.slope;
  r.lo = cfg.slope - cfg.slope_tol;
  r.hi = cfg.slope + cfg.slope_tol;
  r.passed = sep_ok && in_ok && fk_ok;
  r.sample_sizes = {ens.marginals.positions.size(), cfg.interior_n, cfg.fk_n};
  r.data = {{"times", times},
            {"separatrix", {{"slope", sep.slope}, {"slope_se", sep.slope_se}, {"r2", sep.r2}, {"log_var", lv}, {"ok", sep_ok}}},
            {"interior", {{"slope", interior.slope}, {"log_var", lv_late}, {"never_left_cell", stayed}, {"ok", in_ok}}},
            {"fk", {{"slope", fk.slope}, {"slope_se", fk.slope_se}, {"log_var", lw}, {"ok", fk_ok}}}};
  r.seconds = seconds_since(t0);
  return r;
}

TestReport test_local_time(const FlowCoefficients& coeffs, const LocalTimeConfig& cfg) {
  const auto t0 = Clock::now();
  TestReport r;
  r.name = "local_time_scaling";
  r.criterion = 10;
  r.description = "E L_t exponent and downcrossing against occupation local time at t = " + fmt(cfg.t.back());
  r.seed = cfg.seed;
  r.config = {{"coefficients", coeffs.to_json()}, {"n", cfg.n}, {"dt", cfg.dt}, {"t", cfg.t}, {"delta", cfg.delta},
              {"exponent_tol", cfg.exponent_tol}, {"agreement_tol", cfg.agreement_tol}, {"seed", cfg.seed}};
  if (cfg.t.size() < 2 || !std::is_sorted(cfg.t.begin(), cfg.t.end()))
    throw ConfigError("test_local_time: need at least two increasing times");
  YOptions yo;
  yo.dt = cfg.dt;
  const std::size_t nt = cfg.t.size();
  std::vector<std::vector<double>> lt(cfg.n, std::vector<double>(nt));
  std::vector<double> down(cfg.n), occ(cfg.n);
  parallel_for(cfg.n, cfg.workers, [&](std::size_t i) {
    Rng rng(cfg.seed, i);
    const GraphPath p = simulate_Y(coeffs, kVertex, cfg.t.back(), rng, yo);
    for (std::size_t j = 0; j < nt; ++j) {
      const auto k = std::min(static_cast<std::size_t>(std::llround(cfg.t[j] / cfg.dt)), p.size() - 1);
      lt[i][j] = p.local_time[k];
    }
    down[i] = local_time(p, cfg.t.back(), LocalTimeMethod::downcrossing, cfg.delta, coeffs);
    occ[i] = local_time(p, cfg.t.back(), LocalTimeMethod::occupation, cfg.delta, coeffs);
  });
  std::vector<double> x, y, means;
  for (std::size_t j = 0; j < nt; ++j) {
    double m = 0.0;
    for (const auto& row : lt) m += row[j];
    m /= static_cast<double>(cfg.n);
    means.push_back(m);
    x.push_back(std::log(cfg.t[j]));
    y.push_back(std::log(m));
  }
  const auto fit = stats::linear_fit(x, y);
  const double md = stats::mean(down), mo = stats::mean(occ);
  const double rel = std::abs(md / mo - 1.0);
  r.statistic = fit.slope;
  r.lo = 0.5 - cfg.exponent_tol;
  r.hi = 0.5 + cfg.exponent_tol;
  r.passed = fit.slope >= r.lo && fit.slope <= r.hi && rel <= cfg.agreement_tol;
  r.sample_sizes = {cfg.n};
  r.data = {{"mean_local_time", means},
            {"slope_se", fit.slope_se},
            {"downcrossing", md},
            {"occupation", mo},
            {"exact", means.back()},
            {"relative_difference", rel}};
  r.seconds = seconds_since(t0);
  return r;
}

TestReport test_caputo_l1(const CaputoConfig& cfg) {
  const auto t0 = Clock::now();
  TestReport r;
  r.name = "caputo_l1";
  r.criterion = 11;
  r.description = "L1 Caputo derivative of t against 2 sqrt(t / pi), order on t^2";
  r.config = {{"steps", cfg.steps}, {"tol", cfg.tol}, {"order_steps", cfg.order_steps}, {"order", cfg.order},
              {"order_tol", cfg.order_tol}};
  auto max_error = [](int steps, const std::function<double(double)>& f, const std::function<double(double)>& df) {
    const double dt = 1.0 / steps;
    std::vector<double> v(steps + 1);
    for (int k = 0; k <= steps; ++k) v[k] = f(k * dt);
    const auto d = caputo_half(v, dt);
    double err = 0.0;
    for (int k = 1; k <= steps; ++k) err = std::max(err, std::abs(d[k] - df(k * dt)));
    return err;
  };
  const double err = max_error(cfg.steps, [](double t) { return t; }, [](double t) { return 2.0 * std::sqrt(t / kPi); });
  const double c2 = 2.0 / boost::math::tgamma(2.5);
  std::vector<double> lx, ly, errs;
  for (int s : cfg.order_steps) {
    const double e = max_error(s, [](double t) { return t * t; }, [c2](double t) { return c2 * std::pow(t, 1.5); });
    errs.push_back(e);
    lx.push_back(std::log(1.0 / s));
    ly.push_back(std::log(e));
  }
  const double order = stats::linear_fit(lx, ly).slope;
  r.statistic = err;
  r.lo = 0.0;
  r.hi = cfg.tol;
  r.passed = err <= cfg.tol && std::abs(order - cfg.order) <= cfg.order_tol;
  r.data = {{"linear_max_error", err}, {"quadratic_errors", errs}, {"order", order}};
  r.seconds = seconds_since(t0);
  return r;
}

TestReport test_fpde_routes(const Mat2& q, double r0, const FpdeRoutesConfig& cfg) {
  const auto t0 = Clock::now();
  TestReport r;
  r.name = "fpde_routes";
  r.criterion = 12;
  r.description = "sup difference of the Mittag-Leffler and L1 solutions at t = " + fmt(cfg.t);
  r.config = {{"Q", mat_json(q)}, {"r0", r0}, {"n", cfg.n}, {"steps", cfg.steps}, {"t", cfg.t}, {"tol", cfg.tol}};
  FpdeOptions opt;
  opt.steps = cfg.steps;
  opt.alarm_tol = std::numeric_limits<double>::infinity();
  const FpdeResult res = solve_fpde(smooth_datum(cfg.n), q, r0, {cfg.t}, opt);
  r.statistic = res.discrepancy;
  r.lo = 0.0;
  r.hi = cfg.tol;
  r.passed = res.discrepancy <= cfg.tol;
  r.data = res.to_json();
  r.seconds = seconds_since(t0);
  return r;
}

TestReport test_coupled_trace(const FlowCoefficients& coeffs, const CoupledTraceConfig& cfg) {
  const auto t0 = Clock::now();
  TestReport r;
  r.name = "coupled_trace";
  r.criterion = 13;
  r.description = "relative L2 distance of the coupled-system trace at O from the fractional solution";
  r.config = {{"coefficients", coeffs.to_json()}, {"n", cfg.n}, {"levels", cfg.levels}, {"t", cfg.t}, {"tol", cfg.tol}};
  const GridField theta0 = smooth_datum(cfg.n);
  std::vector<double> errs;
  nlohmann::json rows = nlohmann::json::array();
  for (int level : cfg.levels) {
    CoupledOptions co;
    co.steps = level;
    co.edge_points = level;
    const CoupledResult res = solve_coupled(theta0, coeffs, cfg.t, co);
    const double e = trace_l2_error(res, theta0, coeffs.Q, coeffs.r0);
    errs.push_back(e);
    rows.push_back({{"level", level}, {"error", e}, {"solver", res.to_json()}});
  }
  bool refining = true;
  for (std::size_t k = 1; k < errs.size(); ++k) refining = refining && errs[k] <= errs[k - 1] * (1.0 + 1e-9);
  r.statistic = errs.back();
  r.lo = 0.0;
  r.hi = cfg.tol;
  r.passed = errs.back() <= cfg.tol && refining;
  r.data = {{"levels", rows}, {"decreasing", refining}};
  r.seconds = seconds_since(t0);
  return r;
}

double fk_probe_datum(const Vec2& x) { return 0.5 + 0.25 * std::cos(x.x()) + 0.25 * std::cos(x.y()); }

TestReport test_feynman_kac(const HamiltonianField& field, const FlowCoefficients& coeffs,
                            const std::vector<const Ensemble*>& ensembles, const FeynmanKacConfig& cfg) {
  const auto t0 = Clock::now();
  TestReport r;
  r.name = "feynman_kac_probes";
  r.criterion = 14;
  r.description = "Monte Carlo E theta0(s Z_t) against the fractional solution at the probed corners";
  if (ensembles.empty()) throw ConfigError("test_feynman_kac: no ensembles");
  nlohmann::json probes = nlohmann::json::array();
  for (const auto& p : cfg.probes) probes.push_back({{"x", {p.x.x(), p.x.y()}}, {"t", p.t}});
  nlohmann::json ens_cfg = nlohmann::json::array();
  for (const auto* e : ensembles) ens_cfg.push_back(e->cfg.to_json());
  r.config = {{"field", field.to_json()}, {"Q", mat_json(coeffs.Q)}, {"r0", coeffs.r0}, {"probes", probes},
              {"sigmas", cfg.sigmas},     {"slack", cfg.slack},      {"ensembles", ens_cfg}};
  const GridField theta0 = GridField::sample(16, kTwoPi, fk_probe_datum);
  nlohmann::json rows = nlohmann::json::array();
  std::vector<double> mean_err;
  double max_se = 0.0;
  bool last_ok = true;
  double worst = 0.0;
  for (std::size_t k = 0; k < ensembles.size(); ++k) {
    const auto* e = ensembles[k];
    const auto est = feynman_kac_mc(field, fk_probe_datum, e->cfg, e->marginals, cfg.probes);
    double acc = 0.0;
    bool ok = true;
    nlohmann::json pr = nlohmann::json::array();
    for (const auto& p : est) {
      const double exact = fpde_point(theta0, coeffs.Q, coeffs.r0, p.x_eff, p.t);
      const double err = std::abs(p.mean - exact);
      const double allowed = cfg.sigmas * p.se + cfg.slack;
      ok = ok && err <= allowed;
      acc += err;
      max_se = std::max(max_se, p.se);
      if (k + 1 == ensembles.size()) worst = std::max(worst, err / allowed);
      pr.push_back({{"x", {p.x.x(), p.x.y()}},
                    {"x_eff", {p.x_eff.x(), p.x_eff.y()}},
                    {"t", p.t},
                    {"mc", p.mean},
                    {"se", p.se},
                    {"fpde", exact},
                    {"error", err},
                    {"allowed", allowed},
                    {"ok", ok}});
    }
    mean_err.push_back(acc / static_cast<double>(est.size()));
    if (k + 1 == ensembles.size()) last_ok = ok;
    rows.push_back({{"epsilon", e->cfg.epsilon}, {"mean_error", mean_err.back()}, {"probes", pr}, {"all_ok", ok}});
  }
  const bool approach = mean_err.back() <= mean_err.front() + 2.0 * max_se;
  r.statistic = worst;
  r.lo = 0.0;
  r.hi = 1.0;
  r.passed = last_ok && approach;
  for (const auto* e : ensembles) r.sample_sizes.push_back(e->marginals.positions.size());
  r.data = {{"per_eps", rows}, {"approaching", approach}};
  r.seconds = seconds_since(t0);
  return r;
}

SuiteConfig SuiteConfig::full(std::uint64_t seed, unsigned workers) {
  SuiteConfig c;
  c.seed = seed;
  c.workers = workers;
  c.deff.workers = c.deff_mc.workers = c.exit.workers = c.upcrossing.workers = c.averaging.workers = c.main.workers =
      c.variance.workers = c.local_time.workers = workers;
  c.deff_mc.seed = mix_seed(seed, 4);
  c.exit.seed = mix_seed(seed, 5);
  c.upcrossing.seed = mix_seed(seed, 6);
  c.averaging.seed = mix_seed(seed, 7);
  c.main.seed = mix_seed(seed, 8);
  c.variance.seed = mix_seed(seed, 9);
  c.local_time.seed = mix_seed(seed, 10);
  c.upcrossing.horizon = 4.0;
  return c;
}

SuiteConfig SuiteConfig::reduced(std::uint64_t seed, unsigned workers) {
  SuiteConfig c = full(seed, workers);
  c.quick = true;
  c.ensemble_n = 2000;
  c.deff_mc.paths = 60;
  c.exit.n = 2000;
  c.upcrossing.n = 2000;
  c.upcrossing.n_stability = 800;
  c.upcrossing.n_exit_local_time = 2000;
  c.upcrossing.n_boot = 200;
  c.main.n = 2000;
  c.main.n_perm = 200;
  c.variance.interior_n = 300;
  c.variance.fk_n = 2000;
  c.local_time.n = 300;
  return c;
}

bool SuiteConfig::wants(int criterion) const {
  return only.empty() || std::find(only.begin(), only.end(), criterion) != only.end();
}

nlohmann::json SuiteConfig::to_json() const {
  return {{"quick", quick},
          {"seed", seed},
          {"family_alpha", family_alpha},
          {"only", only},
          {"ensemble_dt_safety", ensemble_dt_safety},
          {"ensemble_eps", ensemble_eps},
          {"ensemble_times", ensemble_times},
          {"ensemble_n", ensemble_n}};
}

nlohmann::json SuiteResult::to_json() const {
  nlohmann::json reps = nlohmann::json::array();
  for (std::size_t k = 0; k < reports.size(); ++k) {
    nlohmann::json j = reports[k].to_json();
    j["corrected_pass"] = static_cast<bool>(corrected_pass[k]);
    reps.push_back(j);
  }
  return {{"reports", reps}, {"holm_adjusted", adjusted}, {"all_pass", all_pass}};
}

SuiteResult run_suite(const HamiltonianField& field, const SuiteConfig& cfg,
                      const std::function<void(const TestReport&)>& on_report) {
  SuiteResult out;
  auto emit = [&](TestReport r) {
    if (on_report) on_report(r);
    out.reports.push_back(std::move(r));
  };
  if (cfg.wants(1)) emit(test_perimeter_weights(field));
  if (cfg.wants(2)) emit(test_period_fit(field));
  FlowCoefficients coeffs = edge_coefficients(field);
  if (cfg.wants(3)) emit(test_deff_scaling(field, cfg.deff));
  if (cfg.wants(4)) emit(test_deff_monte_carlo(field, cfg.deff_mc));
  if (cfg.wants(5)) emit(test_exit_linearity(field, cfg.exit));
  QEstimate q;
  bool have_q = false;
  const bool need_q = cfg.wants(6) || cfg.wants(8) || cfg.wants(9) || cfg.wants(12) || cfg.wants(13) || cfg.wants(14);
  if (need_q) {
    UpcrossingConfig uc = cfg.upcrossing;
    if (!cfg.wants(6)) uc.stability_deltas.clear();
    TestReport r = test_upcrossing_limits(field, coeffs, uc, &q);
    have_q = true;
    if (cfg.wants(6)) emit(std::move(r));
  }
  if (have_q) {
    coeffs.Q = q.q;
    coeffs.has_Q = true;
  }
  if (cfg.wants(10)) emit(test_local_time(coeffs, cfg.local_time));
  if (cfg.wants(11)) emit(test_caputo_l1(cfg.caputo));
  if (cfg.wants(12)) emit(test_fpde_routes(coeffs.Q, coeffs.r0, cfg.fpde));
  if (cfg.wants(13)) emit(test_coupled_trace(coeffs, cfg.coupled));

  const bool need_ens = cfg.wants(7) || cfg.wants(8) || cfg.wants(9) || cfg.wants(14);
  if (need_ens) {
    std::vector<double> times = cfg.ensemble_times;
    std::sort(times.begin(), times.end());
    std::vector<Ensemble> ens;
    for (std::size_t k = 0; k < cfg.ensemble_eps.size(); ++k) {
      SimConfig sc;
      sc.epsilon = cfg.ensemble_eps[k];
      sc.alpha = 0.5;
      sc.dt_safety = cfg.ensemble_dt_safety;
      sc.seed = mix_seed(cfg.seed, 100 + k);
      sc.n_paths = cfg.ensemble_n;
      sc.horizon = times.back();
      ens.push_back(saddle_ensemble(field, sc, times, cfg.workers));
    }
    std::vector<const Ensemble*> all;
    for (const auto& e : ens) all.push_back(&e);
    const Ensemble& smallest = ens.back();
    if (cfg.wants(7)) emit(test_averaging(field, coeffs, all, cfg.averaging));
    if (cfg.wants(8)) emit(test_main_theorem(field, coeffs, smallest, cfg.main));
    if (cfg.wants(9)) emit(test_variance_scaling(field, coeffs, smallest, cfg.variance));
    if (cfg.wants(14)) {
      std::vector<const Ensemble*> pair{all.front(), all.back()};
      emit(test_feynman_kac(field, coeffs, pair, cfg.fk));
    }
  }
  std::sort(out.reports.begin(), out.reports.end(),
            [](const TestReport& a, const TestReport& b) { return a.criterion < b.criterion; });

  std::vector<double> flat;
  for (const auto& r : out.reports) flat.insert(flat.end(), r.p_values.begin(), r.p_values.end());
  const stats::HolmResult holm = stats::holm(flat, cfg.family_alpha);
  out.adjusted = holm.adjusted;
  out.all_pass = true;
  std::size_t at = 0;
  for (const auto& r : out.reports) {
    bool rejected = false;
    for (std::size_t k = 0; k < r.p_values.size(); ++k) rejected = rejected || holm.reject[at + k];
    at += r.p_values.size();
    const bool pass = r.p_values.empty() ? r.passed : (r.checks_passed && !rejected);
    out.corrected_pass.push_back(pass);
    out.all_pass = out.all_pass && pass;
  }
  return out;
}

}  // namespace cellflow
