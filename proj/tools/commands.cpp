#include "commands.hpp"

#include "cellflow/cell_problem.hpp"
#include "cellflow/contour.hpp"
#include "cellflow/fk_process.hpp"
#include "cellflow/fractional_pde.hpp"
#include "cellflow/parallel.hpp"
#include "cellflow/sde_engine.hpp"
#include "cellflow/verify.hpp"

#include <cmath>
#include <fstream>
#include <optional>
#include <ostream>

namespace cellflow::cli {

namespace {

// The config echoed into artifacts and hashed: everything except where the
// output goes and how many threads produce it.
nlohmann::json echoed(const RunConfig& rc) {
  nlohmann::json j = rc.values;
  j["command"] = rc.command;
  return j;
}

ArtifactSink make_sink(const RunConfig& rc) {
  const std::uint64_t seed = rc.values.contains("seed") ? rc.seed() : 0;
  const Format format = rc.values.contains("format") ? rc.format() : Format::json;
  return ArtifactSink(rc.out_root, rc.command, echoed(rc), seed, format);
}

void report_dir(std::ostream& log, const ArtifactSink& sink) { log << sink.dir().string() << "\n"; }

Vec2 parse_point(const nlohmann::json& v, const std::string& key) {
  if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number())
    throw ConfigError("config key '" + key + "' must be \"saddle\", \"separatrix\" or [x1, x2]");
  return {v[0].get<double>(), v[1].get<double>()};
}

// Start points: a saddle, a fixed point, or uniform on the separatrix with
// substream 1 of each path's stream.
struct StartRule {
  std::optional<SeparatrixSampler> sampler;
  Vec2 point = Vec2::Zero();

  Vec2 operator()(std::uint64_t seed, std::size_t i) const {
    if (!sampler) return point;
    Rng rng(seed, i, 1);
    return sampler->sample(rng);
  }
};

void init_start(StartRule& rule, const RunConfig& rc, const HamiltonianField& field) {
  const auto& v = rc.raw("sim.x0");
  if (v == "saddle") {
    if (field.saddles().empty()) throw ConfigError("sim.x0 = saddle but the field has no saddles");
    rule.point = field.saddles().front().x;
  } else if (v == "separatrix") {
    rule.sampler.emplace(field);
  } else {
    rule.point = parse_point(v, "sim.x0");
  }
}

Mat2 q_matrix(const RunConfig& rc, const std::string& key) {
  const auto q = rc.list(key);
  if (q.size() != 3) throw ConfigError("config key '" + key + "' must be [q11, q12, q22]");
  Mat2 m;
  m << q[0], q[1], q[1], q[2];
  cholesky_factor(m);
  return m;
}

GridField initial_datum(const RunConfig& rc, double period) {
  const std::string spec = rc.str("fpde.theta0");
  const int n = static_cast<int>(rc.u64("fpde.n"));
  if (n < 4 || n % 2 != 0) throw ConfigError("fpde.n must be an even integer >= 4");
  const double w = kTwoPi / period;
  if (spec == "smooth")
    return GridField::sample(n, period, [w](const Vec2& x) {
      return std::exp(std::cos(w * x.x()) + 0.5 * std::sin(w * x.y()) - 1.5);
    });
  if (spec == "probe") return GridField::sample(n, period, [w](const Vec2& x) { return fk_probe_datum(w * x); });
  if (spec.rfind("const:", 0) == 0) {
    double c = 0.0;
    try {
      c = std::stod(spec.substr(6));
    } catch (const std::exception&) {
      throw ConfigError("fpde.theta0: bad constant in '" + spec + "'");
    }
    return GridField::sample(n, period, [c](const Vec2&) { return c; });
  }
  throw ConfigError("fpde.theta0 must be smooth, probe or const:<c>");
}

FlowCoefficients coefficients(const HamiltonianField& field) {
  if (field.cell_count() == 0) throw ConfigError("the field has no cells, so there is no graph limit");
  return edge_coefficients(field);
}

double resolve_r0(const RunConfig& rc, const HamiltonianField& field) {
  const auto& v = rc.raw("fpde.r0");
  if (v.is_null()) return coefficients(field).r0;
  const double r0 = rc.num("fpde.r0");
  if (!(r0 > 0.0)) throw ConfigError("fpde.r0 must be positive");
  return r0;
}

std::vector<double> increasing_times(const RunConfig& rc, const std::string& key) {
  auto t = rc.list(key);
  if (t.empty()) throw ConfigError("config key '" + key + "' must not be empty");
  for (std::size_t i = 0; i < t.size(); ++i)
    if (!(t[i] > 0.0) || (i > 0 && !(t[i] > t[i - 1])))
      throw ConfigError("config key '" + key + "' must be positive and increasing");
  return t;
}

// One row per grid row: (t, route, row, x1, u_0 .. u_{n-1}).
Table grid_table(const std::vector<double>& times, const std::vector<std::vector<GridField>>& routes) {
  Table t;
  const int n = routes.front().front().n;
  t.columns = {"t", "route", "row", "x1"};
  for (int j = 0; j < n; ++j) t.columns.push_back("u" + std::to_string(j));
  for (std::size_t r = 0; r < routes.size(); ++r) {
    for (std::size_t k = 0; k < times.size(); ++k) {
      const GridField& g = routes[r][k];
      for (int i = 0; i < n; ++i) {
        std::vector<double> row{times[k], static_cast<double>(r), static_cast<double>(i), g.period * i / n};
        for (int j = 0; j < n; ++j) row.push_back(g(i, j));
        t.add(std::move(row));
      }
    }
  }
  return t;
}

int cmd_coeffs(const RunConfig& rc, std::ostream& log) {
  const HamiltonianField field = rc.field();
  if (field.cell_count() == 0) throw ConfigError("the field has no cells, so there is no graph limit");
  CoefficientOptions opt;
  opt.h_min = rc.num("coeffs.h_min");
  opt.h_max = rc.num("coeffs.h_max");
  opt.n_levels = static_cast<int>(rc.u64("coeffs.n_levels"));
  opt.min_r2 = rc.num("coeffs.min_r2");
  if (!(opt.h_min > 0.0 && opt.h_max > opt.h_min) || opt.n_levels < 3)
    throw ConfigError("coeffs: need 0 < h_min < h_max and n_levels >= 3");
  const FlowCoefficients c = edge_coefficients(field, opt);
  nlohmann::json saddles = nlohmann::json::array();
  for (const auto& s : field.saddles()) saddles.push_back({s.x.x(), s.x.y()});
  ArtifactSink sink = make_sink(rc);
  sink.write_json("coefficients", {{"hamiltonian", field.to_json()}, {"saddles", saddles}, {"coefficients", c.to_json()}});
  sink.finish({{"edges", c.edges()}, {"r0", c.r0}});
  report_dir(log, sink);
  return kExitOk;
}

int cmd_simulate(const RunConfig& rc, std::ostream& log) {
  const HamiltonianField field = rc.field();
  const SimConfig cfg = rc.sim();
  StartRule start;
  init_start(start, rc, field);
  std::vector<PathSample> paths(cfg.n_paths);
  parallel_for(cfg.n_paths, rc.workers,
               [&](std::size_t i) { paths[i] = simulate_rescaled(field, cfg, start(cfg.seed, i), i); });
  Table t;
  t.columns = {"path", "t", "x1", "x2", "w1", "w2", "H", "cell", "edge", "y"};
  for (std::size_t i = 0; i < paths.size(); ++i) {
    const PathSample& p = paths[i];
    for (std::size_t k = 0; k < p.size(); ++k) {
      const GraphPoint& g = p.graph_points[k];
      t.add({static_cast<double>(i), p.times[k], p.positions[k].x(), p.positions[k].y(),
             static_cast<double>(p.winding[k][0]), static_cast<double>(p.winding[k][1]), p.h_values[k],
             static_cast<double>(p.cells[k]), g.at_vertex() ? -1.0 : static_cast<double>(g.edge), g.y});
    }
  }
  ArtifactSink sink = make_sink(rc);
  sink.write_table("paths", t);
  sink.finish({{"rows", t.rows.size()}, {"time_scale", cfg.time_scale()}});
  report_dir(log, sink);
  return kExitOk;
}

int cmd_crossings(const RunConfig& rc, std::ostream& log) {
  const HamiltonianField field = rc.field();
  const SimConfig cfg = rc.sim();
  const double delta = rc.num("delta");
  if (!(delta > 0.0)) throw ConfigError("delta must be positive");
  StartRule start;
  init_start(start, rc, field);
  const SdeEngine engine(field, cfg.epsilon, cfg.dt_max, cfg.dt_safety);
  const double scale = cfg.time_scale();
  std::vector<CrossingRecord> records(cfg.n_paths);
  parallel_for(cfg.n_paths, rc.workers, [&](std::size_t i) {
    const Vec2 x0 = start(cfg.seed, i);
    Rng rng(cfg.seed, i);
    PathIntegrator path(engine, x0, rng);
    CrossingTracker tracker(field, delta, cfg.epsilon, cfg.alpha);
    tracker.observe(0.0, x0, path.h());
    path.advance_to(cfg.horizon * scale, [&](double t, const Vec2& x, double h) {
      tracker.observe(t / scale, x, h);
      return true;
    });
    records[i] = tracker.record();
  });
  Table t;
  t.columns = {"path", "n", "kind", "t", "x1", "x2", "edge"};
  nlohmann::json recs = nlohmann::json::array();
  std::size_t cycles = 0;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const CrossingRecord& r = records[i];
    for (std::size_t n = 0; n < r.kappa.size(); ++n)
      t.add({static_cast<double>(i), static_cast<double>(n), 0.0, r.kappa[n], r.kappa_points[n].x(),
             r.kappa_points[n].y(), -1.0});
    for (std::size_t n = 0; n < r.mu.size(); ++n)
      t.add({static_cast<double>(i), static_cast<double>(n + 1), 1.0, r.mu[n], r.mu_points[n].x(), r.mu_points[n].y(),
             static_cast<double>(r.exit_edges[n])});
    cycles += r.displacements.size();
    recs.push_back(r.to_json());
  }
  ArtifactSink sink = make_sink(rc);
  sink.write_table("crossings", t);
  sink.write_json("records", recs);
  sink.finish({{"complete_cycles", cycles}});
  report_dir(log, sink);
  return kExitOk;
}

int cmd_estimate_q(const RunConfig& rc, std::ostream& log) {
  const HamiltonianField field = rc.field();
  const SimConfig cfg = rc.sim();
  const double delta = rc.num("delta");
  StartSampler start;
  const auto& x0 = rc.raw("sim.x0");
  if (x0 == "separatrix") {
    start.kind = StartSampler::Kind::uniform_separatrix;
  } else if (x0 == "saddle") {
    if (field.saddles().empty()) throw ConfigError("sim.x0 = saddle but the field has no saddles");
    start.point = field.saddles().front().x;
  } else {
    start.point = parse_point(x0, "sim.x0");
  }
  const UpcrossingPool pool = sample_upcrossings(field, cfg, delta, cfg.n_paths, start, rc.workers);
  if (pool.displacements.size() < 10)
    throw StatisticalError("estimate-q: only " + std::to_string(pool.displacements.size()) +
                           " complete cycles; raise sim.horizon or n_paths");
  const int n_boot = static_cast<int>(rc.u64("estimate.n_boot"));
  const QEstimate q = estimate_Q(pool, mix_seed(cfg.seed, 0x51), n_boot);
  const ExitProbEstimate p = estimate_exit_probs(pool.exit_edges, field.cell_count());
  Table t;
  t.columns = {"dz1", "dz2"};
  for (const auto& d : pool.displacements) t.add({d.x(), d.y()});
  ArtifactSink sink = make_sink(rc);
  sink.write_table("displacements", t);
  sink.write_json("estimate", {{"Q", q.to_json()},
                               {"p", p.to_json()},
                               {"censoring_fraction", pool.censoring_fraction()},
                               {"complete_cycles", pool.displacements.size()},
                               {"attempted", pool.attempted}});
  sink.finish({{"Q", {q.q(0, 0), q.q(0, 1), q.q(1, 1)}}});
  report_dir(log, sink);
  return kExitOk;
}

int cmd_celldiff(const RunConfig& rc, std::ostream& log) {
  const HamiltonianField field = rc.field();
  std::vector<double> eps = rc.list("celldiff.eps_list");
  if (eps.empty()) eps = {rc.num("eps")};
  for (double e : eps)
    if (!(e > 0.0)) throw ConfigError("celldiff: epsilon must be positive");
  CellOptions opt;
  opt.grid = static_cast<int>(rc.u64("celldiff.grid"));
  opt.tol = rc.num("celldiff.tol");
  const double n_band = rc.num("celldiff.n_band");
  const bool dump = rc.flag("celldiff.dump_corrector");
  const bool need_solutions = dump || n_band > 0.0;

  std::vector<DeffPoint> points;
  std::vector<Mat2> q_bl;
  ArtifactSink sink = make_sink(rc);
  nlohmann::json dumped = nlohmann::json::array();
  if (need_solutions) {
    double q_sum = 0.0;
    if (n_band > 0.0)
      for (double q : coefficients(field).q) q_sum += q;
    for (std::size_t i = 0; i < eps.size(); ++i) {
      const CorrectorSolution sol = solve_corrector(field, eps[i], opt);
      DeffPoint pt;
      pt.epsilon = eps[i];
      pt.d = effective_diffusivity(sol);
      pt.residual = std::max(sol.residual[0], sol.residual[1]);
      pt.n = sol.n;
      pt.iterations = std::max(sol.iterations[0], sol.iterations[1]);
      points.push_back(pt);
      if (n_band > 0.0) q_bl.push_back(q_matrix_boundary_layer(field, sol, n_band, q_sum));
      if (dump) {
        for (int c = 0; c < 2; ++c) {
          const std::string name = "chi" + std::to_string(c + 1) + "_" + std::to_string(i) + ".bin";
          std::ofstream os(sink.dir() / name, std::ios::binary);
          sol.chi[c].write_binary(os);
          dumped.push_back(name);
        }
      }
    }
  } else {
    points = deff_sweep(field, eps, opt, rc.workers);
  }
  Table t;
  t.columns = {"eps", "D11", "D12", "D22", "residual", "N"};
  for (const auto& p : points) t.add({p.epsilon, p.d(0, 0), p.d(0, 1), p.d(1, 1), p.residual, static_cast<double>(p.n)});
  sink.write_table("deff", t);
  nlohmann::json result = {{"corrector_files", dumped}};
  if (points.size() >= 5) {
    try {
      result["fit"] = scaling_fit(points, field.period()).to_json();
    } catch (const ConfigError& e) {
      result["fit_skipped"] = e.what();
    }
  }
  if (!q_bl.empty()) {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& m : q_bl) a.push_back({m(0, 0), m(0, 1), m(1, 1)});
    result["q_boundary_layer"] = a;
  }
  sink.write_json("fit", result);
  sink.finish({{"points", points.size()}});
  report_dir(log, sink);
  return kExitOk;
}

int cmd_solve_fpde(const RunConfig& rc, std::ostream& log) {
  const HamiltonianField field = rc.field();
  const GridField theta0 = initial_datum(rc, field.period());
  const Mat2 q = q_matrix(rc, "fpde.q");
  const double r0 = resolve_r0(rc, field);
  const auto times = increasing_times(rc, "fpde.times");
  FpdeOptions opt;
  opt.steps = static_cast<int>(rc.u64("fpde.steps"));
  opt.alarm_tol = rc.num("fpde.alarm_tol");
  const FpdeResult res = solve_fpde(theta0, q, r0, times, opt);
  ArtifactSink sink = make_sink(rc);
  sink.write_table("solution", grid_table(res.times, {res.spectral, res.stepped}));
  nlohmann::json report = res.to_json();
  report["r0"] = r0;
  sink.write_json("report", report);
  sink.finish({{"discrepancy", res.discrepancy}});
  report_dir(log, sink);
  return kExitOk;
}

int cmd_solve_coupled(const RunConfig& rc, std::ostream& log) {
  const HamiltonianField field = rc.field();
  const GridField theta0 = initial_datum(rc, field.period());
  FlowCoefficients coeffs = coefficients(field);
  coeffs.Q = q_matrix(rc, "fpde.q");
  coeffs.has_Q = true;
  if (!rc.raw("fpde.r0").is_null())
    throw ConfigError("solve-coupled: r0 follows from the edge coefficients; leave fpde.r0 null");
  const auto times = increasing_times(rc, "fpde.times");
  CoupledOptions opt;
  opt.steps = static_cast<int>(rc.u64("coupled.steps"));
  opt.edge_points = static_cast<int>(rc.u64("coupled.edge_points"));
  opt.y_max = rc.num("coupled.y_max");
  const CoupledResult res = solve_coupled(theta0, coeffs, times, opt);
  ArtifactSink sink = make_sink(rc);
  sink.write_table("trace", grid_table(res.times, {res.trace}));
  Table prof;
  prof.columns = {"t", "edge", "y", "theta"};
  for (std::size_t k = 0; k < res.times.size(); ++k)
    for (std::size_t e = 0; e < res.profiles[k].size(); ++e)
      for (std::size_t j = 0; j < res.y_grid.size(); ++j)
        prof.add({res.times[k], static_cast<double>(e), res.y_grid[j], res.profiles[k][e][j]});
  sink.write_table("profiles", prof);
  nlohmann::json report = res.to_json();
  report["trace_l2_error"] = trace_l2_error(res, theta0, coeffs.Q, coeffs.r0);
  sink.write_json("report", report);
  sink.finish({{"trace_l2_error", report["trace_l2_error"]}, {"truncation_warning", res.truncation_warning}});
  report_dir(log, sink);
  return kExitOk;
}

int cmd_fk_sample(const RunConfig& rc, std::ostream& log) {
  const HamiltonianField field = rc.field();
  FlowCoefficients coeffs = coefficients(field);
  coeffs.Q = q_matrix(rc, "fpde.q");
  coeffs.has_Q = true;
  const auto times = increasing_times(rc, "fk.times");
  YOptions yopt;
  yopt.dt = rc.num("fk.dt");
  if (!(yopt.dt > 0.0)) throw ConfigError("fk.dt must be positive");
  const std::size_t n = rc.u64("n_paths");
  const auto marg = sample_fk_marginals(coeffs, times, n, rc.seed(), yopt, rc.workers);
  Table t;
  t.columns = {"path", "t", "x1", "x2"};
  for (std::size_t i = 0; i < marg.size(); ++i)
    for (std::size_t k = 0; k < times.size(); ++k) t.add({static_cast<double>(i), times[k], marg[i][k].x(), marg[i][k].y()});
  nlohmann::json cov = nlohmann::json::array();
  for (std::size_t k = 0; k < times.size(); ++k) {
    Mat2 c = Mat2::Zero();
    for (const auto& row : marg) c += row[k] * row[k].transpose();
    c /= static_cast<double>(std::max<std::size_t>(marg.size(), 1));
    cov.push_back({{"t", times[k]}, {"second_moment", {c(0, 0), c(0, 1), c(1, 1)}}});
  }
  ArtifactSink sink = make_sink(rc);
  sink.write_table("marginals", t);
  sink.write_json("moments", {{"coefficients", coeffs.to_json()}, {"moments", cov}});
  sink.finish({{"paths", n}});
  report_dir(log, sink);
  return kExitOk;
}

int cmd_verify_all(const RunConfig& rc, std::ostream& log) {
  const HamiltonianField field = rc.field();
  SuiteConfig cfg = rc.flag("verify.quick") ? SuiteConfig::reduced(rc.seed(), rc.workers)
                                            : SuiteConfig::full(rc.seed(), rc.workers);
  for (double c : rc.list("verify.only")) {
    if (c != std::floor(c) || c < 1 || c > 14) throw ConfigError("verify.only: criteria are integers 1..14");
    cfg.only.push_back(static_cast<int>(c));
  }
  nlohmann::json timings = nlohmann::json::object();
  const SuiteResult res = run_suite(field, cfg, [&](const TestReport& r) {
    log << r.summary() << std::endl;
  });
  ArtifactSink sink = make_sink(rc);
  nlohmann::json j = res.to_json();
  // Wall-clock times go to the manifest so the reports stay reproducible.
  for (auto& r : j["reports"]) {
    timings[r["name"].get<std::string>()] = r["seconds"];
    r.erase("seconds");
  }
  j["suite"] = cfg.to_json();
  sink.write_json("reports", j);
  std::size_t passed = 0;
  for (std::size_t k = 0; k < res.reports.size(); ++k) {
    if (res.corrected_pass[k]) ++passed;
    log << (res.corrected_pass[k] ? "PASS" : "FAIL") << " (Holm) [#" << res.reports[k].criterion << "] "
        << res.reports[k].name << "\n";
  }
  sink.finish({{"passed", passed}, {"total", res.reports.size()}, {"all_pass", res.all_pass}}, {{"seconds", timings}});
  report_dir(log, sink);
  return res.all_pass ? kExitOk : kExitStatistical;
}

}  // namespace

int dispatch(const RunConfig& rc, std::ostream& log) {
  const std::string& c = rc.command;
  if (c == "coeffs") return cmd_coeffs(rc, log);
  if (c == "simulate") return cmd_simulate(rc, log);
  if (c == "crossings") return cmd_crossings(rc, log);
  if (c == "estimate-q") return cmd_estimate_q(rc, log);
  if (c == "celldiff") return cmd_celldiff(rc, log);
  if (c == "solve-fpde") return cmd_solve_fpde(rc, log);
  if (c == "solve-coupled") return cmd_solve_coupled(rc, log);
  if (c == "fk-sample") return cmd_fk_sample(rc, log);
  if (c == "verify-all") return cmd_verify_all(rc, log);
  throw ConfigError("unknown command '" + c + "'");
}

}  // namespace cellflow::cli
