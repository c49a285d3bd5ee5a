#include "cellflow/sde_engine.hpp"

#include "cellflow/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <istream>
#include <ostream>
#include <sstream>

namespace cellflow {

void SimConfig::validate() const {
  if (!(epsilon > 0.0 && epsilon < 1.0)) throw ConfigError("epsilon must lie in (0, 1)");
  if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("alpha must lie in (0, 1)");
  if (!(horizon >= 0.0) || !std::isfinite(horizon)) throw ConfigError("horizon must be nonnegative");
  if (!(dt_max > 0.0)) throw ConfigError("dt_max must be positive");
  if (!(dt_safety > 0.0)) throw ConfigError("dt_safety must be positive");
  if (n_paths < 1) throw ConfigError("n_paths must be at least 1");
  if (record_stride < 1) throw ConfigError("record_stride must be at least 1");
}

double SimConfig::time_scale() const {
  return alpha * std::abs(std::log(epsilon)) / std::pow(epsilon, 1.0 - alpha);
}

double SimConfig::space_scale() const { return std::pow(epsilon, 0.25 * (1.0 - alpha)); }

double SimConfig::graph_scale() const { return std::pow(epsilon, -0.5 * alpha); }

nlohmann::json SimConfig::to_json() const {
  return {{"epsilon", epsilon}, {"alpha", alpha},   {"horizon", horizon}, {"dt_max", dt_max},
          {"dt_safety", dt_safety}, {"seed", seed}, {"n_paths", n_paths}, {"record_stride", record_stride}};
}

SimConfig SimConfig::from_json(const nlohmann::json& j) {
  SimConfig c;
  try {
    c.epsilon = j.value("epsilon", c.epsilon);
    c.alpha = j.value("alpha", c.alpha);
    c.horizon = j.value("horizon", c.horizon);
    c.dt_max = j.value("dt_max", c.dt_max);
    c.dt_safety = j.value("dt_safety", c.dt_safety);
    c.seed = j.value("seed", c.seed);
    c.n_paths = j.value("n_paths", c.n_paths);
    c.record_stride = j.value("record_stride", c.record_stride);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("simulation config: ") + e.what());
  }
  c.validate();
  return c;
}

SdeEngine::SdeEngine(const HamiltonianField& field, double epsilon, double dt_max, double dt_safety)
    : field_(&field), eps_(epsilon), sqrt_eps_(std::sqrt(epsilon)), dt_max_(dt_max), dt_safety_(dt_safety) {
  if (!(epsilon >= 0.0)) throw ConfigError("epsilon must be nonnegative");
  if (!(dt_max > 0.0) || !(dt_safety > 0.0)) throw ConfigError("step controls must be positive");
}

double SdeEngine::dt_for(double speed2) const {
  if (eps_ == 0.0) return dt_max_;
  return std::min(dt_max_, dt_safety_ * eps_ / std::max(1.0, speed2));
}

Vec2 SdeEngine::rk4(const Vec2& x, double dt, const Vec2& k1) const {
  const Vec2 k2 = field_->velocity(x + 0.5 * dt * k1);
  const Vec2 k3 = field_->velocity(x + 0.5 * dt * k2);
  const Vec2 k4 = field_->velocity(x + dt * k3);
  return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

Vec2 SdeEngine::flow(const Vec2& x, double dt, double h0, const Vec2& v0, double& h_end) const {
  const Vec2 y = rk4(x, dt, v0);
  const double hy = field_->value(y);
  if (std::abs(hy - h0) <= kDriftTolerance) {
    h_end = hy;
    return y;
  }
  const double half = 0.5 * dt;
  if (half < kMinStep) {
    std::ostringstream msg;
    msg << "integrator: H-drift control failed below dt_min at x = (" << x.x() << ", " << x.y() << ")";
    throw NumericalError(msg.str());
  }
  double hm;
  const Vec2 mid = flow(x, half, h0, v0, hm);
  Vec2 vm;
  field_->value_and_velocity(mid, vm);
  return flow(mid, half, hm, vm, h_end);
}

Vec2 SdeEngine::flow(const Vec2& x, double dt) const {
  Vec2 v;
  const double h = field_->value_and_velocity(x, v);
  double h_end;
  return flow(x, dt, h, v, h_end);
}

Vec2 SdeEngine::step(const Vec2& x, double dt, Rng& rng) const {
  if (!(dt > 0.0)) throw ConfigError("step: dt must be positive");
  const Vec2 y = flow(x, dt);
  const double s = sqrt_eps_ * std::sqrt(dt);
  const double n1 = rng.normal();
  const double n2 = rng.normal();
  return y + s * Vec2(n1, n2);
}

PathIntegrator::PathIntegrator(const SdeEngine& engine, const Vec2& x0, Rng& rng)
    : engine_(&engine), rng_(&rng), x_(x0) {
  if (!std::isfinite(x0.x()) || !std::isfinite(x0.y())) throw ConfigError("initial point must be finite");
  h_ = engine.field().value_and_velocity(x_, v_);
}

CrossingTracker::CrossingTracker(const HamiltonianField& field, double delta, double epsilon, double alpha)
    : field_(&field), level_(delta * std::pow(epsilon, 0.5 * alpha)) {
  if (!(delta > 0.0)) throw ConfigError("crossing instrumentation: delta must be positive");
}

double CrossingTracker::refine(double ta, const Vec2& xa, double tb, const Vec2& xb, double target_abs, bool zero,
                               Vec2& x_hit) const {
  auto f = [&](const Vec2& x) {
    const double h = field_->value(x);
    return zero ? h : std::abs(h) - target_abs;
  };
  double lo = 0.0, hi = 1.0;
  const double f_lo = f(xa);
  const double span = tb - ta;
  while ((hi - lo) * span > 1e-3 * span && hi - lo > 1e-12) {
    const double mid = 0.5 * (lo + hi);
    const double fm = f(xa + mid * (xb - xa));
    if ((fm > 0.0) == (f_lo > 0.0) && fm != 0.0) lo = mid;
    else hi = mid;
  }
  x_hit = xa + hi * (xb - xa);
  return ta + hi * span;
}

void CrossingTracker::on_kappa(double t, const Vec2& x) {
  if (!rec_.kappa_points.empty()) rec_.displacements.push_back(x - rec_.kappa_points.back());
  rec_.kappa.push_back(t);
  rec_.kappa_points.push_back(x);
  phase_ = 1;
}

void CrossingTracker::on_mu(double t, const Vec2& x) {
  rec_.mu.push_back(t);
  rec_.mu_points.push_back(x);
  rec_.exit_edges.push_back(field_->cell_of(x));
  rec_.up_displacements.push_back(x - rec_.kappa_points.back());
  phase_ = 2;
}

void CrossingTracker::observe(double t, const Vec2& x, double h) {
  if (!started_) {
    started_ = true;
    if (std::abs(h) <= kOnSeparatrix) on_kappa(t, x);
    t_prev_ = t;
    x_prev_ = x;
    h_prev_ = h;
    return;
  }
  double ta = t_prev_;
  Vec2 xa = x_prev_;
  double ha = h_prev_;
  if (phase_ != 1) {
    if (ha * h < 0.0 || std::abs(h) <= kOnSeparatrix) {
      Vec2 xk;
      const double tk = std::abs(h) <= kOnSeparatrix ? t : refine(ta, xa, t, x, 0.0, true, xk);
      if (std::abs(h) <= kOnSeparatrix) xk = x;
      on_kappa(tk, xk);
      ta = tk;
      xa = xk;
      ha = 0.0;
    }
  }
  if (phase_ == 1 && std::abs(h) >= level_ && std::abs(ha) < level_) {
    Vec2 xm;
    const double tm = refine(ta, xa, t, x, level_, false, xm);
    on_mu(tm, xm);
  }
  t_prev_ = t;
  x_prev_ = x;
  h_prev_ = h;
}

namespace {

void push_sample(PathSample& out, const HamiltonianField& field, double t, const Vec2& x, double h,
                 double graph_scale) {
  out.times.push_back(t);
  out.positions.push_back(x);
  out.winding.push_back(field.winding(x));
  out.h_values.push_back(h);
  const int cell = h == 0.0 ? kSeparatrix : field.cell_of(x);
  out.cells.push_back(cell);
  out.graph_points.push_back(cell == kSeparatrix ? kVertex : GraphPoint{cell, graph_scale * std::abs(h)});
}

}  // namespace

PathSample simulate_rescaled(const HamiltonianField& field, const SimConfig& cfg, const Vec2& x0,
                             std::size_t path_index) {
  cfg.validate();
  const SdeEngine engine(field, cfg.epsilon, cfg.dt_max, cfg.dt_safety);
  Rng rng(cfg.seed, path_index);
  PathIntegrator path(engine, x0, rng);
  const double scale = cfg.time_scale();
  const double gs = cfg.graph_scale();
  PathSample out;
  push_sample(out, field, 0.0, x0, path.h(), gs);
  if (cfg.horizon == 0.0) return out;
  const double t_end = cfg.horizon * scale;
  std::size_t k = 0;
  path.advance_to(t_end, [&](double t, const Vec2& x, double h) {
    if (++k % cfg.record_stride == 0 || t == t_end) push_sample(out, field, t / scale, x, h, gs);
    return true;
  });
  return out;
}

HitResult hitting_time(const HamiltonianField& field, const SimConfig& cfg, const Vec2& x0, double level,
                       std::size_t path_index) {
  cfg.validate();
  if (level < 0.0) throw DomainError("hitting_time: level must be nonnegative");
  double top = 0.0;
  for (const auto& c : field.cells()) top = std::max(top, std::abs(c.extremum));
  if (level >= top && level > 0.0) throw DomainError("hitting_time: level not below the cell maximum");
  const SdeEngine engine(field, cfg.epsilon, cfg.dt_max, cfg.dt_safety);
  Rng rng(cfg.seed, path_index);
  PathIntegrator path(engine, x0, rng);
  HitResult res;
  const double h0 = path.h();
  const double f0 = level == 0.0 ? h0 : std::abs(h0) - level;
  if (f0 == 0.0) {
    res.point = x0;
    return res;
  }
  const double scale = cfg.time_scale();
  const double t_end = cfg.horizon * scale;
  double ta = 0.0, fa = f0;
  Vec2 xa = x0;
  bool hit = false;
  path.advance_to(t_end, [&](double t, const Vec2& x, double h) {
    const double f = level == 0.0 ? h : std::abs(h) - level;
    if (f == 0.0 || (f > 0.0) != (fa > 0.0)) {
      double lo = 0.0, hi = 1.0;
      while (hi - lo > 1e-12) {
        const double mid = 0.5 * (lo + hi);
        const double hm = field.value(xa + mid * (x - xa));
        const double fm = level == 0.0 ? hm : std::abs(hm) - level;
        if (fm != 0.0 && (fm > 0.0) == (fa > 0.0)) lo = mid;
        else hi = mid;
      }
      res.time = (ta + hi * (t - ta)) / scale;
      res.point = xa + hi * (x - xa);
      hit = true;
      return false;
    }
    ta = t;
    xa = x;
    fa = f;
    return true;
  });
  if (!hit) {
    res.time = cfg.horizon;
    res.point = path.position();
    res.censored = true;
  }
  return res;
}

ExitResult exit_band(const HamiltonianField& field, const SimConfig& cfg, const Vec2& x0, double h,
                     std::size_t path_index) {
  cfg.validate();
  const double h0 = field.value(x0);
  if (!(h > 0.0) || !(std::abs(h0) > 0.0 && std::abs(h0) < h))
    throw DomainError("exit_band: start must satisfy 0 < |H(x0)| < h");
  const SdeEngine engine(field, cfg.epsilon, cfg.dt_max, cfg.dt_safety);
  Rng rng(cfg.seed, path_index);
  PathIntegrator path(engine, x0, rng);
  const double scale = cfg.time_scale();
  const double t_end = cfg.horizon * scale;
  ExitResult res;
  bool done = false;
  path.advance_to(t_end, [&](double t, const Vec2&, double hv) {
    if (std::abs(hv) >= h) {
      res.upper = true;
      done = true;
    } else if (hv * h0 <= 0.0) {
      done = true;
    }
    if (done) res.time = t / scale;
    return !done;
  });
  if (!done) {
    res.time = cfg.horizon;
    res.censored = true;
  }
  return res;
}

Marginals sample_marginals(const HamiltonianField& field, const SimConfig& cfg,
                           const std::function<Vec2(std::size_t)>& start, const std::vector<double>& times,
                           unsigned workers) {
  cfg.validate();
  if (!std::is_sorted(times.begin(), times.end()) || (!times.empty() && times.front() < 0.0))
    throw ConfigError("sample_marginals: times must be nonnegative and increasing");
  const SdeEngine engine(field, cfg.epsilon, cfg.dt_max, cfg.dt_safety);
  const double scale = cfg.time_scale();
  Marginals out;
  out.times = times;
  out.positions.resize(cfg.n_paths);
  out.h.resize(cfg.n_paths);
  parallel_for(cfg.n_paths, workers, [&](std::size_t i) {
    const Vec2 x0 = start(i);
    Rng rng(cfg.seed, i);
    PathIntegrator path(engine, x0, rng);
    auto& pos = out.positions[i];
    auto& hv = out.h[i];
    for (double t : times) {
      path.advance_to(t * scale, [](double, const Vec2&, double) { return true; });
      pos.push_back(path.position());
      hv.push_back(path.h());
    }
  });
  return out;
}

Marginals sample_marginals(const HamiltonianField& field, const SimConfig& cfg, const Vec2& x0,
                           const std::vector<double>& times, unsigned workers) {
  return sample_marginals(field, cfg, [&](std::size_t) { return x0; }, times, workers);
}

CrossingRecord crossing_instrumentation(const PathSample& path, double delta, double epsilon, double alpha,
                                        const HamiltonianField& field) {
  CrossingTracker tracker(field, delta, epsilon, alpha);
  for (std::size_t k = 0; k < path.size(); ++k) tracker.observe(path.times[k], path.positions[k], path.h_values[k]);
  return tracker.record();
}

nlohmann::json CrossingRecord::to_json() const {
  auto pts = [](const std::vector<Vec2>& v) {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& p : v) a.push_back({p.x(), p.y()});
    return a;
  };
  return {{"mu", mu},
          {"kappa", kappa},
          {"displacements", pts(displacements)},
          {"exit_edges", exit_edges},
          {"up_displacements", pts(up_displacements)}};
}

GraphPath PathSample::graph_path() const {
  GraphPath g;
  g.times = times;
  g.points = graph_points;
  g.vertex_visit.resize(size(), 0);
  double res = 0.0;
  for (std::size_t k = 0; k < size(); ++k) {
    if (h_values[k] == 0.0) g.vertex_visit[k] = 1;
    if (k > 0) {
      if (h_values[k] * h_values[k - 1] < 0.0) g.vertex_visit[k] = 1;
      res = std::max(res, graph_distance(graph_points[k], graph_points[k - 1]));
    }
  }
  g.resolution = res;
  return g;
}

void PathSample::write_csv(std::ostream& os) const {
  os << "t,x1,x2,w1,w2,H,cell,edge,y\n";
  char buf[512];
  for (std::size_t k = 0; k < size(); ++k) {
    const GraphPoint& g = graph_points[k];
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%ld,%ld,%.17g,%d,%d,%.17g\n", times[k], positions[k].x(),
                  positions[k].y(), winding[k][0], winding[k][1], h_values[k], cells[k], g.at_vertex() ? -1 : g.edge,
                  g.y);
    os << buf;
  }
}

namespace {

void put_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

void put_f64(std::ostream& os, double d) {
  std::uint64_t v;
  std::memcpy(&v, &d, 8);
  put_u64(os, v);
}

std::uint64_t get_u64(std::istream& is) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8)) throw ConfigError("binary frame: truncated input");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

double get_f64(std::istream& is) {
  const std::uint64_t v = get_u64(is);
  double d;
  std::memcpy(&d, &v, 8);
  return d;
}

constexpr std::uint64_t kColumns = 9;

}  // namespace

void write_binary(std::ostream& os, const PathSample& path, const nlohmann::json& cfg_echo) {
  os.write("CFLW", 4);
  const unsigned char version[4] = {1, 0, 0, 0};
  os.write(reinterpret_cast<const char*>(version), 4);
  const std::string cfg = cfg_echo.dump();
  put_u64(os, cfg.size());
  os.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
  put_u64(os, path.size());
  put_u64(os, kColumns);
  for (std::size_t k = 0; k < path.size(); ++k) {
    const GraphPoint& g = path.graph_points[k];
    put_f64(os, path.times[k]);
    put_f64(os, path.positions[k].x());
    put_f64(os, path.positions[k].y());
    put_f64(os, static_cast<double>(path.winding[k][0]));
    put_f64(os, static_cast<double>(path.winding[k][1]));
    put_f64(os, path.h_values[k]);
    put_f64(os, static_cast<double>(path.cells[k]));
    put_f64(os, g.at_vertex() ? -1.0 : static_cast<double>(g.edge));
    put_f64(os, g.y);
  }
}

PathSample read_binary(std::istream& is, nlohmann::json* cfg_echo) {
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, "CFLW", 4) != 0) throw ConfigError("binary frame: bad magic");
  const std::uint64_t len = get_u64(is);
  std::string cfg(len, '\0');
  if (!is.read(cfg.data(), static_cast<std::streamsize>(len))) throw ConfigError("binary frame: truncated header");
  if (cfg_echo) *cfg_echo = nlohmann::json::parse(cfg);
  const std::uint64_t rows = get_u64(is);
  if (get_u64(is) != kColumns) throw ConfigError("binary frame: unexpected column count");
  PathSample p;
  for (std::uint64_t k = 0; k < rows; ++k) {
    p.times.push_back(get_f64(is));
    const double x1 = get_f64(is);
    const double x2 = get_f64(is);
    p.positions.emplace_back(x1, x2);
    const long w1 = static_cast<long>(get_f64(is));
    const long w2 = static_cast<long>(get_f64(is));
    p.winding.push_back({w1, w2});
    p.h_values.push_back(get_f64(is));
    p.cells.push_back(static_cast<int>(get_f64(is)));
    const int edge = static_cast<int>(get_f64(is));
    const double y = get_f64(is);
    p.graph_points.push_back(edge < 0 ? kVertex : GraphPoint{edge, y});
  }
  return p;
}

}  // namespace cellflow
