#include "cellflow/reeb_graph.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <sstream>

namespace cellflow {

GraphPoint project_value(const HamiltonianField& field, const Vec2& x, double h, double graph_scale) {
  if (h == 0.0) return kVertex;
  const int cell = field.cell_of(x);
  if (cell == kSeparatrix) return kVertex;
  return {cell, graph_scale * std::abs(h)};
}

GraphPoint project(const Vec2& x, double epsilon, double alpha, const HamiltonianField& field) {
  return project_value(field, x, field.value(x), std::pow(epsilon, -0.5 * alpha));
}

double graph_distance(const GraphPoint& p, const GraphPoint& q) {
  if (p.edge == q.edge || p.at_vertex() || q.at_vertex()) {
    if (p.at_vertex()) return q.y;
    if (q.at_vertex()) return p.y;
    return std::abs(p.y - q.y);
  }
  return p.y + q.y;
}

void GraphPath::write_csv(std::ostream& os) const {
  os << "t,edge,y\n";
  char buf[128];
  for (std::size_t k = 0; k < size(); ++k) {
    std::snprintf(buf, sizeof buf, "%.17g,%d,%.17g\n", times[k], points[k].at_vertex() ? -1 : points[k].edge,
                  points[k].y);
    os << buf;
  }
}

YProcess::YProcess(const FlowCoefficients& coeffs, GraphPoint y0, double dt, Rng& rng)
    : coeffs_(&coeffs), rng_(&rng), dt_(dt), sqrt_dt_(std::sqrt(dt)) {
  if (!(dt > 0.0)) throw ConfigError("simulate_Y: dt must be positive");
  const int m = coeffs.edges();
  if (m == 0 || static_cast<int>(coeffs.label_weight.size()) != m)
    throw ConfigError("simulate_Y: coefficients are incomplete");
  if (y0.y < 0.0) throw ConfigError("simulate_Y: negative graph coordinate");
  if (!y0.at_vertex() && (y0.edge < 0 || y0.edge >= m)) throw ConfigError("simulate_Y: start edge out of range");
  double acc = 0.0;
  for (double w : coeffs.label_weight) cumulative_.push_back(acc += w);
  if (y0.at_vertex()) {
    edge_ = draw_label();
    b_ = 0.0;
  } else {
    edge_ = y0.edge;
    b_ = y0.y / std::sqrt(coeffs.a[edge_]);
  }
}

int YProcess::draw_label() {
  if (cumulative_.size() == 1) return 0;
  const double u = rng_->uniform() * cumulative_.back();
  const auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), u);
  return std::min(static_cast<int>(it - cumulative_.begin()), static_cast<int>(cumulative_.size()) - 1);
}

void YProcess::step() {
  const double b_new = b_ + sqrt_dt_ * rng_->normal();
  crossed_ = b_ == 0.0 || b_new == 0.0 || (b_ > 0.0) != (b_new > 0.0);
  if (crossed_) {
    const double sgn = b_ > 0.0 ? 1.0 : (b_ < 0.0 ? -1.0 : 0.0);
    ell_ += std::abs(b_new) - std::abs(b_) - sgn * (b_new - b_);
    edge_ = draw_label();
  }
  b_ = b_new;
  t_ += dt_;
}

GraphPath simulate_Y(const FlowCoefficients& coeffs, GraphPoint y0, double horizon, Rng& rng, const YOptions& opt) {
  if (!(horizon >= 0.0)) throw ConfigError("simulate_Y: horizon must be nonnegative");
  YProcess y(coeffs, y0, opt.dt, rng);
  const auto n = static_cast<std::size_t>(std::llround(horizon / opt.dt));
  GraphPath path;
  path.resolution = opt.exc_resolution * std::sqrt(opt.dt);
  path.times.reserve(n + 1);
  path.points.reserve(n + 1);
  path.vertex_visit.reserve(n + 1);
  path.driving.reserve(n + 1);
  path.local_time.reserve(n + 1);
  auto push = [&](double t) {
    path.times.push_back(t);
    path.points.push_back(y.point());
    path.vertex_visit.push_back(y.crossed() || y.driving() == 0.0 ? 1 : 0);
    path.driving.push_back(y.driving());
    path.local_time.push_back(y.local_time());
  };
  push(0.0);
  path.points.back() = y0.at_vertex() ? kVertex : y.point();
  for (std::size_t k = 1; k <= n; ++k) {
    y.step();
    push(static_cast<double>(k) * opt.dt);
  }
  return path;
}

double local_time(const GraphPath& path, double t, LocalTimeMethod method, double param,
                  const FlowCoefficients& coeffs) {
  if (!(param > 0.0)) throw ConfigError("local_time: delta or h must be positive");
  if (param < path.resolution) {
    std::ostringstream msg;
    msg << "local_time: resolution " << param << " is finer than the path resolution " << path.resolution;
    throw ResolutionError(msg.str());
  }
  if (path.size() == 0) return 0.0;
  if (t > path.times.back() * (1.0 + 1e-12)) throw DomainError("local_time: t beyond the path horizon");
  if (method == LocalTimeMethod::downcrossing) {
    // Sampled paths detect a level about beta sigma sqrt(dt) late (Siegmund's
    // constant beta = -zeta(1/2) / sqrt(2 pi)), once at delta and once at O,
    // so each cycle spans delta + 2 beta sqrt(a_j dt).
    constexpr double kBeta = 0.5825971579390106;
    const double dt = path.size() > 1 ? (path.times.back() - path.times.front()) / static_cast<double>(path.size() - 1) : 0.0;
    double acc = 0.0;
    int phase = path.points[0].at_vertex() ? 1 : 0;  // 0: seek O, 1: seek delta, 2: seek O
    int edge = -1;
    for (std::size_t k = 1; k < path.size() && path.times[k] <= t; ++k) {
      const bool at_o = path.vertex_visit[k] || path.points[k].at_vertex();
      if (phase != 1 && at_o) {
        if (phase == 2) acc += param + 2.0 * kBeta * std::sqrt(coeffs.a[edge] * dt);
        phase = 1;
      }
      if (phase == 1 && path.points[k].y >= param) {
        phase = 2;
        edge = path.points[k].edge;
      }
    }
    return acc;
  }
  double acc = 0.0;
  for (std::size_t k = 0; k + 1 < path.size() && path.times[k] < t; ++k) {
    const double dt = std::min(path.times[k + 1], t) - path.times[k];
    const GraphPoint& p = path.points[k];
    if (p.y <= param) acc += coeffs.a[p.at_vertex() ? 0 : p.edge] * dt;
  }
  return acc / (2.0 * param);
}

double interior_local_time(const GraphPath& path, double t, GraphPoint where, const FlowCoefficients& coeffs) {
  if (path.driving.size() != path.size()) throw ConfigError("interior_local_time: path has no driving motion");
  if (where.at_vertex()) throw DomainError("interior_local_time: point must be off the vertex");
  const double sa = std::sqrt(coeffs.a[where.edge]);
  const double u = where.y / sa;
  double lp = 0.0, lm = 0.0;
  auto sgn = [](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); };
  for (std::size_t k = 0; k + 1 < path.size() && path.times[k + 1] <= t; ++k) {
    if (path.points[k + 1].edge != where.edge) continue;
    const double b0 = path.driving[k];
    const double b1 = path.driving[k + 1];
    lp += std::abs(b1 - u) - std::abs(b0 - u) - sgn(b0 - u) * (b1 - b0);
    lm += std::abs(b1 + u) - std::abs(b0 + u) - sgn(b0 + u) * (b1 - b0);
  }
  return 0.5 * sa * (lp + lm);
}

ExcursionSet excursion_project(const GraphPath& path, double delta, const std::vector<Vec2>* plane) {
  if (!(delta > 0.0)) throw ConfigError("excursion_project: delta must be positive");
  if (plane && plane->size() != path.size()) throw ConfigError("excursion_project: plane data size mismatch");
  ExcursionSet set;
  set.delta = delta;
  if (path.size() == 0) return set;
  int phase = path.points[0].at_vertex() ? 1 : 0;
  double t_kappa = 0.0;
  std::size_t k_kappa = 0;
  Excursion cur;
  std::size_t k_mu = 0;
  for (std::size_t k = 1; k < path.size(); ++k) {
    const bool at_o = path.vertex_visit[k] || path.points[k].at_vertex();
    if (phase == 0 && at_o) {
      phase = 1;
      t_kappa = path.times[k];
      k_kappa = k;
    }
    if (phase == 2 && at_o) {
      cur.t_kappa = path.times[k];
      cur.down_duration = cur.t_kappa - cur.t_mu;
      cur.path.times.assign(path.times.begin() + static_cast<long>(k_mu), path.times.begin() + static_cast<long>(k) + 1);
      cur.path.points.assign(path.points.begin() + static_cast<long>(k_mu), path.points.begin() + static_cast<long>(k) + 1);
      cur.path.points.back() = kVertex;
      set.excursions.push_back(cur);
      phase = 1;
      t_kappa = path.times[k];
      k_kappa = k;
      continue;
    }
    if (phase == 1 && path.points[k].y >= delta) {
      cur = Excursion{};
      cur.t_mu = path.times[k];
      cur.up_duration = cur.t_mu - t_kappa;
      cur.label = path.points[k].edge;
      if (plane) {
        cur.displacement = (*plane)[k] - (*plane)[k_kappa];
        cur.has_displacement = true;
      }
      k_mu = k;
      phase = 2;
    }
  }
  if (phase == 2) {
    cur.censored = true;
    cur.t_kappa = path.times.back();
    cur.down_duration = cur.t_kappa - cur.t_mu;
    cur.path.times.assign(path.times.begin() + static_cast<long>(k_mu), path.times.end());
    cur.path.points.assign(path.points.begin() + static_cast<long>(k_mu), path.points.end());
    set.excursions.push_back(cur);
  }
  return set;
}

nlohmann::json ExcursionSet::to_json() const {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& e : excursions) {
    nlohmann::json j = {{"label", e.label},           {"t_mu", e.t_mu},
                        {"t_kappa", e.t_kappa},       {"up_duration", e.up_duration},
                        {"down_duration", e.down_duration}, {"censored", e.censored}};
    if (e.has_displacement) j["displacement"] = {e.displacement.x(), e.displacement.y()};
    arr.push_back(j);
  }
  return {{"delta", delta}, {"excursions", arr}};
}

}  // namespace cellflow
