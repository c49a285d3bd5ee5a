#include "cellflow/contour.hpp"

#include "ode.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace cellflow {

namespace {

using V3 = Eigen::Matrix<double, 3, 1>;
using V4 = Eigen::Matrix<double, 4, 1>;

void check_cell(const HamiltonianField& field, int cell) {
  if (cell < 0 || cell >= field.cell_count()) {
    std::ostringstream msg;
    msg << "cell index " << cell << " out of range [0, " << field.cell_count() << ")";
    throw DomainError(msg.str());
  }
}

// Newton correction along grad H onto {H = target}.
Vec2 project_level(const HamiltonianField& field, Vec2 x, double target) {
  for (int it = 0; it < 3; ++it) {
    const double r = field.value(x) - target;
    const Vec2 g = field.gradient(x);
    const double g2 = g.squaredNorm();
    if (g2 == 0.0) break;
    x -= r * g / g2;
    if (std::abs(r) < 1e-16) break;
  }
  return x;
}

struct SimpleFit {
  double slope, intercept, r2;
};

SimpleFit fit_line(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxx = 0, sxy = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  const double slope = sxy / sxx;
  return {slope, my - slope * mx, syy > 0 ? sxy * sxy / (sxx * syy) : 1.0};
}

}  // namespace

Vec2 level_point(const HamiltonianField& field, int cell, double h) {
  check_cell(field, cell);
  const CellInfo& c = field.cells()[cell];
  const double top = std::abs(c.extremum);
  if (!(h > 0.0) || !(h < top)) {
    std::ostringstream msg;
    msg << "level " << h << " outside (0, " << top << ") for cell " << cell;
    throw DomainError(msg.str());
  }
  const int s = c.sign;
  Eigen::SelfAdjointEigenSolver<Mat2> eig(field.hessian(c.center));
  Vec2 x = c.center + 1e-3 * field.period() * eig.eigenvectors().col(0);
  for (int it = 0; it < 100000; ++it) {
    const double f = s * field.value(x) - h;
    const Vec2 g = field.gradient(x);
    const double gn = g.norm();
    if (gn == 0.0) throw NumericalError("level_point: stalled at a critical point");
    if (std::abs(f) < 1e-15 * std::max(1.0, h)) return x;
    const double eta = std::clamp(f / gn, 1e-12 * field.period(), 0.01 * field.period());
    const Vec2 next = x - eta * s * g / gn;
    const double fn = s * field.value(next) - h;
    if (fn > 0.0) {
      x = next;
      continue;
    }
    Vec2 lo = x, hi = next;
    for (int b = 0; b < 200; ++b) {
      const Vec2 mid = 0.5 * (lo + hi);
      if (s * field.value(mid) - h > 0.0) lo = mid;
      else hi = mid;
      if ((hi - lo).norm() < 1e-15 * field.period()) break;
    }
    return project_level(field, 0.5 * (lo + hi), s * h);
  }
  throw NumericalError("level_point: descent did not reach the level");
}

ClosedOrbit trace_closed_orbit(const HamiltonianField& field, int cell, double h, const ContourOptions& opt) {
  const Vec2 x0 = level_point(field, cell, h);
  const double target = field.cells()[cell].sign * h;
  auto rhs = [&](const V4& y) {
    Vec2 v;
    field.value_and_velocity(Vec2(y[0], y[1]), v);
    const double sp = v.norm();
    return V4(v.x(), v.y(), sp * sp, sp);
  };
  const Vec2 v0 = field.velocity(x0);
  const Vec2 dir = v0.normalized();
  V4 y(x0.x(), x0.y(), 0.0, 0.0);
  double t = 0.0;
  double step = 1e-3 * field.period() / std::max(v0.norm(), 1e-300);
  step = std::min(step, 1.0);
  double g_prev = 0.0;
  double max_dist = 0.0;
  ClosedOrbit out;
  out.start = x0;
  for (long n = 0; n < opt.max_steps; ++n) {
    V4 y_new;
    const double err = detail::dopri5_step<4>(rhs, y, step, y_new, opt.rtol, opt.atol);
    if (!std::isfinite(err)) throw NumericalError("closed orbit: non-finite integrator state");
    if (err > 1.0) {
      step = detail::next_step(step, err);
      if (step < 1e-14) throw NumericalError("closed orbit: step size underflow");
      continue;
    }
    const Vec2 xp = project_level(field, Vec2(y_new[0], y_new[1]), target);
    y_new[0] = xp.x();
    y_new[1] = xp.y();
    const double g_new = (xp - x0).dot(dir);
    const double dist = (xp - x0).norm();
    max_dist = std::max(max_dist, dist);
    if (g_prev < 0.0 && g_new >= 0.0 && dist < 0.5 * max_dist) {
      // Root of the section function along a re-taken partial step.
      double lo = 0.0, hi = step, glo = g_prev, ghi = g_new;
      V4 y_end = y_new;
      double tau = hi;
      for (int it = 0; it < 100; ++it) {
        tau = (ghi - glo) != 0.0 ? hi - ghi * (hi - lo) / (ghi - glo) : 0.5 * (lo + hi);
        if (!(tau > lo && tau < hi)) tau = 0.5 * (lo + hi);
        V4 ys;
        detail::dopri5_step<4>(rhs, y, tau, ys, opt.rtol, opt.atol);
        const double gs = (Vec2(ys[0], ys[1]) - x0).dot(dir);
        y_end = ys;
        if (std::abs(gs) < 1e-15 * field.period() || hi - lo < 1e-15 * (t + step)) break;
        if (gs < 0.0) {
          lo = tau;
          glo = gs;
          ghi *= 0.5;
        } else {
          hi = tau;
          ghi = gs;
          glo *= 0.5;
        }
      }
      out.period = t + tau;
      out.flux = y_end[2];
      out.length = y_end[3];
      out.steps = n + 1;
      return out;
    }
    g_prev = g_new;
    y = y_new;
    t += step;
    step = detail::next_step(step, err);
  }
  std::ostringstream msg;
  msg << "closed orbit at level " << h << " in cell " << cell << " did not close within " << opt.max_steps
      << " steps (elapsed time " << t << ")";
  throw NumericalError(msg.str());
}

double rotation_period(const HamiltonianField& field, int cell, double h, const ContourOptions& opt) {
  return trace_closed_orbit(field, cell, h, opt).period;
}

std::vector<HeteroclinicOrbit> separatrix_orbits(const HamiltonianField& field, const ContourOptions& opt) {
  const auto& saddles = field.saddles();
  const double scale = field.period() / kTwoPi;
  const double r0 = 1e-4 * scale;
  std::vector<HeteroclinicOrbit> orbits;
  auto rhs = [&](const V3& y) {
    Vec2 v;
    field.value_and_velocity(Vec2(y[0], y[1]), v);
    const double sp = v.norm();
    return V3(v.x() / sp, v.y() / sp, sp);
  };
  for (std::size_t a = 0; a < saddles.size(); ++a) {
    const Mat2 hess = field.hessian(saddles[a].x);
    Mat2 dv;
    dv << -hess(1, 0), -hess(1, 1), hess(0, 0), hess(0, 1);
    Eigen::EigenSolver<Mat2> es(dv);
    int iu = es.eigenvalues()[0].real() > es.eigenvalues()[1].real() ? 0 : 1;
    const Vec2 eu = es.eigenvectors().col(iu).real().normalized();
    for (int branch : {1, -1}) {
      const Vec2 start = saddles[a].x + branch * r0 * eu;
      HeteroclinicOrbit orbit;
      orbit.from_saddle = static_cast<int>(a);
      const double head = 0.5 * (hess * eu).norm() * r0 * r0;
      V3 y(start.x(), start.y(), head);
      double s = 0.0;
      double step = 0.5 * r0;
      std::vector<std::pair<double, Vec2>> trail;
      trail.emplace_back(0.0, start);
      bool done = false;
      for (long n = 0; n < opt.max_steps && !done; ++n) {
        double nearest = 1e300;
        int nearest_idx = -1;
        const Vec2 x(y[0], y[1]);
        for (std::size_t b = 0; b < saddles.size(); ++b) {
          if (b == a && s < 100.0 * r0) continue;
          const double d = field.torus_delta(x, saddles[b].x).norm();
          if (d < nearest) {
            nearest = d;
            nearest_idx = static_cast<int>(b);
          }
        }
        if (nearest < r0) {
          const Vec2 dx = field.torus_delta(x, saddles[nearest_idx].x);
          const Mat2 hb = field.hessian(saddles[nearest_idx].x);
          orbit.weight = y[2] + 0.5 * (hb * dx.normalized()).norm() * dx.squaredNorm();
          orbit.length = s + dx.norm() + r0;
          orbit.to_saddle = nearest_idx;
          done = true;
          break;
        }
        const double cap = std::min(0.02 * field.period(), 0.5 * nearest);
        step = std::min(step, cap);
        V3 y_new;
        const double err = detail::dopri5_step<3>(rhs, y, step, y_new, opt.rtol, opt.atol);
        if (!std::isfinite(err)) throw NumericalError("separatrix trace: non-finite integrator state");
        if (err > 1.0) {
          step = detail::next_step(step, err);
          if (step < 1e-16 * scale) throw NumericalError("separatrix trace: step size underflow");
          continue;
        }
        const Vec2 xp = project_level(field, Vec2(y_new[0], y_new[1]), 0.0);
        y_new[0] = xp.x();
        y_new[1] = xp.y();
        y = y_new;
        s += step;
        trail.emplace_back(s, xp);
        step = detail::next_step(step, err);
      }
      if (!done) throw NumericalError("separatrix trace: orbit did not reach a saddle");
      const double half = 0.5 * s;
      auto it = std::lower_bound(trail.begin(), trail.end(), half,
                                 [](const auto& p, double v) { return p.first < v; });
      const Vec2 mid = it->second;
      const Vec2 n = field.gradient(mid).normalized();
      const double off = 1e-3 * scale;
      orbit.left_cell = field.cell_of(mid + off * n);
      orbit.right_cell = field.cell_of(mid - off * n);
      if (orbit.left_cell < 0 || orbit.right_cell < 0 || orbit.left_cell == orbit.right_cell)
        throw NumericalError("separatrix trace: could not identify the adjacent cells");
      orbit.trail = std::move(trail);
      orbits.push_back(std::move(orbit));
    }
  }
  return orbits;
}

double perimeter_weight(const HamiltonianField& field, int cell, const ContourOptions& opt) {
  check_cell(field, cell);
  double q = 0.0;
  for (const auto& o : separatrix_orbits(field, opt)) {
    if (o.left_cell == cell) q += o.weight;
    if (o.right_cell == cell) q += o.weight;
  }
  return q;
}

double FlowCoefficients::a_max() const { return a.empty() ? 0.0 : *std::max_element(a.begin(), a.end()); }

void FlowCoefficients::finalize() {
  const int m = edges();
  if (m == 0 || static_cast<int>(a.size()) != m) throw ConfigError("coefficients: q and a must have equal, nonzero size");
  for (int i = 0; i < m; ++i)
    if (!(q[i] > 0.0) || !(a[i] > 0.0)) throw ConfigError("coefficients: q and a must be positive");
  const double qsum = std::accumulate(q.begin(), q.end(), 0.0);
  q_bar.resize(m);
  label_weight.resize(m);
  double wsum = 0.0;
  r0 = 0.0;
  for (int i = 0; i < m; ++i) {
    q_bar[i] = q[i] / qsum;
    r0 += q_bar[i] / std::sqrt(0.5 * a[i]);
    label_weight[i] = q[i] / std::sqrt(a[i]);
    wsum += label_weight[i];
  }
  for (auto& w : label_weight) w /= wsum;
  local_time_factor = qsum / wsum;
}

nlohmann::json FlowCoefficients::to_json() const {
  nlohmann::json j = {{"q", q},          {"slope", slope}, {"intercept", intercept}, {"r2", r2},
                      {"c_bar", c_bar},  {"a", a},         {"q_bar", q_bar},         {"label_weight", label_weight},
                      {"r0", r0},        {"local_time_factor", local_time_factor}};
  if (has_p) j["p"] = p;
  if (has_Q) j["Q"] = {{Q(0, 0), Q(0, 1)}, {Q(1, 0), Q(1, 1)}};
  return j;
}

FlowCoefficients FlowCoefficients::from_json(const nlohmann::json& j) {
  FlowCoefficients c;
  try {
    c.q = j.at("q").get<std::vector<double>>();
    c.a = j.at("a").get<std::vector<double>>();
    c.slope = j.value("slope", std::vector<double>{});
    c.intercept = j.value("intercept", std::vector<double>{});
    c.r2 = j.value("r2", std::vector<double>{});
    c.c_bar = j.value("c_bar", std::vector<double>{});
    if (j.contains("p")) {
      c.p = j.at("p").get<std::vector<double>>();
      c.has_p = true;
    }
    if (j.contains("Q")) {
      const auto& m = j.at("Q");
      c.Q << m.at(0).at(0).get<double>(), m.at(0).at(1).get<double>(), m.at(1).at(0).get<double>(),
          m.at(1).at(1).get<double>();
      c.has_Q = true;
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("coefficients: malformed JSON: ") + e.what());
  }
  c.finalize();
  return c;
}

FlowCoefficients FlowCoefficients::symmetric(int edges, double a, double q) {
  FlowCoefficients c;
  c.q.assign(edges, q);
  c.a.assign(edges, a);
  c.finalize();
  return c;
}

FlowCoefficients edge_coefficients(const HamiltonianField& field, const CoefficientOptions& opt) {
  const int m = field.cell_count();
  if (m == 0) throw ConfigError("coefficients: field has no cells");
  if (!(opt.h_min > 0.0) || !(opt.h_max > opt.h_min) || opt.n_levels < 3)
    throw ConfigError("coefficients: bad level range");
  FlowCoefficients c;
  const auto orbits = separatrix_orbits(field, opt.contour);
  c.q.assign(m, 0.0);
  for (const auto& o : orbits) {
    c.q[o.left_cell] += o.weight;
    c.q[o.right_cell] += o.weight;
  }
  std::vector<double> logs(opt.n_levels);
  std::vector<double> levels(opt.n_levels);
  for (int k = 0; k < opt.n_levels; ++k) {
    const double u = static_cast<double>(k) / (opt.n_levels - 1);
    levels[k] = std::exp(std::log(opt.h_min) + u * (std::log(opt.h_max) - std::log(opt.h_min)));
    logs[k] = -std::log(levels[k]);
  }
  for (int i = 0; i < m; ++i) {
    std::vector<double> periods(opt.n_levels);
    for (int k = 0; k < opt.n_levels; ++k) periods[k] = rotation_period(field, i, levels[k], opt.contour);
    const SimpleFit f = fit_line(logs, periods);
    if (f.r2 < opt.min_r2) {
      std::ostringstream msg;
      msg << "coefficients: period fit in cell " << i << " has R^2 = " << f.r2 << " < " << opt.min_r2;
      throw CoefficientQualityError(msg.str());
    }
    c.slope.push_back(f.slope);
    c.intercept.push_back(f.intercept);
    c.r2.push_back(f.r2);
    c.c_bar.push_back(0.5 * f.slope);
    c.a.push_back(c.q[i] / (0.5 * f.slope));
  }
  c.finalize();
  return c;
}

}  // namespace cellflow
