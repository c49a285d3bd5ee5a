#include "cellflow/hamiltonian.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace cellflow {

namespace {

constexpr int kImpure = -2;
constexpr int kLabelGrid = 256;

double torus_dist(const Vec2& d) { return d.norm(); }

}  // namespace

HamiltonianField::HamiltonianField(std::string name, double period, std::vector<TrigTerm> terms)
    : name_(std::move(name)), period_(period), wavenumber_(kTwoPi / period), terms_(std::move(terms)) {
  if (!(period_ > 0.0) || !std::isfinite(period_)) throw ConfigError("hamiltonian: period must be positive");
  for (const auto& t : terms_) {
    if (!std::isfinite(t.cos_coef) || !std::isfinite(t.sin_coef))
      throw ConfigError("hamiltonian: non-finite coefficient");
    if (t.k[0] == 0 && t.k[1] == 0 && t.cos_coef != 0.0)
      throw ConfigError("hamiltonian: constant term would move the separatrix off {H = 0}");
    if (t.cos_coef == 0.0 && t.sin_coef == 0.0) continue;
    const double kx = t.k[0] * wavenumber_;
    const double ky = t.k[1] * wavenumber_;
    eval_terms_.push_back({kx, ky, t.cos_coef, t.sin_coef});
    const double amp = std::hypot(t.cos_coef, t.sin_coef);
    grad_bound_ += amp * std::hypot(kx, ky);
    hess_bound_ += amp * (kx * kx + ky * ky);
  }
  analyze();
}

HamiltonianField HamiltonianField::sin_sin() {
  // sin x1 sin x2 = (cos(x1 - x2) - cos(x1 + x2)) / 2
  return HamiltonianField("sin_sin", kTwoPi, {{{1, -1}, 0.5, 0.0}, {{1, 1}, -0.5, 0.0}});
}

HamiltonianField HamiltonianField::skewed(double beta) {
  if (!(std::abs(beta) < 0.5)) throw ConfigError("skewed hamiltonian: need |beta| < 0.5");
  // sin x1 sin x2 + beta sin^2 x1 sin x2
  // sin^2 x1 sin x2 = sin x2 / 2 - (sin(2x1 + x2) - sin(2x1 - x2)) / 4
  std::vector<TrigTerm> terms = {{{1, -1}, 0.5, 0.0},
                                 {{1, 1}, -0.5, 0.0},
                                 {{0, 1}, 0.0, 0.5 * beta},
                                 {{2, 1}, 0.0, -0.25 * beta},
                                 {{2, -1}, 0.0, 0.25 * beta}};
  std::ostringstream name;
  name << "skewed:" << beta;
  return HamiltonianField(name.str(), kTwoPi, std::move(terms));
}

HamiltonianField HamiltonianField::zero(double period) { return HamiltonianField("zero", period, {}); }

HamiltonianField HamiltonianField::from_spec(const std::string& spec) {
  if (spec == "sin_sin" || spec == "sinsin") return sin_sin();
  if (spec == "zero") return zero();
  if (spec.rfind("skewed:", 0) == 0) {
    try {
      return skewed(std::stod(spec.substr(7)));
    } catch (const std::invalid_argument&) {
      throw ConfigError("hamiltonian: bad skew parameter in '" + spec + "'");
    }
  }
  throw ConfigError("hamiltonian: unknown built-in '" + spec + "'");
}

HamiltonianField HamiltonianField::from_json(const nlohmann::json& j) {
  if (j.is_string()) return from_spec(j.get<std::string>());
  if (!j.is_object()) throw ConfigError("hamiltonian: expected a name or an object");
  try {
    const std::string name = j.value("name", std::string("custom"));
    const double period = j.value("period", kTwoPi);
    std::vector<TrigTerm> terms;
    for (const auto& t : j.at("terms")) {
      TrigTerm term;
      term.k = {t.at("k").at(0).get<int>(), t.at("k").at(1).get<int>()};
      term.cos_coef = t.value("cos", 0.0);
      term.sin_coef = t.value("sin", 0.0);
      terms.push_back(term);
    }
    return HamiltonianField(name, period, std::move(terms));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("hamiltonian: malformed definition: ") + e.what());
  }
}

nlohmann::json HamiltonianField::to_json() const {
  nlohmann::json terms = nlohmann::json::array();
  for (const auto& t : terms_) terms.push_back({{"k", {t.k[0], t.k[1]}}, {"cos", t.cos_coef}, {"sin", t.sin_coef}});
  return {{"name", name_}, {"period", period_}, {"terms", terms}};
}

HamiltonianField HamiltonianField::scaled(double factor) const {
  if (!(factor != 0.0) || !std::isfinite(factor)) throw ConfigError("hamiltonian: bad scale factor");
  auto terms = terms_;
  for (auto& t : terms) {
    t.cos_coef *= factor;
    t.sin_coef *= factor;
  }
  std::ostringstream name;
  name << name_ << "*" << factor;
  return HamiltonianField(name.str(), period_, std::move(terms));
}

double HamiltonianField::value(const Vec2& x) const {
  double h = 0.0;
  for (const auto& t : eval_terms_) {
    const double phase = t[0] * x.x() + t[1] * x.y();
    h += t[2] * std::cos(phase) + t[3] * std::sin(phase);
  }
  return h;
}

Vec2 HamiltonianField::gradient(const Vec2& x) const {
  Vec2 g = Vec2::Zero();
  for (const auto& t : eval_terms_) {
    const double phase = t[0] * x.x() + t[1] * x.y();
    const double d = -t[2] * std::sin(phase) + t[3] * std::cos(phase);
    g.x() += t[0] * d;
    g.y() += t[1] * d;
  }
  return g;
}

Mat2 HamiltonianField::hessian(const Vec2& x) const {
  Mat2 h = Mat2::Zero();
  for (const auto& t : eval_terms_) {
    const double phase = t[0] * x.x() + t[1] * x.y();
    const double d2 = -(t[2] * std::cos(phase) + t[3] * std::sin(phase));
    h(0, 0) += t[0] * t[0] * d2;
    h(0, 1) += t[0] * t[1] * d2;
    h(1, 1) += t[1] * t[1] * d2;
  }
  h(1, 0) = h(0, 1);
  return h;
}

double HamiltonianField::value_and_velocity(const Vec2& x, Vec2& v) const {
  double h = 0.0, gx = 0.0, gy = 0.0;
  for (const auto& t : eval_terms_) {
    const double phase = t[0] * x.x() + t[1] * x.y();
    const double s = std::sin(phase);
    const double c = std::cos(phase);
    h += t[2] * c + t[3] * s;
    const double d = -t[2] * s + t[3] * c;
    gx += t[0] * d;
    gy += t[1] * d;
  }
  v = Vec2(-gy, gx);
  return h;
}

Vec2 HamiltonianField::wrap(const Vec2& x) const {
  return {x.x() - period_ * std::floor(x.x() / period_), x.y() - period_ * std::floor(x.y() / period_)};
}

std::array<long, 2> HamiltonianField::winding(const Vec2& x) const {
  return {static_cast<long>(std::floor(x.x() / period_)), static_cast<long>(std::floor(x.y() / period_))};
}

Vec2 HamiltonianField::torus_delta(const Vec2& a, const Vec2& b) const {
  Vec2 d = a - b;
  d.x() -= period_ * std::round(d.x() / period_);
  d.y() -= period_ * std::round(d.y() / period_);
  return d;
}

void HamiltonianField::analyze() {
  if (eval_terms_.empty()) return;
  int kmax = 1;
  for (const auto& t : terms_) kmax = std::max({kmax, std::abs(t.k[0]), std::abs(t.k[1])});
  const int seeds = std::max(16, 8 * kmax);
  const double step = period_ / seeds;
  const double grad_tol = 1e-12 * grad_bound_;

  std::vector<CriticalPoint> found;
  for (int i = 0; i < seeds; ++i) {
    for (int j = 0; j < seeds; ++j) {
      Vec2 x((i + 0.37) * step, (j + 0.61) * step);
      bool converged = false;
      for (int it = 0; it < 60; ++it) {
        const Vec2 g = gradient(x);
        if (g.norm() < grad_tol) {
          converged = true;
          break;
        }
        const Mat2 h = hessian(x);
        if (std::abs(h.determinant()) < 1e-14 * hess_bound_ * hess_bound_) break;
        Vec2 dx = h.partialPivLu().solve(g);
        const double cap = 0.5 * step;
        if (dx.norm() > cap) dx *= cap / dx.norm();
        x -= dx;
      }
      if (!converged) continue;
      x = wrap(x);
      bool dup = false;
      for (const auto& c : found) {
        if (torus_dist(torus_delta(c.x, x)) < 1e-7 * period_) {
          dup = true;
          break;
        }
      }
      if (dup) continue;
      found.push_back({x, value(x), hessian(x).determinant()});
    }
  }

  double max_abs = 0.0;
  for (const auto& c : found) max_abs = std::max(max_abs, std::abs(c.value));
  const double det_tol = 1e-8 * hess_bound_ * hess_bound_;
  for (const auto& c : found) {
    if (std::abs(c.hess_det) < det_tol)
      throw ConfigError("hamiltonian '" + name_ + "': degenerate critical point");
    if (c.hess_det < 0.0) {
      if (std::abs(c.value) > 1e-9 * std::max(max_abs, 1.0))
        throw ConfigError("hamiltonian '" + name_ + "': saddle off the level set {H = 0}; cells are ill-defined");
      saddles_.push_back(c);
    } else {
      if (std::abs(c.value) < 1e-9 * std::max(max_abs, 1.0))
        throw ConfigError("hamiltonian '" + name_ + "': extremum on the separatrix");
      CellInfo cell;
      cell.center = c.x;
      cell.extremum = c.value;
      cell.sign = c.value > 0 ? 1 : -1;
      cells_.push_back(cell);
    }
  }
  if (cells_.empty() || saddles_.size() != cells_.size())
    throw ConfigError("hamiltonian '" + name_ + "': critical point census inconsistent with a cellular flow");
  std::sort(cells_.begin(), cells_.end(), [](const CellInfo& a, const CellInfo& b) {
    if (std::abs(a.center.y() - b.center.y()) > 1e-9) return a.center.y() < b.center.y();
    return a.center.x() < b.center.x();
  });
  std::sort(saddles_.begin(), saddles_.end(), [](const CriticalPoint& a, const CriticalPoint& b) {
    if (std::abs(a.x.y() - b.x.y()) > 1e-9) return a.x.y() < b.x.y();
    return a.x.x() < b.x.x();
  });
  build_label_grid();
}

int HamiltonianField::ascend_to_cell(const Vec2& x_in) const {
  Vec2 x = x_in;
  double hv = value(x);
  if (hv == 0.0) return kSeparatrix;
  const int sign = hv > 0 ? 1 : -1;
  double eta = 1e-3 * period_;
  for (int it = 0; it < 20000; ++it) {
    if (label_n_ > 0 && it % 4 == 0) {
      const int lab = grid_lookup(x, hv);
      if (lab >= 0) return lab;
    }
    const Vec2 g = gradient(x);
    const double gn = g.norm();
    if (gn < 1e-11 * grad_bound_) break;
    bool moved = false;
    while (eta > 1e-15 * period_) {
      const Vec2 trial = x + eta * sign * g / gn;
      const double ht = value(trial);
      if (ht * sign > hv * sign) {
        x = trial;
        hv = ht;
        eta = std::min(eta * 1.5, 0.02 * period_);
        moved = true;
        break;
      }
      eta *= 0.5;
    }
    if (!moved) break;
  }
  int best = kSeparatrix;
  double best_d = 1e300;
  for (int c = 0; c < cell_count(); ++c) {
    if (cells_[c].sign != sign) continue;
    const double d = torus_delta(cells_[c].center, x).norm();
    if (d < best_d) {
      best_d = d;
      best = c;
    }
  }
  return best;
}

// Label of x from the nearest grid corner, valid when the segment between
// them provably avoids {H = 0}. Returns kImpure otherwise.
int HamiltonianField::grid_lookup(const Vec2& x, double hx) const {
  const double dx = period_ / label_n_;
  const Vec2 w = wrap(x);
  const int i = static_cast<int>(std::floor(w.x() / dx));
  const int j = static_cast<int>(std::floor(w.y() / dx));
  const Vec2 corner((i + 0.5) * dx, (j + 0.5) * dx);
  const int ii = std::min(i, label_n_ - 1);
  const int jj = std::min(j, label_n_ - 1);
  const std::size_t idx = static_cast<std::size_t>(jj) * label_n_ + ii;
  const int lab = corner_label_[idx];
  if (lab < 0) return kImpure;
  const double reach = grad_bound_ * (corner - w).norm();
  if (std::abs(corner_value_[idx]) > reach || (std::abs(hx) > reach && hx * corner_value_[idx] > 0)) {
    if (hx * corner_value_[idx] > 0) return lab;
  }
  return kImpure;
}

void HamiltonianField::build_label_grid() {
  const int n = kLabelGrid;
  const double dx = period_ / n;
  corner_label_.assign(static_cast<std::size_t>(n) * n, kImpure);
  corner_value_.resize(corner_label_.size());
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < n; ++i)
      corner_value_[static_cast<std::size_t>(j) * n + i] = value(Vec2((i + 0.5) * dx, (j + 0.5) * dx));
  const double reach = grad_bound_ * dx;
  std::vector<std::size_t> queue;
  for (int c = 0; c < cell_count(); ++c) {
    const Vec2 w = wrap(cells_[c].center);
    const int i = std::min(static_cast<int>(std::floor(w.x() / dx)), n - 1);
    const int j = std::min(static_cast<int>(std::floor(w.y() / dx)), n - 1);
    const std::size_t idx = static_cast<std::size_t>(j) * n + i;
    if (std::abs(cells_[c].extremum) <= grad_bound_ * dx)
      throw ConfigError("hamiltonian '" + name_ + "': cell too small for the label grid");
    corner_label_[idx] = c;
    queue.push_back(idx);
  }
  for (std::size_t head = 0; head < queue.size(); ++head) {
    const std::size_t idx = queue[head];
    const int i = static_cast<int>(idx % n);
    const int j = static_cast<int>(idx / n);
    const double hp = corner_value_[idx];
    const int nb[4][2] = {{i + 1, j}, {i - 1, j}, {i, j + 1}, {i, j - 1}};
    for (const auto& q : nb) {
      const std::size_t qidx = static_cast<std::size_t>((q[1] + n) % n) * n + (q[0] + n) % n;
      if (corner_label_[qidx] != kImpure) continue;
      const double hq = corner_value_[qidx];
      if (hp * hq > 0 && std::max(std::abs(hp), std::abs(hq)) > reach) {
        corner_label_[qidx] = corner_label_[idx];
        queue.push_back(qidx);
      }
    }
  }
  label_n_ = 0;  // full ascent for the remaining corners
  for (std::size_t idx = 0; idx < corner_label_.size(); ++idx) {
    if (corner_label_[idx] != kImpure) continue;
    const int i = static_cast<int>(idx % n);
    const int j = static_cast<int>(idx / n);
    corner_label_[idx] = corner_value_[idx] == 0.0 ? kSeparatrix : ascend_to_cell(Vec2((i + 0.5) * dx, (j + 0.5) * dx));
  }
  label_n_ = n;
}

int HamiltonianField::cell_of(const Vec2& x, double tol) const {
  if (cells_.empty()) return kSeparatrix;
  const double hx = value(x);
  if (std::abs(hx) <= tol || hx == 0.0) return kSeparatrix;
  const int lab = grid_lookup(x, hx);
  if (lab >= 0) return lab;
  return ascend_to_cell(x);
}

Vec2 velocity(const HamiltonianField& field, const Vec2& x) { return field.velocity(x); }

int cell_of(const HamiltonianField& field, const Vec2& x, double tol) { return field.cell_of(x, tol); }

}  // namespace cellflow
