#pragma once

#include "cellflow/contour.hpp"
#include "cellflow/hamiltonian.hpp"
#include "cellflow/rng.hpp"

#include <nlohmann/json.hpp>

#include <optional>
#include <vector>

namespace cellflow {

// Point of the star graph: edge index (0-based, one edge per cell) and the
// coordinate y >= 0 along it. Every point with y == 0 is the vertex O; the
// edge label is kept there only so paths stay well formed.
struct GraphPoint {
  int edge = 0;
  double y = 0.0;

  bool at_vertex() const { return y == 0.0; }
  friend bool operator==(const GraphPoint& a, const GraphPoint& b) {
    if (a.y == 0.0 && b.y == 0.0) return true;
    return a.edge == b.edge && a.y == b.y;
  }
};

inline constexpr GraphPoint kVertex{0, 0.0};

// (cell_of(x), eps^{-alpha/2} |H(x)|); separatrix points map to O.
GraphPoint project(const Vec2& x, double epsilon, double alpha, const HamiltonianField& field);
GraphPoint project_value(const HamiltonianField& field, const Vec2& x, double h, double graph_scale);

double graph_distance(const GraphPoint& p, const GraphPoint& q);

// Graph-valued path. `vertex_visit[k]` marks that the path met O in
// (t_{k-1}, t_k]. Paths produced by simulate_Y also carry the driving
// Brownian motion and the local time at O.
struct GraphPath {
  std::vector<double> times;
  std::vector<GraphPoint> points;
  std::vector<char> vertex_visit;
  std::vector<double> driving;
  std::vector<double> local_time;
  double resolution = 0.0;  // smallest meaningful delta or h, in y units

  std::size_t size() const { return times.size(); }
  void write_csv(std::ostream& os) const;
};

struct YOptions {
  double dt = 1e-4;
  // Excursion resolution in units of sqrt(dt).
  double exc_resolution = 10.0;
};

// Walsh-type construction: each excursion of a driving Brownian motion B is
// assigned edge j with probability proportional to q_j / sqrt(a_j) and
// Y = (j, sqrt(a_j) |B|). L_t(O) = local_time_factor * (Tanaka local time of B).
class YProcess {
 public:
  YProcess(const FlowCoefficients& coeffs, GraphPoint y0, double dt, Rng& rng);

  void step();
  double time() const { return t_; }
  GraphPoint point() const { return {edge_, std::sqrt(coeffs_->a[edge_]) * std::abs(b_)}; }
  double driving() const { return b_; }
  double driving_local_time() const { return ell_; }
  double local_time() const { return coeffs_->local_time_factor * ell_; }
  bool crossed() const { return crossed_; }
  int edge() const { return edge_; }

 private:
  int draw_label();

  const FlowCoefficients* coeffs_;
  Rng* rng_;
  double dt_;
  double sqrt_dt_;
  double t_ = 0.0;
  double b_ = 0.0;
  double ell_ = 0.0;
  int edge_ = 0;
  bool crossed_ = false;
  std::vector<double> cumulative_;
};

GraphPath simulate_Y(const FlowCoefficients& coeffs, GraphPoint y0, double horizon, Rng& rng,
                     const YOptions& opt = {});

enum class LocalTimeMethod { downcrossing, occupation };

// Local time at O by time t. Downcrossing: the number of completed
// O -> {d = delta} -> O cycles times delta, with the sampling correction for
// late level detection. Occupation: a-weighted time in {d <= h} / 2h.
double local_time(const GraphPath& path, double t, LocalTimeMethod method, double param,
                  const FlowCoefficients& coeffs);

// Local time at an interior point (edge, y) normalised so that
// int f(Y) a(Y) ds = 2 int f(y) L_t(y) dy; needs the driving motion.
double interior_local_time(const GraphPath& path, double t, GraphPoint where, const FlowCoefficients& coeffs);

struct Excursion {
  Vec2 displacement = Vec2::Zero();  // V(mu_{n+1}) - V(kappa_n), when plane data exists
  bool has_displacement = false;
  int label = -1;                    // edge of the downcrossing excursion
  double t_mu = 0.0;
  double t_kappa = 0.0;
  double up_duration = 0.0;          // mu_n - kappa_{n-1}
  double down_duration = 0.0;        // kappa_n - mu_n
  bool censored = false;
  GraphPath path;                    // J_n, from distance delta down to O
};

struct ExcursionSet {
  double delta = 0.0;
  std::vector<Excursion> excursions;
  nlohmann::json to_json() const;
};

ExcursionSet excursion_project(const GraphPath& path, double delta,
                               const std::vector<Vec2>* plane = nullptr);

}  // namespace cellflow
