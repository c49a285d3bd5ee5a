#pragma once

#include "cellflow/hamiltonian.hpp"
#include "cellflow/reeb_graph.hpp"
#include "cellflow/rng.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <vector>

namespace cellflow {

struct SimConfig {
  double epsilon = 1e-3;
  double alpha = 0.5;
  double horizon = 1.0;     // rescaled time
  double dt_max = 0.1;      // physical time
  double dt_safety = 0.1;
  std::uint64_t seed = 1;
  std::size_t n_paths = 1;
  std::size_t record_stride = 1;

  void validate() const;
  // Physical time per unit of rescaled time: alpha |log eps| / eps^(1 - alpha).
  double time_scale() const;
  // eps^((1 - alpha) / 4), the plane scale of the limit.
  double space_scale() const;
  // eps^(-alpha / 2), the graph scale.
  double graph_scale() const;

  nlohmann::json to_json() const;
  static SimConfig from_json(const nlohmann::json& j);
};

struct PathSample {
  std::vector<double> times;
  std::vector<Vec2> positions;
  std::vector<std::array<long, 2>> winding;
  std::vector<double> h_values;
  std::vector<int> cells;
  std::vector<GraphPoint> graph_points;

  std::size_t size() const { return times.size(); }
  GraphPath graph_path() const;
  void write_csv(std::ostream& os) const;
};

struct CrossingRecord {
  std::vector<double> mu;
  std::vector<double> kappa;
  std::vector<Vec2> displacements;     // Z(kappa_n) - Z(kappa_{n-1}), n >= 1
  std::vector<int> exit_edges;         // edge of Gamma(Z(mu_n))
  std::vector<Vec2> up_displacements;  // Z(mu_{n+1}) - Z(kappa_n)
  std::vector<Vec2> kappa_points;
  std::vector<Vec2> mu_points;

  nlohmann::json to_json() const;
};

// Split-step integrator for dX = v(X) dt + sqrt(eps) dW in physical time.
class SdeEngine {
 public:
  SdeEngine(const HamiltonianField& field, double epsilon, double dt_max, double dt_safety);

  static constexpr double kDriftTolerance = 1e-9;
  static constexpr double kMinStep = 1e-14;

  const HamiltonianField& field() const { return *field_; }
  double epsilon() const { return eps_; }
  double dt_for(double speed2) const;

  // Deterministic RK4 flow over dt with H-drift control; h0 and v0 are H and
  // v at x. Returns the end point and stores H there in h_end.
  Vec2 flow(const Vec2& x, double dt, double h0, const Vec2& v0, double& h_end) const;
  Vec2 flow(const Vec2& x, double dt) const;
  // One splitting step: flow, then the Gaussian kick.
  Vec2 step(const Vec2& x, double dt, Rng& rng) const;

 private:
  Vec2 rk4(const Vec2& x, double dt, const Vec2& k1) const;

  const HamiltonianField* field_;
  double eps_;
  double sqrt_eps_;
  double dt_max_;
  double dt_safety_;
};

// Sequential state of one path. advance_to integrates up to a physical time
// and calls obs(t_phys, x, H) after every step; obs returns false to stop.
class PathIntegrator {
 public:
  PathIntegrator(const SdeEngine& engine, const Vec2& x0, Rng& rng);

  template <class Obs>
  bool advance_to(double t_end, Obs&& obs) {
    while (t_ < t_end) {
      double dt = engine_->dt_for(v_.squaredNorm());
      if (t_ + dt >= t_end || t_end - (t_ + dt) < 1e-9 * dt) dt = t_end - t_;
      double h_end;
      const Vec2 y = engine_->flow(x_, dt, h_, v_, h_end);
      x_ = y + std::sqrt(engine_->epsilon() * dt) * Vec2(rng_->normal(), rng_->normal());
      t_ = (dt == t_end - t_) ? t_end : t_ + dt;
      h_ = engine_->field().value_and_velocity(x_, v_);
      last_dt_ = dt;
      if (!obs(t_, x_, h_)) return false;
    }
    return true;
  }

  double time() const { return t_; }
  const Vec2& position() const { return x_; }
  double h() const { return h_; }
  double last_dt() const { return last_dt_; }

 private:
  const SdeEngine* engine_;
  Rng* rng_;
  Vec2 x_;
  Vec2 v_;
  double h_;
  double t_ = 0.0;
  double last_dt_ = 0.0;
};

// Online detector of the stopping times kappa_n (hits of O) and mu_n (hits of
// {d = delta}) from successive samples. Times are in the caller's units.
// Convention: kappa_0 is the first visit to O (time 0 for starts on O).
class CrossingTracker {
 public:
  CrossingTracker(const HamiltonianField& field, double delta, double epsilon, double alpha);

  void observe(double t, const Vec2& x, double h);
  const CrossingRecord& record() const { return rec_; }
  // 0 before kappa_0, 1 after kappa_n (seeking mu), 2 after mu_n (seeking kappa).
  int phase() const { return phase_; }

  static constexpr double kOnSeparatrix = 1e-12;

 private:
  double refine(double ta, const Vec2& xa, double tb, const Vec2& xb, double target_abs, bool zero, Vec2& x_hit) const;
  void on_kappa(double t, const Vec2& x);
  void on_mu(double t, const Vec2& x);

  const HamiltonianField* field_;
  double level_;
  CrossingRecord rec_;
  int phase_ = 0;
  bool started_ = false;
  double t_prev_ = 0.0;
  Vec2 x_prev_;
  double h_prev_ = 0.0;
};

PathSample simulate_rescaled(const HamiltonianField& field, const SimConfig& cfg, const Vec2& x0,
                             std::size_t path_index = 0);

struct HitResult {
  double time = 0.0;   // rescaled time
  Vec2 point;
  bool censored = false;
};

// First time |H(Z_t)| reaches level h (h == 0: the separatrix).
HitResult hitting_time(const HamiltonianField& field, const SimConfig& cfg, const Vec2& x0, double level,
                       std::size_t path_index = 0);

struct ExitResult {
  double time = 0.0;
  bool upper = false;  // reached |H| = h before the separatrix
  bool censored = false;
};

// Competing exits from {0 < |H| < h} starting inside the band.
ExitResult exit_band(const HamiltonianField& field, const SimConfig& cfg, const Vec2& x0, double h,
                     std::size_t path_index = 0);

// Plane positions and H values at increasing rescaled times, one row per
// path; path i uses the stream (cfg.seed, i) and starts at start(i).
struct Marginals {
  std::vector<double> times;
  std::vector<std::vector<Vec2>> positions;
  std::vector<std::vector<double>> h;
};

Marginals sample_marginals(const HamiltonianField& field, const SimConfig& cfg,
                           const std::function<Vec2(std::size_t)>& start, const std::vector<double>& times,
                           unsigned workers = 1);
Marginals sample_marginals(const HamiltonianField& field, const SimConfig& cfg, const Vec2& x0,
                           const std::vector<double>& times, unsigned workers = 1);

CrossingRecord crossing_instrumentation(const PathSample& path, double delta, double epsilon, double alpha,
                                        const HamiltonianField& field);

// Binary frame: magic "CFLW", u32 version, u64 cfg length, cfg JSON bytes,
// u64 rows, u64 columns, then rows of little-endian f64 in CSV column order.
void write_binary(std::ostream& os, const PathSample& path, const nlohmann::json& cfg_echo);
PathSample read_binary(std::istream& is, nlohmann::json* cfg_echo = nullptr);

}  // namespace cellflow
