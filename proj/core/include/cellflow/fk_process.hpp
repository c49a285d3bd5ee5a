#pragma once

#include "cellflow/contour.hpp"
#include "cellflow/reeb_graph.hpp"
#include "cellflow/sde_engine.hpp"

#include <nlohmann/json.hpp>

#include <functional>
#include <optional>
#include <tuple>
#include <vector>

namespace cellflow {

struct FKPath {
  std::vector<double> times;
  std::vector<Vec2> positions;   // W^Q(L_t)
  GraphPath y;
  std::vector<double> local_time;
};

// Lower Cholesky factor of Q; ConfigError unless Q is symmetric positive definite.
Mat2 cholesky_factor(const Mat2& q);

FKPath sample_fk(const FlowCoefficients& coeffs, double horizon, Rng& rng, const YOptions& opt = {});

// W^Q evaluated along a nondecreasing time change (test hook).
std::vector<Vec2> time_changed_bm(const Mat2& q, const std::vector<double>& clock, Rng& rng);

// Marginals of W^Q_{L_t} at increasing probe times, one row per path; paths
// use substreams (seed, i).
std::vector<std::vector<Vec2>> sample_fk_marginals(const FlowCoefficients& coeffs, const std::vector<double>& probes,
                                                   std::size_t n, std::uint64_t seed, const YOptions& opt = {},
                                                   unsigned workers = 1);

// Local time accumulated by Y from O until its first visit to {d = delta}.
std::vector<double> local_time_to_exit(const FlowCoefficients& coeffs, double delta, std::size_t n,
                                       std::uint64_t seed, const YOptions& opt = {}, unsigned workers = 1);

struct StartSampler {
  enum class Kind { point, uniform_separatrix };
  Kind kind = Kind::point;
  Vec2 point = Vec2::Zero();
};

// Uniform-in-arclength sampler on the separatrix.
class SeparatrixSampler {
 public:
  explicit SeparatrixSampler(const HamiltonianField& field);
  Vec2 sample(Rng& rng) const;

 private:
  const HamiltonianField* field_;
  std::vector<std::vector<std::pair<double, Vec2>>> polylines_;
  std::vector<double> cumulative_;
};

// One cycle per path: start on the separatrix (kappa_0 = 0), first visit to
// {d = delta} (mu_1), return to O (kappa_1). Cycles without kappa_1 by
// cfg.horizon are censored and excluded from `displacements`.
struct UpcrossingPool {
  double delta = 0.0;
  double epsilon = 0.0;
  double alpha = 0.0;
  std::vector<Vec2> displacements;     // Z(kappa_1) - Z(kappa_0), complete cycles
  std::vector<Vec2> up_displacements;  // Z(mu_1) - Z(kappa_0), cycles that reached mu_1
  std::vector<int> exit_edges;         // edge at mu_1, aligned with up_displacements
  std::vector<double> durations;       // mu_1 - kappa_0 in rescaled time
  std::size_t censored = 0;
  std::size_t attempted = 0;

  double censoring_fraction() const {
    return attempted == 0 ? 0.0 : static_cast<double>(censored) / static_cast<double>(attempted);
  }
  nlohmann::json to_json() const;
};

UpcrossingPool sample_upcrossings(const HamiltonianField& field, const SimConfig& cfg, double delta,
                                  std::size_t n_cycles, const StartSampler& start, unsigned workers = 1);

struct QEstimate {
  Mat2 q = Mat2::Zero();
  Mat2 lo = Mat2::Zero();
  Mat2 hi = Mat2::Zero();
  std::array<double, 2> kurtosis{0.0, 0.0};
  std::array<double, 2> kurtosis_lo{0.0, 0.0};
  std::array<double, 2> kurtosis_hi{0.0, 0.0};
  std::size_t n = 0;
  double censoring_fraction = 0.0;
  nlohmann::json to_json() const;
};

// Q = eps^((1 - alpha)/2) / delta * Cov(displacements), symmetrised, with
// bootstrap percentile intervals.
QEstimate estimate_Q(const std::vector<Vec2>& displacements, double delta, double epsilon, double alpha,
                     std::uint64_t seed = 1, int n_boot = 400, double level = 0.95);
QEstimate estimate_Q(const std::vector<CrossingRecord>& records, double delta, double epsilon, double alpha,
                     std::uint64_t seed = 1, int n_boot = 400, double level = 0.95);
QEstimate estimate_Q(const UpcrossingPool& pool, std::uint64_t seed = 1, int n_boot = 400, double level = 0.95);

struct ExitProbEstimate {
  std::vector<double> p;
  std::vector<double> lo;
  std::vector<double> hi;
  std::vector<std::size_t> counts;
  std::size_t n = 0;
  nlohmann::json to_json() const;
};

ExitProbEstimate estimate_exit_probs(const std::vector<int>& exit_edges, int edges, double z = 1.959963984540054);
ExitProbEstimate estimate_exit_probs(const std::vector<CrossingRecord>& records, int edges,
                                     double z = 1.959963984540054);

}  // namespace cellflow
