#pragma once

#include "cellflow/contour.hpp"
#include "cellflow/hamiltonian.hpp"
#include "cellflow/sde_engine.hpp"

#include <nlohmann/json.hpp>

#include <complex>
#include <functional>
#include <vector>

namespace cellflow {

// exp(x^2) erfc(x), accurate for large x.
double erfcx(double x);
// E_{1/2}(-x) = erfcx(x) for x >= 0.
double mittag_leffler_half(double x);

// L1 approximation of the Caputo derivative of order 1/2 on a uniform grid
// with spacing dt; element 0 is 0.
std::vector<double> caputo_half(const std::vector<double>& f, double dt);
// Same, with explicit sample times; DomainError unless they are uniform.
std::vector<double> caputo_half(const std::vector<double>& times, const std::vector<double>& f);

// Scalar field on the n x n periodic grid x_j = j period / n, row-major in (x1, x2).
struct GridField {
  int n = 0;
  double period = kTwoPi;
  std::vector<double> values;

  double operator()(int i, int j) const { return values[static_cast<std::size_t>(i) * n + j]; }
  static GridField sample(int n, double period, const std::function<double(const Vec2&)>& f);
};

struct FpdeOptions {
  int steps = 512;            // L1 steps up to the last requested time
  double alarm_tol = 1e-3;    // route disagreement that raises a NumericalError
};

struct FpdeResult {
  std::vector<double> times;
  std::vector<GridField> spectral;  // Mittag-Leffler route
  std::vector<GridField> stepped;   // L1 route
  double discrepancy = 0.0;         // sup over grid and times
  nlohmann::json to_json() const;
};

// r0 D^{1/2} u = (1/2) Q : grad^2 u on the torus, u(0) = theta0.
FpdeResult solve_fpde(const GridField& theta0, const Mat2& q, double r0, const std::vector<double>& times,
                      const FpdeOptions& opt = {});

// Per-mode decay factor E_{1/2}(-(k.Qk) w^2 sqrt(t) / (2 r0)) for integer k, w = 2 pi / period.
double fpde_mode_factor(const Mat2& q, double r0, const std::array<int, 2>& k, double period, double t);

// Spectral solution evaluated at an arbitrary point x.
double fpde_point(const GridField& theta0, const Mat2& q, double r0, const Vec2& x, double t);

struct CoupledOptions {
  int steps = 400;
  int edge_points = 400;        // intervals per edge
  double y_max = 0.0;           // 0: y_max_factor sqrt(a_max T)
  double y_max_factor = 6.0;
  int rannacher_steps = 4;
  double truncation_tol = 1e-6;
};

struct CoupledResult {
  std::vector<double> times;
  std::vector<GridField> trace;  // theta(x, O, t)
  // theta(x = grid origin, y, t) per time and edge.
  std::vector<std::vector<std::vector<double>>> profiles;
  std::vector<double> y_grid;
  double y_max = 0.0;
  double max_vertex_residual = 0.0;
  double truncation = 0.0;       // max |theta(Y_max) - theta0| relative to max |theta0|
  bool truncation_warning = false;
  nlohmann::json to_json() const;
};

// Fourier in x; per mode and edge Crank-Nicolson for d_t u = (a_i/2) d_y^2 u,
// the vertex condition -(1/2) k.Qk u(O) + sum_i qbar_i D_i u(O) = 0 with
// one-sided second-order differences, Neumann at Y_max, and u(y, 0) = theta0.
CoupledResult solve_coupled(const GridField& theta0, const FlowCoefficients& coeffs, const std::vector<double>& times,
                            const CoupledOptions& opt = {});

// Relative L2 distance between the coupled trace and the Mittag-Leffler
// solution, over all grid points and requested times.
double trace_l2_error(const CoupledResult& coupled, const GridField& theta0, const Mat2& q, double r0);

struct FKProbe {
  Vec2 x = Vec2::Zero();
  double t = 0.0;
};

struct FKEstimate {
  Vec2 x = Vec2::Zero();      // requested point
  Vec2 start = Vec2::Zero();  // plane start of Z (a corner of the periodicity cell)
  Vec2 x_eff = Vec2::Zero();  // scale * start, the macroscopic point actually probed
  double t = 0.0;
  double mean = 0.0;
  double se = 0.0;
  std::size_t n = 0;
};

// theta^eps(x, t) = E theta0(s Z_t), s = eps^((1 - alpha)/4), with Z started at
// the corner of the periodicity cell containing x / s. Paths start at the
// origin saddle and are translated, which is exact by periodicity.
std::vector<FKEstimate> feynman_kac_mc(const HamiltonianField& field, const std::function<double(const Vec2&)>& theta0,
                                       const SimConfig& cfg, const std::vector<FKProbe>& probes, unsigned workers = 1);
// Same estimator on an existing ensemble started at the origin saddle; every
// probe time must be one of ens.times.
std::vector<FKEstimate> feynman_kac_mc(const HamiltonianField& field, const std::function<double(const Vec2&)>& theta0,
                                       const SimConfig& cfg, const Marginals& ens, const std::vector<FKProbe>& probes);

}  // namespace cellflow
