#pragma once

#include "cellflow/hamiltonian.hpp"

#include <nlohmann/json.hpp>

#include <complex>
#include <cstdint>
#include <iosfwd>
#include <vector>

namespace cellflow {

// Fourier coefficients of a real periodic field on an n x n grid, stored in
// FFT order (index j <-> wavenumber j for j < n/2, j - n otherwise) and
// normalised so that f(x) = sum_k c_k exp(i w k.x), w = 2 pi / period.
struct SpectralField {
  int n = 0;
  double period = kTwoPi;
  std::vector<std::complex<double>> coeffs;

  std::complex<double> at(int k1, int k2) const;
  // Values on the n x n grid x_j = j period / n.
  std::vector<double> grid_values(int n_out = 0) const;
  // Header: u64 n, f64 period, then n*n complex pairs (re, im) little-endian.
  void write_binary(std::ostream& os) const;
};

enum class CellPreconditioner { galerkin_lu, laplacian };

struct CellOptions {
  int grid = 0;  // 0: default_grid(epsilon)
  double tol = 1e-10;
  int max_iter = 400;
  int restart = 60;
  CellPreconditioner preconditioner = CellPreconditioner::galerkin_lu;
};

struct CorrectorSolution {
  double epsilon = 0.0;
  int n = 0;
  std::array<SpectralField, 2> chi;
  std::array<double, 2> residual{0.0, 0.0};
  std::array<int, 2> iterations{0, 0};
  std::array<std::vector<double>, 2> residual_history;
};

// Smallest power of two >= max(64, 8 / sqrt(eps)) in units of period / 2 pi.
int default_grid(double epsilon, double period = kTwoPi);
// Largest retained wavenumber under the 2/3 rule.
int band_limit(int n);

// (eps/2) lap chi_i + v . grad chi_i = -v_i with zero mean, by GMRES on the
// pseudospectral operator. The residual is the relative l2 norm over the
// retained (dealiased) modes.
CorrectorSolution solve_corrector(const HamiltonianField& field, double epsilon, const CellOptions& opt = {});

// Pseudospectral residual of a candidate corrector component.
double corrector_residual(const HamiltonianField& field, double epsilon, const SpectralField& chi, int component);

// eps <(I + grad chi)(I + grad chi)^T>, torus average.
Mat2 effective_diffusivity(const CorrectorSolution& sol);

struct DeffPoint {
  double epsilon = 0.0;
  Mat2 d = Mat2::Zero();
  double residual = 0.0;
  int n = 0;
  int iterations = 0;
};

struct ScalingFit {
  double exponent = 0.0;
  double exponent_lo = 0.0;
  double exponent_hi = 0.0;
  double prefactor = 0.0;
  double r2 = 0.0;
  bool under_resolved = false;
  std::vector<DeffPoint> points;
  nlohmann::json to_json() const;
};

std::vector<DeffPoint> deff_sweep(const HamiltonianField& field, const std::vector<double>& eps,
                                  const CellOptions& opt = {}, unsigned workers = 1);

// Least-squares slope of log D_11 against log eps with a 95% interval.
ScalingFit scaling_fit(const HamiltonianField& field, const std::vector<double>& eps, const CellOptions& opt = {},
                       unsigned workers = 1);
ScalingFit scaling_fit(std::vector<DeffPoint> points, double period = kTwoPi);

// (sum q)^-1 eps^-1/2 int_{|H| < sqrt(n_band eps)} (v_i chi_j + v_j chi_i), with
// chi the standard corrector evaluated on a refined grid.
Mat2 q_matrix_boundary_layer(const HamiltonianField& field, const CorrectorSolution& sol, double n_band,
                             double q_sum, int refine = 2);

struct MonteCarloDiffusivity {
  Mat2 d = Mat2::Zero();
  Mat2 se = Mat2::Zero();
  std::size_t paths = 0;
  std::size_t blocks = 0;
  double block_time = 0.0;
  nlohmann::json to_json() const;
};

// Long-time covariance rate of the physical-time diffusion from increments
// over consecutive blocks of length block_time, stationary (uniform) starts.
MonteCarloDiffusivity mc_effective_diffusivity(const HamiltonianField& field, double epsilon, double block_time,
                                               std::size_t blocks, std::size_t paths, std::uint64_t seed,
                                               double dt_safety, double dt_max = 0.1, unsigned workers = 1);

}  // namespace cellflow
