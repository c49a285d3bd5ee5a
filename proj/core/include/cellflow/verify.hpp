#pragma once

#include "cellflow/cell_problem.hpp"
#include "cellflow/contour.hpp"
#include "cellflow/fk_process.hpp"
#include "cellflow/fractional_pde.hpp"
#include "cellflow/sde_engine.hpp"
#include "cellflow/stats.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <vector>

namespace cellflow {

struct TestReport {
  std::string name;
  int criterion = 0;
  std::string description;
  double statistic = std::numeric_limits<double>::quiet_NaN();
  double lo = std::numeric_limits<double>::quiet_NaN();  // CI or accepted band for the statistic
  double hi = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> p_values;  // hypothesis tests entering the family-wise correction
  std::vector<std::string> p_labels;
  double p_threshold = 0.01;
  std::vector<std::size_t> sample_sizes;
  bool passed = false;
  bool checks_passed = true;  // the criteria other than the p-values
  std::uint64_t seed = 0;
  nlohmann::json config = nlohmann::json::object();
  nlohmann::json data = nlohmann::json::object();
  double seconds = 0.0;

  std::string cfg_hash() const;
  void add_p(const std::string& label, double p);
  // One-line "PASS|FAIL [#n] name: ..." summary.
  std::string summary() const;
  nlohmann::json to_json() const;
};

// Paths of Z from the origin saddle, recorded at fixed rescaled times.
struct Ensemble {
  SimConfig cfg;
  Vec2 start = Vec2::Zero();
  Marginals marginals;
};

Ensemble saddle_ensemble(const HamiltonianField& field, const SimConfig& cfg, const std::vector<double>& times,
                         unsigned workers = 1);

// Signed graph coordinate sign(H in the cell) * y, 0 at the vertex.
double signed_coordinate(const HamiltonianField& field, const GraphPoint& p);

TestReport test_perimeter_weights(const HamiltonianField& field, double tol = 1e-8);

TestReport test_period_fit(const HamiltonianField& field, const CoefficientOptions& opt = {});

struct DeffScalingConfig {
  std::vector<double> eps{1e-2, 3.1622776601683794e-3, 1e-3, 3.1622776601683794e-4, 1e-4};
  double refine_eps = 1e-2;
  double exponent = 0.5;
  double exponent_tol = 0.05;
  double refine_tol = 0.01;
  unsigned workers = 1;
};
TestReport test_deff_scaling(const HamiltonianField& field, const DeffScalingConfig& cfg = {});

struct DeffMonteCarloConfig {
  double eps = 1e-2;
  double block_time = 2000.0;
  std::size_t blocks = 50;
  std::size_t paths = 240;
  double dt_safety = 5.0;
  double tol = 0.05;
  std::uint64_t seed = 4;
  unsigned workers = 1;
};
TestReport test_deff_monte_carlo(const HamiltonianField& field, const DeffMonteCarloConfig& cfg = {});

struct ExitConfig {
  double eps = 1e-3;
  double alpha = 0.5;
  double h_exponent = 0.3;  // h = eps^h_exponent
  std::vector<double> fractions{0.25, 0.5, 0.75};
  std::size_t n = 10000;
  double slack = 0.02;
  double dt_safety = 5.0;
  double horizon = 20.0;
  int cell = 0;
  std::uint64_t seed = 5;
  unsigned workers = 1;
};
TestReport test_exit_linearity(const HamiltonianField& field, const ExitConfig& cfg = {});

struct UpcrossingConfig {
  double eps = 1e-3;
  double alpha = 0.5;
  double delta = 0.1;
  std::vector<double> stability_deltas{0.05, 0.2};
  std::size_t n = 5000;
  std::size_t n_stability = 2000;
  std::size_t n_exit_local_time = 5000;
  double y_dt = 1e-5;
  double dt_safety = 5.0;
  double horizon = 4.0;
  int n_boot = 400;
  int n_perm = 200;
  std::uint64_t seed = 6;
  unsigned workers = 1;
};
// Kurtosis, exit-edge frequencies and the exponential local time to exit;
// the Q estimate from the main pool is stored in *q_out.
TestReport test_upcrossing_limits(const HamiltonianField& field, const FlowCoefficients& coeffs,
                                  const UpcrossingConfig& cfg = {}, QEstimate* q_out = nullptr);

struct AveragingConfig {
  double t = 1.0;
  bool uniform_start = true;  // second start family at the smallest eps: uniform on the separatrix
  double y_dt = 1e-4;
  std::uint64_t seed = 7;
  unsigned workers = 1;
};
// ensembles ordered by decreasing epsilon, each recorded at cfg.t.
TestReport test_averaging(const HamiltonianField& field, const FlowCoefficients& coeffs,
                          const std::vector<const Ensemble*>& ensembles, const AveragingConfig& cfg = {});

struct MainTheoremConfig {
  std::vector<double> t{0.5, 1.0};
  std::size_t n = 5000;
  int n_perm = 1000;
  int n_dirs = 64;
  double significance = 0.01;
  double ratio_lo = 0.85;
  double ratio_hi = 1.15;
  YOptions y;
  std::uint64_t seed = 8;
  unsigned workers = 1;
};
// coeffs must carry Q.
TestReport test_main_theorem(const HamiltonianField& field, const FlowCoefficients& coeffs, const Ensemble& ens,
                             const MainTheoremConfig& cfg = {});

struct VarianceScalingConfig {
  double t_lo = 0.1;
  double t_hi = 1.0;
  double slope = 0.5;
  double slope_tol = 0.1;
  double fk_slope_tol = 0.05;
  double plateau_tol = 0.1;
  double interior_level = 0.75;  // |H(x0)| / max |H|
  std::size_t interior_n = 1000;
  std::size_t fk_n = 10000;
  YOptions y;
  std::uint64_t seed = 9;
  unsigned workers = 1;
};
TestReport test_variance_scaling(const HamiltonianField& field, const FlowCoefficients& coeffs, const Ensemble& ens,
                                 const VarianceScalingConfig& cfg = {});

struct LocalTimeConfig {
  std::size_t n = 1000;
  double dt = 1e-5;
  std::vector<double> t{0.01, 0.0215443469, 0.0464158883, 0.1, 0.215443469, 0.464158883, 1.0};
  double delta = 0.05;  // downcrossing level and occupation half-width
  double exponent_tol = 0.05;
  double agreement_tol = 0.05;
  std::uint64_t seed = 10;
  unsigned workers = 1;
};
TestReport test_local_time(const FlowCoefficients& coeffs, const LocalTimeConfig& cfg = {});

struct CaputoConfig {
  int steps = 512;
  double tol = 1e-3;
  std::vector<int> order_steps{64, 128, 256, 512, 1024};
  double order = 1.5;
  double order_tol = 0.2;
};
TestReport test_caputo_l1(const CaputoConfig& cfg = {});

struct FpdeRoutesConfig {
  int n = 64;
  int steps = 512;
  double t = 1.0;
  double tol = 1e-3;
};
TestReport test_fpde_routes(const Mat2& q, double r0, const FpdeRoutesConfig& cfg = {});

struct CoupledTraceConfig {
  int n = 32;
  std::vector<int> levels{100, 200, 400};  // time steps = edge points
  std::vector<double> t{0.25, 0.5, 1.0};
  double tol = 0.01;
};
TestReport test_coupled_trace(const FlowCoefficients& coeffs, const CoupledTraceConfig& cfg = {});

struct FeynmanKacConfig {
  std::vector<FKProbe> probes{{{0.0, 0.0}, 0.5}, {{0.0, 0.0}, 1.0}, {{1.5, 0.0}, 1.0}, {{1.5, 1.5}, 1.0}};
  double sigmas = 3.0;
  double slack = 0.05;
};
// Probe datum 1/2 + cos(x1)/4 + cos(x2)/4; ensembles ordered by decreasing
// epsilon; coeffs must carry Q.
TestReport test_feynman_kac(const HamiltonianField& field, const FlowCoefficients& coeffs,
                            const std::vector<const Ensemble*>& ensembles, const FeynmanKacConfig& cfg = {});

double fk_probe_datum(const Vec2& x);

// Sizes of the full suite (criteria 1-14).
struct SuiteConfig {
  bool quick = false;
  std::uint64_t seed = 1;
  unsigned workers = 1;
  double family_alpha = 0.01;
  std::vector<int> only;  // empty: all criteria
  double ensemble_dt_safety = 5.0;
  std::vector<double> ensemble_eps{1e-2, 3e-3, 1e-3};
  std::vector<double> ensemble_times{0.1, 0.1778279410, 0.3162277660, 0.5, 0.5623413252, 1.0};
  std::size_t ensemble_n = 10000;

  DeffScalingConfig deff;
  DeffMonteCarloConfig deff_mc;
  ExitConfig exit;
  UpcrossingConfig upcrossing;
  AveragingConfig averaging;
  MainTheoremConfig main;
  VarianceScalingConfig variance;
  LocalTimeConfig local_time;
  CaputoConfig caputo;
  FpdeRoutesConfig fpde;
  CoupledTraceConfig coupled;
  FeynmanKacConfig fk;

  static SuiteConfig full(std::uint64_t seed = 1, unsigned workers = 1);
  static SuiteConfig reduced(std::uint64_t seed = 1, unsigned workers = 1);
  bool wants(int criterion) const;
  nlohmann::json to_json() const;
};

struct SuiteResult {
  std::vector<TestReport> reports;
  std::vector<double> adjusted;       // Holm-adjusted p-values, flattened in report order
  std::vector<bool> corrected_pass;   // per report
  bool all_pass = false;
  nlohmann::json to_json() const;
};

SuiteResult run_suite(const HamiltonianField& field, const SuiteConfig& cfg,
                      const std::function<void(const TestReport&)>& on_report = {});

}  // namespace cellflow
