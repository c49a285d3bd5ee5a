#pragma once

#include "cellflow/hamiltonian.hpp"

#include <nlohmann/json.hpp>

#include <utility>
#include <vector>

namespace cellflow {

struct ClosedOrbit {
  double period = 0.0;      // closed-orbit integral of dl / |grad H|
  double flux = 0.0;        // closed-orbit integral of |grad H| dl
  double length = 0.0;
  Vec2 start;
  long steps = 0;
};

struct HeteroclinicOrbit {
  int from_saddle = -1;
  int to_saddle = -1;
  double weight = 0.0;      // integral of |grad H| dl along the orbit
  double length = 0.0;
  int left_cell = -1;
  int right_cell = -1;
  std::vector<std::pair<double, Vec2>> trail;  // (arclength, point)
};

struct ContourOptions {
  double rtol = 1e-12;
  double atol = 1e-14;
  long max_steps = 2'000'000;
};

// Integral of |grad H| over the boundary of cell i.
double perimeter_weight(const HamiltonianField& field, int cell, const ContourOptions& opt = {});

// Rotation period on the closed orbit {|H| = h} in cell i.
double rotation_period(const HamiltonianField& field, int cell, double h, const ContourOptions& opt = {});

ClosedOrbit trace_closed_orbit(const HamiltonianField& field, int cell, double h, const ContourOptions& opt = {});

// Point of cell i with |H| = h, found by descent from the cell extremum.
Vec2 level_point(const HamiltonianField& field, int cell, double h);

std::vector<HeteroclinicOrbit> separatrix_orbits(const HamiltonianField& field, const ContourOptions& opt = {});

struct CoefficientOptions {
  double h_min = 1e-6;
  double h_max = 1e-2;
  int n_levels = 25;
  double min_r2 = 0.999;
  ContourOptions contour;
};

// Edge coefficients of the limiting graph process and the constants that
// depend on them. Q and p are filled in later from path statistics.
struct FlowCoefficients {
  std::vector<double> q;          // perimeter weights
  std::vector<double> slope;      // fitted dT/d|log h|
  std::vector<double> intercept;
  std::vector<double> r2;
  std::vector<double> c_bar;      // lim T(eps^1/2) / |log eps| = slope / 2
  std::vector<double> a;          // edge diffusivities q / c_bar
  std::vector<double> q_bar;      // q normalised to sum 1
  std::vector<double> label_weight;  // excursion label law, prop. to q / sqrt(a)
  double r0 = 0.0;                // sum q_bar / sqrt(a / 2)
  double local_time_factor = 0.0; // L(O) / driving local time
  bool has_p = false;
  std::vector<double> p;
  bool has_Q = false;
  Mat2 Q = Mat2::Zero();

  int edges() const { return static_cast<int>(q.size()); }
  double a_max() const;
  void finalize();  // derived quantities from q and a
  nlohmann::json to_json() const;
  static FlowCoefficients from_json(const nlohmann::json& j);
  // Equal-weight coefficients for tests of the graph process alone.
  static FlowCoefficients symmetric(int edges, double a, double q = 1.0);
};

FlowCoefficients edge_coefficients(const HamiltonianField& field, const CoefficientOptions& opt = {});

}  // namespace cellflow
