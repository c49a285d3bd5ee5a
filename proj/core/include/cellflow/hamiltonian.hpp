#pragma once

#include "cellflow/common.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <string>
#include <vector>

namespace cellflow {

// One Fourier term A cos(w k.x) + B sin(w k.x), w = 2 pi / period.
struct TrigTerm {
  std::array<int, 2> k{0, 0};
  double cos_coef = 0.0;
  double sin_coef = 0.0;
};

struct CriticalPoint {
  Vec2 x;
  double value = 0.0;
  double hess_det = 0.0;
};

struct CellInfo {
  Vec2 center;        // the extremum of H inside the cell
  double extremum = 0.0;
  int sign = 0;       // sign of H in the cell
};

// Marker returned by cell_of for points on the separatrix.
inline constexpr int kSeparatrix = -1;

// Periodic stream function H given as a trigonometric polynomial. The
// constructor locates all critical points, checks that every saddle lies on
// {H = 0} and that each cell contains a single nondegenerate extremum.
class HamiltonianField {
 public:
  HamiltonianField(std::string name, double period, std::vector<TrigTerm> terms);

  static HamiltonianField sin_sin();
  // sin x1 sin x2 (1 + beta sin x1); cells carry different perimeter weights.
  static HamiltonianField skewed(double beta);
  // Identically zero field; no cells, everything lies on the separatrix.
  static HamiltonianField zero(double period = kTwoPi);
  // Accepts a built-in name ("sin_sin", "skewed:<beta>", "zero") or a JSON
  // object {"name", "period", "terms": [{"k": [k1, k2], "cos": A, "sin": B}]}.
  static HamiltonianField from_json(const nlohmann::json& j);
  static HamiltonianField from_spec(const std::string& spec);
  nlohmann::json to_json() const;

  HamiltonianField scaled(double factor) const;

  const std::string& name() const { return name_; }
  double period() const { return period_; }
  const std::vector<TrigTerm>& terms() const { return terms_; }

  double value(const Vec2& x) const;
  Vec2 gradient(const Vec2& x) const;
  Mat2 hessian(const Vec2& x) const;
  // v = (-dH/dx2, dH/dx1)
  Vec2 velocity(const Vec2& x) const {
    const Vec2 g = gradient(x);
    return {-g.y(), g.x()};
  }
  // H and v from one pass over the terms.
  double value_and_velocity(const Vec2& x, Vec2& v) const;

  // Upper bound on |grad H|.
  double gradient_bound() const { return grad_bound_; }
  // Upper bound on the operator norm of the Hessian.
  double hessian_bound() const { return hess_bound_; }

  int cell_count() const { return static_cast<int>(cells_.size()); }
  const std::vector<CellInfo>& cells() const { return cells_; }
  const std::vector<CriticalPoint>& saddles() const { return saddles_; }

  // Index of the cell containing x, or kSeparatrix when |H(x)| <= tol.
  int cell_of(const Vec2& x, double tol = 0.0) const;

  Vec2 wrap(const Vec2& x) const;
  std::array<long, 2> winding(const Vec2& x) const;
  // Shortest representative of a - b on the torus.
  Vec2 torus_delta(const Vec2& a, const Vec2& b) const;

 private:
  void analyze();
  void build_label_grid();
  int ascend_to_cell(const Vec2& x) const;
  int grid_lookup(const Vec2& x, double hx) const;

  std::string name_;
  double period_;
  double wavenumber_;
  std::vector<TrigTerm> terms_;
  // Sparse evaluation form: terms with k1 + k2 collapsed into one sincos.
  std::vector<std::array<double, 4>> eval_terms_;  // k1 w, k2 w, A, B
  double grad_bound_ = 0.0;
  double hess_bound_ = 0.0;

  std::vector<CriticalPoint> saddles_;
  std::vector<CellInfo> cells_;

  int label_n_ = 0;
  std::vector<int> corner_label_;
  std::vector<double> corner_value_;
};

// Free-function forms of the field queries.
Vec2 velocity(const HamiltonianField& field, const Vec2& x);
int cell_of(const HamiltonianField& field, const Vec2& x, double tol = 0.0);

}  // namespace cellflow
