#include "cellflow/cell_problem.hpp"

#include "cellflow/parallel.hpp"
#include "cellflow/rng.hpp"
#include "cellflow/sde_engine.hpp"
#include "cellflow/stats.hpp"

#include "fft.hpp"

#include <Eigen/Sparse>
#include <Eigen/UmfPackSupport>
#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <optional>
#include <ostream>
#include <sstream>

namespace cellflow {

namespace {

using cplx = std::complex<double>;
using VecC = Eigen::VectorXcd;

using detail::Fft2;
using detail::slot;
using detail::wavenumber;

int max_mode(const HamiltonianField& field) {
  int m = 0;
  for (const auto& t : field.terms()) m = std::max({m, std::abs(t.k[0]), std::abs(t.k[1])});
  return m;
}

// The operator chi -> (eps/2) lap chi + v . grad chi on the retained modes
// |k1|, |k2| <= K, k != 0.
class CellOperator {
 public:
  CellOperator(const HamiltonianField& field, double epsilon, int n)
      : eps_(epsilon), n_(n), k_(band_limit(n)), w_(kTwoPi / field.period()), fft_(n) {
    if (max_mode(field) > k_) {
      std::ostringstream msg;
      msg << "cell problem: grid " << n << " cannot represent the field modes (band " << k_ << ")";
      throw ConfigError(msg.str());
    }
    const std::size_t nn = static_cast<std::size_t>(n) * n;
    v1_.resize(nn);
    v2_.resize(nn);
    const double h = field.period() / n;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        const Vec2 v = field.velocity(Vec2(i * h, j * h));
        v1_[idx(i, j)] = v.x();
        v2_[idx(i, j)] = v.y();
      }
    vhat_[0] = fft_.spectrum(v1_);
    vhat_[1] = fft_.spectrum(v2_);
    pos_.assign(nn, -1);
    for (int k1 = -k_; k1 <= k_; ++k1)
      for (int k2 = -k_; k2 <= k_; ++k2) {
        if (k1 == 0 && k2 == 0) continue;
        pos_[idx(slot(k1, n), slot(k2, n))] = static_cast<int>(modes_.size());
        modes_.push_back({k1, k2});
      }
  }

  std::size_t size() const { return modes_.size(); }
  const std::array<int, 2>& mode(std::size_t m) const { return modes_[m]; }
  double wavenumber_scale() const { return w_; }

  VecC rhs(int component) const {
    VecC b(size());
    for (std::size_t m = 0; m < size(); ++m) b[static_cast<long>(m)] = -vhat_[component][flat(modes_[m])];
    return b;
  }

  VecC apply(const VecC& x) const {
    const std::size_t nn = static_cast<std::size_t>(n_) * n_;
    std::vector<cplx> d1(nn, 0.0), d2(nn, 0.0), g1, g2;
    for (std::size_t m = 0; m < size(); ++m) {
      const auto& k = modes_[m];
      const std::size_t f = flat(k);
      d1[f] = cplx(0.0, w_ * k[0]) * x[static_cast<long>(m)];
      d2[f] = cplx(0.0, w_ * k[1]) * x[static_cast<long>(m)];
    }
    fft_.backward(d1, g1);
    fft_.backward(d2, g2);
    for (std::size_t q = 0; q < nn; ++q) g1[q] = v1_[q] * g1[q] + v2_[q] * g2[q];
    fft_.forward(g1, d1);
    const double norm = 1.0 / static_cast<double>(nn);
    VecC y(size());
    for (std::size_t m = 0; m < size(); ++m) {
      const auto& k = modes_[m];
      const double k2 = w_ * w_ * (k[0] * k[0] + k[1] * k[1]);
      y[static_cast<long>(m)] = d1[flat(k)] * norm - 0.5 * eps_ * k2 * x[static_cast<long>(m)];
    }
    return y;
  }

  // Galerkin matrix of the same operator, assembled from the modes of v.
  Eigen::SparseMatrix<cplx> galerkin() const {
    struct VMode {
      int m1, m2;
      cplx a, b;
    };
    std::vector<VMode> vm;
    double vmax = 0.0;
    for (const auto& c : vhat_[0]) vmax = std::max(vmax, std::abs(c));
    for (const auto& c : vhat_[1]) vmax = std::max(vmax, std::abs(c));
    for (int i = 0; i < n_; ++i)
      for (int j = 0; j < n_; ++j) {
        const cplx a = vhat_[0][idx(i, j)], b = vhat_[1][idx(i, j)];
        if (std::abs(a) > 1e-14 * vmax || std::abs(b) > 1e-14 * vmax) vm.push_back({wavenumber(i, n_), wavenumber(j, n_), a, b});
      }
    std::vector<Eigen::Triplet<cplx>> trip;
    trip.reserve(size() * (vm.size() + 1));
    for (std::size_t r = 0; r < size(); ++r) {
      const auto& k = modes_[r];
      trip.emplace_back(r, r, -0.5 * eps_ * w_ * w_ * (k[0] * k[0] + k[1] * k[1]));
      for (const auto& m : vm) {
        const int p1 = k[0] - m.m1, p2 = k[1] - m.m2;
        if (std::abs(p1) > k_ || std::abs(p2) > k_ || (p1 == 0 && p2 == 0)) continue;
        const int c = pos_[idx(slot(p1, n_), slot(p2, n_))];
        trip.emplace_back(r, c, cplx(0.0, w_) * (m.a * static_cast<double>(p1) + m.b * static_cast<double>(p2)));
      }
    }
    Eigen::SparseMatrix<cplx> a(static_cast<long>(size()), static_cast<long>(size()));
    a.setFromTriplets(trip.begin(), trip.end());
    return a;
  }

  VecC laplacian_inverse(const VecC& x) const {
    VecC y(x.size());
    for (std::size_t m = 0; m < size(); ++m) {
      const auto& k = modes_[m];
      y[static_cast<long>(m)] = x[static_cast<long>(m)] / (-0.5 * eps_ * w_ * w_ * (k[0] * k[0] + k[1] * k[1]));
    }
    return y;
  }

  SpectralField to_field(const VecC& x, double period) const {
    SpectralField f;
    f.n = n_;
    f.period = period;
    f.coeffs.assign(static_cast<std::size_t>(n_) * n_, 0.0);
    for (std::size_t m = 0; m < size(); ++m) f.coeffs[flat(modes_[m])] = x[static_cast<long>(m)];
    return f;
  }

  VecC from_field(const SpectralField& f) const {
    if (f.n != n_) throw ConfigError("corrector grid does not match the operator grid");
    VecC x(size());
    for (std::size_t m = 0; m < size(); ++m) x[static_cast<long>(m)] = f.coeffs[flat(modes_[m])];
    return x;
  }

 private:
  std::size_t idx(int i, int j) const { return static_cast<std::size_t>(i) * n_ + j; }
  std::size_t flat(const std::array<int, 2>& k) const { return idx(slot(k[0], n_), slot(k[1], n_)); }

  double eps_;
  int n_;
  int k_;
  double w_;
  Fft2 fft_;
  std::vector<double> v1_, v2_;
  std::array<std::vector<cplx>, 2> vhat_;
  std::vector<int> pos_;
  std::vector<std::array<int, 2>> modes_;
};

// Right-preconditioned restarted GMRES with complex Givens rotations.
template <class Apply, class Precond>
int gmres(const Apply& apply, const Precond& precond, const VecC& b, VecC& x, double tol, int max_iter, int restart,
          std::vector<double>& history) {
  const double bn = b.norm();
  if (bn == 0.0) {
    x.setZero(b.size());
    history.push_back(0.0);
    return 0;
  }
  VecC r = b - apply(x);
  double rel = r.norm() / bn;
  history.push_back(rel);
  int it = 0;
  while (rel > tol && it < max_iter) {
    const int m = restart;
    std::vector<VecC> v{r / r.norm()}, z;
    Eigen::MatrixXcd h = Eigen::MatrixXcd::Zero(m + 1, m);
    VecC g = VecC::Zero(m + 1);
    g[0] = r.norm();
    std::vector<double> cs(m);
    std::vector<cplx> sn(m);
    int j = 0;
    while (j < m && it < max_iter) {
      z.push_back(precond(v[j]));
      VecC w = apply(z[j]);
      for (int pass = 0; pass < 2; ++pass)
        for (int i = 0; i <= j; ++i) {
          const cplx hij = v[i].dot(w);
          h(i, j) += hij;
          w -= hij * v[i];
        }
      const double wn = w.norm();
      h(j + 1, j) = wn;
      v.push_back(wn > 0.0 ? VecC(w / wn) : w);
      for (int i = 0; i < j; ++i) {
        const cplx t = cs[i] * h(i, j) + sn[i] * h(i + 1, j);
        h(i + 1, j) = -std::conj(sn[i]) * h(i, j) + cs[i] * h(i + 1, j);
        h(i, j) = t;
      }
      const cplx a = h(j, j), bb = h(j + 1, j);
      const double rho = std::hypot(std::abs(a), std::abs(bb));
      if (std::abs(a) == 0.0) {
        cs[j] = 0.0;
        sn[j] = 1.0;
      } else {
        cs[j] = std::abs(a) / rho;
        sn[j] = (a / std::abs(a)) * std::conj(bb) / rho;
      }
      h(j, j) = cs[j] * a + sn[j] * bb;
      h(j + 1, j) = 0.0;
      g[j + 1] = -std::conj(sn[j]) * g[j];
      g[j] = cs[j] * g[j];
      ++j;
      ++it;
      history.push_back(std::abs(g[j]) / bn);
      if (std::abs(g[j]) / bn <= tol) break;
    }
    VecC y = h.topLeftCorner(j, j).triangularView<Eigen::Upper>().solve(g.head(j));
    for (int i = 0; i < j; ++i) x += y[i] * z[i];
    r = b - apply(x);
    rel = r.norm() / bn;
    history.back() = rel;
  }
  return it;
}

}  // namespace

std::complex<double> SpectralField::at(int k1, int k2) const {
  if (std::abs(k1) >= n / 2 || std::abs(k2) >= n / 2) return 0.0;
  return coeffs[static_cast<std::size_t>(slot(k1, n)) * n + slot(k2, n)];
}

std::vector<double> SpectralField::grid_values(int n_out) const {
  if (n_out == 0) n_out = n;
  if (n_out < n) throw ConfigError("grid_values: output grid coarser than the spectral grid");
  std::vector<cplx> padded(static_cast<std::size_t>(n_out) * n_out, 0.0), out;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const int k1 = wavenumber(i, n), k2 = wavenumber(j, n);
      padded[static_cast<std::size_t>(slot(k1, n_out)) * n_out + slot(k2, n_out)] =
          coeffs[static_cast<std::size_t>(i) * n + j];
    }
  Fft2 fft(n_out);
  fft.backward(padded, out);
  std::vector<double> values(out.size());
  for (std::size_t q = 0; q < out.size(); ++q) values[q] = out[q].real();
  return values;
}

void SpectralField::write_binary(std::ostream& os) const {
  auto put = [&](const void* p) { os.write(static_cast<const char*>(p), 8); };
  const std::uint64_t nn = static_cast<std::uint64_t>(n);
  put(&nn);
  put(&period);
  for (const auto& c : coeffs) {
    const double re = c.real(), im = c.imag();
    put(&re);
    put(&im);
  }
}

int default_grid(double epsilon, double period) {
  if (!(epsilon > 0.0)) throw ConfigError("default_grid: epsilon must be positive");
  const double need = std::max(64.0, 8.0 / std::sqrt(epsilon) * period / kTwoPi);
  int n = 64;
  while (n < need) n *= 2;
  return n;
}

int band_limit(int n) { return (n - 1) / 3; }

CorrectorSolution solve_corrector(const HamiltonianField& field, double epsilon, const CellOptions& opt) {
  if (!(epsilon > 0.0)) throw ConfigError("cell problem: epsilon must be positive");
  const int n = opt.grid > 0 ? opt.grid : default_grid(epsilon, field.period());
  if (n < 64 || (n & (n - 1)) != 0) throw ConfigError("cell problem: grid must be a power of two >= 64");
  CorrectorSolution sol;
  sol.epsilon = epsilon;
  sol.n = n;
  const CellOperator op(field, epsilon, n);
  auto apply = [&](const VecC& x) { return op.apply(x); };
  // UmfPackLU keeps a reference to the factored matrix.
  Eigen::SparseMatrix<cplx> galerkin;
  std::optional<Eigen::UmfPackLU<Eigen::SparseMatrix<cplx>>> lu;
  if (opt.preconditioner == CellPreconditioner::galerkin_lu) {
    galerkin = op.galerkin();
    lu.emplace();
    lu->compute(galerkin);
    if (lu->info() != Eigen::Success) throw NumericalError("cell problem: sparse factorisation failed");
  }
  for (int c = 0; c < 2; ++c) {
    const VecC b = op.rhs(c);
    VecC x = VecC::Zero(b.size());
    if (lu) {
      auto precond = [&](const VecC& r) -> VecC { return lu->solve(r); };
      sol.iterations[c] = gmres(apply, precond, b, x, opt.tol, opt.max_iter, opt.restart, sol.residual_history[c]);
    } else {
      auto precond = [&](const VecC& r) { return op.laplacian_inverse(r); };
      sol.iterations[c] = gmres(apply, precond, b, x, opt.tol, opt.max_iter, opt.restart, sol.residual_history[c]);
    }
    sol.residual[c] = sol.residual_history[c].back();
    if (!(sol.residual[c] <= opt.tol)) {
      std::ostringstream msg;
      msg << "cell problem: GMRES stopped at relative residual " << sol.residual[c] << " after "
          << sol.iterations[c] << " iterations; history:";
      for (double h : sol.residual_history[c]) msg << ' ' << h;
      throw NumericalError(msg.str());
    }
    // Real field: enforce exact conjugate symmetry of the coefficients.
    SpectralField f = op.to_field(x, field.period());
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        const std::size_t a = static_cast<std::size_t>(i) * n + j;
        const std::size_t b2 = static_cast<std::size_t>((n - i) % n) * n + (n - j) % n;
        if (a < b2) {
          const cplx avg = 0.5 * (f.coeffs[a] + std::conj(f.coeffs[b2]));
          f.coeffs[a] = avg;
          f.coeffs[b2] = std::conj(avg);
        } else if (a == b2) {
          f.coeffs[a] = f.coeffs[a].real();
        }
      }
    sol.chi[c] = std::move(f);
    sol.residual[c] = corrector_residual(field, epsilon, sol.chi[c], c);
  }
  return sol;
}

double corrector_residual(const HamiltonianField& field, double epsilon, const SpectralField& chi, int component) {
  const CellOperator op(field, epsilon, chi.n);
  const VecC b = op.rhs(component);
  const VecC r = op.apply(op.from_field(chi)) - b;
  const double bn = b.norm();
  return bn > 0.0 ? r.norm() / bn : r.norm();
}

Mat2 effective_diffusivity(const CorrectorSolution& sol) {
  const int n = sol.n;
  const double w = kTwoPi / sol.chi[0].period;
  Mat2 g = Mat2::Zero();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const double k1 = wavenumber(i, n), k2 = wavenumber(j, n);
      const double k2n = w * w * (k1 * k1 + k2 * k2);
      const std::size_t q = static_cast<std::size_t>(i) * n + j;
      const cplx a = sol.chi[0].coeffs[q], b = sol.chi[1].coeffs[q];
      g(0, 0) += k2n * std::norm(a);
      g(1, 1) += k2n * std::norm(b);
      g(0, 1) += k2n * (a * std::conj(b)).real();
    }
  g(1, 0) = g(0, 1);
  return sol.epsilon * (Mat2::Identity() + g);
}

std::vector<DeffPoint> deff_sweep(const HamiltonianField& field, const std::vector<double>& eps, const CellOptions& opt,
                                  unsigned workers) {
  std::vector<DeffPoint> out(eps.size());
  parallel_for(eps.size(), workers, [&](std::size_t i) {
    const CorrectorSolution sol = solve_corrector(field, eps[i], opt);
    out[i] = {eps[i], effective_diffusivity(sol), std::max(sol.residual[0], sol.residual[1]), sol.n,
              std::max(sol.iterations[0], sol.iterations[1])};
  });
  return out;
}

ScalingFit scaling_fit(std::vector<DeffPoint> points, double period) {
  if (points.size() < 5) throw ConfigError("scaling_fit: need at least 5 values of epsilon");
  std::sort(points.begin(), points.end(), [](const DeffPoint& a, const DeffPoint& b) { return a.epsilon < b.epsilon; });
  if (std::log10(points.back().epsilon / points.front().epsilon) < 1.5 - 1e-9)
    throw ConfigError("scaling_fit: epsilon values must span at least 1.5 decades");
  std::vector<double> x, y;
  ScalingFit fit;
  for (const auto& p : points) {
    x.push_back(std::log(p.epsilon));
    y.push_back(std::log(p.d(0, 0)));
    if (p.n < 8.0 / std::sqrt(p.epsilon) * period / kTwoPi) fit.under_resolved = true;
  }
  const stats::LinearFit lf = stats::linear_fit(x, y);
  const boost::math::students_t t(static_cast<double>(x.size() - 2));
  const double tq = boost::math::quantile(boost::math::complement(t, 0.025));
  fit.exponent = lf.slope;
  fit.exponent_lo = lf.slope - tq * lf.slope_se;
  fit.exponent_hi = lf.slope + tq * lf.slope_se;
  fit.prefactor = std::exp(lf.intercept);
  fit.r2 = lf.r2;
  fit.points = std::move(points);
  return fit;
}

ScalingFit scaling_fit(const HamiltonianField& field, const std::vector<double>& eps, const CellOptions& opt,
                       unsigned workers) {
  return scaling_fit(deff_sweep(field, eps, opt, workers), field.period());
}

nlohmann::json ScalingFit::to_json() const {
  nlohmann::json pts = nlohmann::json::array();
  for (const auto& p : points)
    pts.push_back({{"epsilon", p.epsilon},
                   {"D11", p.d(0, 0)},
                   {"D12", p.d(0, 1)},
                   {"D22", p.d(1, 1)},
                   {"residual", p.residual},
                   {"N", p.n},
                   {"iterations", p.iterations}});
  return {{"exponent", exponent},       {"exponent_ci", {exponent_lo, exponent_hi}},
          {"prefactor", prefactor},     {"r2", r2},
          {"under_resolved", under_resolved}, {"points", pts}};
}

Mat2 q_matrix_boundary_layer(const HamiltonianField& field, const CorrectorSolution& sol, double n_band, double q_sum,
                             int refine) {
  if (!(n_band > 0.0) || !(q_sum > 0.0) || refine < 1) throw ConfigError("boundary layer: invalid parameters");
  const double level = std::sqrt(n_band * sol.epsilon);
  double top = 1e300;
  for (const auto& c : field.cells()) top = std::min(top, std::abs(c.extremum));
  if (!(level < top)) throw DomainError("boundary layer: band reaches a cell extremum");
  const int nf = sol.n * refine;
  const double h = field.period() / nf;
  // Narrowest band width is level / max |grad H|; ask for four grid cells across it.
  if (level / field.gradient_bound() < 4.0 * h) {
    std::ostringstream msg;
    msg << "boundary layer: band half-width " << level / field.gradient_bound() << " is unresolved by spacing " << h;
    throw ResolutionError(msg.str());
  }
  const std::vector<double> c1 = sol.chi[0].grid_values(nf), c2 = sol.chi[1].grid_values(nf);
  Mat2 acc = Mat2::Zero();
  for (int i = 0; i < nf; ++i)
    for (int j = 0; j < nf; ++j) {
      const Vec2 x(i * h, j * h);
      Vec2 v;
      const double hv = field.value_and_velocity(x, v);
      if (std::abs(hv) >= level) continue;
      const std::size_t q = static_cast<std::size_t>(i) * nf + j;
      const Vec2 chi(c1[q], c2[q]);
      acc += v * chi.transpose() + chi * v.transpose();
    }
  return acc * (h * h) / (q_sum * std::sqrt(sol.epsilon));
}

nlohmann::json MonteCarloDiffusivity::to_json() const {
  auto mat = [](const Mat2& m) { return nlohmann::json{{m(0, 0), m(0, 1)}, {m(1, 0), m(1, 1)}}; };
  return {{"D", mat(d)}, {"se", mat(se)}, {"paths", paths}, {"blocks", blocks}, {"block_time", block_time}};
}

MonteCarloDiffusivity mc_effective_diffusivity(const HamiltonianField& field, double epsilon, double block_time,
                                               std::size_t blocks, std::size_t paths, std::uint64_t seed,
                                               double dt_safety, double dt_max, unsigned workers) {
  if (!(epsilon > 0.0) || !(block_time > 0.0) || blocks < 1 || paths < 2)
    throw ConfigError("mc diffusivity: invalid parameters");
  const SdeEngine engine(field, epsilon, dt_max, dt_safety);
  std::vector<Mat2> per_path(paths);
  parallel_for(paths, workers, [&](std::size_t i) {
    Rng start(seed, i, 1);
    const Vec2 x0(start.uniform() * field.period(), start.uniform() * field.period());
    Rng rng(seed, i);
    PathIntegrator path(engine, x0, rng);
    Mat2 acc = Mat2::Zero();
    Vec2 prev = x0;
    for (std::size_t b = 1; b <= blocks; ++b) {
      path.advance_to(static_cast<double>(b) * block_time, [](double, const Vec2&, double) { return true; });
      const Vec2 d = path.position() - prev;
      acc += d * d.transpose();
      prev = path.position();
    }
    per_path[i] = acc / (static_cast<double>(blocks) * block_time);
  });
  MonteCarloDiffusivity out;
  out.paths = paths;
  out.blocks = blocks;
  out.block_time = block_time;
  for (const auto& m : per_path) out.d += m;
  out.d /= static_cast<double>(paths);
  Mat2 var = Mat2::Zero();
  for (const auto& m : per_path) var += (m - out.d).cwiseProduct(m - out.d);
  out.se = (var / static_cast<double>(paths - 1) / static_cast<double>(paths)).cwiseSqrt();
  return out;
}

}  // namespace cellflow
