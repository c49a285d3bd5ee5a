#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>

namespace cellflow::detail {

// One Dormand-Prince 5(4) step. Returns the 5th order solution in y_out and
// the embedded error estimate (max-norm, scaled by atol + rtol |y|).
template <int N, class F>
double dopri5_step(F&& f, const Eigen::Matrix<double, N, 1>& y, double h,
                   Eigen::Matrix<double, N, 1>& y_out, double rtol, double atol) {
  using V = Eigen::Matrix<double, N, 1>;
  const V k1 = f(y);
  const V k2 = f(V(y + h * (1.0 / 5.0) * k1));
  const V k3 = f(V(y + h * (3.0 / 40.0 * k1 + 9.0 / 40.0 * k2)));
  const V k4 = f(V(y + h * (44.0 / 45.0 * k1 - 56.0 / 15.0 * k2 + 32.0 / 9.0 * k3)));
  const V k5 = f(V(y + h * (19372.0 / 6561.0 * k1 - 25360.0 / 2187.0 * k2 + 64448.0 / 6561.0 * k3 -
                            212.0 / 729.0 * k4)));
  const V k6 = f(V(y + h * (9017.0 / 3168.0 * k1 - 355.0 / 33.0 * k2 + 46732.0 / 5247.0 * k3 +
                            49.0 / 176.0 * k4 - 5103.0 / 18656.0 * k5)));
  y_out = y + h * (35.0 / 384.0 * k1 + 500.0 / 1113.0 * k3 + 125.0 / 192.0 * k4 - 2187.0 / 6784.0 * k5 +
                   11.0 / 84.0 * k6);
  const V k7 = f(y_out);
  const V err = h * (71.0 / 57600.0 * k1 - 71.0 / 16695.0 * k3 + 71.0 / 1920.0 * k4 -
                     17253.0 / 339200.0 * k5 + 22.0 / 525.0 * k6 - 1.0 / 40.0 * k7);
  double e = 0.0;
  for (int i = 0; i < y.size(); ++i) {
    const double scale = atol + rtol * std::max(std::abs(y[i]), std::abs(y_out[i]));
    e = std::max(e, std::abs(err[i]) / scale);
  }
  return e;
}

inline double next_step(double h, double err) {
  const double factor = err == 0.0 ? 5.0 : std::clamp(0.9 * std::pow(err, -0.2), 0.2, 5.0);
  return h * factor;
}

}  // namespace cellflow::detail
