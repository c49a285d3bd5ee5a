#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace cellflow {

using Vec2 = Eigen::Vector2d;
using Mat2 = Eigen::Matrix2d;

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

// Base of all library errors. The CLI maps the subclasses to exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid configuration or parameters (CLI exit code 2).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// A query outside the domain of a routine, e.g. a level outside a cell.
class DomainError : public Error {
 public:
  using Error::Error;
};

// Integrator, quadrature or linear solver failure (CLI exit code 3).
class NumericalError : public Error {
 public:
  using Error::Error;
};

// Requested estimator resolution is finer than the data supports.
class ResolutionError : public Error {
 public:
  using Error::Error;
};

// Too few samples for a requested statistic.
class StatisticalError : public Error {
 public:
  using Error::Error;
};

// Fitted coefficients fail their quality gate.
class CoefficientQualityError : public Error {
 public:
  using Error::Error;
};

}  // namespace cellflow
