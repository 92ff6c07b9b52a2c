#pragma once

// Damped Gauss-Newton (Levenberg-Marquardt) with central-difference Jacobians.

#include "coopamp/fitting.hpp"

#include <Eigen/Dense>

#include <functional>
#include <span>
#include <string>
#include <vector>

namespace coopamp::detail {

struct LeastSquaresProblem {
  std::size_t residual_count = 0;
  // Writes residuals for parameters p. Non-finite residuals mark p infeasible.
  std::function<void(std::span<const double> p, std::span<double> r)> residuals;
  // Typical magnitude per parameter: sets the Jacobian step floor and the
  // absolute part of the convergence test.
  std::vector<double> scale;
};

struct LeastSquaresOutcome {
  std::vector<double> params;
  std::vector<double> std_errors;
  Eigen::MatrixXd covariance;
  double rss = 0.0;
  bool converged = false;
  int iterations = 0;
  std::string message;
};

LeastSquaresOutcome levenberg_marquardt(const LeastSquaresProblem& problem, std::vector<double> start,
                                        const FitOptions& opts);

}  // namespace coopamp::detail
