#include "least_squares.hpp"

#include "coopamp/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace coopamp::detail {

namespace {

double sum_squares(std::span<const double> r) {
  double s = 0.0;
  for (double v : r) {
    if (!std::isfinite(v)) return std::numeric_limits<double>::infinity();
    s += v * v;
  }
  return s;
}

}  // namespace

LeastSquaresOutcome levenberg_marquardt(const LeastSquaresProblem& problem, std::vector<double> start,
                                        const FitOptions& opts) {
  const std::size_t n = start.size();
  const std::size_t m = problem.residual_count;
  if (n == 0 || m < n) throw RankError("fewer residuals than parameters");
  if (problem.scale.size() != n) throw Error("parameter scale has wrong size");

  std::vector<double> p = std::move(start);
  std::vector<double> r(m), r_try(m), r_plus(m), r_minus(m);
  problem.residuals(p, r);
  double rss = sum_squares(r);
  if (!std::isfinite(rss)) throw RankError("initial parameters give non-finite residuals");

  auto floor_of = [&](std::size_t j) { return std::max(std::abs(p[j]), std::abs(problem.scale[j])); };

  Eigen::MatrixXd jac(m, n);
  auto jacobian = [&] {
    std::vector<double> q = p;
    for (std::size_t j = 0; j < n; ++j) {
      double h = opts.jacobian_step * floor_of(j);
      if (h == 0.0) h = opts.jacobian_step;
      q[j] = p[j] + h;
      problem.residuals(q, r_plus);
      q[j] = p[j] - h;
      problem.residuals(q, r_minus);
      q[j] = p[j];
      for (std::size_t i = 0; i < m; ++i) jac(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          (r_plus[i] - r_minus[i]) / (2.0 * h);
    }
  };

  LeastSquaresOutcome out;
  double lambda = 1e-3;
  int iter = 0;
  bool converged = false;
  std::string message;
  Eigen::MatrixXd jtj;
  Eigen::VectorXd jtr;
  bool need_jacobian = true;

  while (iter < opts.max_iterations) {
    ++iter;
    if (need_jacobian) {
      jacobian();
      const Eigen::Map<const Eigen::VectorXd> rv(r.data(), static_cast<Eigen::Index>(m));
      jtj = jac.transpose() * jac;
      jtr = jac.transpose() * rv;
      need_jacobian = false;
    }
    if (jtr.norm() == 0.0) {
      converged = true;
      message = "zero gradient";
      break;
    }

    Eigen::MatrixXd a = jtj;
    for (Eigen::Index j = 0; j < a.rows(); ++j) a(j, j) += lambda * std::max(jtj(j, j), 1e-300);
    const Eigen::VectorXd delta = a.ldlt().solve(-jtr);

    std::vector<double> trial(n);
    for (std::size_t j = 0; j < n; ++j) trial[j] = p[j] + delta(static_cast<Eigen::Index>(j));
    problem.residuals(trial, r_try);
    const double rss_try = sum_squares(r_try);

    bool small_step = true;
    for (std::size_t j = 0; j < n; ++j)
      if (!(std::abs(delta(static_cast<Eigen::Index>(j))) <= opts.tolerance * floor_of(j))) small_step = false;

    if (delta.allFinite() && rss_try <= rss) {
      p = std::move(trial);
      std::swap(r, r_try);
      rss = rss_try;
      lambda = std::max(lambda / 10.0, 1e-12);
      need_jacobian = true;
      if (small_step) {
        converged = true;
        message = "relative step below tolerance";
        break;
      }
    } else {
      // A step too small to change the parameters that still fails to lower
      // the residual means the minimum has been reached to working precision.
      if (small_step || lambda > 1e12) {
        converged = true;
        message = "no further decrease at minimum";
        break;
      }
      lambda *= 10.0;
    }
  }
  if (!converged) message = "maximum iterations reached";

  jacobian();
  jtj = jac.transpose() * jac;
  const double dof = static_cast<double>(m) - static_cast<double>(n);
  const double s2 = dof > 0.0 ? rss / dof : 0.0;
  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(jtj);
  Eigen::MatrixXd cov = s2 * cod.pseudoInverse();

  out.std_errors.resize(n);
  for (std::size_t j = 0; j < n; ++j)
    out.std_errors[j] = std::sqrt(std::max(0.0, cov(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(j))));
  out.params = std::move(p);
  out.covariance = std::move(cov);
  out.rss = rss;
  out.converged = converged;
  out.iterations = iter;
  out.message = std::move(message);
  return out;
}

}  // namespace coopamp::detail
