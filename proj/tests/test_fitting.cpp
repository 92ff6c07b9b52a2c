#include "coopamp/errors.hpp"
#include "coopamp/fitting.hpp"
#include "least_squares.hpp"

#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

using namespace coopamp;

namespace {

constexpr double kPi = std::numbers::pi;

std::vector<double> decaying(double a, double f, double tau, double phi, double off, double dt, std::size_t n,
                             double noise = 0.0, std::uint64_t seed = 0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, noise > 0.0 ? noise : 1.0);
  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) * dt;
    y[i] = a * std::exp(-t / tau) * std::sin(2.0 * kPi * f * t + phi) + off + (noise > 0.0 ? normal(rng) : 0.0);
  }
  return y;
}

}  // namespace

TEST_CASE("levenberg-marquardt solves a nonlinear problem and reports the linear covariance") {
  // Exponential model y = p0 exp(p1 x) sampled without noise.
  std::vector<double> x, y;
  for (int i = 0; i < 20; ++i) {
    x.push_back(0.1 * i);
    y.push_back(2.5 * std::exp(-1.3 * 0.1 * i));
  }
  detail::LeastSquaresProblem prob;
  prob.residual_count = x.size();
  prob.scale = {1.0, 1.0};
  prob.residuals = [&](std::span<const double> p, std::span<double> r) {
    for (std::size_t i = 0; i < x.size(); ++i) r[i] = p[0] * std::exp(p[1] * x[i]) - y[i];
  };
  const auto out = detail::levenberg_marquardt(prob, {1.0, 0.0}, FitOptions{});
  CHECK(out.converged);
  CHECK(out.params[0] == doctest::Approx(2.5).epsilon(1e-8));
  CHECK(out.params[1] == doctest::Approx(-1.3).epsilon(1e-8));

  // For a straight line the covariance must equal s^2 (X^T X)^-1.
  std::vector<double> yl{1.0, 2.9, 5.2, 6.8, 9.1};
  detail::LeastSquaresProblem lin;
  lin.residual_count = yl.size();
  lin.scale = {1.0, 1.0};
  lin.residuals = [&](std::span<const double> p, std::span<double> r) {
    for (std::size_t i = 0; i < yl.size(); ++i) r[i] = p[0] * static_cast<double>(i) + p[1] - yl[i];
  };
  const auto l = detail::levenberg_marquardt(lin, {0.0, 0.0}, FitOptions{});
  const auto ref = fit_linear(std::vector<double>{0, 1, 2, 3, 4}, yl);
  CHECK(l.params[0] == doctest::Approx(ref.value("slope")).epsilon(1e-9));
  CHECK(l.std_errors[0] == doctest::Approx(ref.std_error("slope")).epsilon(1e-5));
  CHECK(l.std_errors[1] == doctest::Approx(ref.std_error("intercept")).epsilon(1e-5));
}

TEST_CASE("decaying sinusoid round trip without noise") {
  const double dt = 0.01;
  const auto y = decaying(3e-9, 10.02, 163.0, 0.7, 1e-12, dt, 81500);
  const auto fit = fit_decaying_sinusoid(y, 0.0, dt);
  REQUIRE(fit.converged);
  CHECK(fit.value("A") == doctest::Approx(3e-9).epsilon(1e-6));
  CHECK(fit.value("f") == doctest::Approx(10.02).epsilon(1e-9));
  CHECK(fit.value("tau") == doctest::Approx(163.0).epsilon(1e-6));
  CHECK(fit.value("phi") == doctest::Approx(0.7).epsilon(1e-5));
  CHECK(fit.names == std::vector<std::string>{"A", "f", "tau", "phi", "offset"});
  CHECK_THROWS_AS(fit.value("nope"), std::out_of_range);
}

TEST_CASE("decay fit at a nonzero start time reports absolute-time parameters") {
  const double dt = 0.01, t0 = 12.0;
  std::vector<double> y(3000);
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double t = t0 + static_cast<double>(i) * dt;
    y[i] = 2.0 * std::exp(-t / 8.0) * std::sin(2.0 * kPi * 7.5 * t + 0.3);
  }
  const auto fit = fit_decaying_sinusoid(y, t0, dt);
  CHECK(fit.value("A") == doctest::Approx(2.0).epsilon(1e-6));
  CHECK(fit.value("tau") == doctest::Approx(8.0).epsilon(1e-6));
  CHECK(fit.value("phi") == doctest::Approx(0.3).epsilon(1e-5));
}

TEST_CASE("decay fit errors are calibrated under noise") {
  // Pull distribution of tau over independent noise draws.
  const double dt = 0.02, tau = 20.0;
  double sum = 0.0, sum2 = 0.0;
  const int runs = 40;
  for (int k = 0; k < runs; ++k) {
    const auto y = decaying(1.0, 5.0, tau, 1.1, 0.0, dt, 5000, 0.05, 100 + k);
    const auto fit = fit_decaying_sinusoid(y, 0.0, dt);
    REQUIRE(fit.converged);
    const double pull = (fit.value("tau") - tau) / fit.std_error("tau");
    sum += pull;
    sum2 += pull * pull;
  }
  const double mean = sum / runs, sd = std::sqrt(sum2 / runs - mean * mean);
  CHECK(std::abs(mean) < 0.5);
  CHECK(sd == doctest::Approx(1.0).epsilon(0.3));
}

TEST_CASE("decay fit with a fixed frequency") {
  const auto y = decaying(1.0, 4.0, 30.0, 0.2, 0.0, 0.01, 10000);
  DecayFitOptions opts;
  opts.fixed_frequency = 4.0;
  const auto fit = fit_decaying_sinusoid(y, 0.0, 0.01, opts);
  CHECK(fit.value("f") == 4.0);
  CHECK(fit.std_error("f") == 0.0);
  CHECK(fit.value("tau") == doctest::Approx(30.0).epsilon(1e-6));
}

TEST_CASE("Lorentzian round trip") {
  const double center = 10.0224, fwhm = 1.0 / (kPi * 163.0), peak = 2500.0;
  std::vector<double> f, a;
  for (int i = 0; i < 41; ++i) {
    const double x = center - 5.0 * fwhm + 0.25 * fwhm * i;
    f.push_back(x);
    a.push_back(peak / std::sqrt(1.0 + std::pow(2.0 * (x - center) / fwhm, 2)) + 3.0);
  }
  const auto fit = fit_lorentzian(f, a);
  REQUIRE(fit.converged);
  CHECK(fit.value("center") == doctest::Approx(center).epsilon(1e-10));
  CHECK(fit.value("fwhm") == doctest::Approx(fwhm).epsilon(1e-7));
  CHECK(fit.value("peak") == doctest::Approx(peak).epsilon(1e-7));
  CHECK(fit.value("baseline") == doctest::Approx(3.0).epsilon(1e-5));

  const std::vector<double> flat(f.size(), 0.0);
  const auto none = fit_lorentzian(f, flat);
  CHECK(none.value("peak") == 0.0);
  CHECK(none.low_snr);
}

TEST_CASE("inverse fit recovers Gamma") {
  const double gamma = 1.0 / 31.0;
  std::vector<double> xi{0.2, 0.05, 0.0, -0.02, -0.03}, t;
  for (double x : xi) t.push_back(1.0 / (gamma + x));
  const auto fit = fit_inverse(xi, t);
  CHECK(fit.value("Gamma") == doctest::Approx(gamma).epsilon(1e-10));
  CHECK(fit_inverse(std::vector<double>{0.0, 0.1}, std::vector<double>{31.0, 1.0 / (gamma + 0.1)}).value("Gamma") ==
        doctest::Approx(gamma).epsilon(1e-9));
  CHECK_THROWS_AS(fit_inverse(std::vector<double>{0.0}, std::vector<double>{31.0}), ConfigError);
  CHECK_THROWS_AS(fit_inverse(std::vector<double>{0.0, 0.1}, std::vector<double>{31.0, -1.0}), RegimeError);
}

TEST_CASE("linear fit") {
  const auto fit = fit_linear(std::vector<double>{0.006, 0.0, -0.01, -0.02, -0.025},
                              std::vector<double>{-0.00276, 0.0, 0.0046, 0.0092, 0.0115});
  CHECK(fit.value("slope") == doctest::Approx(-0.46).epsilon(1e-12));
  CHECK(fit.value("intercept") == doctest::Approx(0.0).scale(1.0).epsilon(1e-14));
  CHECK_THROWS_AS(fit_linear(std::vector<double>{1, 1, 1}, std::vector<double>{1, 2, 3}), RankError);
}

TEST_CASE("sensitivity model round trip and zero floor") {
  const double a = 7.3e-12 / 15.34, b = 3.2e-15;
  std::vector<double> t{50, 100, 200, 400}, s;
  for (double x : t) s.push_back(std::hypot(a / x, b));
  const auto fit = fit_sensitivity_model(t, s);
  CHECK(fit.value("a") == doctest::Approx(a).epsilon(1e-9));
  CHECK(fit.value("b") == doctest::Approx(b).epsilon(1e-9));

  std::vector<double> s0;
  for (double x : t) s0.push_back(a / x);
  const auto zero = fit_sensitivity_model(t, s0);
  CHECK(zero.value("b") == doctest::Approx(0.0).scale(1e-15).epsilon(1e-3));
  CHECK_THROWS_AS(fit_sensitivity_model(std::vector<double>{100, 100}, std::vector<double>{1e-15, 1e-15}), RankError);
}

TEST_CASE("exponential rate and lock-in amplitude") {
  std::vector<double> t, env;
  for (int i = 0; i < 100; ++i) {
    t.push_back(i * 0.5);
    env.push_back(1e-6 * std::exp(0.016 * i * 0.5));
  }
  CHECK(fit_exponential_rate(t, env).value("rate") == doctest::Approx(0.016).epsilon(1e-10));

  const double dt = 0.01, f = 10.01;
  std::vector<double> y(20000);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = 0.7 * std::cos(2.0 * kPi * f * i * dt + 0.4) + 0.2;
  CHECK(lockin_amplitude(y, dt, f, 50.0) == doctest::Approx(0.7).epsilon(1e-6));
}
