#pragma once

// Curve fits used to reduce simulated records to physical quantities:
// decaying sinusoids, amplitude Lorentzians, the inverse coherence-time law,
// straight lines and the two-component sensitivity model.

#include "coopamp/dynamics.hpp"

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace coopamp {

struct FitOptions {
  double tolerance = 1e-8;     // relative parameter step for convergence
  int max_iterations = 200;
  double jacobian_step = 1e-6; // relative central-difference step
};

struct FitResult {
  std::string model;
  std::vector<std::string> names;
  std::vector<double> values;
  std::vector<double> std_errors;
  double residual_rms = 0.0;
  bool converged = false;
  int iterations = 0;
  bool low_snr = false;
  std::string message;

  // Throws std::out_of_range for unknown names.
  double value(std::string_view name) const;
  double std_error(std::string_view name) const;
};

struct DecayFitOptions : FitOptions {
  std::optional<double> fixed_frequency;  // Hz; excludes f from the fit
};

// A exp(-t/tau) sin(2 pi f t + phi) + offset, parameters {A, f, tau, phi, offset}
// in absolute time. Non-convergence is reported through `converged`/`message`
// with the best parameters found so far.
FitResult fit_decaying_sinusoid(std::span<const double> y, double t0, double dt,
                                const DecayFitOptions& opts = {});
FitResult fit_decaying_sinusoid(const TimeSeries& ts, Channel channel = Channel::Signal,
                                const DecayFitOptions& opts = {});

// peak / sqrt(1 + (2 (f - center) / fwhm)^2) + baseline, parameters
// {center, fwhm, peak, baseline}. `fwhm` is the full width between the points
// where the amplitude falls to 1/sqrt(2) of the peak (half power).
FitResult fit_lorentzian(std::span<const double> frequency, std::span<const double> amplitude,
                         const FitOptions& opts = {});

// T_eff = 1 / (Gamma + xi) over (xi, T_eff) points, parameter {Gamma}.
FitResult fit_inverse(std::span<const double> xi, std::span<const double> t_eff,
                      const FitOptions& opts = {});

// Ordinary least squares, parameters {slope, intercept}.
FitResult fit_linear(std::span<const double> x, std::span<const double> y);

// s = sqrt((a / T_eff)^2 + b^2), solved linearly for (a^2, b^2) with both
// clipped at zero; parameters {a, b}.
FitResult fit_sensitivity_model(std::span<const double> t_eff, std::span<const double> sensitivity);

// Exponential rate of a positive envelope from a log-linear regression,
// parameters {rate, log_amplitude}; rate > 0 means growth.
FitResult fit_exponential_rate(std::span<const double> t, std::span<const double> envelope);

// Amplitude of the component of `y` at `frequency` over the last `window`
// seconds of the record, truncated to whole cycles (lock-in detection).
double lockin_amplitude(std::span<const double> y, double dt, double frequency, double window);

}  // namespace coopamp
