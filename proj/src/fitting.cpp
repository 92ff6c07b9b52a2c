#include "coopamp/fitting.hpp"

#include "coopamp/errors.hpp"
#include "coopamp/spectral.hpp"
#include "least_squares.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <numbers>
#include <numeric>
#include <stdexcept>

namespace coopamp {

namespace {

constexpr double kPi = std::numbers::pi;

double wrap_phase(double phi) {
  phi = std::remainder(phi, 2.0 * kPi);
  return phi <= -kPi ? phi + 2.0 * kPi : phi;
}

double mean_of(std::span<const double> y) {
  return std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(y.size());
}

FitResult make_result(std::string model, std::vector<std::string> names,
                      const detail::LeastSquaresOutcome& o, std::size_t m) {
  FitResult r;
  r.model = std::move(model);
  r.names = std::move(names);
  r.values = o.params;
  r.std_errors = o.std_errors;
  r.residual_rms = std::sqrt(o.rss / static_cast<double>(m));
  r.converged = o.converged;
  r.iterations = o.iterations;
  r.message = o.message;
  return r;
}

void check_pairs(std::span<const double> x, std::span<const double> y, std::size_t min_points,
                 const char* what) {
  if (x.size() != y.size()) throw ConfigError(std::string(what) + ": abscissa and ordinate lengths differ");
  if (x.size() < min_points)
    throw ConfigError(std::string(what) + ": needs at least " + std::to_string(min_points) + " points");
  for (std::size_t i = 0; i < x.size(); ++i)
    if (!std::isfinite(x[i]) || !std::isfinite(y[i]))
      throw ConfigError(std::string(what) + ": non-finite input at index " + std::to_string(i));
}

// Weighted straight-line fit; returns {slope, intercept}.
std::pair<double, double> weighted_line(std::span<const double> x, std::span<const double> y,
                                        std::span<const double> w) {
  double sw = 0.0, sx = 0.0, sy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sw += w[i];
    sx += w[i] * x[i];
    sy += w[i] * y[i];
  }
  const double xm = sx / sw, ym = sy / sw;
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += w[i] * (x[i] - xm) * (x[i] - xm);
    sxy += w[i] * (x[i] - xm) * (y[i] - ym);
  }
  if (!(sxx > 0.0)) return {0.0, ym};
  const double slope = sxy / sxx;
  return {slope, ym - slope * xm};
}

// Envelope decay time of a sinusoid at f from demodulated chunks.
double initial_decay_time(std::span<const double> y, double dt, double f, double offset) {
  const std::size_t n = y.size();
  const double duration = static_cast<double>(n) * dt;
  // Chunks of whole cycles, about 20 across the record.
  std::size_t chunk = std::max<std::size_t>(4, n / 20);
  if (f > 0.0) {
    const double per_cycle = 1.0 / (f * dt);
    const double cycles = std::max(1.0, std::round(static_cast<double>(chunk) / per_cycle));
    chunk = std::max<std::size_t>(4, static_cast<std::size_t>(std::llround(cycles * per_cycle)));
  }
  std::vector<double> tc, la, w;
  const double omega = 2.0 * kPi * f;
  for (std::size_t start = 0; start + chunk <= n; start += chunk) {
    double amp = 0.0;
    if (f > 0.0) {
      std::complex<double> acc{0.0, 0.0};
      for (std::size_t i = start; i < start + chunk; ++i)
        acc += (y[i] - offset) * std::polar(1.0, -omega * static_cast<double>(i) * dt);
      amp = 2.0 * std::abs(acc) / static_cast<double>(chunk);
    } else {
      for (std::size_t i = start; i < start + chunk; ++i) amp += y[i] - offset;
      amp = std::abs(amp) / static_cast<double>(chunk);
    }
    if (amp > 0.0 && std::isfinite(amp)) {
      tc.push_back((static_cast<double>(start) + 0.5 * static_cast<double>(chunk)) * dt);
      la.push_back(std::log(amp));
      w.push_back(amp * amp);
    }
  }
  const double fallback = 100.0 * duration;
  if (tc.size() < 2) return fallback;
  const auto [slope, intercept] = weighted_line(tc, la, w);
  (void)intercept;
  if (!(slope < 0.0)) return fallback;
  return std::min(-1.0 / slope, fallback);
}

}  // namespace

double FitResult::value(std::string_view name) const {
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return values.at(i);
  throw std::out_of_range("fit has no parameter '" + std::string(name) + "'");
}

double FitResult::std_error(std::string_view name) const {
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return std_errors.at(i);
  throw std::out_of_range("fit has no parameter '" + std::string(name) + "'");
}

FitResult fit_decaying_sinusoid(std::span<const double> y, double t0, double dt, const DecayFitOptions& opts) {
  if (y.size() < 16) throw ConfigError("decaying-sinusoid fit needs at least 16 samples");
  if (!(dt > 0.0) || !std::isfinite(t0)) throw ConfigError("decaying-sinusoid fit needs dt > 0 and finite t0");
  for (double v : y)
    if (!std::isfinite(v)) throw ConfigError("decaying-sinusoid fit: non-finite sample");

  const std::size_t n = y.size();
  const double duration = static_cast<double>(n) * dt;
  const bool fixed_f = opts.fixed_frequency.has_value();
  const double f0 = fixed_f ? *opts.fixed_frequency : peak_frequency(y, 1.0 / dt);
  if (!std::isfinite(f0) || f0 < 0.0) throw ConfigError("decaying-sinusoid fit: invalid frequency");
  const bool dc = fixed_f && f0 == 0.0;

  double offset0 = dc ? 0.0 : mean_of(y);
  const double tau0 = initial_decay_time(y, dt, f0, offset0);

  // Linear amplitude/phase/offset for the initial (f, tau).
  double a0 = 0.0, phi0 = 0.5 * kPi;
  {
    const int k = dc ? 2 : 3;
    Eigen::MatrixXd basis(static_cast<Eigen::Index>(n), k);
    Eigen::VectorXd rhs(static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) {
      const double t = static_cast<double>(i) * dt;
      const double env = std::exp(-t / tau0);
      const auto row = static_cast<Eigen::Index>(i);
      if (dc) {
        basis(row, 0) = env;
        basis(row, 1) = 1.0;
      } else {
        basis(row, 0) = env * std::sin(2.0 * kPi * f0 * t);
        basis(row, 1) = env * std::cos(2.0 * kPi * f0 * t);
        basis(row, 2) = 1.0;
      }
      rhs(row) = y[i];
    }
    const Eigen::VectorXd c = basis.colPivHouseholderQr().solve(rhs);
    if (dc) {
      a0 = c(0);
      offset0 = c(1);
    } else {
      a0 = std::hypot(c(0), c(1));
      phi0 = std::atan2(c(1), c(0));
      offset0 = c(2);
    }
  }

  double ymax = 0.0;
  for (double v : y) ymax = std::max(ymax, std::abs(v));
  const double amp_scale = std::max(std::abs(a0), ymax > 0.0 ? ymax : 1.0);

  // Parameter layout: [A, tau, phi, offset] plus f unless fixed.
  // For a fixed zero frequency phi is pinned at pi/2 (pure exponential).
  std::vector<double> start{a0, tau0};
  std::vector<double> scale{amp_scale, tau0};
  if (!dc) {
    start.push_back(phi0);
    scale.push_back(1.0);
  }
  start.push_back(offset0);
  scale.push_back(amp_scale);
  // Frequency is carried as an offset from the initial estimate so the
  // Jacobian step resolves a fraction of a cycle over the record.
  if (!fixed_f) {
    start.push_back(0.0);
    scale.push_back(1.0 / duration);
  }

  auto unpack = [&](std::span<const double> p, double& a, double& tau, double& phi, double& off, double& f) {
    std::size_t j = 0;
    a = p[j++];
    tau = p[j++];
    phi = dc ? 0.5 * kPi : p[j++];
    off = p[j++];
    f = fixed_f ? f0 : f0 + p[j++];
  };

  detail::LeastSquaresProblem prob;
  prob.residual_count = n;
  prob.scale = scale;
  prob.residuals = [&](std::span<const double> p, std::span<double> r) {
    double a, tau, phi, off, f;
    unpack(p, a, tau, phi, off, f);
    if (!(tau > 0.0)) {
      std::fill(r.begin(), r.end(), std::numeric_limits<double>::quiet_NaN());
      return;
    }
    const double w = 2.0 * kPi * f;
    for (std::size_t i = 0; i < n; ++i) {
      const double t = static_cast<double>(i) * dt;
      r[i] = a * std::exp(-t / tau) * std::sin(w * t + phi) + off - y[i];
    }
  };

  const auto o = detail::levenberg_marquardt(prob, start, opts);

  double a, tau, phi, off, f;
  unpack(o.params, a, tau, phi, off, f);
  // Index of each internal parameter in o.params (or -1 if fixed).
  const long ia = 0, itau = 1, iphi = dc ? -1 : 2, ioff = dc ? 2 : 3;
  const long ifreq = fixed_f ? -1 : static_cast<long>(o.params.size()) - 1;
  auto cov = [&](long i, long j) {
    if (i < 0 || j < 0) return 0.0;
    return o.covariance(i, j);
  };

  // Shift from record-relative to absolute time.
  if (a < 0.0 && !dc) {
    a = -a;
    phi += kPi;
  }
  const double grow = std::exp(t0 / tau);
  const double a_abs = a * grow;
  const double phi_abs = dc ? phi : wrap_phase(phi - 2.0 * kPi * f * t0);
  // Delta-method errors for the transformed parameters.
  const double da_da = grow, da_dtau = -a * grow * t0 / (tau * tau);
  const double var_a = da_da * da_da * cov(ia, ia) + da_dtau * da_dtau * cov(itau, itau) +
                       2.0 * da_da * da_dtau * cov(ia, itau);
  const double k = 2.0 * kPi * t0;
  const double var_phi = cov(iphi, iphi) + k * k * cov(ifreq, ifreq) - 2.0 * k * cov(iphi, ifreq);

  FitResult r;
  r.model = "decaying_sinusoid";
  r.names = {"A", "f", "tau", "phi", "offset"};
  r.values = {a_abs, f, tau, phi_abs, off};
  r.std_errors = {std::sqrt(std::max(0.0, var_a)), std::sqrt(std::max(0.0, cov(ifreq, ifreq))),
                  std::sqrt(std::max(0.0, cov(itau, itau))), std::sqrt(std::max(0.0, var_phi)),
                  std::sqrt(std::max(0.0, cov(ioff, ioff)))};
  r.residual_rms = std::sqrt(o.rss / static_cast<double>(n));
  r.converged = o.converged;
  r.iterations = o.iterations;
  r.message = o.message;
  const double sa = std::sqrt(std::max(0.0, cov(ia, ia)));
  r.low_snr = !(std::abs(a) > 3.0 * sa) || a == 0.0;
  if (r.low_snr) r.message += "; amplitude not significant (low SNR)";
  return r;
}

FitResult fit_decaying_sinusoid(const TimeSeries& ts, Channel channel, const DecayFitOptions& opts) {
  const auto y = ts.channel(channel);
  return fit_decaying_sinusoid(y, ts.t0(), ts.dt(), opts);
}

FitResult fit_lorentzian(std::span<const double> frequency, std::span<const double> amplitude,
                         const FitOptions& opts) {
  check_pairs(frequency, amplitude, 4, "Lorentzian fit");
  const auto [fmin_it, fmax_it] = std::minmax_element(frequency.begin(), frequency.end());
  const double span = *fmax_it - *fmin_it;
  if (!(span > 0.0)) throw ConfigError("Lorentzian fit: degenerate sweep (single frequency)");

  const std::size_t n = frequency.size();
  const auto [amin_it, amax_it] = std::minmax_element(amplitude.begin(), amplitude.end());
  const double amin = *amin_it, amax = *amax_it;
  const double fmid = 0.5 * (*fmin_it + *fmax_it);

  if (amax - amin <= 1e-300 * std::max(1.0, std::abs(amax))) {
    FitResult r;
    r.model = "lorentzian";
    r.names = {"center", "fwhm", "peak", "baseline"};
    r.values = {fmid, span, 0.0, amin};
    r.std_errors = {0.0, 0.0, 0.0, 0.0};
    r.converged = true;
    r.low_snr = true;
    r.message = "flat sweep; no resonance (low SNR)";
    return r;
  }

  const auto imax = static_cast<std::size_t>(amax_it - amplitude.begin());
  const double center0 = frequency[imax];
  const double peak0 = amax - amin;
  // Width from the points above the half-power level.
  double lo = center0, hi = center0;
  const double level = amin + peak0 / std::numbers::sqrt2;
  for (std::size_t i = 0; i < n; ++i)
    if (amplitude[i] >= level) {
      lo = std::min(lo, frequency[i]);
      hi = std::max(hi, frequency[i]);
    }
  double fwhm0 = hi - lo;
  if (!(fwhm0 > 0.0)) fwhm0 = span / static_cast<double>(n);

  detail::LeastSquaresProblem prob;
  prob.residual_count = n;
  prob.scale = {fwhm0, fwhm0, peak0, peak0};
  // Center is carried as an offset from the initial guess for resolution.
  prob.residuals = [&](std::span<const double> p, std::span<double> r) {
    const double c = center0 + p[0];
    const double w = std::abs(p[1]);
    if (!(w > 0.0)) {
      std::fill(r.begin(), r.end(), std::numeric_limits<double>::quiet_NaN());
      return;
    }
    for (std::size_t i = 0; i < n; ++i) {
      const double x = 2.0 * (frequency[i] - c) / w;
      r[i] = p[2] / std::sqrt(1.0 + x * x) + p[3] - amplitude[i];
    }
  };
  const auto o = detail::levenberg_marquardt(prob, {0.0, fwhm0, peak0, amin}, opts);
  auto r = make_result("lorentzian", {"center", "fwhm", "peak", "baseline"}, o, n);
  r.values[0] += center0;
  r.values[1] = std::abs(r.values[1]);
  r.low_snr = !(std::abs(r.values[2]) > 3.0 * r.std_errors[2]) && r.std_errors[2] > 0.0;
  if (r.low_snr) r.message += "; peak not significant (low SNR)";
  return r;
}

FitResult fit_inverse(std::span<const double> xi, std::span<const double> t_eff, const FitOptions& opts) {
  check_pairs(xi, t_eff, 2, "inverse fit");
  for (std::size_t i = 0; i < t_eff.size(); ++i)
    if (!(t_eff[i] > 0.0))
      throw RegimeError("inverse fit: point " + std::to_string(i) +
                        " has no positive coherence time (maser regime)");
  double g0 = 0.0;
  for (std::size_t i = 0; i < xi.size(); ++i) g0 += 1.0 / t_eff[i] - xi[i];
  g0 /= static_cast<double>(xi.size());

  const std::size_t n = xi.size();
  detail::LeastSquaresProblem prob;
  prob.residual_count = n;
  prob.scale = {std::max(std::abs(g0), 1e-12)};
  prob.residuals = [&](std::span<const double> p, std::span<double> r) {
    for (std::size_t i = 0; i < n; ++i) {
      const double rate = p[0] + xi[i];
      r[i] = rate > 0.0 ? 1.0 / rate - t_eff[i] : std::numeric_limits<double>::quiet_NaN();
    }
  };
  // Noisy data can put the mean-of-rates start where some Gamma + xi <= 0.
  double floor = -std::numeric_limits<double>::infinity();
  for (double x : xi) floor = std::max(floor, -x);
  if (g0 <= floor) g0 = floor + 1.0 / *std::max_element(t_eff.begin(), t_eff.end());
  const auto o = detail::levenberg_marquardt(prob, {g0}, opts);
  return make_result("inverse", {"Gamma"}, o, n);
}

FitResult fit_linear(std::span<const double> x, std::span<const double> y) {
  check_pairs(x, y, 2, "linear fit");
  const std::size_t n = x.size();
  const double xm = mean_of(x), ym = mean_of(y);
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += (x[i] - xm) * (x[i] - xm);
    sxy += (x[i] - xm) * (y[i] - ym);
  }
  if (!(sxx > 0.0)) throw RankError("linear fit: all abscissae identical");
  const double slope = sxy / sxx;
  const double intercept = ym - slope * xm;
  double rss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double e = y[i] - (slope * x[i] + intercept);
    rss += e * e;
  }
  const double s2 = n > 2 ? rss / static_cast<double>(n - 2) : 0.0;
  FitResult r;
  r.model = "linear";
  r.names = {"slope", "intercept"};
  r.values = {slope, intercept};
  r.std_errors = {std::sqrt(s2 / sxx), std::sqrt(s2 * (1.0 / static_cast<double>(n) + xm * xm / sxx))};
  r.residual_rms = std::sqrt(rss / static_cast<double>(n));
  r.converged = true;
  r.iterations = 1;
  r.message = "closed form";
  return r;
}

FitResult fit_sensitivity_model(std::span<const double> t_eff, std::span<const double> sensitivity) {
  check_pairs(t_eff, sensitivity, 2, "sensitivity fit");
  const std::size_t n = t_eff.size();
  std::vector<double> x(n), y(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!(t_eff[i] > 0.0)) throw RegimeError("sensitivity fit: coherence times must be positive");
    x[i] = 1.0 / (t_eff[i] * t_eff[i]);
    y[i] = sensitivity[i] * sensitivity[i];
  }
  const double xm = mean_of(x), ym = mean_of(y);
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += (x[i] - xm) * (x[i] - xm);
    sxy += (x[i] - xm) * (y[i] - ym);
  }
  if (!(sxx > 0.0)) throw RankError("sensitivity fit: all coherence times identical");

  double a2 = sxy / sxx;
  double b2 = ym - a2 * xm;
  bool clipped = false;
  if (a2 < 0.0) {
    a2 = 0.0;
    b2 = ym;
    clipped = true;
  }
  if (b2 < 0.0) {
    b2 = 0.0;
    double sx2 = 0.0, sxy0 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      sx2 += x[i] * x[i];
      sxy0 += x[i] * y[i];
    }
    a2 = std::max(0.0, sxy0 / sx2);
    clipped = true;
  }

  double rss_sq = 0.0, rss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double e = y[i] - (a2 * x[i] + b2);
    rss_sq += e * e;
    const double m = std::sqrt(a2 * x[i] + b2);
    rss += (sensitivity[i] - m) * (sensitivity[i] - m);
  }
  const double s2 = n > 2 ? rss_sq / static_cast<double>(n - 2) : 0.0;
  const double var_a2 = s2 / sxx;
  const double var_b2 = s2 * (1.0 / static_cast<double>(n) + xm * xm / sxx);
  const double a = std::sqrt(a2), b = std::sqrt(b2);
  // Delta method away from zero; at the boundary report sqrt of the squared-domain error.
  auto root_error = [](double v, double var) { return v > 0.0 ? std::sqrt(var) / (2.0 * v) : std::sqrt(std::sqrt(var)); };

  FitResult r;
  r.model = "sensitivity";
  r.names = {"a", "b"};
  r.values = {a, b};
  r.std_errors = {root_error(a, var_a2), root_error(b, var_b2)};
  r.residual_rms = std::sqrt(rss / static_cast<double>(n));
  r.converged = true;
  r.iterations = 1;
  r.message = clipped ? "squared-domain least squares, clipped at zero" : "squared-domain least squares";
  return r;
}

FitResult fit_exponential_rate(std::span<const double> t, std::span<const double> envelope) {
  check_pairs(t, envelope, 2, "exponential rate fit");
  std::vector<double> logs(envelope.size());
  for (std::size_t i = 0; i < envelope.size(); ++i) {
    if (!(envelope[i] > 0.0)) throw ConfigError("exponential rate fit: envelope must be positive");
    logs[i] = std::log(envelope[i]);
  }
  auto r = fit_linear(t, logs);
  r.model = "exponential_rate";
  r.names = {"rate", "log_amplitude"};
  return r;
}

double lockin_amplitude(std::span<const double> y, double dt, double frequency, double window) {
  if (!(dt > 0.0) || !(frequency > 0.0) || !(window > 0.0))
    throw ConfigError("lock-in needs positive dt, frequency and window");
  std::size_t m = std::min(y.size(), static_cast<std::size_t>(std::floor(window / dt + 0.5)));
  const double cycles = std::floor(static_cast<double>(m) * dt * frequency);
  if (cycles >= 1.0) m = std::min(m, static_cast<std::size_t>(std::llround(cycles / (frequency * dt))));
  if (m < 2) throw ConfigError("lock-in window holds fewer than two samples");
  const auto tail = y.subspan(y.size() - m);
  const double mean = mean_of(tail);
  std::complex<double> acc{0.0, 0.0};
  const double w = 2.0 * kPi * frequency * dt;
  for (std::size_t i = 0; i < m; ++i) acc += (tail[i] - mean) * std::polar(1.0, -w * static_cast<double>(i));
  return 2.0 * std::abs(acc) / static_cast<double>(m);
}

}  // namespace coopamp
