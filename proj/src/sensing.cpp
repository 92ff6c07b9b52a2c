#include "coopamp/sensing.hpp"

#include "coopamp/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace coopamp {

namespace {

constexpr double kPi = std::numbers::pi;

// Spectral power kernel of the analysis window at an offset of nu bins.
double window_kernel(Window w, double nu) {
  if (w == Window::Rectangular) {
    if (nu == 0.0) return 1.0;
    const double s = std::sin(kPi * nu) / (kPi * nu);
    return s * s;
  }
  const double d = 1.0 - nu * nu;
  if (std::abs(d) < 1e-9) return 0.25;
  const double s = nu == 0.0 ? 1.0 : std::sin(kPi * nu) / (kPi * nu);
  const double v = s / d;
  return v * v;
}

double linewidth(double t_eff) { return 1.0 / (kPi * t_eff); }

SensitivitySpectrum with_calibration(SensitivitySpectrum s, const NoiseModel* noise, const SystemParams& p,
                                     const FeedbackConfig& fb) {
  s.amplification_rate = amplification_rate(p);
  s.t_eff = effective_coherence_time(p, fb);
  s.amplification = s.amplification_rate * s.t_eff;
  if (noise) {
    s.a = noise->photon_shot / s.amplification_rate;
    s.b = noise->magnetic;
  }
  return s;
}

}  // namespace

void NoiseModel::validate() const {
  if (!(std::isfinite(photon_shot) && photon_shot >= 0.0)) throw ConfigError("must be >= 0", "noise.photon_shot");
  if (!(std::isfinite(magnetic) && magnetic >= 0.0)) throw ConfigError("must be >= 0", "noise.magnetic");
  if (!(std::isfinite(spin_projection) && spin_projection >= 0.0))
    throw ConfigError("must be >= 0", "noise.spin_projection");
}

void MagnetometerModel::validate() const {
  if (!std::isfinite(cx) || !std::isfinite(cy)) throw ConfigError("response coefficients must be finite", "magnetometer");
  if (cx == 0.0 && cy == 0.0) throw ConfigError("cx and cy cannot both be zero", "magnetometer");
}

double MagnetometerModel::shift_ratio() const {
  validate();
  if (cx == 0.0) throw RegimeError("shift ratio undefined for a magnetometer with cx = 0");
  return -cy / cx;
}

MagnetometerModel MagnetometerModel::for_shift_ratio(double shift_ratio) { return {1.0, -shift_ratio}; }

void SensitivitySpectrum::validate() const {
  if (frequencies.size() != input_referred.size())
    throw ConfigError("sensitivity spectrum: frequency and density lengths differ");
  for (double v : input_referred)
    if (!(std::isfinite(v) && v > 0.0)) throw ConfigError("sensitivity spectrum: densities must be finite and > 0");
}

std::array<double, 3> effective_field(const SpinState& s, const SystemParams& p) {
  return {p.b_max * s.px, p.b_max * s.py, p.b_max * s.pz};
}

double feedback_field(const SpinState& s, const FeedbackConfig& fb, const SystemParams& p) {
  if (s.px == 0.0 && s.py == 0.0) return 0.0;
  return fb.chi1(p, s.pz) * s.px - fb.chi2(p, s.pz) * s.py;
}

std::complex<double> transfer_function(const SystemParams& p, const FeedbackConfig& fb, double f) {
  const double t_eff = effective_coherence_time(p, fb);
  const double detuning = f - resonance_frequency(p, fb);
  return amplification_rate(p) / std::complex<double>(1.0 / t_eff, 2.0 * kPi * detuning);
}

double input_referred_sensitivity(const NoiseModel& noise, std::complex<double> h) {
  const double gain = std::abs(h);
  if (!(gain > 0.0)) throw RegimeError("input referral needs |H| > 0");
  return std::hypot(noise.photon_shot / gain, noise.magnetic);
}

SensitivitySpectrum input_referred_spectrum(const NoiseModel& noise, const SystemParams& p,
                                            const FeedbackConfig& fb, std::span<const double> frequencies) {
  SensitivitySpectrum s;
  s.frequencies.assign(frequencies.begin(), frequencies.end());
  s.input_referred.reserve(frequencies.size());
  for (double f : frequencies) s.input_referred.push_back(input_referred_sensitivity(noise, transfer_function(p, fb, f)));
  return with_calibration(std::move(s), &noise, p, fb);
}

WelchConfig default_welch_config(double t_eff, double sample_rate) {
  if (!(t_eff > 0.0)) throw RegimeError("effective coherence time must be positive");
  auto cfg = WelchConfig::for_duration(8.0 / linewidth(t_eff), sample_rate, Window::Hann);
  cfg.segment_length = fft_friendly_length(cfg.segment_length);
  return cfg;
}

SensitivitySpectrum input_referred_from_output(const Spectrum& output, const SystemParams& p,
                                               const FeedbackConfig& fb) {
  SensitivitySpectrum s;
  s.frequencies = output.frequency;
  s.input_referred.resize(output.density.size());
  for (std::size_t i = 0; i < output.density.size(); ++i)
    s.input_referred[i] = output.density[i] / std::abs(transfer_function(p, fb, output.frequency[i]));
  return with_calibration(std::move(s), nullptr, p, fb);
}

SensitivitySpectrum sensitivity_spectrum_from_simulation(const TimeSeries& ts, const SystemParams& p,
                                                         const FeedbackConfig& fb) {
  return sensitivity_spectrum_from_simulation(ts, p, fb,
                                              default_welch_config(effective_coherence_time(p, fb), ts.sample_rate()));
}

SensitivitySpectrum sensitivity_spectrum_from_simulation(const TimeSeries& ts, const SystemParams& p,
                                                         const FeedbackConfig& fb, const WelchConfig& cfg) {
  const double t_eff = effective_coherence_time(p, fb);
  const double needed = 20.0 / linewidth(t_eff);
  if (ts.duration() < needed)
    throw ResolutionError("record of " + std::to_string(ts.duration()) + " s is shorter than 20 linewidths^-1 (" +
                          std::to_string(needed) + " s)");
  return input_referred_from_output(welch_psd(ts, Channel::Signal, cfg), p, fb);
}

ResonanceEstimate resonance_sensitivity(const Spectrum& output, const SystemParams& p, const FeedbackConfig& fb,
                                        double half_band) {
  const double t_eff = effective_coherence_time(p, fb);
  const double f_res = resonance_frequency(p, fb);
  const double eta = amplification_factor(p, t_eff);
  const double half = half_band * linewidth(t_eff);

  std::vector<std::size_t> bins;
  for (std::size_t k = 1; k < output.frequency.size(); ++k)
    if (std::abs(output.frequency[k] - f_res) <= half) bins.push_back(k);
  if (bins.size() < 4)
    throw ResolutionError("fewer than 4 spectral bins inside +-" + std::to_string(half_band) +
                          " linewidths of resonance; use longer segments");

  // Window-smoothed |H|^2 at each bin.
  constexpr double kStep = 1.0 / 16.0;
  constexpr double kReach = 8.0;
  std::vector<double> x(bins.size()), y(bins.size());
  for (std::size_t i = 0; i < bins.size(); ++i) {
    const double f = output.frequency[bins[i]];
    double num = 0.0, den = 0.0;
    for (double nu = -kReach; nu <= kReach + 1e-12; nu += kStep) {
      const double w = window_kernel(output.window, nu);
      num += w * std::norm(transfer_function(p, fb, f - nu * output.resolution));
      den += w;
    }
    x[i] = num / den;
    y[i] = output.density[bins[i]] * output.density[bins[i]];
  }

  // Weighted fit of y = c0 + c1 x; the second pass weights by the inverse
  // square of the first-pass prediction, since a PSD estimate's spread scales
  // with its mean.
  auto solve = [&](const std::vector<double>& w, double& c0, double& c1) {
    double sw = 0, sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      sw += w[i];
      sx += w[i] * x[i];
      sy += w[i] * y[i];
      sxx += w[i] * x[i] * x[i];
      sxy += w[i] * x[i] * y[i];
    }
    const double det = sw * sxx - sx * sx;
    if (!(det > 0.0)) throw RankError("resonance band regression is degenerate");
    c1 = (sw * sxy - sx * sy) / det;
    c0 = (sy - c1 * sx) / sw;
    if (c0 < 0.0) {
      c0 = 0.0;
      c1 = sxy / sxx;
    }
    if (c1 < 0.0) {
      c1 = 0.0;
      c0 = sy / sw;
    }
  };
  std::vector<double> w(x.size(), 1.0);
  double c0 = 0.0, c1 = 0.0;
  solve(w, c0, c1);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double pred = c0 + c1 * x[i];
    w[i] = pred > 0.0 ? 1.0 / (pred * pred) : 1.0;
  }
  solve(w, c0, c1);

  ResonanceEstimate r;
  r.frequency = f_res;
  r.white_psd = c0;
  r.amplified_psd = c1;
  r.sensitivity = std::sqrt(c0 / (eta * eta) + c1);
  r.raw_bin = output.density[output.nearest_bin(f_res)] / eta;
  r.bins = bins.size();
  r.segments = output.segments;
  return r;
}

NoiseRun simulate_noise_run(const SystemParams& p, const FeedbackConfig& fb, const NoiseModel& noise,
                            std::uint64_t seed, const NoiseRunOptions& opts) {
  if (opts.segments < 2) throw ConfigError("at least 2 Welch segments are needed", "sensitivity.segments");
  if (!(opts.settle_times >= 0.0)) throw ConfigError("must be >= 0", "sensitivity.settle_times");
  const double t_eff = effective_coherence_time(p, fb);
  const double rate = opts.integrator.record_rate;
  const WelchConfig cfg = default_welch_config(t_eff, rate);
  const std::size_t hop = cfg.segment_length - cfg.segment_length / 2;
  const std::size_t needed = cfg.segment_length + (opts.segments - 1) * hop;

  SimulationSetup setup;
  setup.system = p;
  setup.feedback = fb;
  setup.initial = {0.0, 0.0, p.p0};
  setup.record_from = opts.settle_times * t_eff;
  setup.duration = setup.record_from + (static_cast<double>(needed) + 2.0) / rate;
  setup.integrator = opts.integrator;
  setup.mode = BlochMode::Linearized;

  WelchAccumulator acc(rate, cfg);
  std::size_t pushed = 0;
  run_simulation(setup, noise, seed, [&](double, const Sample& s) {
    if (pushed < needed) {
      acc.push(s.signal);
      ++pushed;
    }
  });

  NoiseRun run;
  run.output = acc.finish();
  run.input_referred = input_referred_from_output(run.output, p, fb);
  run.input_referred.a = noise.photon_shot / amplification_rate(p);
  run.input_referred.b = noise.magnetic;
  run.resonance = resonance_sensitivity(run.output, p, fb);
  run.duration = setup.duration;
  return run;
}

}  // namespace coopamp
