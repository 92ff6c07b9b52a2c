#pragma once

// Magnetometer readout, feedback closure and input-referred sensitivity.

#include "coopamp/dynamics.hpp"
#include "coopamp/model.hpp"
#include "coopamp/noise.hpp"
#include "coopamp/spectral.hpp"

#include <array>
#include <complex>
#include <cstdint>
#include <span>
#include <vector>

namespace coopamp {

// Flat-response magnetometer. The feedback field is proportional to its
// output cx Bx + cy By, so the ratio cy/cx fixes Delta_fb / xi.
struct MagnetometerModel {
  double cx = 1.0;
  double cy = -kTwoPi * kDefaultShiftSlope;

  void validate() const;
  // Delta_fb / xi realized by this response: -cy / cx.
  double shift_ratio() const;
  static MagnetometerModel for_shift_ratio(double shift_ratio);
};

struct SensitivitySpectrum {
  std::vector<double> frequencies;     // Hz
  std::vector<double> input_referred;  // T / sqrt(Hz)

  // Calibration in force when the spectrum was computed.
  double amplification_rate = 0.0;   // k, 1/s
  double amplification = 0.0;        // eta = k T_eff
  double t_eff = 0.0;                // s
  double a = 0.0;                    // photon_shot / k, T s / sqrt(Hz)
  double b = 0.0;                    // magnetic density, T / sqrt(Hz)

  void validate() const;
};

// b_max * P.
std::array<double, 3> effective_field(const SpinState& s, const SystemParams& p);

// chi1 Px - chi2 Py with the gains evaluated at the state's own Pz.
double feedback_field(const SpinState& s, const FeedbackConfig& fb, const SystemParams& p);

// Complex gain from a linearly polarized field along y to the magnetometer
// x-channel amplitude: k / (1/T_eff + i 2 pi (f - f_res)). |H| = eta on resonance.
std::complex<double> transfer_function(const SystemParams& p, const FeedbackConfig& fb, double f);

// sqrt((photon_shot / |H|)^2 + magnetic^2).
double input_referred_sensitivity(const NoiseModel& noise, std::complex<double> h);

// Closed-form input-referred spectrum on the given frequencies.
SensitivitySpectrum input_referred_spectrum(const NoiseModel& noise, const SystemParams& p,
                                            const FeedbackConfig& fb, std::span<const double> frequencies);

// Welch defaults for a resonance of effective time t_eff: segment of
// 8 / linewidth = 8 pi T_eff seconds, 50% overlap, Hann.
WelchConfig default_welch_config(double t_eff, double sample_rate);

// Output-signal spectrum of `ts` divided by |H(f)|. Throws ResolutionError when
// the record is shorter than 20 / linewidth.
SensitivitySpectrum sensitivity_spectrum_from_simulation(const TimeSeries& ts, const SystemParams& p,
                                                         const FeedbackConfig& fb);
SensitivitySpectrum sensitivity_spectrum_from_simulation(const TimeSeries& ts, const SystemParams& p,
                                                         const FeedbackConfig& fb, const WelchConfig& cfg);
// Same, from an already estimated output spectrum.
SensitivitySpectrum input_referred_from_output(const Spectrum& output, const SystemParams& p,
                                               const FeedbackConfig& fb);

struct ResonanceEstimate {
  double frequency = 0.0;     // Hz, resonance
  double sensitivity = 0.0;   // T/sqrt(Hz), band-regression estimate at resonance
  double raw_bin = 0.0;       // T/sqrt(Hz), nearest single bin divided by eta
  double white_psd = 0.0;     // fitted flat output PSD, T^2/Hz
  double amplified_psd = 0.0; // fitted coefficient of |H|^2, T^2/Hz
  std::size_t bins = 0;
  std::size_t segments = 0;
};

// Resonance sensitivity from an output spectrum. The PSD over +-`half_band`
// linewidths around resonance is regressed on c0 + c1 |H|^2, with |H|^2
// smoothed by the analysis window's spectral kernel, and evaluated at
// resonance: sqrt(c0 / eta^2 + c1).
ResonanceEstimate resonance_sensitivity(const Spectrum& output, const SystemParams& p, const FeedbackConfig& fb,
                                        double half_band = 4.0);

struct NoiseRunOptions {
  std::size_t segments = 32;        // Welch segments to average
  double settle_times = 5.0;        // T_eff discarded before recording
  IntegratorConfig integrator = IntegratorConfig::exact_linear();
};

struct NoiseRun {
  Spectrum output;                  // magnetometer signal ASD
  SensitivitySpectrum input_referred;
  ResonanceEstimate resonance;
  double duration = 0.0;            // simulated seconds
};

// Drive-free noisy simulation analysed on the fly with a streaming Welch
// estimator, so the record is never stored.
NoiseRun simulate_noise_run(const SystemParams& p, const FeedbackConfig& fb, const NoiseModel& noise,
                            std::uint64_t seed, const NoiseRunOptions& opts = {});

}  // namespace coopamp
