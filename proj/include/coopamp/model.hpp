#pragma once

// Closed-form physics of a feedback-coupled (cooperative) noble-gas spin
// ensemble: parameter types, the Bloch right-hand side, coherence time,
// cooperativity, amplification and resonance response.

#include <array>
#include <complex>
#include <numbers>
#include <string_view>

namespace coopamp {

inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

/// 129Xe gyromagnetic ratio magnitude, Hz per tesla.
inline constexpr double kXenonGammaCycHzPerTesla = 11.777e6;
/// Default measured slope of (f - f0) against xi, Hz per s^-1.
inline constexpr double kDefaultShiftSlope = -0.46;
/// Default amplification rate k = (b_max/2) p0 |gamma|, s^-1.
inline constexpr double kDefaultAmplificationRate = 15.34;

struct SystemParams {
  double gamma = kTwoPi * kXenonGammaCycHzPerTesla;  // rad s^-1 T^-1, signed
  double t2_intrinsic = 31.0;                         // s
  double t1 = 1000.0;                                 // s, +inf disables repolarization
  double p0 = 0.18;
  // T, effective field at unity polarization (lambda M0); defaults to the
  // baseline calibration k = kDefaultAmplificationRate.
  double b_max = 2.0 * kDefaultAmplificationRate / (0.18 * kTwoPi * kXenonGammaCycHzPerTesla);
  double b0 = 850e-9;                                 // T, bias along z

  double gamma_cyc() const noexcept { return gamma / kTwoPi; }
  double decoherence_rate() const noexcept { return 1.0 / t2_intrinsic; }

  // Throws ConfigError naming the field when an invariant is violated.
  void validate() const;

  static SystemParams baseline() { return {}; }
  // b_max that realizes amplification rate `k` for the given gamma and p0.
  static double b_max_for_rate(double k, double gamma, double p0);
};

struct FeedbackConfig {
  double xi = 0.0;  // incoherent feedback rate, s^-1
  // Delta_fb / xi, fixed by the magnetometer response.
  double shift_ratio = kTwoPi * kDefaultShiftSlope;

  double delta_fb() const noexcept { return shift_ratio * xi; }

  // Circuit gains (tesla per unit polarization) at longitudinal polarization pz.
  double chi1(const SystemParams& p, double pz) const;
  double chi2(const SystemParams& p, double pz) const;

  // shift_ratio from the slope of (f - f0) versus xi in Hz per s^-1.
  static FeedbackConfig from_shift_slope(double xi, double slope_hz);
  // Feedback that sets 1/T_eff = Gamma + xi to the requested time.
  static FeedbackConfig for_effective_time(const SystemParams& p, double t_eff,
                                           double shift_ratio = kTwoPi * kDefaultShiftSlope);
  static FeedbackConfig for_cooperativity(const SystemParams& p, double c,
                                          double shift_ratio = kTwoPi * kDefaultShiftSlope);
};

struct SpinState {
  double px = 0.0;
  double py = 0.0;
  double pz = 0.0;

  static constexpr double kNormTolerance = 1e-9;

  bool finite() const noexcept;
  double norm() const noexcept;
  double transverse() const noexcept;
  // Px - i Py; evolves as exp[(i(gamma B0 + Delta_fb) - (Gamma + xi)) t] in the
  // linearized model.
  std::complex<double> transverse_complex() const noexcept { return {px, -py}; }

  std::array<double, 3> as_array() const noexcept { return {px, py, pz}; }
  static SpinState from_array(const std::array<double, 3>& a) noexcept { return {a[0], a[1], a[2]}; }
};

// Linearly polarized test field along y: amplitude * cos(2 pi f t + phase).
struct DriveField {
  double amplitude = 0.0;  // T
  double frequency = 0.0;  // Hz
  double phase = 0.0;      // rad

  double at(double t) const noexcept;
  void validate() const;
};

enum class Regime { NegativeFeedback, Free, CoherenceExtension, Threshold, Maser };
std::string_view to_string(Regime r) noexcept;

enum class BlochMode {
  // Small-angle form: Pz pinned to p0, transverse equations only.
  Linearized,
  // dP/dt = gamma P x B with relaxation; feedback gains fixed at Pz = p0.
  FullNonlinear,
};

/// Time derivative of the polarization.
///
/// `extra_field_y` is an additional field along y (tesla) added to the drive,
/// used for injected magnetic noise.
///
/// In FullNonlinear mode the feedback is applied as a co-rotating transverse
/// field: B_y = chi1 Px - chi2 Py and its quadrature partner
/// B_x = -(chi1 Py + chi2 Px), with chi computed at Pz = p0. Both modes then agree
/// to first order in (Px, Py) when Pz = p0.
std::array<double, 3> bloch_rhs(const SpinState& s, const SystemParams& p, const FeedbackConfig& fb,
                                const DriveField& drive, double t, BlochMode mode,
                                double extra_field_y = 0.0);

double effective_coherence_time(const SystemParams& p, const FeedbackConfig& fb);
double cooperativity(const SystemParams& p, const FeedbackConfig& fb);
Regime classify_regime(double c);

// k = (b_max/2) p0 |gamma|, so that eta = k * T_eff.
double amplification_rate(const SystemParams& p) noexcept;
double amplification_factor(const SystemParams& p, double t_eff);

// Delta_fb / 2 pi. Equals f - f0 for a positive precession sense (gamma B0 > 0).
double resonance_shift(const FeedbackConfig& fb) noexcept;
double larmor_frequency(const SystemParams& p) noexcept;
// |gamma B0 + Delta_fb| / 2 pi, valid for either precession sense.
double resonance_frequency(const SystemParams& p, const FeedbackConfig& fb) noexcept;

// Rotating-wave steady state of Px - i Py under the drive:
// (|gamma| p0 B_ac / 2) / (1/T_eff + i 2 pi delta), delta = f_drive - f_res.
std::complex<double> steady_state_response(const SystemParams& p, const FeedbackConfig& fb,
                                           const DriveField& drive);

}  // namespace coopamp
