#include "coopamp/model.hpp"

#include "coopamp/errors.hpp"

#include <cmath>
#include <limits>
#include <string>

namespace coopamp {

namespace {

void require(bool ok, const char* path, const char* what) {
  if (!ok) throw ConfigError(what, path);
}

}  // namespace

void SystemParams::validate() const {
  require(std::isfinite(gamma) && gamma != 0.0, "system.gamma", "must be finite and nonzero");
  require(std::isfinite(t2_intrinsic) && t2_intrinsic > 0.0, "system.t2_intrinsic", "must be > 0");
  require(!std::isnan(t1) && t1 >= t2_intrinsic, "system.t1", "must be >= t2_intrinsic");
  require(std::isfinite(b_max) && b_max > 0.0, "system.b_max", "must be > 0");
  require(p0 > 0.0 && p0 <= 1.0, "system.p0", "must lie in (0, 1]");
  require(std::isfinite(b0), "system.b0", "must be finite");
}

double SystemParams::b_max_for_rate(double k, double gamma, double p0) {
  if (!(k > 0.0) || gamma == 0.0 || !(p0 > 0.0))
    throw ConfigError("amplification rate, gamma and p0 must be positive");
  return 2.0 * k / (p0 * std::abs(gamma));
}

double FeedbackConfig::chi1(const SystemParams& p, double pz) const {
  if (pz == 0.0) throw RegimeError("feedback gains undefined at Pz = 0");
  return xi / (p.gamma * pz);
}

double FeedbackConfig::chi2(const SystemParams& p, double pz) const {
  if (pz == 0.0) throw RegimeError("feedback gains undefined at Pz = 0");
  return delta_fb() / (p.gamma * pz);
}

FeedbackConfig FeedbackConfig::from_shift_slope(double xi, double slope_hz) {
  return {xi, kTwoPi * slope_hz};
}

FeedbackConfig FeedbackConfig::for_effective_time(const SystemParams& p, double t_eff, double shift_ratio) {
  if (!(t_eff > 0.0)) throw RegimeError("effective coherence time must be positive");
  return {1.0 / t_eff - p.decoherence_rate(), shift_ratio};
}

FeedbackConfig FeedbackConfig::for_cooperativity(const SystemParams& p, double c, double shift_ratio) {
  return {-c * p.decoherence_rate(), shift_ratio};
}

bool SpinState::finite() const noexcept {
  return std::isfinite(px) && std::isfinite(py) && std::isfinite(pz);
}

double SpinState::norm() const noexcept { return std::sqrt(px * px + py * py + pz * pz); }

double SpinState::transverse() const noexcept { return std::hypot(px, py); }

double DriveField::at(double t) const noexcept {
  if (amplitude == 0.0) return 0.0;
  return amplitude * std::cos(kTwoPi * frequency * t + phase);
}

void DriveField::validate() const {
  require(std::isfinite(amplitude) && amplitude >= 0.0, "drive.amplitude", "must be >= 0");
  require(std::isfinite(frequency) && frequency >= 0.0, "drive.frequency", "must be >= 0");
  require(std::isfinite(phase), "drive.phase", "must be finite");
}

std::string_view to_string(Regime r) noexcept {
  switch (r) {
    case Regime::NegativeFeedback: return "NegativeFeedback";
    case Regime::Free: return "Free";
    case Regime::CoherenceExtension: return "CoherenceExtension";
    case Regime::Threshold: return "Threshold";
    case Regime::Maser: return "Maser";
  }
  return "Unknown";
}

std::array<double, 3> bloch_rhs(const SpinState& s, const SystemParams& p, const FeedbackConfig& fb,
                                const DriveField& drive, double t, BlochMode mode,
                                double extra_field_y) {
  if (!s.finite()) throw InvalidStateError("non-finite spin state");

  const double gamma_rate = p.decoherence_rate();
  const double b_ext = drive.at(t) + extra_field_y;

  if (mode == BlochMode::Linearized) {
    const double omega = p.gamma * p.b0 + fb.delta_fb();
    const double decay = gamma_rate + fb.xi;
    return {omega * s.py - decay * s.px - p.gamma * p.p0 * b_ext,
            -omega * s.px - decay * s.py,
            0.0};
  }

  const double chi1 = fb.chi1(p, p.p0);
  const double chi2 = fb.chi2(p, p.p0);
  const double bx = -(chi1 * s.py + chi2 * s.px);
  const double by = chi1 * s.px - chi2 * s.py + b_ext;
  const double bz = p.b0;
  const double longitudinal = std::isinf(p.t1) ? 0.0 : (p.p0 - s.pz) / p.t1;
  return {p.gamma * (s.py * bz - s.pz * by) - gamma_rate * s.px,
          p.gamma * (s.pz * bx - s.px * bz) - gamma_rate * s.py,
          p.gamma * (s.px * by - s.py * bx) + longitudinal};
}

double effective_coherence_time(const SystemParams& p, const FeedbackConfig& fb) {
  const double rate = p.decoherence_rate() + fb.xi;
  if (!(rate > 0.0))
    throw RegimeError("Gamma + xi = " + std::to_string(rate) +
                      " <= 0: no exponential decay (threshold or maser regime)");
  return 1.0 / rate;
}

double cooperativity(const SystemParams& p, const FeedbackConfig& fb) {
  return -fb.xi * p.t2_intrinsic;
}

Regime classify_regime(double c) {
  if (!std::isfinite(c)) throw RegimeError("cooperativity must be finite");
  if (c < 0.0) return Regime::NegativeFeedback;
  if (c == 0.0) return Regime::Free;
  if (c < 1.0) return Regime::CoherenceExtension;
  if (c == 1.0) return Regime::Threshold;
  return Regime::Maser;
}

double amplification_rate(const SystemParams& p) noexcept {
  return 0.5 * p.b_max * p.p0 * std::abs(p.gamma);
}

double amplification_factor(const SystemParams& p, double t_eff) {
  if (!(t_eff > 0.0)) throw RegimeError("effective coherence time must be positive");
  return amplification_rate(p) * t_eff;
}

double resonance_shift(const FeedbackConfig& fb) noexcept { return fb.delta_fb() / kTwoPi; }

double larmor_frequency(const SystemParams& p) noexcept {
  return std::abs(p.gamma * p.b0) / kTwoPi;
}

double resonance_frequency(const SystemParams& p, const FeedbackConfig& fb) noexcept {
  return std::abs(p.gamma * p.b0 + fb.delta_fb()) / kTwoPi;
}

std::complex<double> steady_state_response(const SystemParams& p, const FeedbackConfig& fb,
                                           const DriveField& drive) {
  const double t_eff = effective_coherence_time(p, fb);
  const double detuning = drive.frequency - resonance_frequency(p, fb);
  const double numerator = 0.5 * std::abs(p.gamma) * p.p0 * drive.amplitude;
  return numerator / std::complex<double>(1.0 / t_eff, kTwoPi * detuning);
}

}  // namespace coopamp
