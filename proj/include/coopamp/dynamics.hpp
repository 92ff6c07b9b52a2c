#pragma once

// Time-domain integration of the feedback-coupled Bloch equations.

#include "coopamp/model.hpp"
#include "coopamp/noise.hpp"

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <vector>

namespace coopamp {

struct Sample {
  double px = 0.0;
  double py = 0.0;
  double pz = 0.0;
  double signal = 0.0;  // magnetometer x channel, tesla: b_max * Px plus readout noise
};

enum class Channel { Px, Py, Pz, Signal };

// Uniformly sampled simulation output. Immutable once built.
class TimeSeries {
public:
  TimeSeries(double t0, double dt, std::vector<Sample> samples);

  double t0() const noexcept { return t0_; }
  double dt() const noexcept { return dt_; }
  double sample_rate() const noexcept { return 1.0 / dt_; }
  std::size_t size() const noexcept { return samples_.size(); }
  bool empty() const noexcept { return samples_.empty(); }
  double time(std::size_t i) const noexcept { return t0_ + static_cast<double>(i) * dt_; }
  double duration() const noexcept { return static_cast<double>(samples_.size()) * dt_; }

  const Sample& operator[](std::size_t i) const { return samples_[i]; }
  std::span<const Sample> samples() const noexcept { return samples_; }
  std::vector<double> channel(Channel c) const;
  // |P_perp| per sample.
  std::vector<double> transverse() const;

  // CSV with header `t,px,py,pz,signal`; values printed with 17 significant digits.
  void write_csv(std::ostream& os) const;
  static TimeSeries read_csv(std::istream& is);

private:
  double t0_;
  double dt_;
  std::vector<Sample> samples_;
};

// ExactLinear propagates the linearized equations exactly over each step
// (closed-form transition for the drive and for white field noise); it is
// only available in BlochMode::Linearized.
enum class IntegrationMethod { RK4Fixed, RK45Adaptive, ExactLinear };

// Frame in which the state is integrated. Rotating removes the bias-field
// precession (rate gamma B0 + Delta_fb) analytically, so the integrator only
// resolves the slow envelope; output is always reported in the lab frame.
enum class Frame { Rotating, Lab };

struct IntegratorConfig {
  IntegrationMethod method = IntegrationMethod::RK45Adaptive;
  double dt = 1.0 / 300.0;  // RK4Fixed and ExactLinear; shortened to divide the record interval
  double rtol = 1e-9;
  double atol = 1e-12;
  double max_step = 0.1;    // s, RK45Adaptive
  double record_rate = 100.0;  // Hz
  Frame frame = Frame::Rotating;

  // RK4 step actually taken: record interval / ceil(record interval / dt).
  double effective_dt() const;

  // Throws ConfigError for malformed values and IntegrationError when a fixed
  // step cannot resolve precession at `precession_hz` (needs dt < 0.05 / f).
  void validate(double precession_hz) const;

  static IntegratorConfig fixed_step(double dt = 1.0 / 300.0) {
    IntegratorConfig c;
    c.method = IntegrationMethod::RK4Fixed;
    c.dt = dt;
    return c;
  }
  static IntegratorConfig exact_linear(double dt = 0.01) {
    IntegratorConfig c;
    c.method = IntegrationMethod::ExactLinear;
    c.dt = dt;
    return c;
  }
};

struct SimulationSetup {
  SystemParams system;
  FeedbackConfig feedback;
  DriveField drive;
  SpinState initial;
  double duration = 0.0;
  double record_from = 0.0;  // samples before this time are integrated but not emitted
  IntegratorConfig integrator;
  BlochMode mode = BlochMode::Linearized;
};

using SampleSink = std::function<void(double t, const Sample&)>;

// Integrates `setup`, streaming recorded samples in time order to `sink`.
// Magnetic noise is a field along y. Under RK4Fixed it is a zero-order hold,
// one Gaussian draw per step with sigma = rho * sqrt(fs/2), fs = 1/dt; under
// ExactLinear it is continuous white noise integrated exactly over each step.
// Readout noise is added to the signal with sigma = rho * sqrt(record_rate/2).
// Separate generator streams are derived from `seed` for the two, so readout
// noise never perturbs the spin trajectory. Noise requires RK4Fixed or
// ExactLinear.
void run_simulation(const SimulationSetup& setup, const NoiseModel& noise, std::uint64_t seed,
                    const SampleSink& sink);

TimeSeries simulate(const SimulationSetup& setup);
TimeSeries inject_noise(const SimulationSetup& setup, const NoiseModel& noise, std::uint64_t seed);

// Free decay after tipping the equilibrium polarization by `tip_angle` about y.
TimeSeries simulate_decay(const SystemParams& p, const FeedbackConfig& fb, double tip_angle,
                          double duration, const IntegratorConfig& integ = {},
                          BlochMode mode = BlochMode::Linearized);

// Driven response from equilibrium. Requires Gamma + xi > 0 and duration >= 5 T_eff.
TimeSeries simulate_driven(const SystemParams& p, const FeedbackConfig& fb, const DriveField& drive,
                           double duration, const IntegratorConfig& integ = {});

// Self-oscillation above threshold (C > 1) in the full nonlinear model, seeded
// with a small transverse polarization.
TimeSeries simulate_maser(const SystemParams& p, const FeedbackConfig& fb, double seed_transverse,
                          double duration, const IntegratorConfig& integ = {});

}  // namespace coopamp
