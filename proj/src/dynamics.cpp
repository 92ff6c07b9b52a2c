#include "coopamp/dynamics.hpp"

#include "coopamp/errors.hpp"
#include "random.hpp"

#include <boost/numeric/odeint.hpp>

#include <cmath>
#include <complex>
#include <iomanip>
#include <istream>
#include <limits>
#include <ostream>
#include <random>
#include <sstream>
#include <string>

namespace coopamp {

namespace odeint = boost::numeric::odeint;
using State = std::array<double, 3>;
using cplx = std::complex<double>;

// ---------------------------------------------------------------------------
// TimeSeries

TimeSeries::TimeSeries(double t0, double dt, std::vector<Sample> samples)
    : t0_(t0), dt_(dt), samples_(std::move(samples)) {
  if (!(dt_ > 0.0) || !std::isfinite(dt_)) throw ConfigError("time series dt must be > 0");
  if (!std::isfinite(t0_)) throw ConfigError("time series t0 must be finite");
  for (const auto& s : samples_) {
    if (!std::isfinite(s.px) || !std::isfinite(s.py) || !std::isfinite(s.pz) ||
        !std::isfinite(s.signal))
      throw InvalidStateError("time series contains non-finite samples");
  }
}

std::vector<double> TimeSeries::channel(Channel c) const {
  std::vector<double> out;
  out.reserve(samples_.size());
  for (const auto& s : samples_) {
    switch (c) {
      case Channel::Px: out.push_back(s.px); break;
      case Channel::Py: out.push_back(s.py); break;
      case Channel::Pz: out.push_back(s.pz); break;
      case Channel::Signal: out.push_back(s.signal); break;
    }
  }
  return out;
}

std::vector<double> TimeSeries::transverse() const {
  std::vector<double> out;
  out.reserve(samples_.size());
  for (const auto& s : samples_) out.push_back(std::hypot(s.px, s.py));
  return out;
}

void TimeSeries::write_csv(std::ostream& os) const {
  os << "t,px,py,pz,signal\n";
  os << std::setprecision(17);
  for (std::size_t i = 0; i < samples_.size(); ++i) {
    const auto& s = samples_[i];
    os << time(i) << ',' << s.px << ',' << s.py << ',' << s.pz << ',' << s.signal << '\n';
  }
}

TimeSeries TimeSeries::read_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw ConfigError("empty time series CSV");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "t,px,py,pz,signal")
    throw ConfigError("time series CSV header must be `t,px,py,pz,signal`, got `" + line + "`");

  std::vector<double> times;
  std::vector<Sample> samples;
  std::size_t row = 1;
  while (std::getline(is, line)) {
    ++row;
    if (line.empty() || line == "\r") continue;
    std::istringstream ls(line);
    std::array<double, 5> v{};
    for (std::size_t k = 0; k < v.size(); ++k) {
      std::string field;
      if (!std::getline(ls, field, ',')) throw ConfigError("row " + std::to_string(row) + ": expected 5 fields");
      try {
        v[k] = std::stod(field);
      } catch (const std::exception&) {
        throw ConfigError("row " + std::to_string(row) + ": bad number `" + field + "`");
      }
    }
    times.push_back(v[0]);
    samples.push_back({v[1], v[2], v[3], v[4]});
  }
  if (times.size() < 2) throw ConfigError("time series CSV needs at least two rows");
  const double dt = (times.back() - times.front()) / static_cast<double>(times.size() - 1);
  for (std::size_t i = 1; i < times.size(); ++i) {
    const double step = times[i] - times[i - 1];
    if (std::abs(step - dt) > 1e-6 * dt)
      throw ConfigError("time series CSV is not uniformly sampled near row " + std::to_string(i + 2));
  }
  return TimeSeries(times.front(), dt, std::move(samples));
}

// ---------------------------------------------------------------------------
// IntegratorConfig

double IntegratorConfig::effective_dt() const {
  const double interval = 1.0 / record_rate;
  const double steps = std::ceil(interval / dt - 1e-9);
  return interval / std::max(1.0, steps);
}

void IntegratorConfig::validate(double precession_hz) const {
  if (!(record_rate > 0.0) || !std::isfinite(record_rate))
    throw ConfigError("must be > 0", "integrator.record_rate");
  if (method == IntegrationMethod::ExactLinear) {
    if (!(dt > 0.0) || !std::isfinite(dt)) throw ConfigError("must be > 0", "integrator.dt");
  } else if (method == IntegrationMethod::RK4Fixed) {
    if (!(dt > 0.0) || !std::isfinite(dt)) throw ConfigError("must be > 0", "integrator.dt");
    const double h = effective_dt();
    if (precession_hz > 0.0 && !(h < 0.05 / precession_hz)) {
      std::ostringstream msg;
      msg << "fixed step " << h << " s does not resolve precession at " << precession_hz
          << " Hz (need dt < " << 0.05 / precession_hz << " s, >= 20 steps per cycle)";
      throw IntegrationError(msg.str());
    }
  } else {
    if (!(rtol > 0.0)) throw ConfigError("must be > 0", "integrator.rtol");
    if (!(atol > 0.0)) throw ConfigError("must be > 0", "integrator.atol");
    if (!(max_step > 0.0)) throw ConfigError("must be > 0", "integrator.max_step");
  }
}

// ---------------------------------------------------------------------------
// Integration

namespace {

// Right-hand side in either the lab frame or the frame co-rotating with the
// linearized precession. In the rotating frame the transverse state is
// Q = conj(e) (Px - i Py) with e = exp(i Omega t).
class FrameRhs {
public:
  FrameRhs(const SimulationSetup& setup)
      : setup_(setup),
        rotating_(setup.integrator.frame == Frame::Rotating),
        omega_(setup.system.gamma * setup.system.b0 + setup.feedback.delta_fb()) {}

  cplx rotation(double t) const {
    if (!rotating_) return {1.0, 0.0};
    return std::polar(1.0, omega_ * t);
  }

  SpinState to_lab(const State& q, cplx e) const {
    if (!rotating_) return SpinState::from_array(q);
    const cplx pc = e * cplx(q[0], -q[1]);
    return {pc.real(), -pc.imag(), q[2]};
  }

  State from_lab(const SpinState& s, cplx e) const {
    if (!rotating_) return s.as_array();
    const cplx qc = std::conj(e) * cplx(s.px, -s.py);
    return {qc.real(), -qc.imag(), s.pz};
  }

  void eval(const State& q, State& dq, double t, cplx e, double noise_field) const {
    const SpinState lab = to_lab(q, e);
    const auto d = bloch_rhs(lab, setup_.system, setup_.feedback, setup_.drive, t, setup_.mode,
                             noise_field);
    if (!rotating_) {
      dq = d;
      return;
    }
    const cplx dc(d[0], -d[1]);
    const cplx pc(lab.px, -lab.py);
    const cplx dqc = std::conj(e) * (dc - cplx(0.0, omega_) * pc);
    dq = {dqc.real(), -dqc.imag(), d[2]};
  }

private:
  const SimulationSetup& setup_;
  bool rotating_;
  double omega_;
};

void check_finite(const State& q, double t) {
  if (!std::isfinite(q[0]) || !std::isfinite(q[1]) || !std::isfinite(q[2])) {
    std::ostringstream msg;
    msg << "integration diverged: non-finite state at t = " << t << " s";
    throw IntegrationError(msg.str());
  }
}

struct Recorder {
  const SimulationSetup& setup;
  const SampleSink& sink;
  std::normal_distribution<double> normal{0.0, 1.0};
  std::mt19937_64 readout_rng;
  double readout_sigma;

  void emit(double t, const SpinState& lab) {
    if (t < setup.record_from - 1e-12) return;
    Sample s{lab.px, lab.py, lab.pz, setup.system.b_max * lab.px};
    if (readout_sigma > 0.0) s.signal += readout_sigma * normal(readout_rng);
    sink(t, s);
  }
};

void integrate_fixed(const SimulationSetup& setup, const NoiseModel& noise, std::uint64_t seed,
                     Recorder& rec) {
  const FrameRhs rhs(setup);
  const double interval = 1.0 / setup.integrator.record_rate;
  const double h = setup.integrator.effective_dt();
  const auto steps_per_record = static_cast<std::size_t>(std::llround(interval / h));
  const auto n_records = static_cast<std::size_t>(std::floor(setup.duration / interval + 1e-9));

  std::mt19937_64 field_rng(detail::derive_seed(seed, 1));
  std::normal_distribution<double> normal(0.0, 1.0);
  const double field_sigma = noise.magnetic * std::sqrt(0.5 / h);

  cplx e0 = rhs.rotation(0.0);
  State q = rhs.from_lab(setup.initial, e0);
  rec.emit(0.0, setup.initial);

  State k1, k2, k3, k4, tmp;
  std::size_t step = 0;
  for (std::size_t r = 1; r <= n_records; ++r) {
    for (std::size_t j = 0; j < steps_per_record; ++j, ++step) {
      const double t = static_cast<double>(step) * h;
      const double t_half = t + 0.5 * h;
      const double t_next = static_cast<double>(step + 1) * h;
      const cplx e_half = rhs.rotation(t_half);
      const cplx e1 = rhs.rotation(t_next);
      const double b_noise = field_sigma > 0.0 ? field_sigma * normal(field_rng) : 0.0;

      rhs.eval(q, k1, t, e0, b_noise);
      for (int i = 0; i < 3; ++i) tmp[i] = q[i] + 0.5 * h * k1[i];
      rhs.eval(tmp, k2, t_half, e_half, b_noise);
      for (int i = 0; i < 3; ++i) tmp[i] = q[i] + 0.5 * h * k2[i];
      rhs.eval(tmp, k3, t_half, e_half, b_noise);
      for (int i = 0; i < 3; ++i) tmp[i] = q[i] + h * k3[i];
      rhs.eval(tmp, k4, t_next, e1, b_noise);
      for (int i = 0; i < 3; ++i) q[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
      check_finite(q, t_next);
      e0 = e1;
    }
    const double t = static_cast<double>(r) * interval;
    rec.emit(t, rhs.to_lab(q, e0));
  }
}

// Integral over [0, h] of exp(z u) du.
cplx phi1(cplx z, double h) {
  const cplx zh = z * h;
  if (std::abs(zh) < 1e-5) return h * (1.0 + zh / 2.0 + zh * zh / 6.0);
  return (std::exp(zh) - 1.0) / z;
}

// Exact transition of Pc = Px - i Py under dPc/dt = lambda Pc - gamma p0 B_y(t),
// lambda = i Omega - g, over steps of length h. The drive is integrated in
// closed form; field noise is white with one-sided density rho, so each
// step's contribution is a complex Gaussian with known 2x2 covariance.
void integrate_exact(const SimulationSetup& setup, const NoiseModel& noise, std::uint64_t seed,
                     Recorder& rec) {
  if (setup.mode != BlochMode::Linearized)
    throw ConfigError("the ExactLinear integrator needs BlochMode::Linearized", "integrator.method");
  const auto& p = setup.system;
  const double interval = 1.0 / setup.integrator.record_rate;
  const double h = setup.integrator.effective_dt();
  const auto steps_per_record = static_cast<std::size_t>(std::llround(interval / h));
  const auto n_records = static_cast<std::size_t>(std::floor(setup.duration / interval + 1e-9));

  const double omega = p.gamma * p.b0 + setup.feedback.delta_fb();
  const double g = p.decoherence_rate() + setup.feedback.xi;
  const cplx lambda(-g, omega);
  const cplx step = std::exp(lambda * h);
  const double coupling = -p.gamma * p.p0;

  const auto& drive = setup.drive;
  const double w = kTwoPi * drive.frequency;
  const bool driven = drive.amplitude != 0.0;
  // exp(lambda (h - s)) exp(+-i w s) integrated over the step.
  const cplx k_plus = step * phi1(cplx(0.0, w) - lambda, h);
  const cplx k_minus = step * phi1(cplx(0.0, -w) - lambda, h);

  // Noise covariance of (Re, Im) of coupling * integral exp(lambda u) xi(u) du,
  // with two-sided field density S = rho^2 / 2.
  double l11 = 0.0, l21 = 0.0, l22 = 0.0;
  if (noise.magnetic > 0.0) {
    const double s2 = coupling * coupling * 0.5 * noise.magnetic * noise.magnetic;
    const double i0 = g == 0.0 ? h : -std::expm1(-2.0 * g * h) / (2.0 * g);
    const cplx i2 = phi1(2.0 * lambda, h);
    const double vr = 0.5 * s2 * (i0 + i2.real());
    const double vi = 0.5 * s2 * (i0 - i2.real());
    const double cv = 0.5 * s2 * i2.imag();
    l11 = std::sqrt(std::max(vr, 0.0));
    l21 = l11 > 0.0 ? cv / l11 : 0.0;
    l22 = std::sqrt(std::max(vi - l21 * l21, 0.0));
  }
  std::mt19937_64 field_rng(detail::derive_seed(seed, 1));
  std::normal_distribution<double> normal(0.0, 1.0);

  cplx pc(setup.initial.px, -setup.initial.py);
  const double pz = setup.initial.pz;
  rec.emit(0.0, setup.initial);

  std::size_t n = 0;
  for (std::size_t r = 1; r <= n_records; ++r) {
    for (std::size_t j = 0; j < steps_per_record; ++j, ++n) {
      cplx next = step * pc;
      if (driven) {
        const double t = static_cast<double>(n) * h;
        const cplx e = std::polar(1.0, w * t + drive.phase);
        next += coupling * 0.5 * drive.amplitude * (e * k_plus + std::conj(e) * k_minus);
      }
      if (l11 > 0.0 || l22 > 0.0) {
        const double z1 = normal(field_rng);
        const double z2 = normal(field_rng);
        next += cplx(l11 * z1, l21 * z1 + l22 * z2);
      }
      pc = next;
    }
    if (!std::isfinite(pc.real()) || !std::isfinite(pc.imag())) {
      std::ostringstream msg;
      msg << "integration diverged: non-finite state at t = " << static_cast<double>(r) * interval << " s";
      throw IntegrationError(msg.str());
    }
    rec.emit(static_cast<double>(r) * interval, {pc.real(), -pc.imag(), pz});
  }
}

void integrate_adaptive(const SimulationSetup& setup, Recorder& rec) {
  const FrameRhs rhs(setup);
  const double interval = 1.0 / setup.integrator.record_rate;
  const auto n_records = static_cast<std::size_t>(std::floor(setup.duration / interval + 1e-9));
  std::vector<double> times(n_records + 1);
  for (std::size_t i = 0; i <= n_records; ++i) times[i] = static_cast<double>(i) * interval;

  auto system = [&](const State& q, State& dq, double t) {
    rhs.eval(q, dq, t, rhs.rotation(t), 0.0);
  };
  auto observer = [&](const State& q, double t) {
    check_finite(q, t);
    rec.emit(t, rhs.to_lab(q, rhs.rotation(t)));
  };

  const auto& ic = setup.integrator;
  auto stepper = odeint::make_dense_output(ic.atol, ic.rtol, ic.max_step,
                                           odeint::runge_kutta_dopri5<State>());
  State q = rhs.from_lab(setup.initial, rhs.rotation(0.0));
  const double first_step = std::min(ic.max_step, interval);
  try {
    odeint::integrate_times(stepper, system, q, times.begin(), times.end(), first_step, observer,
                            odeint::max_step_checker(1'000'000));
  } catch (const odeint::step_adjustment_error& ex) {
    throw IntegrationError(std::string("adaptive step control failed: ") + ex.what());
  } catch (const odeint::no_progress_error& ex) {
    throw IntegrationError(std::string("adaptive integrator made no progress: ") + ex.what());
  } catch (const InvalidStateError& ex) {
    throw IntegrationError(std::string("integration diverged: ") + ex.what());
  }
}

}  // namespace

void run_simulation(const SimulationSetup& setup, const NoiseModel& noise, std::uint64_t seed,
                    const SampleSink& sink) {
  setup.system.validate();
  setup.drive.validate();
  noise.validate();
  if (!setup.initial.finite()) throw InvalidStateError("initial spin state is not finite");
  if (!(setup.duration > 0.0) || !std::isfinite(setup.duration))
    throw ConfigError("simulation duration must be > 0");
  const double precession = std::max(resonance_frequency(setup.system, setup.feedback),
                                     setup.drive.frequency);
  setup.integrator.validate(precession);
  const auto method = setup.integrator.method;
  if (!noise.silent() && method == IntegrationMethod::RK45Adaptive)
    throw ConfigError("noise injection requires the RK4Fixed or ExactLinear integrator", "integrator.method");
  if (!noise.silent() && method == IntegrationMethod::RK4Fixed &&
      setup.integrator.effective_dt() > 0.1 / std::max(precession, 1e-300))
    throw ConfigError("noise discretization rate must be >= 10x the precession frequency",
                      "integrator.dt");

  Recorder rec{setup, sink, {}, std::mt19937_64(detail::derive_seed(seed, 2)),
               noise.photon_shot * std::sqrt(0.5 * setup.integrator.record_rate)};
  switch (method) {
    case IntegrationMethod::RK4Fixed: integrate_fixed(setup, noise, seed, rec); break;
    case IntegrationMethod::ExactLinear: integrate_exact(setup, noise, seed, rec); break;
    case IntegrationMethod::RK45Adaptive: integrate_adaptive(setup, rec); break;
  }
}

namespace {

TimeSeries collect(const SimulationSetup& setup, const NoiseModel& noise, std::uint64_t seed) {
  std::vector<Sample> samples;
  const double interval = 1.0 / setup.integrator.record_rate;
  samples.reserve(static_cast<std::size_t>((setup.duration - setup.record_from) / interval) + 2);
  double t0 = std::numeric_limits<double>::quiet_NaN();
  run_simulation(setup, noise, seed, [&](double t, const Sample& s) {
    if (samples.empty()) t0 = t;
    samples.push_back(s);
  });
  if (samples.empty()) throw ConfigError("record_from is beyond the simulation duration");
  return TimeSeries(t0, interval, std::move(samples));
}

}  // namespace

TimeSeries simulate(const SimulationSetup& setup) { return collect(setup, NoiseModel{}, 0); }

TimeSeries inject_noise(const SimulationSetup& setup, const NoiseModel& noise, std::uint64_t seed) {
  return collect(setup, noise, seed);
}

TimeSeries simulate_decay(const SystemParams& p, const FeedbackConfig& fb, double tip_angle,
                          double duration, const IntegratorConfig& integ, BlochMode mode) {
  if (!(tip_angle >= 0.0 && tip_angle < 0.5 * std::numbers::pi))
    throw ConfigError("tip angle must lie in [0, pi/2)", "decay.tip_angle");
  SimulationSetup setup;
  setup.system = p;
  setup.feedback = fb;
  setup.initial = {p.p0 * std::sin(tip_angle), 0.0, p.p0 * std::cos(tip_angle)};
  setup.duration = duration;
  setup.integrator = integ;
  setup.mode = mode;
  return simulate(setup);
}

TimeSeries simulate_driven(const SystemParams& p, const FeedbackConfig& fb, const DriveField& drive,
                           double duration, const IntegratorConfig& integ) {
  const double t_eff = effective_coherence_time(p, fb);
  if (duration < 5.0 * t_eff * (1.0 - 1e-12))
    throw ConfigError("driven simulation needs duration >= 5 T_eff to reach steady state",
                      "driven.duration");
  SimulationSetup setup;
  setup.system = p;
  setup.feedback = fb;
  setup.drive = drive;
  setup.initial = {0.0, 0.0, p.p0};
  setup.duration = duration;
  setup.integrator = integ;
  setup.mode = BlochMode::Linearized;
  return simulate(setup);
}

TimeSeries simulate_maser(const SystemParams& p, const FeedbackConfig& fb, double seed_transverse,
                          double duration, const IntegratorConfig& integ) {
  const double c = cooperativity(p, fb);
  if (!(c > 1.0))
    throw RegimeError("maser simulation needs cooperativity C > 1, got C = " + std::to_string(c));
  if (!(seed_transverse > 0.0 && seed_transverse < 0.1 * p.p0))
    throw ConfigError("seed transverse polarization must lie in (0, 0.1 p0)", "maser.seed_transverse");
  SimulationSetup setup;
  setup.system = p;
  setup.feedback = fb;
  setup.initial = {seed_transverse, 0.0, std::sqrt(p.p0 * p.p0 - seed_transverse * seed_transverse)};
  setup.duration = duration;
  setup.integrator = integ;
  setup.mode = BlochMode::FullNonlinear;
  return simulate(setup);
}

}  // namespace coopamp
