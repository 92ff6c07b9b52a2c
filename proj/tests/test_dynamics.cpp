#include "coopamp/dynamics.hpp"
#include "coopamp/errors.hpp"
#include "coopamp/fitting.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <sstream>

using namespace coopamp;

namespace {

const std::complex<double> I(0.0, 1.0);

std::complex<double> pc(const Sample& s) { return {s.px, -s.py}; }

// Max |Pc - Pc(0) exp(lambda t)| relative to the initial magnitude.
double closed_form_error(const TimeSeries& ts, const SystemParams& p, const FeedbackConfig& fb) {
  const std::complex<double> lambda(-(p.decoherence_rate() + fb.xi), kTwoPi * resonance_frequency(p, fb));
  const auto c0 = pc(ts[0]);
  double worst = 0.0;
  for (std::size_t i = 0; i < ts.size(); ++i)
    worst = std::max(worst, std::abs(pc(ts[i]) - c0 * std::exp(lambda * (ts.time(i) - ts.t0()))));
  return worst / std::abs(c0);
}

double mean_square(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return s / static_cast<double>(v.size());
}

}  // namespace

TEST_CASE("linearized decay matches the closed-form exponential") {
  SystemParams p;
  for (double xi : {0.1, 0.0, -0.025}) {
    const FeedbackConfig fb{xi};
    SUBCASE("rk45 rotating") { CHECK(closed_form_error(simulate_decay(p, fb, 0.1, 300.0), p, fb) < 1e-6); }
    SUBCASE("rk45 lab") {
      IntegratorConfig ic;
      ic.frame = Frame::Lab;
      CHECK(closed_form_error(simulate_decay(p, fb, 0.1, 60.0, ic), p, fb) < 1e-6);
    }
    SUBCASE("exact") {
      CHECK(closed_form_error(simulate_decay(p, fb, 0.1, 300.0, IntegratorConfig::exact_linear()), p, fb) < 1e-9);
    }
  }
}

TEST_CASE("tipped initial state") {
  SystemParams p;
  const auto ts = simulate_decay(p, FeedbackConfig{}, 0.1, 10.0);
  CHECK(ts[0].px == doctest::Approx(p.p0 * std::sin(0.1)));
  CHECK(ts[0].py == doctest::Approx(0.0));
  CHECK(ts[0].signal == doctest::Approx(p.b_max * ts[0].px));
  CHECK(ts.sample_rate() == doctest::Approx(100.0));
}

TEST_CASE("zero tip angle gives no transverse signal") {
  SystemParams p;
  const auto ts = simulate_decay(p, FeedbackConfig{0.01}, 0.0, 20.0);
  for (const auto& s : ts.samples()) CHECK(s.signal == 0.0);
}

TEST_CASE("RK4 converges at fourth order") {
  SystemParams p;
  const FeedbackConfig fb{0.01};
  double prev = 0.0;
  for (double dt : {1.0 / 300.0, 1.0 / 600.0, 1.0 / 1200.0}) {
    IntegratorConfig ic = IntegratorConfig::fixed_step(dt);
    ic.frame = Frame::Lab;
    const double err = closed_form_error(simulate_decay(p, fb, 0.1, 20.0, ic), p, fb);
    if (prev > 0.0) CHECK(prev / err == doctest::Approx(16.0).epsilon(3.0 / 16.0));
    prev = err;
  }
}

TEST_CASE("RK4 step must resolve the precession") {
  SystemParams p;
  p.b0 = 3e-6;  // 35 Hz
  IntegratorConfig ic = IntegratorConfig::fixed_step(1.0 / 300.0);
  ic.frame = Frame::Lab;
  CHECK_THROWS_AS(simulate_decay(p, FeedbackConfig{}, 0.1, 1.0, ic), IntegrationError);
}

TEST_CASE("exact integrator requires the linearized model") {
  SystemParams p;
  CHECK_THROWS_AS(simulate_decay(p, FeedbackConfig{}, 0.1, 1.0, IntegratorConfig::exact_linear(),
                                 BlochMode::FullNonlinear),
                  ConfigError);
}

TEST_CASE("driven response agrees between integrators and with the steady state") {
  SystemParams p;
  const auto fb = FeedbackConfig::for_effective_time(p, 20.0);
  const DriveField drive{1e-11, resonance_frequency(p, fb) + 0.003, 0.4};
  const auto a = simulate_driven(p, fb, drive, 200.0);
  const auto b = simulate_driven(p, fb, drive, 200.0, IntegratorConfig::exact_linear());
  double worst = 0.0, scale = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    worst = std::max(worst, std::abs(a[i].px - b[i].px));
    scale = std::max(scale, std::abs(a[i].px));
  }
  CHECK(worst / scale < 1e-6);

  const double want = std::abs(steady_state_response(p, fb, drive));
  double tail = 0.0;
  for (std::size_t i = a.size() - 1000; i < a.size(); ++i) tail = std::max(tail, std::abs(pc(a[i])));
  CHECK(tail == doctest::Approx(want).epsilon(2e-3));
}

TEST_CASE("full model saturates above threshold") {
  SystemParams p;
  const auto fb = FeedbackConfig::for_cooperativity(p, 1.5);
  const auto ts = simulate_maser(p, fb, 1e-6, 1500.0);
  double peak = 0.0, norm = 0.0;
  for (const auto& s : ts.samples()) {
    peak = std::max(peak, std::hypot(s.px, s.py));
    norm = std::max(norm, std::sqrt(s.px * s.px + s.py * s.py + s.pz * s.pz));
  }
  CHECK(peak > 0.05 * p.p0);
  CHECK(norm <= p.p0 * (1.0 + 1e-6));
  CHECK_THROWS_AS(simulate_maser(p, FeedbackConfig{}, 1e-6, 10.0), RegimeError);
}

TEST_CASE("noise injection is reproducible and keeps streams separate") {
  SystemParams p;
  SimulationSetup setup;
  setup.system = p;
  setup.feedback = FeedbackConfig::for_effective_time(p, 10.0);
  setup.initial = {0.0, 0.0, p.p0};
  setup.duration = 50.0;
  setup.integrator = IntegratorConfig::exact_linear();

  const NoiseModel both{1e-12, 1e-14, 0.0};
  const auto a = inject_noise(setup, both, 42);
  const auto b = inject_noise(setup, both, 42);
  const auto c = inject_noise(setup, both, 43);
  bool identical = true, differs = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    identical = identical && a[i].signal == b[i].signal && a[i].px == b[i].px;
    differs = differs || a[i].signal != c[i].signal;
  }
  CHECK(identical);
  CHECK(differs);

  // Readout noise never reaches the spins.
  const auto field_only = inject_noise(setup, {0.0, 1e-14, 0.0}, 42);
  bool same_spins = true;
  for (std::size_t i = 0; i < a.size(); ++i) same_spins = same_spins && a[i].px == field_only[i].px;
  CHECK(same_spins);

  setup.integrator = IntegratorConfig{};
  CHECK_THROWS_AS(inject_noise(setup, both, 1), ConfigError);
}

TEST_CASE("readout noise has the configured density") {
  SystemParams p;
  SimulationSetup setup;
  setup.system = p;
  setup.initial = {0.0, 0.0, p.p0};
  setup.duration = 2000.0;
  setup.integrator = IntegratorConfig::exact_linear();
  const double rho = 1e-12;
  const auto ts = inject_noise(setup, {rho, 0.0, 0.0}, 5);
  // White noise of one-sided density rho sampled at fs has variance rho^2 fs / 2.
  CHECK(mean_square(ts.channel(Channel::Signal)) == doctest::Approx(rho * rho * 50.0).epsilon(0.02));
}

TEST_CASE("field noise drives the stationary variance k^2 rho^2 / (2 g)") {
  SystemParams p;
  const FeedbackConfig fb{0.5 - p.decoherence_rate()};
  const double g = 0.5, rho = 1e-12, k = amplification_rate(p);
  const double want = k * k * rho * rho / (2.0 * g);
  SimulationSetup setup;
  setup.system = p;
  setup.feedback = fb;
  setup.initial = {0.0, 0.0, p.p0};
  setup.record_from = 20.0;
  setup.duration = 4020.0;

  SUBCASE("exact") {
    setup.integrator = IntegratorConfig::exact_linear();
    CHECK(mean_square(inject_noise(setup, {0.0, rho, 0.0}, 9).channel(Channel::Signal)) ==
          doctest::Approx(want).epsilon(0.1));
  }
  SUBCASE("rk4") {
    setup.integrator = IntegratorConfig::fixed_step();
    CHECK(mean_square(inject_noise(setup, {0.0, rho, 0.0}, 9).channel(Channel::Signal)) ==
          doctest::Approx(want).epsilon(0.1));
  }
}

TEST_CASE("time series CSV round trip") {
  SystemParams p;
  const auto ts = simulate_decay(p, FeedbackConfig{}, 0.2, 5.0);
  std::stringstream ss;
  ts.write_csv(ss);
  const auto back = TimeSeries::read_csv(ss);
  REQUIRE(back.size() == ts.size());
  CHECK(back.dt() == doctest::Approx(ts.dt()).epsilon(1e-12));
  for (std::size_t i = 0; i < ts.size(); ++i) {
    CHECK(back[i].px == ts[i].px);
    CHECK(back[i].signal == ts[i].signal);
  }
  const auto tr = ts.transverse();
  CHECK(tr[3] == doctest::Approx(std::hypot(ts[3].px, ts[3].py)));

  std::stringstream bad("t,x\n0,1\n");
  CHECK_THROWS_AS(TimeSeries::read_csv(bad), ConfigError);
}

TEST_CASE("integrator configuration errors") {
  IntegratorConfig ic;
  ic.record_rate = 0.0;
  CHECK_THROWS_AS(ic.validate(10.0), ConfigError);
  IntegratorConfig rk4 = IntegratorConfig::fixed_step(-1.0);
  CHECK_THROWS_AS(rk4.validate(10.0), ConfigError);
  CHECK(IntegratorConfig::fixed_step(1.0 / 300.0).effective_dt() == doctest::Approx(1.0 / 300.0));
  CHECK(IntegratorConfig::fixed_step(0.004).effective_dt() == doctest::Approx(1.0 / 300.0));
}

TEST_CASE("equilibrium polarization is a fixed point") {
  SystemParams p;
  for (BlochMode mode : {BlochMode::Linearized, BlochMode::FullNonlinear}) {
    SimulationSetup setup;
    setup.system = p;
    setup.feedback = FeedbackConfig::for_cooperativity(p, 0.8);
    setup.initial = SpinState{0.0, 0.0, p.p0};
    setup.duration = 100.0;
    setup.mode = mode;
    const auto ts = simulate(setup);
    for (const auto& s : ts.samples()) {
      REQUIRE(s.px == 0.0);
      REQUIRE(s.py == 0.0);
      REQUIRE(s.pz == doctest::Approx(p.p0).epsilon(1e-12));
    }
  }
}

TEST_CASE("drive detuned by one half-width halves the response power") {
  SystemParams p;
  const double t_eff = 20.0;
  const auto fb = FeedbackConfig::for_effective_time(p, t_eff);
  const double f_res = resonance_frequency(p, fb);
  auto amplitude = [&](double f) {
    const auto ts = simulate_driven(p, fb, DriveField{1e-11, f, 0.0}, 10.0 * t_eff, IntegratorConfig::exact_linear());
    const auto y = ts.channel(Channel::Signal);
    return lockin_amplitude(y, ts.dt(), f, 2.0 * t_eff);
  };
  const double ratio = amplitude(f_res + 1.0 / (kTwoPi * t_eff)) / amplitude(f_res);
  CHECK(ratio == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(0.02));
}

TEST_CASE("maser stays on the polarization sphere and drains Pz") {
  SystemParams p;
  p.t1 = std::numeric_limits<double>::infinity();
  const auto fb = FeedbackConfig::for_cooperativity(p, 3.0);
  const auto ts = simulate_maser(p, fb, 1e-6, 600.0);
  const auto perp = ts.transverse();
  const std::size_t rise = static_cast<std::size_t>(std::max_element(perp.begin(), perp.end()) - perp.begin());
  CHECK(perp[rise] > 0.5 * p.p0);
  CHECK(perp[rise] <= p.p0);
  double norm = 0.0;
  for (const auto& s : ts.samples()) norm = std::max(norm, std::sqrt(s.px * s.px + s.py * s.py + s.pz * s.pz));
  CHECK(norm <= p.p0 + 1e-9);
  bool monotone = true;
  for (std::size_t i = 1; i <= rise; ++i) monotone = monotone && ts[i].pz <= ts[i - 1].pz + 1e-12;
  CHECK(monotone);
}

TEST_CASE("maser grows at Gamma (C - 1) before saturating") {
  SystemParams p;
  const auto fb = FeedbackConfig::for_cooperativity(p, 1.5);
  const auto ts = simulate_maser(p, fb, 1e-6, 200.0);
  const auto perp = ts.transverse();
  std::vector<double> t, env;
  for (std::size_t i = 0; i < perp.size() && perp[i] <= 0.01 * p.p0; ++i) {
    t.push_back(ts.time(i));
    env.push_back(perp[i]);
  }
  REQUIRE(t.size() > 100);
  const auto fit = fit_exponential_rate(t, env);
  CHECK(fit.values[0] == doctest::Approx(0.5 * p.decoherence_rate()).epsilon(0.05));
}
