#include "coopamp/experiments.hpp"

#include "coopamp/errors.hpp"
#include "random.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <cmath>
#include <cstdio>
#include <exception>
#include <numbers>
#include <numeric>
#include <stdexcept>
#include <thread>

namespace coopamp {

namespace {

constexpr double kPi = std::numbers::pi;

template <class F>
auto parallel_map(std::size_t n, unsigned workers, F&& fn) -> std::vector<decltype(fn(std::size_t{}))> {
  using T = decltype(fn(std::size_t{}));
  std::vector<T> out(n);
  if (workers == 0) workers = std::max(1u, std::thread::hardware_concurrency());
  workers = static_cast<unsigned>(std::min<std::size_t>(workers, std::max<std::size_t>(n, 1)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) out[i] = fn(i);
    return out;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::atomic<bool> failed{false};
  auto work = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < n;) {
      try {
        out[i] = fn(i);
      } catch (...) {
        if (!failed.exchange(true)) failure = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (unsigned w = 0; w < workers; ++w) pool.emplace_back(work);
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
  return out;
}

double linewidth(double t_eff) { return 1.0 / (kPi * t_eff); }

RunResult start(const char* name, const ExperimentConfig& cfg) {
  RunResult r;
  r.experiment = name;
  r.config_hash = cfg.hash_hex();
  r.seed = cfg.seed.value_or(0);
  return r;
}

FeedbackConfig feedback_for(const ExperimentConfig& cfg, SweepAxis axis, double value) {
  const double ratio = cfg.feedback.shift_ratio;
  switch (axis) {
    case SweepAxis::Xi: return {value, ratio};
    case SweepAxis::TEff: return FeedbackConfig::for_effective_time(cfg.system, value, ratio);
    case SweepAxis::Cooperativity: return FeedbackConfig::for_cooperativity(cfg.system, value, ratio);
    default: throw ConfigError("axis does not set the feedback", "sweep.axis");
  }
}

SweepSpec grid_for(const ExperimentConfig& cfg, std::initializer_list<SweepAxis> allowed, SweepSpec fallback) {
  if (cfg.sweep.axis == SweepAxis::None) return fallback;
  if (std::find(allowed.begin(), allowed.end(), cfg.sweep.axis) == allowed.end())
    throw ConfigError("axis `" + std::string(to_string(cfg.sweep.axis)) + "` is not valid for this experiment",
                      "sweep.axis");
  return cfg.sweep;
}

SweepRecord base_row(std::size_t i, double value, const ExperimentConfig& cfg, const FeedbackConfig& fb) {
  SweepRecord r;
  r.index = i;
  r.value = value;
  r.seed = row_seed(cfg.seed.value_or(0), value);
  r.xi = fb.xi;
  r.cooperativity = cooperativity(cfg.system, fb);
  r.regime = classify_regime(r.cooperativity);
  return r;
}

// Runs `fill` on the row; errors mark the row failed instead of aborting the sweep.
template <class F>
SweepRecord guarded(SweepRecord row, F&& fill) {
  try {
    fill(row);
  } catch (const std::exception& e) {
    row.failed = true;
    row.note = e.what();
  }
  return row;
}

DecayFitOptions decay_options(const ExperimentConfig& cfg) {
  DecayFitOptions o;
  static_cast<FitOptions&>(o) = cfg.fit;
  return o;
}

double mean_of(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size()); }

// Lock-in amplitude of the steady driven response at drive frequency f.
double driven_amplitude(const ExperimentConfig& cfg, const SystemParams& p, const FeedbackConfig& fb, double f) {
  const double t_eff = effective_coherence_time(p, fb);
  const DriveField drive{cfg.drive.amplitude, f, cfg.drive.phase};
  const auto ts = simulate_driven(p, fb, drive, cfg.driven.duration_teff * t_eff, cfg.integrator);
  const auto y = ts.channel(Channel::Signal);
  return lockin_amplitude(y, ts.dt(), f, cfg.driven.lockin_teff * t_eff);
}

void fill_driven(SweepRecord& row, const ExperimentConfig& cfg, const SystemParams& p, const FeedbackConfig& fb,
                 double f) {
  const double t_eff = effective_coherence_time(p, fb);
  row.t_eff_expected = t_eff;
  row.frequency = f;
  row.amplitude = driven_amplitude(cfg, p, fb, f);
  if (cfg.drive.amplitude > 0.0) row.eta = *row.amplitude / cfg.drive.amplitude;
  row.eta_expected = std::abs(transfer_function(p, fb, f));
}

std::vector<double> linear_grid(double center, double span, std::size_t points) {
  std::vector<double> g(points);
  for (std::size_t i = 0; i < points; ++i)
    g[i] = center - 0.5 * span + span * static_cast<double>(i) / static_cast<double>(points - 1);
  return g;
}

}  // namespace

bool RunResult::numerical_failure() const {
  if (!errors.empty()) return true;
  for (const auto& t : tables)
    for (const auto& r : t.rows)
      if (r.failed) return true;
  return false;
}

const SweepTable& RunResult::table(std::string_view name) const {
  for (const auto& t : tables)
    if (t.name == name) return t;
  throw std::out_of_range("no table named " + std::string(name));
}

double RunResult::scalar(std::string_view name) const {
  for (const auto& [k, v] : scalars)
    if (k == name) return v;
  throw std::out_of_range("no scalar named " + std::string(name));
}

const FitResult& RunResult::fit(std::string_view name) const {
  for (const auto& [k, v] : fits)
    if (k == name) return v;
  throw std::out_of_range("no fit named " + std::string(name));
}

std::uint64_t row_seed(std::uint64_t seed, double value) noexcept {
  return detail::derive_seed(seed, std::bit_cast<std::uint64_t>(value == 0.0 ? 0.0 : value));
}

std::vector<double> default_feedback_grid() {
  return {0.217742, 0.15, 0.1, 0.06, 0.03, 0.006, 0.0, -0.01, -0.02, -0.025, -0.028, -0.030423};
}

std::vector<double> default_regime_grid() {
  return {-6.75, -3.0, -1.0, 0.0, 0.5, 0.8, 0.9, 0.96, 0.98, 1.0, 1.02, 1.04, 1.5};
}

std::vector<double> default_field_grid() {
  return {80e-9, 150e-9, 300e-9, 500e-9, 850e-9, 900e-9, 1500e-9, 2200e-9, 3000e-9};
}

std::vector<double> default_sensitivity_grid() { return {50.0, 100.0, 200.0, 400.0}; }

RunResult run_decay(const ExperimentConfig& cfg, const RunOptions&) {
  RunResult res = start("decay", cfg);
  const auto& p = cfg.system;
  const auto& fb = cfg.feedback;
  SweepTable table{"decay", SweepAxis::Xi, {}};
  SweepRecord row = base_row(0, fb.xi, cfg, fb);
  double duration = cfg.decay.duration.value_or(cfg.decay.min_duration);
  if (!cfg.decay.duration) {
    const double t_eff = effective_coherence_time(p, fb);
    duration = std::max(cfg.decay.duration_teff * t_eff, cfg.decay.min_duration);
  }
  res.series = simulate_decay(p, fb, cfg.decay.tip_angle, duration, cfg.integrator);
  row = guarded(row, [&](SweepRecord& r) {
    const auto fit = fit_decaying_sinusoid(*res.series, Channel::Signal, decay_options(cfg));
    r.t_eff = fit.value("tau");
    r.frequency = fit.value("f");
    r.converged = fit.converged;
    if (fit.low_snr) r.note = "low SNR";
    if (p.decoherence_rate() + fb.xi > 0.0) r.t_eff_expected = effective_coherence_time(p, fb);
    res.fits.emplace_back("decay", fit);
  });
  table.rows.push_back(row);
  res.tables.push_back(std::move(table));
  res.scalars.emplace_back("duration", duration);
  res.scalars.emplace_back("resonance_frequency", resonance_frequency(p, fb));
  return res;
}

RunResult run_feedback_sweep(const ExperimentConfig& cfg, const RunOptions& opts) {
  RunResult res = start("feedback-sweep", cfg);
  const auto grid = grid_for(cfg, {SweepAxis::Xi, SweepAxis::TEff, SweepAxis::Cooperativity},
                             {SweepAxis::Xi, default_feedback_grid()});
  const auto& p = cfg.system;

  SweepTable table{"feedback_sweep", grid.axis, {}};
  table.rows = parallel_map(grid.values.size(), opts.workers, [&](std::size_t i) {
    const double v = grid.values[i];
    const FeedbackConfig fb = feedback_for(cfg, grid.axis, v);
    return guarded(base_row(i, v, cfg, fb), [&](SweepRecord& r) {
      if (!(p.decoherence_rate() + fb.xi > 0.0)) {
        r.note = "no coherence time at C >= 1";
        return;
      }
      const double t_eff = effective_coherence_time(p, fb);
      r.t_eff_expected = t_eff;
      const double duration = cfg.decay.duration.value_or(std::max(cfg.decay.duration_teff * t_eff, cfg.decay.min_duration));
      const auto ts = simulate_decay(p, fb, cfg.decay.tip_angle, duration, cfg.integrator);
      const auto fit = fit_decaying_sinusoid(ts, Channel::Signal, decay_options(cfg));
      r.t_eff = fit.value("tau");
      r.frequency = fit.value("f");
      r.converged = fit.converged;
      if (!fit.converged) r.note = fit.message;
      else if (fit.low_snr) r.note = "low SNR";
    });
  });

  std::vector<double> xs, ts;
  for (const auto& r : table.rows)
    if (r.t_eff && r.converged.value_or(false)) {
      xs.push_back(r.xi);
      ts.push_back(*r.t_eff);
    }
  try {
    const auto fit = fit_inverse(xs, ts, cfg.fit);
    res.fits.emplace_back("inverse", fit);
    res.scalars.emplace_back("gamma_fit", fit.value("Gamma"));
    res.scalars.emplace_back("t2_fit", 1.0 / fit.value("Gamma"));
  } catch (const std::exception& e) {
    res.errors.push_back(std::string("inverse fit: ") + e.what());
  }
  res.scalars.emplace_back("gamma_true", p.decoherence_rate());
  res.tables.push_back(std::move(table));
  return res;
}

RunResult run_regime_map(const ExperimentConfig& cfg, const RunOptions& opts) {
  RunResult res = start("regime-map", cfg);
  const auto grid = grid_for(cfg, {SweepAxis::Xi, SweepAxis::Cooperativity, SweepAxis::TEff},
                             {SweepAxis::Cooperativity, default_regime_grid()});
  const auto& p = cfg.system;
  const auto& rm = cfg.regime_map;

  SweepTable table{"regime_map", grid.axis, {}};
  table.rows = parallel_map(grid.values.size(), opts.workers, [&](std::size_t i) {
    const double v = grid.values[i];
    const FeedbackConfig fb = feedback_for(cfg, grid.axis, v);
    return guarded(base_row(i, v, cfg, fb), [&](SweepRecord& r) {
      const double g = p.decoherence_rate() + fb.xi;
      r.rate_expected = -g;
      const double duration = g == 0.0 ? rm.max_duration : std::min(rm.growth_lifetimes / std::abs(g), rm.max_duration);
      std::vector<double> t, env;
      if (r.cooperativity <= 1.0) {
        const auto ts = simulate_decay(p, fb, cfg.decay.tip_angle, duration, cfg.integrator, BlochMode::Linearized);
        env = ts.transverse();
        for (std::size_t k = 0; k < ts.size(); ++k) t.push_back(ts.time(k));
      } else {
        const auto ts = simulate_maser(p, fb, rm.maser_seed, duration, cfg.integrator);
        const auto full = ts.transverse();
        // Early growth only: stop once the transverse polarization reaches 1% of p0.
        for (std::size_t k = 0; k < ts.size() && full[k] <= 0.01 * p.p0; ++k) {
          t.push_back(ts.time(k));
          env.push_back(full[k]);
        }
        if (t.size() < ts.size()) r.note = "growth window truncated at 1% of p0";
      }
      const auto fit = fit_exponential_rate(t, env);
      r.rate = fit.value("rate");
      r.converged = true;
      if (*r.rate < 0.0 && r.cooperativity < 1.0) r.t_eff = -1.0 / *r.rate;
      if (g > 0.0) r.t_eff_expected = 1.0 / g;
    });
  });
  res.tables.push_back(std::move(table));
  return res;
}

RunResult run_frequency_sweep(const ExperimentConfig& cfg, const RunOptions& opts) {
  RunResult res = start("freq-sweep", cfg);
  const auto& p = cfg.system;
  const auto& fs = cfg.frequency_sweep;
  const FeedbackConfig fb = cfg.feedback;
  const double t_eff = effective_coherence_time(p, fb);
  const double f_res = resonance_frequency(p, fb);
  const double f0 = larmor_frequency(p);

  SweepSpec grid = grid_for(cfg, {SweepAxis::Frequency},
                            {SweepAxis::Frequency, linear_grid(f_res, fs.span_linewidths * linewidth(t_eff), fs.points)});

  SweepTable table{"frequency_sweep", SweepAxis::Frequency, {}};
  table.rows = parallel_map(grid.values.size(), opts.workers, [&](std::size_t i) {
    const double f = grid.values[i];
    return guarded(base_row(i, f, cfg, fb), [&](SweepRecord& r) { fill_driven(r, cfg, p, fb, f); });
  });

  // Amplitude-normalized response when a drive is present, raw amplitude otherwise.
  auto lorentzian_of = [&](const std::vector<SweepRecord>& rows) {
    std::vector<double> f, y;
    for (const auto& r : rows)
      if (!r.failed && r.amplitude) {
        f.push_back(*r.frequency);
        y.push_back(r.eta ? *r.eta : *r.amplitude);
      }
    return fit_lorentzian(f, y, cfg.fit);
  };

  try {
    const auto fit = lorentzian_of(table.rows);
    res.fits.emplace_back("lorentzian", fit);
    res.scalars.emplace_back("peak", fit.value("peak"));
    res.scalars.emplace_back("fwhm", fit.value("fwhm"));
    res.scalars.emplace_back("center", fit.value("center"));
  } catch (const std::exception& e) {
    res.errors.push_back(std::string("Lorentzian fit: ") + e.what());
  }
  res.scalars.emplace_back("t_eff", t_eff);
  res.scalars.emplace_back("peak_expected", amplification_factor(p, t_eff));
  res.scalars.emplace_back("fwhm_expected", linewidth(t_eff));
  res.scalars.emplace_back("resonance_frequency", f_res);
  res.scalars.emplace_back("larmor_frequency", f0);
  res.tables.push_back(std::move(table));

  // Shift sub-sweeps: one Lorentzian per xi, then the slope of center - f0 against xi.
  std::vector<double> shift_xi;
  for (double xi : fs.shift_xi)
    if (p.decoherence_rate() + xi > 0.0) shift_xi.push_back(xi);
  if (shift_xi.size() >= 2 && cfg.sweep.axis == SweepAxis::None) {
    struct Point {
      std::size_t group;
      double f;
    };
    std::vector<Point> points;
    for (std::size_t gi = 0; gi < shift_xi.size(); ++gi) {
      const FeedbackConfig sfb{shift_xi[gi], fb.shift_ratio};
      const double te = effective_coherence_time(p, sfb);
      for (double f : linear_grid(resonance_frequency(p, sfb), fs.shift_span_linewidths * linewidth(te), fs.shift_points))
        points.push_back({gi, f});
    }
    SweepTable sub{"shift_sweep", SweepAxis::Frequency, {}};
    sub.rows = parallel_map(points.size(), opts.workers, [&](std::size_t i) {
      const FeedbackConfig sfb{shift_xi[points[i].group], fb.shift_ratio};
      return guarded(base_row(i, points[i].f, cfg, sfb),
                     [&](SweepRecord& r) { fill_driven(r, cfg, p, sfb, points[i].f); });
    });

    SweepTable centers{"shift_fits", SweepAxis::Xi, {}};
    std::vector<double> xs, shifts;
    for (std::size_t gi = 0; gi < shift_xi.size(); ++gi) {
      const FeedbackConfig sfb{shift_xi[gi], fb.shift_ratio};
      SweepRecord row = base_row(gi, shift_xi[gi], cfg, sfb);
      row = guarded(row, [&](SweepRecord& r) {
        std::vector<SweepRecord> group;
        for (std::size_t i = 0; i < points.size(); ++i)
          if (points[i].group == gi) group.push_back(sub.rows[i]);
        const auto fit = lorentzian_of(group);
        r.center = fit.value("center");
        r.fwhm = fit.value("fwhm");
        r.eta = fit.value("peak");
        r.shift = *r.center - f0;
        r.converged = fit.converged;
        r.t_eff_expected = effective_coherence_time(p, sfb);
        if (fit.converged) {
          xs.push_back(shift_xi[gi]);
          shifts.push_back(*r.shift);
        }
      });
      centers.rows.push_back(row);
    }
    try {
      const auto fit = fit_linear(xs, shifts);
      res.fits.emplace_back("shift_slope", fit);
      res.scalars.emplace_back("shift_slope", fit.value("slope"));
    } catch (const std::exception& e) {
      res.errors.push_back(std::string("shift slope fit: ") + e.what());
    }
    res.scalars.emplace_back("shift_slope_configured", fb.shift_ratio / kTwoPi);
    res.tables.push_back(std::move(sub));
    res.tables.push_back(std::move(centers));
  }
  return res;
}

RunResult run_field_sweep(const ExperimentConfig& cfg, const RunOptions& opts) {
  RunResult res = start("field-sweep", cfg);
  const auto grid = grid_for(cfg, {SweepAxis::B0}, {SweepAxis::B0, default_field_grid()});
  const FeedbackConfig fb = cfg.feedback;
  effective_coherence_time(cfg.system, fb);

  SweepTable table{"field_sweep", SweepAxis::B0, {}};
  table.rows = parallel_map(grid.values.size(), opts.workers, [&](std::size_t i) {
    SystemParams p = cfg.system;
    p.b0 = grid.values[i];
    return guarded(base_row(i, grid.values[i], cfg, fb), [&](SweepRecord& r) {
      p.validate();
      fill_driven(r, cfg, p, fb, cfg.drive.frequency.value_or(resonance_frequency(p, fb)));
      r.center = r.frequency;
      r.frequency = larmor_frequency(p);
    });
  });

  std::vector<double> etas;
  for (const auto& r : table.rows)
    if (!r.failed && r.eta) etas.push_back(*r.eta);
  if (etas.size() >= 2) {
    const double m = mean_of(etas);
    double ss = 0.0;
    for (double e : etas) ss += (e - m) * (e - m);
    const double sd = std::sqrt(ss / static_cast<double>(etas.size() - 1));
    res.scalars.emplace_back("eta_mean", m);
    res.scalars.emplace_back("eta_relative_std", sd / m);
  } else {
    res.errors.push_back("field sweep: fewer than two rows with an amplification factor");
  }
  res.scalars.emplace_back("eta_expected", amplification_factor(cfg.system, effective_coherence_time(cfg.system, fb)));
  res.tables.push_back(std::move(table));
  return res;
}

RunResult run_sensitivity(const ExperimentConfig& cfg, const RunOptions& opts) {
  RunResult res = start("sensitivity", cfg);
  if (cfg.noise.silent()) throw ConfigError("the sensitivity experiment needs nonzero noise", "noise");
  const std::uint64_t seed = cfg.seed_or_default();
  const auto grid = grid_for(cfg, {SweepAxis::TEff, SweepAxis::Xi, SweepAxis::Cooperativity},
                             {SweepAxis::TEff, default_sensitivity_grid()});
  const auto& p = cfg.system;

  NoiseRunOptions nopts;
  nopts.segments = cfg.sensitivity.segments;
  nopts.settle_times = cfg.sensitivity.settle_teff;
  if (cfg.integrator.method == IntegrationMethod::RK45Adaptive) {
    nopts.integrator = IntegratorConfig::exact_linear(1.0 / cfg.integrator.record_rate);
    nopts.integrator.record_rate = cfg.integrator.record_rate;
  } else {
    nopts.integrator = cfg.integrator;
  }

  struct Outcome {
    SweepRecord row;
    std::optional<SensitivitySpectrum> band;
  };
  auto outcomes = parallel_map(grid.values.size(), opts.workers, [&](std::size_t i) {
    const double v = grid.values[i];
    const FeedbackConfig fb = feedback_for(cfg, grid.axis, v);
    Outcome o;
    o.row = guarded(base_row(i, v, cfg, fb), [&](SweepRecord& r) {
      r.seed = row_seed(seed, v);
      const double t_eff = effective_coherence_time(p, fb);
      const double eta = amplification_factor(p, t_eff);
      const auto run = simulate_noise_run(p, fb, cfg.noise, r.seed, nopts);
      r.t_eff_expected = t_eff;
      r.eta_expected = eta;
      r.frequency = run.resonance.frequency;
      r.sensitivity = run.resonance.sensitivity;
      r.sensitivity_raw = run.resonance.raw_bin;
      r.sensitivity_expected = input_referred_sensitivity(cfg.noise, transfer_function(p, fb, run.resonance.frequency));
      r.converged = true;

      SensitivitySpectrum band = run.input_referred;
      band.frequencies.clear();
      band.input_referred.clear();
      const double half = cfg.sensitivity.spectrum_linewidths * linewidth(t_eff);
      for (std::size_t k = 0; k < run.input_referred.frequencies.size(); ++k)
        if (std::abs(run.input_referred.frequencies[k] - run.resonance.frequency) <= half) {
          band.frequencies.push_back(run.input_referred.frequencies[k]);
          band.input_referred.push_back(run.input_referred.input_referred[k]);
        }
      o.band = std::move(band);
    });
    return o;
  });

  SweepTable table{"sensitivity", grid.axis, {}};
  std::vector<double> ts, ss;
  for (auto& o : outcomes) {
    if (!o.row.failed) {
      ts.push_back(*o.row.t_eff_expected);
      ss.push_back(*o.row.sensitivity);
    }
    if (o.band) {
      char name[64];
      std::snprintf(name, sizeof name, "spectrum_%zu", o.row.index);
      res.spectra.emplace_back(name, std::move(*o.band));
    }
    table.rows.push_back(std::move(o.row));
  }
  try {
    const auto fit = fit_sensitivity_model(ts, ss);
    res.fits.emplace_back("sensitivity_model", fit);
    res.scalars.emplace_back("a", fit.value("a"));
    res.scalars.emplace_back("b", fit.value("b"));
  } catch (const std::exception& e) {
    res.errors.push_back(std::string("sensitivity model fit: ") + e.what());
  }
  res.scalars.emplace_back("a_expected", cfg.noise.photon_shot / amplification_rate(p));
  res.scalars.emplace_back("b_expected", cfg.noise.magnetic);
  res.scalars.emplace_back("amplification_rate", amplification_rate(p));
  res.tables.push_back(std::move(table));
  return res;
}

}  // namespace coopamp
