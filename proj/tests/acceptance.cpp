// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits nonzero if any fails.

#include "coopamp/config.hpp"
#include "coopamp/dynamics.hpp"
#include "coopamp/experiments.hpp"
#include "coopamp/fitting.hpp"
#include "coopamp/io.hpp"
#include "coopamp/sensing.hpp"
#include "coopamp/spectral.hpp"

#include <algorithm>
#include <chrono>
#include <cstdarg>
#include <cmath>
#include <complex>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#ifndef COOPAMP_CONFIG_DIR
#error "COOPAMP_CONFIG_DIR must point at the configs directory"
#endif

namespace {

using namespace coopamp;
namespace fs = std::filesystem;

constexpr double kPi = 3.14159265358979323846;

ExperimentConfig config(const std::string& name) { return load_config(std::string(COOPAMP_CONFIG_DIR) + "/" + name); }

double rel(double got, double want) { return std::abs(got - want) / std::abs(want); }

struct Report {
  std::string detail;

  [[gnu::format(printf, 2, 3)]] void add(const char* fmt, ...) {
    char buf[256];
    va_list args;
    va_start(args, fmt);
    std::vsnprintf(buf, sizeof buf, fmt, args);
    va_end(args);
    if (!detail.empty()) detail += "; ";
    detail += buf;
  }
};

int failed_criteria = 0;

void criterion(int n, const char* title, const std::function<bool(Report&)>& body) {
  Report r;
  bool pass = false;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    pass = body(r);
  } catch (const std::exception& e) {
    r.add("exception: %s", e.what());
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (!pass) ++failed_criteria;
  std::printf("%s criterion %d (%s): %s [%.1f s]\n", pass ? "PASS" : "FAIL", n, title, r.detail.c_str(), secs);
  std::fflush(stdout);
}

// Criterion 3 and 5 share one frequency sweep.
const RunResult& frequency_sweep() {
  static const RunResult run = run_frequency_sweep(config("freq_sweep.json"));
  return run;
}

double driven_eta(const SystemParams& p, const FeedbackConfig& fb, double amplitude) {
  const double t_eff = effective_coherence_time(p, fb);
  const double f = resonance_frequency(p, fb);
  const auto ts = simulate_driven(p, fb, {amplitude, f, 0.0}, 10.0 * t_eff);
  const auto y = ts.channel(Channel::Signal);
  return lockin_amplitude(y, ts.dt(), f, 2.0 * t_eff) / amplitude;
}

std::map<std::string, std::string> read_tree(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    std::ifstream is(e.path(), std::ios::binary);
    std::ostringstream ss;
    ss << is.rdbuf();
    files[fs::relative(e.path(), dir).string()] = ss.str();
  }
  return files;
}

}  // namespace

int main() {
  criterion(1, "coherence engineering", [](Report& r) {
    const auto run = run_feedback_sweep(config("feedback_sweep.json"));
    const auto& rows = run.table("feedback_sweep").rows;
    double worst = 0.0;
    bool all = rows.size() == 12;
    for (const auto& row : rows) {
      if (!row.t_eff) {
        all = false;
        continue;
      }
      worst = std::max(worst, rel(*row.t_eff, 1.0 / (1.0 / 31.0 + row.xi)));
    }
    const double first = rows.front().t_eff.value_or(0.0), last = rows.back().t_eff.value_or(0.0);
    const double gamma_err = rel(run.scalar("gamma_fit"), 1.0 / 31.0);
    r.add("%zu rows, worst T_eff error %.2e", rows.size(), worst);
    r.add("endpoints %.3f s and %.1f s", first, last);
    r.add("Gamma error %.2e", gamma_err);
    return all && worst < 0.02 && rel(first, 4.0) < 0.02 && rel(last, 545.0) < 0.02 && gamma_err < 0.01;
  });

  criterion(2, "threshold behavior", [](Report& r) {
    const auto run = run_regime_map(config("regime_map.json"));
    const auto& rows = run.table("regime_map").rows;
    const double gamma = 1.0 / 31.0;
    // Sign change of the measured rate, interpolated in xi.
    std::optional<double> crossing;
    for (std::size_t i = 1; i < rows.size(); ++i) {
      const double a = rows[i - 1].rate.value_or(NAN), b = rows[i].rate.value_or(NAN);
      if (a < 0.0 && b > 0.0) crossing = rows[i - 1].xi + (rows[i].xi - rows[i - 1].xi) * (-a) / (b - a);
      if (a < 0.0 && b == 0.0) crossing = rows[i].xi;
    }
    double growth = NAN;
    for (const auto& row : rows)
      if (std::abs(row.cooperativity - 1.5) < 1e-9) growth = row.rate.value_or(NAN);
    if (!crossing) {
      r.add("no sign change");
      return false;
    }
    const double offset = std::abs(*crossing + gamma) / gamma;
    const double growth_err = rel(growth, 0.5 * gamma);
    r.add("sign change at xi = %.6f s^-1 (|xi + Gamma| = %.2e Gamma)", *crossing, offset);
    r.add("C = 1.5 growth rate %.6f s^-1 vs 0.5 Gamma, error %.2e", growth, growth_err);
    return offset <= 0.02 && growth_err <= 0.05;
  });

  criterion(3, "amplification", [](Report& r) {
    const auto& run = frequency_sweep();
    const auto& fit = run.fit("lorentzian");
    const double peak = fit.value("peak"), fwhm = fit.value("fwhm");
    const double fwhm_want = 1.0 / (kPi * 163.0);

    const ExperimentConfig cfg = config("freq_sweep.json");
    const FeedbackConfig fb300 = FeedbackConfig::for_effective_time(cfg.system, 300.0, cfg.feedback.shift_ratio);
    const double field = driven_eta(cfg.system, fb300, 13.8e-12) * 13.8e-12;

    r.add("peak %.1f (2500 +- 5%%: err %.2e)", peak, rel(peak, 2500.0));
    r.add("FWHM %.6f Hz vs %.6f Hz, err %.2e", fwhm, fwhm_want, rel(fwhm, fwhm_want));
    r.add("T_eff = 300 s steady field %.2f nT vs 65 nT, err %.2e", field * 1e9, rel(field, 65e-9));
    return fit.converged && rel(peak, 2500.0) <= 0.05 && rel(fwhm, fwhm_want) <= 0.05 && rel(field, 65e-9) <= 0.05;
  });

  criterion(4, "relative amplification", [](Report& r) {
    const ExperimentConfig cfg = config("freq_sweep.json");
    const auto& p = cfg.system;
    const double ratio = cfg.feedback.shift_ratio;
    const FeedbackConfig free_fb{0.0, ratio};
    const double eta0_closed = amplification_factor(p, effective_coherence_time(p, free_fb));
    const double eta0_sim = driven_eta(p, free_fb, 13.8e-12);
    double closed_worst = 0.0, sim_worst = 0.0, at_08 = 0.0;
    for (double c : {-3.0, 0.5, 0.8, 0.9}) {
      const auto fb = FeedbackConfig::for_cooperativity(p, c, ratio);
      const double t_eff = effective_coherence_time(p, fb);
      const double want = t_eff / p.t2_intrinsic;
      closed_worst = std::max(closed_worst, rel(amplification_factor(p, t_eff) / eta0_closed, want));
      const double got = driven_eta(p, fb, 13.8e-12) / eta0_sim;
      sim_worst = std::max(sim_worst, rel(got, want));
      if (c == 0.8) at_08 = got;
    }
    r.add("closed form worst %.1e", closed_worst);
    r.add("simulated worst %.2e", sim_worst);
    r.add("eta/eta0 at C = 0.8: %.7f", at_08);
    return closed_worst < 1e-12 && sim_worst <= 0.03 && at_08 >= 5.0;
  });

  criterion(5, "frequency shift", [](Report& r) {
    const auto& run = frequency_sweep();
    const auto& fits = run.table("shift_fits").rows;
    std::size_t used = 0;
    for (const auto& row : fits)
      if (row.converged.value_or(false)) ++used;
    const double slope = run.scalar("shift_slope");
    r.add("slope %.5f Hz s over %zu xi values, err %.2e", slope, used, rel(slope, -0.46));
    return used >= 5 && rel(slope, -0.46) <= 0.05;
  });

  criterion(6, "bias-field independence", [](Report& r) {
    const auto run = run_field_sweep(config("field_sweep.json"));
    const double spread = run.scalar("eta_relative_std");
    double lo = 1.0, hi = 0.0;
    for (const auto& row : run.table("field_sweep").rows) {
      lo = std::min(lo, row.value);
      hi = std::max(hi, row.value);
    }
    SystemParams p;
    p.b0 = 900e-9;
    const double f900 = larmor_frequency(p);
    p.b0 = 850e-9;
    const double f850 = larmor_frequency(p);
    r.add("eta relative std %.2e over %.2f-%.2f uT", spread, lo * 1e6, hi * 1e6);
    r.add("f0(900 nT) = %.3f Hz vs 10.7 (err %.2e)", f900, rel(f900, 10.7));
    r.add("f0(850 nT) = %.3f Hz vs 10.03 (err %.2e)", f850, rel(f850, 10.03));
    return !run.numerical_failure() && spread < 0.02 && lo <= 80e-9 && hi >= 3e-6 && rel(f900, 10.7) <= 0.01 &&
           rel(f850, 10.03) <= 0.01;
  });

  criterion(7, "sensitivity pipeline", [](Report& r) {
    ExperimentConfig cfg = config("sensitivity.json");
    const auto run = run_sensitivity(cfg);
    const double a = run.scalar("a"), b = run.scalar("b");
    const double a_want = 7.3e-12 / 15.34, b_want = 3.2e-15;

    cfg.sweep = {SweepAxis::TEff, {300.0}};
    const auto single = run_sensitivity(cfg);
    const auto& row = single.table("sensitivity").rows.at(0);
    const double s = row.sensitivity.value_or(NAN);
    const double eta = 15.34 * 300.0;
    const double want = std::hypot(7.3e-12 / eta, 3.2e-15);

    r.add("T_eff = 300 s: %.3f fT/rtHz vs %.3f (err %.2e)", s * 1e15, want * 1e15, rel(s, want));
    r.add("a = %.4g vs %.4g (err %.2e)", a, a_want, rel(a, a_want));
    r.add("b = %.4g vs %.4g (err %.2e)", b, b_want, rel(b, b_want));
    return rel(s, want) <= 0.15 && rel(a, a_want) <= 0.10 && rel(b, b_want) <= 0.10;
  });

  criterion(8, "numerics", [](Report& r) {
    SystemParams p;
    const FeedbackConfig fb{0.01, kTwoPi * kDefaultShiftSlope};
    const std::complex<double> lambda(kTwoPi * resonance_frequency(p, fb), p.decoherence_rate() + fb.xi);
    auto closed = [&](const TimeSeries& ts, std::size_t i) {
      const std::complex<double> c0 = ts[0].px - std::complex<double>(0, 1) * ts[0].py;
      return c0 * std::exp(std::complex<double>(0, 1) * lambda * (ts.time(i) - ts.t0()));
    };
    auto max_error = [&](const TimeSeries& ts) {
      double e = 0.0, scale = 0.0;
      for (std::size_t i = 0; i < ts.size(); ++i) {
        const std::complex<double> got(ts[i].px, -ts[i].py);
        e = std::max(e, std::abs(got - closed(ts, i)));
        scale = std::max(scale, std::abs(closed(ts, i)));
      }
      return e / scale;
    };

    // RK4 in the lab frame, where the step must resolve the precession.
    std::vector<double> errs;
    for (double dt : {1.0 / 300.0, 1.0 / 600.0}) {
      IntegratorConfig ic = IntegratorConfig::fixed_step(dt);
      ic.frame = Frame::Lab;
      errs.push_back(max_error(simulate_decay(p, fb, 0.1, 20.0, ic)));
    }
    const double ratio = errs[0] / errs[1];

    const double closed_err = max_error(simulate_decay(p, fb, 0.1, 200.0));

    std::mt19937_64 rng(11);
    std::normal_distribution<double> normal(0.0, 1.0);
    const double fs = 100.0, sigma = 2.0;
    std::vector<double> x(1 << 20);
    for (double& v : x) v = sigma * normal(rng);
    const Spectrum spec = welch_psd(x, fs, WelchConfig::for_duration(40.96, fs));
    double ms = 0.0;
    for (double v : x) ms += v * v;
    ms /= static_cast<double>(x.size());
    const double parseval = rel(integrated_power(spec), ms);
    double level = 0.0;
    for (std::size_t k = 1; k + 1 < spec.density.size(); ++k) level += spec.density[k] * spec.density[k];
    level /= static_cast<double>(spec.density.size() - 2);
    const double white = rel(std::sqrt(level), sigma * std::sqrt(2.0 / fs));

    r.add("RK4 dt-halving error ratio %.2f", ratio);
    r.add("closed-form max relative error %.2e", closed_err);
    r.add("Parseval error %.2e", parseval);
    r.add("white level error %.2e", white);
    return std::abs(ratio - 16.0) <= 3.0 && closed_err <= 1e-6 && parseval <= 0.01 && white <= 0.10;
  });

  criterion(9, "determinism", [](Report& r) {
    const fs::path base = fs::temp_directory_path() / "coopamp_acceptance_determinism";
    fs::remove_all(base);
    const ExperimentConfig noisy = config("determinism.json");
    const ExperimentConfig sweep = config("feedback_sweep.json");
    std::map<std::string, std::string> reference_noisy, reference_sweep;
    bool same = true;
    std::size_t files = 0;
    for (unsigned workers : {1u, 4u, 8u}) {
      const RunOptions opts{workers};
      const fs::path dn = base / ("noisy_" + std::to_string(workers));
      const fs::path ds = base / ("sweep_" + std::to_string(workers));
      write_run(dn, run_sensitivity(noisy, opts), noisy);
      write_run(ds, run_feedback_sweep(sweep, opts), sweep);
      auto tn = read_tree(dn), ts = read_tree(ds);
      if (workers == 1) {
        reference_noisy = std::move(tn);
        reference_sweep = std::move(ts);
        files = reference_noisy.size() + reference_sweep.size();
      } else {
        same = same && tn == reference_noisy && ts == reference_sweep;
      }
    }
    fs::remove_all(base);
    r.add("%zu output files compared across 1, 4 and 8 workers: %s", files, same ? "identical" : "differ");
    return same && files > 0;
  });

  return failed_criteria == 0 ? 0 : 1;
}
