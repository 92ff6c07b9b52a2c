#pragma once

// Sweep experiments. Every grid point is an independent task run on a worker
// pool; rows come back in grid order, so output does not depend on the
// number of workers.

#include "coopamp/config.hpp"
#include "coopamp/fitting.hpp"
#include "coopamp/sensing.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace coopamp {

struct SweepRecord {
  std::size_t index = 0;
  double value = 0.0;  // swept value in SI
  std::uint64_t seed = 0;

  double xi = 0.0;
  double cooperativity = 0.0;
  Regime regime = Regime::Free;

  std::optional<double> t_eff;
  std::optional<double> t_eff_expected;
  std::optional<double> frequency;      // Hz: drive, Larmor or fitted precession frequency
  std::optional<double> amplitude;      // T, lock-in amplitude of the signal
  std::optional<double> eta;
  std::optional<double> eta_expected;
  std::optional<double> center;         // Hz, fitted Lorentzian center
  std::optional<double> fwhm;           // Hz
  std::optional<double> shift;          // Hz, center - Larmor frequency
  std::optional<double> rate;           // 1/s, > 0 for growth
  std::optional<double> rate_expected;
  std::optional<double> sensitivity;    // T/sqrt(Hz)
  std::optional<double> sensitivity_raw;
  std::optional<double> sensitivity_expected;
  std::optional<bool> converged;
  bool failed = false;                  // the row raised an error
  std::string note;
};

struct SweepTable {
  std::string name;
  SweepAxis axis = SweepAxis::None;
  std::vector<SweepRecord> rows;
};

struct RunResult {
  std::string experiment;
  std::string config_hash;
  std::uint64_t seed = 0;
  std::vector<SweepTable> tables;
  std::vector<std::pair<std::string, FitResult>> fits;
  std::vector<std::pair<std::string, double>> scalars;
  std::vector<std::pair<std::string, SensitivitySpectrum>> spectra;
  std::optional<TimeSeries> series;
  std::vector<std::string> errors;  // run-level failures (e.g. a summary fit)

  bool numerical_failure() const;
  const SweepTable& table(std::string_view name) const;
  double scalar(std::string_view name) const;
  const FitResult& fit(std::string_view name) const;
};

struct RunOptions {
  unsigned workers = 1;  // 0 = one per hardware thread
};

// Seed of the grid point with swept value `value`: depends only on the run
// seed and the value, so a point run alone reproduces its row.
std::uint64_t row_seed(std::uint64_t seed, double value) noexcept;

// Default grids used when the config has no sweep block.
std::vector<double> default_feedback_grid();          // xi, 1/s
std::vector<double> default_regime_grid();            // cooperativity
std::vector<double> default_field_grid();             // b0, T
std::vector<double> default_sensitivity_grid();       // t_eff, s

RunResult run_decay(const ExperimentConfig& cfg, const RunOptions& opts = {});
RunResult run_feedback_sweep(const ExperimentConfig& cfg, const RunOptions& opts = {});
RunResult run_frequency_sweep(const ExperimentConfig& cfg, const RunOptions& opts = {});
RunResult run_field_sweep(const ExperimentConfig& cfg, const RunOptions& opts = {});
RunResult run_sensitivity(const ExperimentConfig& cfg, const RunOptions& opts = {});
RunResult run_regime_map(const ExperimentConfig& cfg, const RunOptions& opts = {});

}  // namespace coopamp
