#pragma once

// Experiment configuration: JSON text with unit-bearing values, normalized to
// SI on parse. The grammar is documented in docs/config.md.

#include "coopamp/dynamics.hpp"
#include "coopamp/fitting.hpp"
#include "coopamp/model.hpp"
#include "coopamp/noise.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace coopamp {

enum class SweepAxis { None, Xi, TEff, Cooperativity, Frequency, B0 };
std::string_view to_string(SweepAxis a) noexcept;

struct SweepSpec {
  SweepAxis axis = SweepAxis::None;
  std::vector<double> values;  // SI: 1/s, s, dimensionless, Hz, T
};

struct DriveSpec {
  double amplitude = 13.8e-12;        // T
  std::optional<double> frequency;    // Hz; unset means "at resonance"
  double phase = 0.0;                 // rad
};

struct DecayOptions {
  double tip_angle = 5.0 * kTwoPi / 360.0;  // rad
  double duration_teff = 5.0;               // record length in units of T_eff
  double min_duration = 10.0;               // s
  std::optional<double> duration;           // s; overrides the two above
};

struct DrivenOptions {
  double duration_teff = 10.0;  // run length in units of T_eff (>= 5)
  double lockin_teff = 2.0;     // lock-in window at the end of the run, units of T_eff
};

struct FrequencySweepOptions {
  std::size_t points = 41;
  double span_linewidths = 10.0;     // full span of the auto grid, in linewidths
  std::vector<double> shift_xi = {0.006, 0.0, -0.01, -0.02, -0.025};  // 1/s
  std::size_t shift_points = 15;
  double shift_span_linewidths = 6.0;
};

struct SensitivityOptions {
  std::size_t segments = 128;
  double settle_teff = 5.0;
  double spectrum_linewidths = 20.0;  // half-width of the written spectrum band
};

struct RegimeMapOptions {
  double growth_lifetimes = 3.0;   // record length in units of 1/|Gamma + xi|
  double max_duration = 20000.0;   // s; caps the record at the threshold
  double maser_seed = 1e-6;        // transverse seed for C > 1 runs
};

struct OutputOptions {
  std::string directory = "runs";
};

struct ExperimentConfig {
  SystemParams system;
  FeedbackConfig feedback;
  DriveSpec drive;
  NoiseModel noise;
  IntegratorConfig integrator;
  SweepSpec sweep;
  DecayOptions decay;
  DrivenOptions driven;
  FrequencySweepOptions frequency_sweep;
  SensitivityOptions sensitivity;
  RegimeMapOptions regime_map;
  FitOptions fit;
  OutputOptions output;
  std::optional<std::uint64_t> seed;

  // Normalized configuration as compact JSON (SI values, sorted keys),
  // excluding `seed` and `output`. Identical physics gives identical text.
  std::string canonical;
  // FNV-1a 64 of `canonical`.
  std::uint64_t hash = 0;

  std::string hash_hex() const;
  // Seed, or ConfigError when noise is enabled without one; 0 otherwise.
  std::uint64_t seed_or_default() const;
};

// Parses and validates. `seed_override` replaces the config seed before the
// noise/seed check. Throws ConfigError naming the offending key path.
ExperimentConfig parse_config(std::string_view text, std::optional<std::uint64_t> seed_override = {});
ExperimentConfig load_config(const std::string& path, std::optional<std::uint64_t> seed_override = {});

// Parses a quantity such as "850 nT" into SI for the given dimension.
enum class Dimension { None, Time, Rate, Frequency, Field, FieldDensity, GyroRatio, Angle, ShiftSlope };
double parse_quantity(std::string_view text, Dimension dim, const std::string& path);

std::uint64_t fnv1a64(std::string_view data) noexcept;

}  // namespace coopamp
