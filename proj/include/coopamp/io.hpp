#pragma once

// Result files. Numbers are written in shortest round-trip form; absent
// optional values are empty CSV fields and JSON nulls.

#include "coopamp/config.hpp"
#include "coopamp/experiments.hpp"

#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace coopamp {

enum class TableFormat { Csv, Json };

// Column order of every sweep table CSV.
const std::vector<std::string_view>& table_columns();

// Every row carries `config_hash` so it can be replayed with its seed.
void write_table_csv(std::ostream& os, const SweepTable& table, std::string_view config_hash);
std::string table_json(const SweepTable& table, std::string_view config_hash);
std::string fit_json(const FitResult& fit);

// `f_hz,sensitivity_T_per_sqrtHz`
void write_spectrum_csv(std::ostream& os, const SensitivitySpectrum& s);
std::string spectrum_metadata_json(const SensitivitySpectrum& s);

// Writes a run into `dir` (created if needed):
//   <table>.csv or <table>.json   one per table
//   fits.json                     named fit results
//   summary.json                  scalars and run-level errors
//   spectra/<name>.csv + .json    sensitivity spectra
//   series.csv                    time series, when present
//   metadata.json                 experiment, config hash, seed, normalized config
void write_run(const std::filesystem::path& dir, const RunResult& run, const ExperimentConfig& cfg,
               TableFormat format = TableFormat::Csv);

// `<base>/<UTC yyyymmddThhmmssZ>_<hash>`; the timestamp appears only in the name.
std::filesystem::path run_directory(const std::filesystem::path& base, const ExperimentConfig& cfg);

std::string format_number(double v);

}  // namespace coopamp
