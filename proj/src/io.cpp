#include "coopamp/io.hpp"

#include "coopamp/errors.hpp"

#include <json.hpp>

#include <charconv>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <ostream>

namespace coopamp {

namespace {

using nlohmann::ordered_json;

ordered_json opt(const std::optional<double>& v) {
  if (!v || !std::isfinite(*v)) return nullptr;
  return *v;
}

std::string field(const std::optional<double>& v) { return v ? format_number(*v) : std::string(); }

std::string quoted(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c == '\n' ? ' ' : c;
  }
  return out + '"';
}

std::vector<std::string> row_fields(const SweepRecord& r, std::string_view hash) {
  return {std::to_string(r.index),
          format_number(r.value),
          std::string(hash),
          std::to_string(r.seed),
          format_number(r.xi),
          format_number(r.cooperativity),
          std::string(to_string(r.regime)),
          field(r.t_eff),
          field(r.t_eff_expected),
          field(r.frequency),
          field(r.amplitude),
          field(r.eta),
          field(r.eta_expected),
          field(r.center),
          field(r.fwhm),
          field(r.shift),
          field(r.rate),
          field(r.rate_expected),
          field(r.sensitivity),
          field(r.sensitivity_raw),
          field(r.sensitivity_expected),
          r.converged ? (*r.converged ? "1" : "0") : "",
          r.failed ? "1" : "0",
          quoted(r.note)};
}

ordered_json row_json(const SweepRecord& r, std::string_view hash) {
  ordered_json j;
  j["index"] = r.index;
  j["value"] = r.value;
  j["config_hash"] = std::string(hash);
  j["seed"] = r.seed;
  j["xi"] = r.xi;
  j["cooperativity"] = r.cooperativity;
  j["regime"] = std::string(to_string(r.regime));
  j["t_eff"] = opt(r.t_eff);
  j["t_eff_expected"] = opt(r.t_eff_expected);
  j["frequency"] = opt(r.frequency);
  j["amplitude"] = opt(r.amplitude);
  j["eta"] = opt(r.eta);
  j["eta_expected"] = opt(r.eta_expected);
  j["center"] = opt(r.center);
  j["fwhm"] = opt(r.fwhm);
  j["shift"] = opt(r.shift);
  j["rate"] = opt(r.rate);
  j["rate_expected"] = opt(r.rate_expected);
  j["sensitivity"] = opt(r.sensitivity);
  j["sensitivity_raw"] = opt(r.sensitivity_raw);
  j["sensitivity_expected"] = opt(r.sensitivity_expected);
  j["converged"] = r.converged ? ordered_json(*r.converged) : ordered_json(nullptr);
  j["failed"] = r.failed;
  j["note"] = r.note;
  return j;
}

ordered_json fit_object(const FitResult& f) {
  ordered_json j;
  j["model"] = f.model;
  ordered_json params = ordered_json::object();
  for (std::size_t i = 0; i < f.names.size(); ++i) {
    ordered_json p;
    p["value"] = opt(f.values[i]);
    p["std_error"] = i < f.std_errors.size() ? opt(f.std_errors[i]) : ordered_json(nullptr);
    params[f.names[i]] = p;
  }
  j["parameters"] = params;
  j["residual_rms"] = opt(f.residual_rms);
  j["converged"] = f.converged;
  j["iterations"] = f.iterations;
  j["low_snr"] = f.low_snr;
  j["message"] = f.message;
  return j;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open " + path.string() + " for writing");
  os << text;
  if (!os) throw Error("failed writing " + path.string());
}

}  // namespace

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (v == 0.0) return "0";
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

const std::vector<std::string_view>& table_columns() {
  static const std::vector<std::string_view> cols = {
      "index",         "value",          "config_hash", "seed",        "xi",
      "cooperativity", "regime",         "t_eff_s",     "t_eff_expected_s",
      "frequency_hz",  "amplitude_T",    "eta",         "eta_expected",
      "center_hz",     "fwhm_hz",        "shift_hz",    "rate_per_s",
      "rate_expected_per_s", "sensitivity_T_per_sqrtHz", "sensitivity_raw_T_per_sqrtHz",
      "sensitivity_expected_T_per_sqrtHz", "converged", "failed", "note"};
  return cols;
}

void write_table_csv(std::ostream& os, const SweepTable& table, std::string_view config_hash) {
  const auto& cols = table_columns();
  for (std::size_t i = 0; i < cols.size(); ++i) os << (i ? "," : "") << cols[i];
  os << '\n';
  for (const auto& r : table.rows) {
    const auto f = row_fields(r, config_hash);
    for (std::size_t i = 0; i < f.size(); ++i) os << (i ? "," : "") << f[i];
    os << '\n';
  }
}

std::string table_json(const SweepTable& table, std::string_view config_hash) {
  ordered_json j;
  j["name"] = table.name;
  j["axis"] = std::string(to_string(table.axis));
  ordered_json rows = ordered_json::array();
  for (const auto& r : table.rows) rows.push_back(row_json(r, config_hash));
  j["rows"] = rows;
  return j.dump(2) + "\n";
}

std::string fit_json(const FitResult& fit) { return fit_object(fit).dump(2) + "\n"; }

void write_spectrum_csv(std::ostream& os, const SensitivitySpectrum& s) {
  os << "f_hz,sensitivity_T_per_sqrtHz\n";
  for (std::size_t i = 0; i < s.frequencies.size(); ++i)
    os << format_number(s.frequencies[i]) << ',' << format_number(s.input_referred[i]) << '\n';
}

std::string spectrum_metadata_json(const SensitivitySpectrum& s) {
  ordered_json j;
  j["t_eff_s"] = opt(s.t_eff);
  j["amplification_rate_per_s"] = opt(s.amplification_rate);
  j["amplification"] = opt(s.amplification);
  j["a_T_s_per_sqrtHz"] = opt(s.a);
  j["b_T_per_sqrtHz"] = opt(s.b);
  j["points"] = s.frequencies.size();
  return j.dump(2) + "\n";
}

void write_run(const std::filesystem::path& dir, const RunResult& run, const ExperimentConfig& cfg,
               TableFormat format) {
  std::filesystem::create_directories(dir);
  for (const auto& t : run.tables) {
    if (format == TableFormat::Json) {
      write_text(dir / (t.name + ".json"), table_json(t, run.config_hash));
    } else {
      std::ofstream os(dir / (t.name + ".csv"), std::ios::binary);
      if (!os) throw Error("cannot open " + (dir / (t.name + ".csv")).string() + " for writing");
      write_table_csv(os, t, run.config_hash);
    }
  }

  ordered_json fits = ordered_json::object();
  for (const auto& [name, f] : run.fits) fits[name] = fit_object(f);
  write_text(dir / "fits.json", fits.dump(2) + "\n");

  ordered_json summary;
  summary["experiment"] = run.experiment;
  ordered_json scalars = ordered_json::object();
  for (const auto& [name, v] : run.scalars) scalars[name] = opt(v);
  summary["scalars"] = scalars;
  summary["errors"] = run.errors;
  summary["numerical_failure"] = run.numerical_failure();
  write_text(dir / "summary.json", summary.dump(2) + "\n");

  if (!run.spectra.empty()) {
    std::filesystem::create_directories(dir / "spectra");
    for (const auto& [name, s] : run.spectra) {
      std::ofstream os(dir / "spectra" / (name + ".csv"), std::ios::binary);
      write_spectrum_csv(os, s);
      write_text(dir / "spectra" / (name + ".json"), spectrum_metadata_json(s));
    }
  }

  if (run.series) {
    std::ofstream os(dir / "series.csv", std::ios::binary);
    run.series->write_csv(os);
  }

  ordered_json meta;
  meta["experiment"] = run.experiment;
  meta["config_hash"] = run.config_hash;
  meta["seed"] = run.seed;
  meta["config"] = ordered_json::parse(cfg.canonical);
  write_text(dir / "metadata.json", meta.dump(2) + "\n");
}

std::filesystem::path run_directory(const std::filesystem::path& base, const ExperimentConfig& cfg) {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y%m%dT%H%M%SZ", &tm);
  return base / (std::string(stamp) + "_" + cfg.hash_hex());
}

}  // namespace coopamp
