// coopamp: run sweep experiments and fit existing result files.
//
// Exit status: 0 success, 1 configuration or usage error, 2 numerical failure.

#include "coopamp/config.hpp"
#include "coopamp/errors.hpp"
#include "coopamp/experiments.hpp"
#include "coopamp/fitting.hpp"
#include "coopamp/io.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

namespace {

using namespace coopamp;

constexpr int kOk = 0;
constexpr int kConfigError = 1;
constexpr int kNumericalFailure = 2;

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<unsigned> workers;
  std::string format = "csv";
};

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

// Reads two named numeric columns; rows where either cell is empty are skipped.
void read_columns(const std::string& path, const std::string& xcol, const std::string& ycol, std::vector<double>& x,
                  std::vector<double>& y) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open " + path, "fit.input");
  std::string line;
  if (!std::getline(is, line)) throw ConfigError("empty file " + path, "fit.input");
  const auto header = split_csv_line(line);
  auto find = [&](const std::string& name) {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    throw ConfigError("no column `" + name + "` in " + path, "fit.columns");
  };
  const std::size_t xi = find(xcol), yi = find(ycol);
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() <= std::max(xi, yi) || cells[xi].empty() || cells[yi].empty()) continue;
    x.push_back(std::stod(cells[xi]));
    y.push_back(std::stod(cells[yi]));
  }
}

int run_fit(const std::string& input, const std::string& model, std::string xcol, std::string ycol,
            const std::string& out) {
  struct Defaults {
    const char* model;
    const char* x;
    const char* y;
  };
  static const Defaults defaults[] = {
      {"decay", "t", "signal"},
      {"lorentzian", "frequency_hz", "eta"},
      {"inverse", "xi", "t_eff_s"},
      {"linear", "", ""},
      {"sensitivity", "t_eff_expected_s", "sensitivity_T_per_sqrtHz"},
  };
  const Defaults* d = nullptr;
  for (const auto& c : defaults)
    if (model == c.model) d = &c;
  if (!d) throw ConfigError("unknown model `" + model + "`", "fit.model");
  if (xcol.empty()) xcol = d->x;
  if (ycol.empty()) ycol = d->y;
  if (xcol.empty() || ycol.empty()) throw ConfigError("model `linear` needs --x and --y", "fit.columns");

  std::vector<double> x, y;
  read_columns(input, xcol, ycol, x, y);

  FitResult fit;
  if (model == "decay") {
    if (x.size() < 2) throw ConfigError("fewer than two samples", "fit.input");
    fit = fit_decaying_sinusoid(y, x.front(), (x.back() - x.front()) / static_cast<double>(x.size() - 1));
  } else if (model == "lorentzian") {
    fit = fit_lorentzian(x, y);
  } else if (model == "inverse") {
    fit = fit_inverse(x, y);
  } else if (model == "linear") {
    fit = fit_linear(x, y);
  } else {
    fit = fit_sensitivity_model(x, y);
  }

  const std::string text = fit_json(fit);
  if (out.empty()) {
    std::cout << text;
  } else {
    std::ofstream os(out, std::ios::binary);
    if (!os) throw ConfigError("cannot open " + out + " for writing", "--out");
    os << text;
  }
  return fit.converged ? kOk : kNumericalFailure;
}

using Runner = RunResult (*)(const ExperimentConfig&, const RunOptions&);

int run_experiment(Runner runner, const Globals& g) {
  if (g.config.empty()) throw ConfigError("--config is required", "--config");
  const ExperimentConfig cfg = load_config(g.config, g.seed);
  if (g.format != "csv" && g.format != "json") throw ConfigError("must be csv or json", "--format");

  RunOptions opts;
  if (g.workers) {
    opts.workers = *g.workers;
  } else if (const char* env = std::getenv("COOPAMP_WORKERS")) {
    try {
      opts.workers = static_cast<unsigned>(std::stoul(env));
    } catch (const std::exception&) {
      throw ConfigError("not an unsigned integer", "COOPAMP_WORKERS");
    }
  }
  std::string base = g.out;
  if (base.empty()) {
    const char* env = std::getenv("COOPAMP_OUT");
    base = env && *env ? env : cfg.output.directory;
  }

  const RunResult run = runner(cfg, opts);
  const auto dir = run_directory(base, cfg);
  write_run(dir, run, cfg, g.format == "json" ? TableFormat::Json : TableFormat::Csv);

  std::cout << run.experiment << " -> " << dir.string() << '\n';
  for (const auto& [name, v] : run.scalars) std::cout << "  " << name << " = " << format_number(v) << '\n';
  for (const auto& t : run.tables)
    for (const auto& r : t.rows)
      if (r.failed) std::cerr << t.name << " row " << r.index << " failed: " << r.note << '\n';
  for (const auto& e : run.errors) std::cerr << "error: " << e << '\n';
  return run.numerical_failure() ? kNumericalFailure : kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cooperative spin amplifier simulator"};
  app.require_subcommand(1);

  Globals g;
  app.add_option("--config", g.config, "Experiment config (JSON)");
  app.add_option("--seed", g.seed, "Random seed; overrides the config");
  app.add_option("--out", g.out, "Output base directory (env COOPAMP_OUT)");
  app.add_option("--workers", g.workers, "Worker threads, 0 = all cores (env COOPAMP_WORKERS)");
  app.add_option("--format", g.format, "Table format: csv or json")->check(CLI::IsMember({"csv", "json"}));

  struct Command {
    const char* name;
    const char* help;
    Runner runner;
  };
  const Command commands[] = {
      {"decay", "Free decay and decaying-sinusoid fit", run_decay},
      {"freq-sweep", "Driven frequency sweep, Lorentzian and shift-slope fits", run_frequency_sweep},
      {"feedback-sweep", "Coherence time against feedback strength", run_feedback_sweep},
      {"field-sweep", "Amplification against bias field", run_field_sweep},
      {"sensitivity", "Noise runs, input-referred spectra and sensitivity model fit", run_sensitivity},
      {"regime-map", "Decay and growth rates across cooperativity", run_regime_map},
  };
  Runner selected = nullptr;
  for (const auto& c : commands) {
    auto* sub = app.add_subcommand(c.name, c.help);
    sub->fallthrough();
    sub->callback([&selected, r = c.runner] { selected = r; });
  }

  std::string fit_input, fit_model = "decay", fit_x, fit_y;
  bool fit_selected = false;
  auto* fit = app.add_subcommand("fit", "Fit a model to columns of an existing CSV");
  fit->fallthrough();
  fit->add_option("input", fit_input, "CSV file")->required();
  fit->add_option("--model", fit_model, "decay, lorentzian, inverse, linear or sensitivity");
  fit->add_option("--x", fit_x, "x column name");
  fit->add_option("--y", fit_y, "y column name");
  fit->callback([&] { fit_selected = true; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    if (fit_selected) return run_fit(fit_input, fit_model, fit_x, fit_y, g.out);
    return run_experiment(selected, g);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kNumericalFailure;
  }
}
