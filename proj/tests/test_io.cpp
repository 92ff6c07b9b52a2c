#include "coopamp/config.hpp"
#include "coopamp/experiments.hpp"
#include "coopamp/io.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace coopamp;

TEST_CASE("numbers round-trip through text") {
  for (double v : {0.1, 1.0 / 3.0, 6.02e23, -2.5e-15}) CHECK(std::stod(format_number(v)) == v);
  CHECK(format_number(-0.0) == "0");
  CHECK(format_number(2.0) == "2");
}

TEST_CASE("table CSV layout") {
  SweepTable t{"x", SweepAxis::Xi, {}};
  SweepRecord r;
  r.value = 0.5;
  r.t_eff = 2.0;
  r.note = "a, \"b\"";
  t.rows.push_back(r);
  std::ostringstream os;
  write_table_csv(os, t, "00ff");
  const std::string s = os.str();
  const std::string header = s.substr(0, s.find('\n'));
  std::size_t commas = 0;
  for (char c : header) commas += c == ',';
  CHECK(commas + 1 == table_columns().size());
  CHECK(header.rfind("index,value,config_hash,seed,", 0) == 0);
  CHECK(s.find("0,0.5,00ff,0,0,0,Free,2,,") != std::string::npos);
  CHECK(s.find("\"a, \"\"b\"\"\"") != std::string::npos);
}

TEST_CASE("write_run produces the documented files") {
  const auto cfg = parse_config(R"({"system": {}, "sweep": {"axis": "xi", "values": [0.1, 0.0]}})");
  const auto run = run_feedback_sweep(cfg);
  const auto dir = std::filesystem::temp_directory_path() / "coopamp_io_test";
  std::filesystem::remove_all(dir);
  write_run(dir, run, cfg);
  for (const char* f : {"feedback_sweep.csv", "fits.json", "summary.json", "metadata.json"})
    CHECK(std::filesystem::exists(dir / f));
  std::ifstream meta(dir / "metadata.json");
  std::stringstream ss;
  ss << meta.rdbuf();
  CHECK(ss.str().find(cfg.hash_hex()) != std::string::npos);

  write_run(dir / "json", run, cfg, TableFormat::Json);
  CHECK(std::filesystem::exists(dir / "json" / "feedback_sweep.json"));
  std::filesystem::remove_all(dir);

  const auto name = run_directory("base", cfg).filename().string();
  CHECK(name.size() == 16 + 1 + 16);
  CHECK(name.substr(17) == cfg.hash_hex());
}
