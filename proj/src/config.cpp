#include "coopamp/config.hpp"

#include "coopamp/errors.hpp"

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>

namespace coopamp {

using nlohmann::json;

namespace {

std::string join(const std::string& base, const std::string& key) { return base.empty() ? key : base + "." + key; }

const std::map<std::string, double>& unit_table(Dimension dim) {
  static const std::map<Dimension, std::map<std::string, double>> tables = [] {
    std::map<Dimension, std::map<std::string, double>> t;
    t[Dimension::Time] = {{"s", 1.0}, {"ms", 1e-3}, {"us", 1e-6}, {"µs", 1e-6}, {"min", 60.0}, {"h", 3600.0}};
    t[Dimension::Rate] = {{"1/s", 1.0}, {"/s", 1.0}, {"s^-1", 1.0}, {"1/ms", 1e3}, {"1/min", 1.0 / 60.0}};
    t[Dimension::Frequency] = {{"Hz", 1.0}, {"mHz", 1e-3}, {"kHz", 1e3}};
    const std::map<std::string, double> fields = {{"T", 1.0},   {"mT", 1e-3},  {"uT", 1e-6}, {"µT", 1e-6},
                                                  {"nT", 1e-9}, {"pT", 1e-12}, {"fT", 1e-15}};
    t[Dimension::Field] = fields;
    for (const auto& [u, f] : fields)
      for (const char* root : {"/rtHz", "/sqrtHz", "/sqrt(Hz)", "/Hz^1/2", "/Hz^0.5", "/√Hz"})
        t[Dimension::FieldDensity][u + root] = f;
    for (const auto& [u, f] : fields) t[Dimension::GyroRatio]["Hz/" + u] = 1.0 / f;
    t[Dimension::GyroRatio]["kHz/T"] = 1e3;
    t[Dimension::GyroRatio]["MHz/T"] = 1e6;
    t[Dimension::Angle] = {{"rad", 1.0}, {"deg", kTwoPi / 360.0}, {"°", kTwoPi / 360.0}};
    t[Dimension::ShiftSlope] = {{"Hzs", 1.0}, {"Hz*s", 1.0}, {"Hz·s", 1.0}, {"Hz/(1/s)", 1.0}};
    t[Dimension::None] = {};
    return t;
  }();
  return tables.at(dim);
}

const char* dimension_name(Dimension d) {
  switch (d) {
    case Dimension::None: return "dimensionless number";
    case Dimension::Time: return "time (e.g. \"31 s\")";
    case Dimension::Rate: return "rate (e.g. \"0.006 1/s\")";
    case Dimension::Frequency: return "frequency (e.g. \"10 Hz\")";
    case Dimension::Field: return "field (e.g. \"850 nT\")";
    case Dimension::FieldDensity: return "field density (e.g. \"7.3 pT/rtHz\")";
    case Dimension::GyroRatio: return "gyromagnetic ratio (e.g. \"11.777 Hz/nT\")";
    case Dimension::Angle: return "angle (e.g. \"5 deg\")";
    case Dimension::ShiftSlope: return "shift slope (e.g. \"-0.46 Hz s\")";
  }
  return "quantity";
}

// Reads a JSON object, tracking which keys were consumed.
class Section {
public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError("expected an object", path_.empty() ? "<root>" : path_);
  }

  void mark(const std::string& key) { used_.insert(key); }
  bool has(const std::string& key) const { return j_.contains(key) && !j_.at(key).is_null(); }
  std::string path(const std::string& key) const { return join(path_, key); }

  const json& raw(const std::string& key) {
    used_.insert(key);
    return j_.at(key);
  }

  std::optional<double> quantity(const std::string& key, Dimension dim) {
    used_.insert(key);
    if (!has(key)) return std::nullopt;
    return value_of(j_.at(key), dim, path(key));
  }

  void quantity(const std::string& key, Dimension dim, double& out) {
    if (auto v = quantity(key, dim)) out = *v;
  }

  void count(const std::string& key, std::size_t& out, std::size_t min_value) {
    used_.insert(key);
    if (!has(key)) return;
    const json& v = j_.at(key);
    if (!v.is_number_integer() || v.get<long long>() < static_cast<long long>(min_value))
      throw ConfigError("expected an integer >= " + std::to_string(min_value), path(key));
    out = v.get<std::size_t>();
  }

  std::optional<std::string> text(const std::string& key) {
    used_.insert(key);
    if (!has(key)) return std::nullopt;
    if (!j_.at(key).is_string()) throw ConfigError("expected a string", path(key));
    return j_.at(key).get<std::string>();
  }

  std::optional<Section> child(const std::string& key) {
    used_.insert(key);
    if (!has(key)) return std::nullopt;
    return Section(j_.at(key), path(key));
  }

  void finish() const {
    for (const auto& [key, _] : j_.items())
      if (!used_.count(key)) throw ConfigError("unknown key", path(key));
  }

  static double value_of(const json& v, Dimension dim, const std::string& path) {
    if (v.is_number()) {
      const double x = v.get<double>();
      if (!std::isfinite(x)) throw ConfigError("must be finite", path);
      return x;
    }
    if (v.is_string()) return parse_quantity(v.get<std::string>(), dim, path);
    throw ConfigError(std::string("expected a number or a ") + dimension_name(dim), path);
  }

private:
  const json& j_;
  std::string path_;
  std::set<std::string> used_;
};

std::vector<double> value_list(Section& s, const std::string& key, Dimension dim) {
  const json& v = s.raw(key);
  if (!v.is_array()) throw ConfigError("expected a list", s.path(key));
  std::vector<double> out;
  for (std::size_t i = 0; i < v.size(); ++i)
    out.push_back(Section::value_of(v[i], dim, s.path(key) + "[" + std::to_string(i) + "]"));
  return out;
}

Dimension axis_dimension(SweepAxis a) {
  switch (a) {
    case SweepAxis::Xi: return Dimension::Rate;
    case SweepAxis::TEff: return Dimension::Time;
    case SweepAxis::Cooperativity: return Dimension::None;
    case SweepAxis::Frequency: return Dimension::Frequency;
    case SweepAxis::B0: return Dimension::Field;
    case SweepAxis::None: break;
  }
  return Dimension::None;
}

SweepAxis parse_axis(const std::string& name, const std::string& path) {
  if (name == "xi") return SweepAxis::Xi;
  if (name == "t_eff") return SweepAxis::TEff;
  if (name == "cooperativity") return SweepAxis::Cooperativity;
  if (name == "frequency") return SweepAxis::Frequency;
  if (name == "b0") return SweepAxis::B0;
  throw ConfigError("unknown sweep axis `" + name + "` (xi, t_eff, cooperativity, frequency, b0)", path);
}

void parse_sweep(Section s, SweepSpec& out) {
  const auto axis = s.text("axis");
  if (!axis) throw ConfigError("missing required key", s.path("axis"));
  out.axis = parse_axis(*axis, s.path("axis"));
  const Dimension dim = axis_dimension(out.axis);
  const bool has_values = s.has("values");
  const bool has_range = s.has("range");
  if (has_values == has_range) throw ConfigError("give exactly one of `values` or `range`", s.path("values"));
  if (has_values) {
    out.values = value_list(s, "values", dim);
  } else {
    Section r = *s.child("range");
    const auto start = r.quantity("start", dim);
    const auto stop = r.quantity("stop", dim);
    std::size_t count = 0;
    r.count("count", count, 1);
    const std::string spacing = r.text("spacing").value_or("linear");
    r.finish();
    if (!start) throw ConfigError("missing required key", r.path("start"));
    if (!stop) throw ConfigError("missing required key", r.path("stop"));
    if (count == 0) throw ConfigError("missing required key", r.path("count"));
    if (spacing != "linear" && spacing != "log")
      throw ConfigError("spacing must be `linear` or `log`", r.path("spacing"));
    if (spacing == "log" && !(*start * *stop > 0.0))
      throw ConfigError("log spacing needs start and stop of the same sign, nonzero", r.path("spacing"));
    for (std::size_t i = 0; i < count; ++i) {
      const double u = count == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(count - 1);
      out.values.push_back(spacing == "linear" ? *start + u * (*stop - *start)
                                               : *start * std::pow(*stop / *start, u));
    }
  }
  s.finish();
  if (out.values.empty()) throw ConfigError("sweep grid is empty", s.path("values"));
}

json sweep_json(const SweepSpec& s) {
  json j;
  j["axis"] = std::string(to_string(s.axis));
  j["values"] = s.values;
  return j;
}

std::string method_name(IntegrationMethod m) {
  switch (m) {
    case IntegrationMethod::RK4Fixed: return "rk4";
    case IntegrationMethod::RK45Adaptive: return "rk45";
    case IntegrationMethod::ExactLinear: return "exact";
  }
  return "rk45";
}

json canonical_json(const ExperimentConfig& c) {
  json j;
  j["system"] = {{"gamma", c.system.gamma},
                 {"t2_intrinsic", c.system.t2_intrinsic},
                 {"t1", std::isinf(c.system.t1) ? json("inf") : json(c.system.t1)},
                 {"p0", c.system.p0},
                 {"b_max", c.system.b_max},
                 {"b0", c.system.b0}};
  j["feedback"] = {{"xi", c.feedback.xi}, {"shift_ratio", c.feedback.shift_ratio}};
  j["drive"] = {{"amplitude", c.drive.amplitude},
                {"frequency", c.drive.frequency ? json(*c.drive.frequency) : json("resonance")},
                {"phase", c.drive.phase}};
  j["noise"] = {{"photon_shot", c.noise.photon_shot},
                {"magnetic", c.noise.magnetic},
                {"spin_projection", c.noise.spin_projection}};
  j["integrator"] = {{"method", method_name(c.integrator.method)},
                     {"dt", c.integrator.dt},
                     {"rtol", c.integrator.rtol},
                     {"atol", c.integrator.atol},
                     {"max_step", c.integrator.max_step},
                     {"record_rate", c.integrator.record_rate},
                     {"frame", c.integrator.frame == Frame::Rotating ? "rotating" : "lab"}};
  j["sweep"] = c.sweep.axis == SweepAxis::None ? json(nullptr) : sweep_json(c.sweep);
  j["decay"] = {{"tip_angle", c.decay.tip_angle},
                {"duration_teff", c.decay.duration_teff},
                {"min_duration", c.decay.min_duration},
                {"duration", c.decay.duration ? json(*c.decay.duration) : json(nullptr)}};
  j["driven"] = {{"duration_teff", c.driven.duration_teff}, {"lockin_teff", c.driven.lockin_teff}};
  j["frequency_sweep"] = {{"points", c.frequency_sweep.points},
                          {"span_linewidths", c.frequency_sweep.span_linewidths},
                          {"shift_xi", c.frequency_sweep.shift_xi},
                          {"shift_points", c.frequency_sweep.shift_points},
                          {"shift_span_linewidths", c.frequency_sweep.shift_span_linewidths}};
  j["sensitivity"] = {{"segments", c.sensitivity.segments},
                      {"settle_teff", c.sensitivity.settle_teff},
                      {"spectrum_linewidths", c.sensitivity.spectrum_linewidths}};
  j["regime_map"] = {{"growth_lifetimes", c.regime_map.growth_lifetimes},
                     {"max_duration", c.regime_map.max_duration},
                     {"maser_seed", c.regime_map.maser_seed}};
  j["fit"] = {{"tolerance", c.fit.tolerance},
              {"max_iterations", c.fit.max_iterations},
              {"jacobian_step", c.fit.jacobian_step}};
  return j;
}

void require_positive(double v, const std::string& path) {
  if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError("must be > 0", path);
}

}  // namespace

std::string_view to_string(SweepAxis a) noexcept {
  switch (a) {
    case SweepAxis::None: return "none";
    case SweepAxis::Xi: return "xi";
    case SweepAxis::TEff: return "t_eff";
    case SweepAxis::Cooperativity: return "cooperativity";
    case SweepAxis::Frequency: return "frequency";
    case SweepAxis::B0: return "b0";
  }
  return "none";
}

std::uint64_t fnv1a64(std::string_view data) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string ExperimentConfig::hash_hex() const {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(hash));
  return buf;
}

std::uint64_t ExperimentConfig::seed_or_default() const {
  if (seed) return *seed;
  if (!noise.silent()) throw ConfigError("a seed is required when noise is enabled", "seed");
  return 0;
}

double parse_quantity(std::string_view text, Dimension dim, const std::string& path) {
  auto strip = [](std::string_view v) {
    std::string out(v);
    out.erase(std::remove_if(out.begin(), out.end(), [](unsigned char c) { return std::isspace(c); }), out.end());
    return out;
  };
  while (!text.empty() && std::isspace(static_cast<unsigned char>(text.front()))) text.remove_prefix(1);
  if (text.empty()) throw ConfigError(std::string("empty value; expected a ") + dimension_name(dim), path);

  double value = 0.0;
  const char* begin = text.data();
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc() || ptr == begin)
    throw ConfigError("cannot read a number from `" + std::string(text) + "`", path);
  if (!std::isfinite(value)) throw ConfigError("must be finite", path);
  const std::string unit = strip(std::string_view(ptr, static_cast<std::size_t>(end - ptr)));
  if (unit.empty()) return value;
  const auto& table = unit_table(dim);
  const auto it = table.find(unit);
  if (it == table.end())
    throw ConfigError("unit `" + unit + "` does not fit a " + dimension_name(dim), path);
  return value * it->second;
}

ExperimentConfig parse_config(std::string_view text, std::optional<std::uint64_t> seed_override) {
  json root;
  try {
    root = json::parse(text.begin(), text.end(), nullptr, true, /*ignore_comments=*/true);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("malformed JSON: ") + e.what(), "<root>");
  }

  ExperimentConfig c;
  Section top(root, "");

  // system
  {
    auto sys = top.child("system");
    if (!sys) throw ConfigError("missing required key", "system");
    SystemParams& p = c.system;
    if (auto g = sys->quantity("gamma_cyc", Dimension::GyroRatio)) p.gamma = kTwoPi * *g;
    sys->quantity("t2_intrinsic", Dimension::Time, p.t2_intrinsic);
    if (sys->has("t1") && sys->raw("t1").is_string() && sys->raw("t1").get<std::string>() == "inf")
      p.t1 = std::numeric_limits<double>::infinity();
    else
      sys->quantity("t1", Dimension::Time, p.t1);
    sys->quantity("p0", Dimension::None, p.p0);
    sys->quantity("b0", Dimension::Field, p.b0);
    const auto b_max = sys->quantity("b_max", Dimension::Field);
    const auto rate = sys->quantity("amplification_rate", Dimension::Rate);
    if (b_max && rate) throw ConfigError("give at most one of `b_max` and `amplification_rate`", "system.b_max");
    if (p.p0 > 0.0 && p.gamma != 0.0)
      p.b_max = b_max ? *b_max : SystemParams::b_max_for_rate(rate.value_or(kDefaultAmplificationRate), p.gamma, p.p0);
    else if (b_max)
      p.b_max = *b_max;
    if (rate) require_positive(*rate, "system.amplification_rate");
    sys->finish();
    p.validate();
  }

  // feedback
  if (auto fb = top.child("feedback")) {
    const auto slope = fb->quantity("shift_slope", Dimension::ShiftSlope);
    const auto ratio = fb->quantity("shift_ratio", Dimension::None);
    if (slope && ratio) throw ConfigError("give at most one of `shift_slope` and `shift_ratio`", fb->path("shift_slope"));
    if (slope) c.feedback.shift_ratio = kTwoPi * *slope;
    if (ratio) c.feedback.shift_ratio = *ratio;
    const auto xi = fb->quantity("xi", Dimension::Rate);
    const auto t_eff = fb->quantity("t_eff", Dimension::Time);
    const auto coop = fb->quantity("cooperativity", Dimension::None);
    if ((xi ? 1 : 0) + (t_eff ? 1 : 0) + (coop ? 1 : 0) > 1)
      throw ConfigError("give at most one of `xi`, `t_eff` and `cooperativity`", fb->path("xi"));
    if (xi) c.feedback.xi = *xi;
    if (t_eff) {
      require_positive(*t_eff, fb->path("t_eff"));
      c.feedback.xi = FeedbackConfig::for_effective_time(c.system, *t_eff).xi;
    }
    if (coop) c.feedback.xi = FeedbackConfig::for_cooperativity(c.system, *coop).xi;
    fb->finish();
  }

  // drive
  if (auto d = top.child("drive")) {
    d->quantity("amplitude", Dimension::Field, c.drive.amplitude);
    if (d->has("frequency") && d->raw("frequency").is_string() && d->raw("frequency").get<std::string>() == "resonance")
      c.drive.frequency.reset();
    else
      c.drive.frequency = d->quantity("frequency", Dimension::Frequency);
    d->quantity("phase", Dimension::Angle, c.drive.phase);
    d->finish();
    DriveField{c.drive.amplitude, c.drive.frequency.value_or(0.0), c.drive.phase}.validate();
  }

  // noise
  if (auto n = top.child("noise")) {
    n->quantity("photon_shot", Dimension::FieldDensity, c.noise.photon_shot);
    n->quantity("magnetic", Dimension::FieldDensity, c.noise.magnetic);
    n->quantity("spin_projection", Dimension::FieldDensity, c.noise.spin_projection);
    n->finish();
    c.noise.validate();
  }

  // integrator
  if (auto in = top.child("integrator")) {
    auto& ic = c.integrator;
    if (auto m = in->text("method")) {
      if (*m == "rk45") ic.method = IntegrationMethod::RK45Adaptive;
      else if (*m == "rk4") ic.method = IntegrationMethod::RK4Fixed;
      else if (*m == "exact") ic.method = IntegrationMethod::ExactLinear;
      else throw ConfigError("method must be `rk45`, `rk4` or `exact`", in->path("method"));
    }
    in->quantity("dt", Dimension::Time, ic.dt);
    in->quantity("rtol", Dimension::None, ic.rtol);
    in->quantity("atol", Dimension::None, ic.atol);
    in->quantity("max_step", Dimension::Time, ic.max_step);
    in->quantity("record_rate", Dimension::Frequency, ic.record_rate);
    if (auto f = in->text("frame")) {
      if (*f == "rotating") ic.frame = Frame::Rotating;
      else if (*f == "lab") ic.frame = Frame::Lab;
      else throw ConfigError("frame must be `rotating` or `lab`", in->path("frame"));
    }
    in->finish();
    require_positive(ic.dt, "integrator.dt");
    require_positive(ic.rtol, "integrator.rtol");
    require_positive(ic.atol, "integrator.atol");
    require_positive(ic.max_step, "integrator.max_step");
    require_positive(ic.record_rate, "integrator.record_rate");
  }

  if (auto s = top.child("sweep")) parse_sweep(*s, c.sweep);

  if (auto d = top.child("decay")) {
    d->quantity("tip_angle", Dimension::Angle, c.decay.tip_angle);
    d->quantity("duration_teff", Dimension::None, c.decay.duration_teff);
    d->quantity("min_duration", Dimension::Time, c.decay.min_duration);
    c.decay.duration = d->quantity("duration", Dimension::Time);
    d->finish();
    if (!(c.decay.tip_angle >= 0.0 && c.decay.tip_angle < kTwoPi / 4.0))
      throw ConfigError("must lie in [0, 90) deg", "decay.tip_angle");
    require_positive(c.decay.duration_teff, "decay.duration_teff");
    if (c.decay.duration) require_positive(*c.decay.duration, "decay.duration");
  }

  if (auto d = top.child("driven")) {
    d->quantity("duration_teff", Dimension::None, c.driven.duration_teff);
    d->quantity("lockin_teff", Dimension::None, c.driven.lockin_teff);
    d->finish();
    if (!(c.driven.duration_teff >= 5.0)) throw ConfigError("must be >= 5", "driven.duration_teff");
    if (!(c.driven.lockin_teff > 0.0 && c.driven.lockin_teff <= c.driven.duration_teff - 3.0))
      throw ConfigError("must lie in (0, duration_teff - 3]", "driven.lockin_teff");
  }

  if (auto f = top.child("frequency_sweep")) {
    auto& o = c.frequency_sweep;
    f->count("points", o.points, 4);
    f->quantity("span_linewidths", Dimension::None, o.span_linewidths);
    if (f->has("shift_xi")) o.shift_xi = value_list(*f, "shift_xi", Dimension::Rate);
    else f->mark("shift_xi");
    f->count("shift_points", o.shift_points, 4);
    f->quantity("shift_span_linewidths", Dimension::None, o.shift_span_linewidths);
    f->finish();
    require_positive(o.span_linewidths, "frequency_sweep.span_linewidths");
    require_positive(o.shift_span_linewidths, "frequency_sweep.shift_span_linewidths");
  }

  if (auto s = top.child("sensitivity")) {
    s->count("segments", c.sensitivity.segments, 2);
    s->quantity("settle_teff", Dimension::None, c.sensitivity.settle_teff);
    s->quantity("spectrum_linewidths", Dimension::None, c.sensitivity.spectrum_linewidths);
    s->finish();
    if (!(c.sensitivity.settle_teff >= 0.0)) throw ConfigError("must be >= 0", "sensitivity.settle_teff");
    require_positive(c.sensitivity.spectrum_linewidths, "sensitivity.spectrum_linewidths");
  }

  if (auto r = top.child("regime_map")) {
    r->quantity("growth_lifetimes", Dimension::None, c.regime_map.growth_lifetimes);
    r->quantity("max_duration", Dimension::Time, c.regime_map.max_duration);
    r->quantity("maser_seed", Dimension::None, c.regime_map.maser_seed);
    r->finish();
    require_positive(c.regime_map.growth_lifetimes, "regime_map.growth_lifetimes");
    require_positive(c.regime_map.max_duration, "regime_map.max_duration");
    if (!(c.regime_map.maser_seed > 0.0 && c.regime_map.maser_seed < 0.1 * c.system.p0))
      throw ConfigError("must lie in (0, 0.1 p0)", "regime_map.maser_seed");
  }

  if (auto f = top.child("fit")) {
    f->quantity("tolerance", Dimension::None, c.fit.tolerance);
    std::size_t iterations = static_cast<std::size_t>(c.fit.max_iterations);
    f->count("max_iterations", iterations, 1);
    c.fit.max_iterations = static_cast<int>(std::min<std::size_t>(iterations, 1000000));
    f->quantity("jacobian_step", Dimension::None, c.fit.jacobian_step);
    f->finish();
    require_positive(c.fit.tolerance, "fit.tolerance");
    require_positive(c.fit.jacobian_step, "fit.jacobian_step");
  }

  if (auto o = top.child("output")) {
    if (auto d = o->text("directory")) c.output.directory = *d;
    o->finish();
  }

  if (top.has("seed")) {
    const json& s = top.raw("seed");
    if (s.is_number_unsigned()) c.seed = s.get<std::uint64_t>();
    else if (s.is_number_integer() && s.get<long long>() >= 0) c.seed = static_cast<std::uint64_t>(s.get<long long>());
    else if (s.is_string()) {
      const std::string t = s.get<std::string>();
      std::uint64_t v = 0;
      auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
      if (ec != std::errc() || ptr != t.data() + t.size()) throw ConfigError("expected a 64-bit unsigned integer", "seed");
      c.seed = v;
    } else {
      throw ConfigError("expected a 64-bit unsigned integer", "seed");
    }
  } else {
    top.mark("seed");
  }
  top.finish();

  if (seed_override) c.seed = seed_override;
  if (!c.noise.silent() && !c.seed) throw ConfigError("a seed is required when noise is enabled", "seed");

  c.canonical = canonical_json(c).dump();
  c.hash = fnv1a64(c.canonical);
  return c;
}

ExperimentConfig load_config(const std::string& path, std::optional<std::uint64_t> seed_override) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file `" + path + "`", "--config");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), seed_override);
}

}  // namespace coopamp
