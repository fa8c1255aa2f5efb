#pragma once

#include "mrcbf/sim.hpp"

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace mrcbf {

/// Malformed or incomplete configuration. The message names the offending
/// section and key, and the line for section files.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Section -> key -> (value text, source line). JSON input has line 0.
struct RawConfig {
  struct Entry {
    std::string value;
    int line = 0;
  };
  std::map<std::string, std::map<std::string, Entry>> sections;
  std::map<std::string, int> section_lines;
  /// Bytes the config was parsed from; hashed into output provenance.
  std::string source;

  bool has(const std::string& section) const { return sections.count(section) > 0; }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::string where(const std::string& section, const std::string& key, int line) {
  std::string out = line > 0 ? "line " + std::to_string(line) + ": " : "";
  return out + section + (key.empty() ? "" : "." + key);
}

}  // namespace detail

/// `[section]` headers and `key = value` lines; `#` and `;` start comments.
inline RawConfig parse_ini(const std::string& text) {
  RawConfig raw;
  raw.source = text;
  std::istringstream is(text);
  std::string line;
  std::string section;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find_first_of("#;");
    const std::string body = detail::trim(hash == std::string::npos ? line : line.substr(0, hash));
    if (body.empty()) continue;
    if (body.front() == '[') {
      if (body.back() != ']' || body.size() < 3) {
        throw ConfigError("line " + std::to_string(lineno) + ": malformed section header '" + body + "'");
      }
      section = detail::trim(body.substr(1, body.size() - 2));
      if (raw.sections.count(section)) {
        throw ConfigError("line " + std::to_string(lineno) + ": duplicate section [" + section + "]");
      }
      raw.sections[section];
      raw.section_lines[section] = lineno;
      continue;
    }
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(lineno) + ": expected 'key = value', got '" + body + "'");
    }
    const std::string key = detail::trim(body.substr(0, eq));
    const std::string value = detail::trim(body.substr(eq + 1));
    if (section.empty()) throw ConfigError("line " + std::to_string(lineno) + ": key '" + key + "' outside a section");
    if (key.empty()) throw ConfigError("line " + std::to_string(lineno) + ": empty key");
    auto& keys = raw.sections[section];
    if (keys.count(key)) throw ConfigError(detail::where(section, key, lineno) + ": duplicate key");
    keys[key] = {value, lineno};
  }
  return raw;
}

/// Object of section objects; arrays become comma-separated lists.
inline RawConfig parse_json(const std::string& text) {
  RawConfig raw;
  raw.source = text;
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("JSON parse error: ") + e.what());
  }
  if (!doc.is_object()) throw ConfigError("JSON config: top level must be an object of sections");
  auto scalar = [](const nlohmann::json& v, const std::string& path) -> std::string {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
    if (v.is_number_integer()) return std::to_string(v.get<std::int64_t>());
    if (v.is_number()) return format_number(v.get<double>());
    throw ConfigError(path + ": unsupported JSON value");
  };
  for (const auto& [section, body] : doc.items()) {
    if (!body.is_object()) throw ConfigError(section + ": section must be a JSON object");
    auto& keys = raw.sections[section];
    for (const auto& [key, value] : body.items()) {
      const std::string path = section + "." + key;
      std::string text_value;
      if (value.is_array()) {
        for (std::size_t i = 0; i < value.size(); ++i) {
          text_value += (i ? "," : "") + scalar(value[i], path);
        }
      } else {
        text_value = scalar(value, path);
      }
      keys[key] = {text_value, 0};
    }
  }
  return raw;
}

/// JSON when the first non-blank character is '{', section file otherwise.
inline RawConfig parse_config_text(const std::string& text) {
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && text[first] == '{') return parse_json(text);
  return parse_ini(text);
}

inline RawConfig read_raw_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

/// FNV-1a 64-bit hash as 16 hex digits.
inline std::string config_hash(const std::string& bytes) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

/// Typed, consumed view of one section. Every read marks the key as known so
/// leftovers can be reported as unknown.
class SectionReader {
 public:
  SectionReader(const RawConfig& raw, std::string section) : section_(std::move(section)) {
    const auto it = raw.sections.find(section_);
    if (it != raw.sections.end()) entries_ = &it->second;
  }

  bool present() const { return entries_ != nullptr; }
  bool has(const std::string& key) const { return entries_ && entries_->count(key); }

  double number(const std::string& key, std::optional<double> fallback = std::nullopt) {
    const auto* e = lookup(key, fallback.has_value());
    if (!e) return *fallback;
    return parse_double(*e, key);
  }

  long integer(const std::string& key, std::optional<long> fallback = std::nullopt) {
    const auto* e = lookup(key, fallback.has_value());
    if (!e) return *fallback;
    long v = 0;
    const char* b = e->value.data();
    const char* end = b + e->value.size();
    const auto [p, ec] = std::from_chars(b, end, v);
    if (ec != std::errc() || p != end) fail(key, e->line, "expected an integer, got '" + e->value + "'");
    return v;
  }

  std::string text(const std::string& key, std::optional<std::string> fallback = std::nullopt) {
    const auto* e = lookup(key, fallback.has_value());
    if (!e) return *fallback;
    return e->value;
  }

  bool boolean(const std::string& key, std::optional<bool> fallback = std::nullopt) {
    const auto* e = lookup(key, fallback.has_value());
    if (!e) return *fallback;
    if (e->value == "true") return true;
    if (e->value == "false") return false;
    fail(key, e->line, "expected true or false, got '" + e->value + "'");
  }

  std::vector<double> numbers(const std::string& key, std::optional<std::vector<double>> fallback = std::nullopt,
                              std::optional<std::size_t> size = std::nullopt) {
    const auto* e = lookup(key, fallback.has_value());
    if (!e) return *fallback;
    std::vector<double> out;
    std::string item;
    std::istringstream is(e->value);
    while (std::getline(is, item, ',')) out.push_back(parse_double({detail::trim(item), e->line}, key));
    if (out.empty()) fail(key, e->line, "empty list");
    if (size && out.size() != *size) {
      fail(key, e->line, "expected " + std::to_string(*size) + " values, got " + std::to_string(out.size()));
    }
    return out;
  }

  Vector vector(const std::string& key, std::optional<Vector> fallback, std::size_t size) {
    std::optional<std::vector<double>> fb;
    if (fallback) fb = std::vector<double>(fallback->data(), fallback->data() + fallback->size());
    const auto v = numbers(key, fb, size);
    return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
  }

  template <typename Enum>
  Enum choice(const std::string& key, const std::vector<std::pair<std::string, Enum>>& options,
              std::optional<Enum> fallback = std::nullopt) {
    const auto* e = lookup(key, fallback.has_value());
    if (!e) return *fallback;
    std::string names;
    for (const auto& [name, value] : options) {
      if (name == e->value) return value;
      names += (names.empty() ? "" : ", ") + name;
    }
    fail(key, e->line, "unknown value '" + e->value + "' (expected one of " + names + ")");
  }

  /// Throws on any key that no getter asked for.
  void reject_unknown() const {
    if (!entries_) return;
    for (const auto& [key, entry] : *entries_) {
      if (!used_.count(key)) fail(key, entry.line, "unknown key");
    }
  }

  [[noreturn]] void fail(const std::string& key, int line, const std::string& what) const {
    throw ConfigError(detail::where(section_, key, line) + ": " + what);
  }

 private:
  const RawConfig::Entry* lookup(const std::string& key, bool optional) {
    used_.insert(key);
    if (entries_) {
      const auto it = entries_->find(key);
      if (it != entries_->end()) return &it->second;
    }
    if (!optional) fail(key, 0, "missing required key");
    return nullptr;
  }

  double parse_double(const RawConfig::Entry& e, const std::string& key) const {
    try {
      const double v = parse_number(e.value);
      if (std::isnan(v)) fail(key, e.line, "NaN is not allowed");
      return v;
    } catch (const std::invalid_argument&) {
      fail(key, e.line, "expected a number, got '" + e.value + "'");
    } catch (const std::out_of_range&) {
      fail(key, e.line, "number out of range '" + e.value + "'");
    }
  }

  std::string section_;
  const std::map<std::string, RawConfig::Entry>* entries_ = nullptr;
  std::set<std::string> used_;
};

/// Camera model, calibration grid and regressor settings of the learned scenario.
struct PerceptionConfig {
  Vector camera_gain = Vector::Constant(2, 1.0);
  Vector camera_offset = Vector::Constant(2, 0.1);
  Vector camera_amplitude = Vector::Constant(2, 0.3);
  Vector camera_frequency = Vector::Constant(2, 2.0);
  /// Calibration grid over (r, theta).
  Vector lower = Vector::Zero(2);
  Vector upper = Vector::Zero(2);
  std::vector<int> samples{20, 40};
  double sigma_w = 0.1;
  /// Kernel radius in measurement space; 0 selects it on a train/test split.
  double radius = 0.0;
  std::vector<double> radius_candidates{0.05, 0.1, 0.15, 0.2, 0.25, 0.3};
  double train_fraction = 0.8;
  std::uint64_t seed = 1;
  double delta = 0.05;
  /// Explicit nonparametric-bound parameters; derived from the regressor when absent.
  std::optional<double> L, sigma, gamma;
};

struct OutputConfig {
  std::string dir = "out";
  std::string prefix = "run";
  double field_theta_span = 0.6;
  double field_rate_span = 3.0;
  int field_points = 61;
};

struct RunConfig {
  Scenario scenario;
  SegwayParams segway;
  SegwayBarrierConfig barrier;
  Box lipschitz_box;
  double lipschitz_safety = 1.2;
  PDGains gains;
  SolverTolerances tolerances;
  std::optional<PerceptionConfig> perception;
  OutputConfig output;
  std::string hash;
};

inline const std::vector<std::pair<std::string, ScenarioKind>>& scenario_kinds() {
  static const std::vector<std::pair<std::string, ScenarioKind>> v{
      {"worst_case_offset", ScenarioKind::worst_case_offset},
      {"learned_perception", ScenarioKind::learned_perception},
      {"perfect_state", ScenarioKind::perfect_state},
      {"bounded_random", ScenarioKind::bounded_random}};
  return v;
}

inline const std::vector<std::pair<std::string, FilterKind>>& filter_kinds() {
  static const std::vector<std::pair<std::string, FilterKind>> v{{"none", FilterKind::none},
                                                                  {"cbf_qp", FilterKind::cbf_qp},
                                                                  {"mr_op", FilterKind::mr_op},
                                                                  {"r_mr_op", FilterKind::r_mr_op}};
  return v;
}

/// Builds the typed config. Sections scenario, segway, barrier, lipschitz and
/// filter are required; perception is required by the learned scenario.
inline RunConfig parse_run_config(const RawConfig& raw) {
  static const std::set<std::string> known{"scenario", "segway",     "barrier", "lipschitz",
                                           "filter",   "perception", "output",  "controller"};
  for (const auto& [name, keys] : raw.sections) {
    if (!known.count(name)) {
      const auto it = raw.section_lines.find(name);
      throw ConfigError(detail::where(name, "", it == raw.section_lines.end() ? 0 : it->second) +
                        ": unknown section");
    }
  }
  for (const char* name : {"scenario", "segway", "barrier", "lipschitz", "filter"}) {
    if (!raw.has(name)) throw ConfigError(std::string("missing required section [") + name + "]");
  }

  RunConfig cfg;
  cfg.hash = config_hash(raw.source);

  SectionReader seg(raw, "segway");
  auto& p = cfg.segway;
  p.wheel_mass = seg.number("wheel_mass", p.wheel_mass);
  p.body_mass = seg.number("body_mass", p.body_mass);
  p.wheel_radius = seg.number("wheel_radius", p.wheel_radius);
  p.com_distance = seg.number("com_distance", p.com_distance);
  p.body_inertia = seg.number("body_inertia", p.body_inertia);
  p.wheel_inertia = seg.number("wheel_inertia", p.wheel_inertia);
  p.gravity = seg.number("gravity", p.gravity);
  p.friction = seg.number("friction", p.friction);
  p.theta_star = seg.number("theta_star", p.theta_star);
  seg.reject_unknown();

  SectionReader bar(raw, "barrier");
  cfg.barrier.c = bar.number("c");
  cfg.barrier.alpha_e = bar.number("alpha_e");
  cfg.barrier.alpha_gain = bar.number("alpha_gain", cfg.barrier.alpha_gain);
  cfg.barrier.theta_star = p.theta_star;
  bar.reject_unknown();

  SectionReader lip(raw, "lipschitz");
  const Vector lo = lip.vector("lower", std::nullopt, 4);
  const Vector hi = lip.vector("upper", std::nullopt, 4);
  const long points = lip.integer("points", 41);
  cfg.lipschitz_safety = lip.number("safety_factor", cfg.lipschitz_safety);
  lip.reject_unknown();
  cfg.lipschitz_box = Box(lo, hi, static_cast<int>(points));

  SectionReader ctl(raw, "controller");
  cfg.gains.kp = ctl.number("kp", cfg.gains.kp);
  cfg.gains.kd = ctl.number("kd", cfg.gains.kd);
  cfg.gains.kr = ctl.number("kr", cfg.gains.kr);
  cfg.gains.kr_dot = ctl.number("kr_dot", cfg.gains.kr_dot);
  cfg.gains.theta_star = p.theta_star;
  ctl.reject_unknown();

  SectionReader sc(raw, "scenario");
  auto& s = cfg.scenario;
  s.kind = sc.choice("kind", scenario_kinds());
  s.filter = sc.choice("filter", filter_kinds());
  s.initial_state = sc.vector("initial_state", std::nullopt, 4);
  s.duration = sc.number("duration", s.duration);
  s.control_rate = sc.number("control_rate", s.control_rate);
  s.integrator_dt = sc.number("integrator_dt", s.integrator_dt);
  s.perception_rate = sc.number("perception_rate", s.perception_rate);
  s.noise_seed = static_cast<std::uint64_t>(sc.integer("seed", static_cast<long>(s.noise_seed)));
  s.failure_streak_limit = static_cast<int>(sc.integer("failure_streak_limit", s.failure_streak_limit));
  sc.reject_unknown();

  SectionReader fil(raw, "filter");
  s.offset_eps = fil.number("eps", s.offset_eps);
  s.learned_eps = fil.number("learned_eps", s.learned_eps);
  const std::vector<std::pair<std::string, EpsMode>> eps_modes{{"fixed", EpsMode::fixed},
                                                                {"nonparametric", EpsMode::nonparametric}};
  s.eps_mode = fil.choice("eps_mode", eps_modes, std::optional<EpsMode>(s.eps_mode));
  s.eps_max = fil.number("eps_max", s.eps_max);
  s.penalty = fil.number("penalty", s.penalty);
  cfg.tolerances.feas = fil.number("feas_tol", cfg.tolerances.feas);
  cfg.tolerances.gap = fil.number("gap_tol", cfg.tolerances.gap);
  cfg.tolerances.rel_gap = cfg.tolerances.gap;
  cfg.tolerances.max_iters = static_cast<int>(fil.integer("max_iters", cfg.tolerances.max_iters));
  fil.reject_unknown();

  SectionReader per(raw, "perception");
  if (per.present()) {
    PerceptionConfig pc;
    pc.camera_gain = per.vector("camera_gain", pc.camera_gain, 2);
    pc.camera_offset = per.vector("camera_offset", pc.camera_offset, 2);
    pc.camera_amplitude = per.vector("camera_amplitude", pc.camera_amplitude, 2);
    pc.camera_frequency = per.vector("camera_frequency", pc.camera_frequency, 2);
    pc.lower = per.vector("lower", std::nullopt, 2);
    pc.upper = per.vector("upper", std::nullopt, 2);
    const auto samples = per.numbers("samples", std::vector<double>{20, 40}, 2);
    pc.samples = {static_cast<int>(samples[0]), static_cast<int>(samples[1])};
    pc.sigma_w = per.number("sigma_w", pc.sigma_w);
    if (per.has("radius") && per.text("radius") == "auto") {
      pc.radius = 0.0;
    } else {
      pc.radius = per.number("radius", pc.radius);
    }
    pc.radius_candidates = per.numbers("radius_candidates", pc.radius_candidates);
    pc.train_fraction = per.number("train_fraction", pc.train_fraction);
    pc.seed = static_cast<std::uint64_t>(per.integer("seed", static_cast<long>(pc.seed)));
    pc.delta = per.number("delta", pc.delta);
    if (per.has("L")) pc.L = per.number("L");
    if (per.has("sigma")) pc.sigma = per.number("sigma");
    if (per.has("gamma")) pc.gamma = per.number("gamma");
    per.reject_unknown();
    for (int i = 0; i < 2; ++i) {
      if (pc.samples[static_cast<std::size_t>(i)] < 2) per.fail("samples", 0, "need at least 2 per axis");
      if (!(pc.lower[i] < pc.upper[i])) per.fail("lower", 0, "lower must be below upper");
    }
    if (!(pc.sigma_w >= 0.0)) per.fail("sigma_w", 0, "must be nonnegative");
    if (!(pc.radius >= 0.0)) per.fail("radius", 0, "must be positive or auto");
    cfg.perception = pc;
  } else if (s.kind == ScenarioKind::learned_perception) {
    throw ConfigError("missing required section [perception] for scenario.kind = learned_perception");
  }

  SectionReader out(raw, "output");
  cfg.output.dir = out.text("dir", cfg.output.dir);
  cfg.output.prefix = out.text("prefix", cfg.output.prefix);
  cfg.output.field_theta_span = out.number("field_theta_span", cfg.output.field_theta_span);
  cfg.output.field_rate_span = out.number("field_rate_span", cfg.output.field_rate_span);
  cfg.output.field_points = static_cast<int>(out.integer("field_points", cfg.output.field_points));
  out.reject_unknown();
  if (cfg.output.field_points < 2) out.fail("field_points", 0, "need at least 2");

  try {
    p.validate();
    cfg.barrier.validate();
    cfg.lipschitz_box.validate();
    s.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return cfg;
}

inline RunConfig load_run_config(const std::string& path) { return parse_run_config(read_raw_config(path)); }

/// Camera on (r, theta) for the learned scenario.
inline MeasurementModel camera_model(const PerceptionConfig& pc) {
  SyntheticMapConfig mc;
  mc.n = 2;
  mc.featured = {0, 1};
  mc.gain = pc.camera_gain;
  mc.offset = pc.camera_offset;
  mc.amplitude = pc.camera_amplitude;
  mc.frequency = pc.camera_frequency;
  const Vector pad = 0.5 * (pc.upper - pc.lower);
  mc.lipschitz_box = Box(pc.lower - pad, pc.upper + pad, 41);
  return synthetic_measurement_map(mc);
}

/// Calibration grid over (r, theta), row-major in r.
inline std::vector<State> calibration_grid(const PerceptionConfig& pc) {
  std::vector<State> out;
  const int nr = pc.samples[0], nt = pc.samples[1];
  for (int i = 0; i < nr; ++i) {
    for (int j = 0; j < nt; ++j) {
      State s(2);
      s << pc.lower[0] + (pc.upper[0] - pc.lower[0]) * i / (nr - 1.0),
          pc.lower[1] + (pc.upper[1] - pc.lower[1]) * j / (nt - 1.0);
      out.push_back(s);
    }
  }
  return out;
}

/// Trains the NW inverse on noisy labels over the calibration grid.
inline LearnedPerception train_perception(const PerceptionConfig& pc) {
  const MeasurementModel cam = camera_model(pc);
  std::mt19937_64 rng(pc.seed);
  TrainingSet data = make_training_set(cam, calibration_grid(pc), pc.sigma_w, rng);
  const double radius = pc.radius > 0.0 ? pc.radius : select_radius(data, pc.radius_candidates, pc.train_fraction, rng);
  const std::size_t N = data.size();
  NWRegressor reg = nw_fit(std::move(data), radius, true);
  NonparametricBound bound = NonparametricBound::from_nw(cam, radius, cam.n, pc.sigma_w, N, pc.delta);
  if (pc.L) bound.L = *pc.L;
  if (pc.sigma) bound.sigma = *pc.sigma;
  if (pc.gamma) bound.gamma = *pc.gamma;
  return {cam, std::move(reg), bound};
}

inline SimSetup build_setup(const RunConfig& cfg) {
  SimSetup setup = segway_setup(cfg.segway, cfg.barrier, cfg.lipschitz_box, cfg.lipschitz_safety, cfg.gains);
  setup.tolerances = cfg.tolerances;
  if (cfg.perception) setup.perception = train_perception(*cfg.perception);
  return setup;
}

}  // namespace mrcbf
