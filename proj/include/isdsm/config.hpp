#pragma once

// Run configuration: one JSON document, validated against a fixed key set.
// Unknown keys and out-of-range values raise ConfigError naming the key.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "isdsm/errors.hpp"
#include "isdsm/flow.hpp"
#include "isdsm/kernel.hpp"
#include "isdsm/measures.hpp"
#include "isdsm/rates.hpp"
#include "isdsm/superprocess.hpp"

namespace isdsm {

using json = nlohmann::json;

namespace config_detail {

inline void only_keys(const json& j, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError("config key '" + where + "': expected an object");
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [key, value] : j.items()) {
    if (!ok.count(key)) throw ConfigError("config key '" + (where.empty() ? key : where + "." + key) + "': unknown key");
  }
}

inline std::string path_of(const std::string& where, const char* key) { return where.empty() ? key : where + "." + key; }

inline double number(const json& j, const std::string& where, const char* key, double fallback) {
  if (!j.contains(key)) return fallback;
  const json& v = j.at(key);
  if (!v.is_number()) throw ConfigError("config key '" + path_of(where, key) + "': expected a number");
  const double x = v.get<double>();
  if (!std::isfinite(x)) throw ConfigError("config key '" + path_of(where, key) + "': must be finite");
  return x;
}

inline double positive(const json& j, const std::string& where, const char* key, double fallback) {
  const double x = number(j, where, key, fallback);
  if (!(x > 0.0)) throw ConfigError("config key '" + path_of(where, key) + "': must be > 0");
  return x;
}

inline double nonnegative(const json& j, const std::string& where, const char* key, double fallback) {
  const double x = number(j, where, key, fallback);
  if (!(x >= 0.0)) throw ConfigError("config key '" + path_of(where, key) + "': must be >= 0");
  return x;
}

inline std::size_t count(const json& j, const std::string& where, const char* key, std::size_t fallback) {
  if (!j.contains(key)) return fallback;
  const json& v = j.at(key);
  if (!v.is_number_integer() || v.get<long long>() < 1) {
    throw ConfigError("config key '" + path_of(where, key) + "': expected a positive integer");
  }
  return v.get<std::size_t>();
}

inline std::string text(const json& j, const std::string& where, const char* key, const std::string& fallback) {
  if (!j.contains(key)) return fallback;
  if (!j.at(key).is_string()) throw ConfigError("config key '" + path_of(where, key) + "': expected a string");
  return j.at(key).get<std::string>();
}

inline std::vector<double> numbers(const json& j, const std::string& where, const char* key,
                                   std::vector<double> fallback) {
  if (!j.contains(key)) return fallback;
  const json& v = j.at(key);
  if (!v.is_array()) throw ConfigError("config key '" + path_of(where, key) + "': expected an array of numbers");
  std::vector<double> out;
  for (const json& e : v) {
    if (!e.is_number()) throw ConfigError("config key '" + path_of(where, key) + "': expected an array of numbers");
    out.push_back(e.get<double>());
  }
  return out;
}

/// [[position, mass], ...]
inline AtomicMeasure atoms(const json& v, const std::string& where) {
  if (!v.is_array()) throw ConfigError("config key '" + where + "': expected [[position, mass], ...]");
  std::vector<Atom> out;
  for (const json& e : v) {
    if (!e.is_array() || e.size() != 2 || !e[0].is_number() || !e[1].is_number()) {
      throw ConfigError("config key '" + where + "': expected [[position, mass], ...]");
    }
    out.push_back({e[0].get<double>(), e[1].get<double>()});
  }
  try {
    return AtomicMeasure(std::move(out));
  } catch (const ConfigError& e) {
    throw ConfigError("config key '" + where + "': " + e.what());
  }
}

}  // namespace config_detail

struct KernelSpec {
  std::string type = "gaussian";
  double amplitude = 1.0;
  double width = 0.5;
  std::string path;

  CorrelationKernel build() const { return type == "table" ? table_kernel(path) : gaussian_kernel(amplitude, width); }
  json to_json() const {
    if (type == "table") return {{"type", type}, {"file", path}};
    return {{"type", type}, {"amplitude", amplitude}, {"width", width}};
  }
};

/// m as atoms, a Gaussian or uniform density, or windowed Lebesgue.
struct MeasureSpec {
  std::string type = "atoms";
  AtomicMeasure atoms{std::vector<Atom>{{0.0, 1.0}}};
  double mass = 1.0;
  double mean = 0.0;
  double sd = 1.0;
  double lo = -1.0;
  double hi = 1.0;
  double half_width = 1.0;

  ReferenceMeasure build() const {
    if (type == "atoms") return ReferenceMeasure(atoms);
    if (type == "lebesgue") return ReferenceMeasure(LebesgueWindow{half_width});
    if (type == "uniform") {
      const double d = mass / (hi - lo);
      return ReferenceMeasure(DensityMeasure{[d](double) { return d; }, lo, hi, d});
    }
    const double peak = mass / (sd * std::sqrt(2.0 * M_PI));
    const double mu = mean, s = sd;
    return ReferenceMeasure(DensityMeasure{[=](double x) { return peak * std::exp(-0.5 * (x - mu) * (x - mu) / (s * s)); },
                                           mean - 8.0 * sd, mean + 8.0 * sd, peak});
  }

  json to_json() const {
    if (type == "atoms") {
      json a = json::array();
      for (const Atom& x : atoms.atoms()) a.push_back({x.position, x.mass});
      return {{"type", type}, {"atoms", a}};
    }
    if (type == "lebesgue") return {{"type", type}, {"half_width", half_width}};
    if (type == "uniform") return {{"type", type}, {"mass", mass}, {"lo", lo}, {"hi", hi}};
    return {{"type", type}, {"mass", mass}, {"mean", mean}, {"sd", sd}};
  }
};

inline MeasureSpec parse_measure(const json& j, const std::string& where) {
  using namespace config_detail;
  MeasureSpec m;
  m.type = text(j, where, "type", "atoms");
  if (m.type == "atoms") {
    only_keys(j, where, {"type", "atoms"});
    m.atoms = j.contains("atoms") ? atoms(j.at("atoms"), where + ".atoms") : AtomicMeasure{};
  } else if (m.type == "lebesgue") {
    only_keys(j, where, {"type", "half_width"});
    m.half_width = positive(j, where, "half_width", 1.0);
  } else if (m.type == "uniform") {
    only_keys(j, where, {"type", "mass", "lo", "hi"});
    m.mass = positive(j, where, "mass", 1.0);
    m.lo = number(j, where, "lo", -1.0);
    m.hi = number(j, where, "hi", 1.0);
    if (!(m.hi > m.lo)) throw ConfigError("config key '" + where + ".hi': must exceed lo");
  } else if (m.type == "gaussian") {
    only_keys(j, where, {"type", "mass", "mean", "sd"});
    m.mass = positive(j, where, "mass", 1.0);
    m.mean = number(j, where, "mean", 0.0);
    m.sd = positive(j, where, "sd", 1.0);
  } else {
    throw ConfigError("config key '" + where + ".type': expected atoms, lebesgue, uniform or gaussian");
  }
  return m;
}

inline RateSpec parse_rate(const json& j, const std::string& where, std::string& source_path) {
  using namespace config_detail;
  const std::string type = text(j, where, "type", "constant");
  if (type == "constant") {
    only_keys(j, where, {"type", "value"});
    return RateSpec::constant(nonnegative(j, where, "value", 1.0));
  }
  if (type == "site_bump") {
    only_keys(j, where, {"type", "q_inf", "amplitude", "width"});
    return RateSpec::site_bump(nonnegative(j, where, "q_inf", 1.0), number(j, where, "amplitude", 1.0),
                               positive(j, where, "width", 1.0));
  }
  if (type == "mass_sigmoid") {
    only_keys(j, where, {"type", "low", "high", "center", "scale", "p"});
    return RateSpec::mass_sigmoid(nonnegative(j, where, "low", 0.5), nonnegative(j, where, "high", 1.0),
                                  number(j, where, "center", 1.0), positive(j, where, "scale", 1.0),
                                  nonnegative(j, where, "p", 0.0));
  }
  if (type == "mass_decay") {
    only_keys(j, where, {"type", "limit", "amplitude", "scale", "p"});
    return RateSpec::mass_decay(nonnegative(j, where, "limit", 1.0), number(j, where, "amplitude", 1.0),
                                positive(j, where, "scale", 1.0), nonnegative(j, where, "p", 0.0));
  }
  if (type == "table") {
    only_keys(j, where, {"type", "file"});
    source_path = text(j, where, "file", "");
    if (source_path.empty()) throw ConfigError("config key '" + where + ".file': required for a table rate");
    return RateSpec::table(source_path);
  }
  throw ConfigError("config key '" + where + ".type': expected constant, site_bump, mass_sigmoid, mass_decay or table");
}

inline json rate_to_json(const RateSpec& q, const std::string& path) {
  switch (q.kind) {
    case RateSpec::Kind::kConstant:
      return {{"type", "constant"}, {"value", q.value}};
    case RateSpec::Kind::kSiteBump:
      return {{"type", "site_bump"}, {"q_inf", q.q_inf}, {"amplitude", q.amplitude}, {"width", q.width}};
    case RateSpec::Kind::kMassSigmoid:
      return {{"type", "mass_sigmoid"}, {"low", q.low},     {"high", q.high},
              {"center", q.center},     {"scale", q.scale}, {"p", q.p}};
    case RateSpec::Kind::kMassDecay:
      return {{"type", "mass_decay"}, {"limit", q.limit}, {"amplitude", q.amplitude}, {"scale", q.scale}, {"p", q.p}};
    case RateSpec::Kind::kTable:
      return {{"type", "table"}, {"file", path}};
  }
  return {};
}

struct LocalTimeSpec {
  double delta = 0.0;  // 0: 4 sqrt(rho0 dt)
  std::size_t per_bandwidth = 4;
  double b_lo = -4.0;
  double b_hi = 4.0;
  std::vector<double> t_grid;  // empty: every grid_dt
  // Moment regression.
  double anchor_b = 0.0;
  double anchor_t = 0.0;
  std::vector<double> time_lags;   // empty: [10, 100] * delta^2 / rho0
  double space_t = 0.0;            // 0: horizon
  std::vector<double> space_bases{0.0};
  std::vector<double> space_lags;  // empty: [4, 40] * delta
  std::size_t lag_points = 6;
};

struct ScalingSpec {
  std::vector<double> k{2.0, 4.0, 8.0};
  double t = 1.0;
  double base_dt = 0.01;
  double base_eps = 0.01;
  double phi_scale = 1.0;  // Gaussian test function width
  double window_sd = 6.0;  // Lebesgue window: A = k (window_sd + window_sd sqrt(rho0 t))
  bool local_time = true;
};

struct VerifySpec {
  std::vector<double> times{0.5, 1.0};
  double p = 2.0;
};

struct RunConfig {
  std::string experiment = "simulate";
  double sigma = 1.0;
  double excursion_eps = 0.0;  // 0: 1e-3 * horizon
  double dt = 0.01;
  double grid_dt = 0.0;  // 0: dt
  double horizon = 1.0;
  std::size_t max_atoms = 4096;
  std::string flow_backend = "auto";
  double lattice_cell = 0.0;
  double p = 0.0;
  KernelSpec kernel;
  AtomicMeasure mu;
  MeasureSpec m;
  RateSpec q = RateSpec::constant(1.0);
  std::string q_path;
  double q_max = 0.0;  // 0: sup of q
  double picard_tol = 0.0;
  std::size_t picard_max_iter = 50;
  double candidate_cap = 2e7;
  bool write_paths = true;
  LocalTimeSpec localtime;
  ScalingSpec scaling;
  VerifySpec verify;

  double eps() const { return excursion_eps > 0.0 ? excursion_eps : 1e-3 * horizon; }
  double output_dt() const { return grid_dt > 0.0 ? grid_dt : dt; }
  double declared_q_max() const { return q_max > 0.0 ? q_max : q.supremum(); }
  /// "auto" picks the lattice driver for interactive rates: Picard iterates
  /// must move shared atoms identically, and a Gram factor depends on the
  /// whole atom configuration.
  FlowBackend backend() const {
    if (flow_backend == "lattice") return FlowBackend::kLattice;
    if (flow_backend == "frozen") return FlowBackend::kFrozen;
    if (flow_backend == "auto" && q.depends_on_state()) return FlowBackend::kLattice;
    return FlowBackend::kGram;
  }

  json to_json() const {
    json mu_atoms = json::array();
    for (const Atom& a : mu.atoms()) mu_atoms.push_back({a.position, a.mass});
    json j = {{"sigma", sigma},
              {"excursion_eps", eps()},
              {"dt", dt},
              {"grid_dt", output_dt()},
              {"horizon", horizon},
              {"max_atoms", max_atoms},
              {"flow_backend", flow_backend},
              {"lattice_cell", lattice_cell},
              {"p", p},
              {"kernel", kernel.to_json()},
              {"mu", mu_atoms},
              {"m", m.to_json()},
              {"q", rate_to_json(q, q_path)},
              {"q_max", declared_q_max()},
              {"picard_tol", picard_tol},
              {"picard_max_iter", picard_max_iter},
              {"candidate_cap", candidate_cap},
              {"write_paths", write_paths}};
    j["localtime"] = {{"delta", localtime.delta},         {"per_bandwidth", localtime.per_bandwidth},
                      {"b_lo", localtime.b_lo},           {"b_hi", localtime.b_hi},
                      {"t_grid", localtime.t_grid},       {"anchor_b", localtime.anchor_b},
                      {"anchor_t", localtime.anchor_t},   {"time_lags", localtime.time_lags},
                      {"space_t", localtime.space_t},     {"space_bases", localtime.space_bases},
                      {"space_lags", localtime.space_lags}, {"lag_points", localtime.lag_points}};
    j["scaling"] = {{"k", scaling.k},
                    {"t", scaling.t},
                    {"base_dt", scaling.base_dt},
                    {"base_eps", scaling.base_eps},
                    {"phi_scale", scaling.phi_scale},
                    {"window_sd", scaling.window_sd},
                    {"local_time", scaling.local_time}};
    j["verify"] = {{"times", verify.times}, {"p", verify.p}};
    return j;
  }
};

inline RunConfig parse_config(const json& j) {
  using namespace config_detail;
  only_keys(j, "", {"sigma", "excursion_eps", "dt", "grid_dt", "horizon", "max_atoms", "flow_backend", "lattice_cell",
                    "p", "kernel", "mu", "m", "q", "q_max", "picard_tol", "picard_max_iter", "candidate_cap",
                    "write_paths", "localtime", "scaling", "verify"});
  RunConfig c;
  c.sigma = positive(j, "", "sigma", 1.0);
  c.horizon = positive(j, "", "horizon", 1.0);
  c.excursion_eps = nonnegative(j, "", "excursion_eps", 0.0);
  c.dt = positive(j, "", "dt", 0.01);
  c.grid_dt = nonnegative(j, "", "grid_dt", 0.0);
  c.max_atoms = count(j, "", "max_atoms", 4096);
  c.flow_backend = text(j, "", "flow_backend", "auto");
  if (c.flow_backend != "auto" && c.flow_backend != "gram" && c.flow_backend != "lattice" &&
      c.flow_backend != "frozen") {
    throw ConfigError("config key 'flow_backend': expected auto, gram, lattice or frozen");
  }
  c.lattice_cell = nonnegative(j, "", "lattice_cell", 0.0);
  c.p = nonnegative(j, "", "p", 0.0);
  c.q_max = nonnegative(j, "", "q_max", 0.0);
  c.picard_tol = nonnegative(j, "", "picard_tol", 0.0);
  c.picard_max_iter = count(j, "", "picard_max_iter", 50);
  c.candidate_cap = positive(j, "", "candidate_cap", 2e7);
  if (j.contains("write_paths")) {
    if (!j.at("write_paths").is_boolean()) throw ConfigError("config key 'write_paths': expected a boolean");
    c.write_paths = j.at("write_paths").get<bool>();
  }
  if (c.eps() >= c.horizon) throw ConfigError("config key 'excursion_eps': must be below horizon");
  const double ratio = c.output_dt() / c.dt;
  if (std::abs(ratio - std::round(ratio)) > 1e-9 || ratio < 1.0 - 1e-9) {
    throw ConfigError("config key 'grid_dt': must be a positive multiple of dt");
  }

  if (j.contains("kernel")) {
    const json& k = j.at("kernel");
    c.kernel.type = text(k, "kernel", "type", "gaussian");
    if (c.kernel.type == "gaussian") {
      only_keys(k, "kernel", {"type", "amplitude", "width"});
      c.kernel.amplitude = positive(k, "kernel", "amplitude", 1.0);
      c.kernel.width = positive(k, "kernel", "width", 0.5);
    } else if (c.kernel.type == "table") {
      only_keys(k, "kernel", {"type", "file"});
      c.kernel.path = text(k, "kernel", "file", "");
      if (c.kernel.path.empty()) throw ConfigError("config key 'kernel.file': required for a table kernel");
    } else {
      throw ConfigError("config key 'kernel.type': expected gaussian or table");
    }
  }
  if (j.contains("mu")) c.mu = atoms(j.at("mu"), "mu");
  if (j.contains("m")) c.m = parse_measure(j.at("m"), "m");
  if (j.contains("q")) c.q = parse_rate(j.at("q"), "q", c.q_path);
  if (c.q.infimum() < 0.0) throw ConfigError("config key 'q': rate takes negative values");
  if (c.q_max > 0.0 && c.q.supremum() > c.q_max) throw ConfigError("config key 'q_max': below the supremum of q");

  if (j.contains("localtime")) {
    const json& l = j.at("localtime");
    const std::string w = "localtime";
    only_keys(l, w, {"delta", "per_bandwidth", "b_lo", "b_hi", "t_grid", "anchor_b", "anchor_t", "time_lags", "space_t",
                     "space_bases", "space_lags", "lag_points"});
    auto& s = c.localtime;
    s.delta = nonnegative(l, w, "delta", 0.0);
    s.per_bandwidth = count(l, w, "per_bandwidth", 4);
    s.b_lo = number(l, w, "b_lo", -4.0);
    s.b_hi = number(l, w, "b_hi", 4.0);
    if (!(s.b_hi > s.b_lo)) throw ConfigError("config key 'localtime.b_hi': must exceed b_lo");
    s.t_grid = numbers(l, w, "t_grid", {});
    s.anchor_b = number(l, w, "anchor_b", 0.0);
    s.anchor_t = nonnegative(l, w, "anchor_t", 0.0);
    s.time_lags = numbers(l, w, "time_lags", {});
    s.space_t = nonnegative(l, w, "space_t", 0.0);
    s.space_bases = numbers(l, w, "space_bases", {0.0});
    s.space_lags = numbers(l, w, "space_lags", {});
    s.lag_points = count(l, w, "lag_points", 6);
  }
  if (j.contains("scaling")) {
    const json& s = j.at("scaling");
    const std::string w = "scaling";
    only_keys(s, w, {"k", "t", "base_dt", "base_eps", "phi_scale", "window_sd", "local_time"});
    c.scaling.k = numbers(s, w, "k", {2.0, 4.0, 8.0});
    for (double k : c.scaling.k) {
      if (!(k >= 1.0)) throw ConfigError("config key 'scaling.k': entries must be >= 1");
    }
    c.scaling.t = positive(s, w, "t", 1.0);
    c.scaling.base_dt = positive(s, w, "base_dt", 0.01);
    c.scaling.base_eps = positive(s, w, "base_eps", 0.01);
    c.scaling.phi_scale = positive(s, w, "phi_scale", 1.0);
    c.scaling.window_sd = positive(s, w, "window_sd", 6.0);
    if (s.contains("local_time")) {
      if (!s.at("local_time").is_boolean()) throw ConfigError("config key 'scaling.local_time': expected a boolean");
      c.scaling.local_time = s.at("local_time").get<bool>();
    }
  }
  if (j.contains("verify")) {
    const json& v = j.at("verify");
    only_keys(v, "verify", {"times", "p"});
    c.verify.times = numbers(v, "verify", "times", {0.5, 1.0});
    c.verify.p = nonnegative(v, "verify", "p", 2.0);
  }
  return c;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config file not readable: " + path);
  json j;
  try {
    j = json::parse(in, nullptr, true, true);
  } catch (const json::parse_error& e) {
    throw ConfigError("config file " + path + " is not valid JSON: " + e.what());
  }
  return parse_config(j);
}

}  // namespace isdsm
