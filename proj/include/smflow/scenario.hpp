#pragma once

// Configuration-driven runs: config parsing and validation, the scenario
// runner with its CSV/JSON artifacts, and grid-refinement tables.

#include <Eigen/Dense>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "smflow/coupled.hpp"
#include "smflow/errors.hpp"
#include "smflow/flow_direct.hpp"
#include "smflow/frame_reduction.hpp"
#include "smflow/geometry.hpp"
#include "smflow/holonomy.hpp"
#include "smflow/spectral.hpp"

namespace smflow {

using Json = nlohmann::ordered_json;

inline constexpr const char* kSchema = "smflow/1";
inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// ---------------------------------------------------------------------------
// Presets: "name(a, b, c)" with numeric arguments; "pi", "pi/4", "2pi/3",
// "-0.5*pi" are accepted.

struct Preset {
  std::string name;
  std::vector<double> args;
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t") - b + 1);
}

inline std::optional<double> plain_number(const std::string& s) {
  if (s.empty()) return std::nullopt;
  double v = 0.0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

inline std::optional<double> parse_number(std::string s) {
  s = trim(s);
  if (!s.empty() && s[0] == '+') s = s.substr(1);
  const auto p = s.find("pi");
  if (p == std::string::npos) return plain_number(s);
  std::string pre = s.substr(0, p), post = s.substr(p + 2);
  if (!pre.empty() && pre.back() == '*') pre.pop_back();
  double scale = 1.0;
  if (pre == "-") {
    scale = -1.0;
  } else if (!pre.empty()) {
    auto v = plain_number(pre);
    if (!v) return std::nullopt;
    scale = *v;
  }
  if (!post.empty()) {
    if (post[0] != '/') return std::nullopt;
    auto d = plain_number(post.substr(1));
    if (!d || *d == 0.0) return std::nullopt;
    scale /= *d;
  }
  return scale * kPi;
}

}  // namespace detail

inline Preset parse_preset(const std::string& text) {
  Preset p;
  const auto open = text.find('(');
  p.name = detail::trim(text.substr(0, open));
  if (p.name.empty()) throw DomainError("empty preset name in '" + text + "'");
  if (open == std::string::npos) return p;
  const auto close = text.rfind(')');
  if (close == std::string::npos || close < open || !detail::trim(text.substr(close + 1)).empty())
    throw DomainError("unbalanced parentheses in '" + text + "'");
  const std::string inner = text.substr(open + 1, close - open - 1);
  if (detail::trim(inner).empty()) return p;
  std::stringstream ss(inner);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    auto v = detail::parse_number(tok);
    if (!v) throw DomainError("bad number '" + detail::trim(tok) + "' in '" + text + "'");
    p.args.push_back(*v);
  }
  return p;
}

// ---------------------------------------------------------------------------
// Configuration

struct FactorConfig {
  std::string kind = "round_sphere";
  double radius = 1.0;
  std::string warp = "bump(0.3,0.5,1.0)";
  double period = 1.0;
};

struct Thresholds {
  double energy_drift = 1e-6;
  double a_l2_drift = 1e-6;
  double cross_error = 1e-2;
  double twist = 1e-9;
  double periodicity = 1e-10;
  double holonomy_gb = 1e-4;
  double holonomy_rate = 1e-3;
  double unitarity = 1e-10;
  double exact = 1e-5;
  double closure = 1e-3;
  double phi_l2_drift = 1e-8;
};

struct RunConfig {
  std::string name = "run";
  std::vector<FactorConfig> target{FactorConfig{}};
  std::string domain = "circle";
  int N = 64;
  double L = 8.0;  // line half-width
  std::string init = "perturbed_latitude(1.0, 0.1, 2)";
  std::optional<double> dt;  // direct step; default the stability limit
  double T = 0.01;
  std::string mode = "none";  // none | coupled | autonomous
  std::optional<double> nls_dt;  // macro step of the reduced evolution; default dt
  int cadence = 1;
  int snapshot_cadence = 0;  // 0: first and last only
  double l4_window = 0.01;
  std::string out_root = "out";
  std::uint64_t seed = 0;
  std::string metric = "auto";  // auto | analytic | reference | cross
  Thresholds checks;

  SpectralGrid grid() const { return domain == "line" ? SpectralGrid::line(N, L) : SpectralGrid::circle(N); }
  double direct_dt() const { return dt ? *dt : stability_limit(grid()); }
  double macro_dt() const { return nls_dt ? *nls_dt : direct_dt(); }
};

namespace detail {

#define SMFLOW_THRESHOLDS(X) \
  X(energy_drift) X(a_l2_drift) X(cross_error) X(twist) X(periodicity) X(holonomy_gb) X(holonomy_rate) \
  X(unitarity) X(exact) X(closure) X(phi_l2_drift)

/// Typed reads from one JSON object; problems are collected, not thrown.
class Reader {
 public:
  Reader(const Json& j, std::string path, std::vector<std::string>& errs) : j_(j), path_(std::move(path)), errs_(errs) {
    if (!j_.is_object()) errs_.push_back(where() + ": expected an object");
  }

  bool has(const char* key) const { return j_.is_object() && j_.contains(key); }

  void get(const char* key, double& out) {
    if (!take(key)) return;
    if (j_[key].is_number()) out = j_[key].get<double>();
    else bad(key, "a number");
  }
  void get(const char* key, std::optional<double>& out) {
    if (!take(key)) return;
    if (j_[key].is_null()) out.reset();
    else if (j_[key].is_number()) out = j_[key].get<double>();
    else bad(key, "a number or null");
  }
  void get(const char* key, int& out) {
    if (!take(key)) return;
    if (j_[key].is_number_integer()) out = j_[key].get<int>();
    else bad(key, "an integer");
  }
  void get(const char* key, std::uint64_t& out) {
    if (!take(key)) return;
    if (j_[key].is_number_unsigned()) out = j_[key].get<std::uint64_t>();
    else bad(key, "a non-negative integer");
  }
  void get(const char* key, std::string& out) {
    if (!take(key)) return;
    if (j_[key].is_string()) out = j_[key].get<std::string>();
    else bad(key, "a string");
  }

  Reader child(const char* key) {
    take(key);
    static const Json empty = Json::object();
    return Reader(has(key) ? j_[key] : empty, path_.empty() ? key : path_ + "." + key, errs_);
  }

  const Json& raw(const char* key) {
    static const Json null;
    return take(key) ? j_[key] : null;
  }

  void finish() const {
    if (!j_.is_object()) return;
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (std::find(seen_.begin(), seen_.end(), it.key()) == seen_.end())
        errs_.push_back("unknown key '" + (path_.empty() ? it.key() : path_ + "." + it.key()) + "'");
  }

  std::string where() const { return path_.empty() ? "config" : path_; }

 private:
  bool take(const char* key) {
    seen_.push_back(key);
    return has(key);
  }
  void bad(const char* key, const char* what) {
    errs_.push_back((path_.empty() ? std::string(key) : path_ + "." + key) + ": expected " + what);
  }

  const Json& j_;
  std::string path_;
  std::vector<std::string>& errs_;
  std::vector<std::string> seen_;
};

inline FactorConfig read_factor(const Json& j, const std::string& path, std::vector<std::string>& errs) {
  FactorConfig f;
  if (j.is_string()) {
    f.kind = j.get<std::string>();
    return f;
  }
  Reader r(j, path, errs);
  r.get("kind", f.kind);
  r.get("radius", f.radius);
  r.get("warp", f.warp);
  r.get("period", f.period);
  r.finish();
  return f;
}

inline Json factor_json(const FactorConfig& f) {
  Json j{{"kind", f.kind}};
  if (f.kind == "round_sphere") j["radius"] = f.radius;
  if (f.kind == "warped_sphere") j["warp"] = f.warp;
  if (f.kind == "flat_torus") j["period"] = f.period;
  return j;
}

}  // namespace detail

inline Json to_json(const RunConfig& c) {
  Json j;
  j["schema"] = kSchema;
  j["name"] = c.name;
  if (c.target.size() == 1) {
    j["target"] = detail::factor_json(c.target[0]);
  } else {
    Json fs = Json::array();
    for (const auto& f : c.target) fs.push_back(detail::factor_json(f));
    j["target"] = {{"kind", "product"}, {"factors", fs}};
  }
  j["domain"] = {{"kind", c.domain}, {"N", c.N}};
  if (c.domain == "line") j["domain"]["L"] = c.L;
  j["init"] = {{"kind", c.init}};
  j["dt"] = c.dt ? Json(*c.dt) : Json(nullptr);
  j["T"] = c.T;
  j["reduction"] = {{"mode", c.mode}, {"nls_dt", c.nls_dt ? Json(*c.nls_dt) : Json(nullptr)}};
  j["diagnostics"] = {{"cadence", c.cadence}, {"snapshot_cadence", c.snapshot_cadence}, {"l4_window", c.l4_window}};
  j["output"] = {{"root", c.out_root}};
  j["seed"] = c.seed;
  j["convergence"] = {{"metric", c.metric}};
  Json t;
#define SMFLOW_TO_JSON(k) t[#k] = c.checks.k;
  SMFLOW_THRESHOLDS(SMFLOW_TO_JSON)
#undef SMFLOW_TO_JSON
  j["checks"] = t;
  return j;
}

/// Applies "a.b.c=value" overrides; the value is parsed as JSON when it
/// parses, otherwise taken as a string.
inline void apply_override(Json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw UsageError("override '" + assignment + "' is not key=value");
  const std::string key = detail::trim(assignment.substr(0, eq)), text = assignment.substr(eq + 1);
  Json value = Json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  Json* node = &j;
  std::stringstream ss(key);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(ss, part, '.')) parts.push_back(part);
  for (size_t k = 0; k < parts.size(); ++k) {
    if (parts[k].empty()) throw UsageError("override key '" + key + "' has an empty component");
    if (!node->is_object()) *node = Json::object();
    node = &(*node)[parts[k]];
  }
  *node = value;
}

inline std::vector<std::string> validate(const RunConfig& c);

/// Parses a configuration document; every problem found is reported in one
/// ValidationError.
inline RunConfig parse_config(const Json& j) {
  std::vector<std::string> errs;
  RunConfig c;
  detail::Reader r(j, "", errs);
  std::string schema = kSchema;
  r.get("schema", schema);
  if (schema != kSchema) errs.push_back("schema '" + schema + "' is not " + kSchema);
  r.get("name", c.name);
  if (r.has("target")) {
    const Json& t = r.raw("target");
    if (t.is_object() && t.value("kind", "") == "product") {
      detail::Reader tr(t, "target", errs);
      std::string kind;
      tr.get("kind", kind);
      const Json& fs = tr.raw("factors");
      c.target.clear();
      if (!fs.is_array() || fs.empty()) errs.push_back("target.factors: expected a non-empty array");
      else
        for (size_t k = 0; k < fs.size(); ++k)
          c.target.push_back(detail::read_factor(fs[k], "target.factors[" + std::to_string(k) + "]", errs));
      tr.finish();
    } else {
      c.target = {detail::read_factor(t, "target", errs)};
    }
  }
  {
    auto d = r.child("domain");
    d.get("kind", c.domain);
    d.get("N", c.N);
    d.get("L", c.L);
    d.finish();
  }
  if (r.has("init") && r.raw("init").is_string()) {
    c.init = r.raw("init").get<std::string>();
  } else {
    auto i = r.child("init");
    i.get("kind", c.init);
    i.finish();
  }
  r.get("dt", c.dt);
  r.get("T", c.T);
  {
    auto red = r.child("reduction");
    red.get("mode", c.mode);
    red.get("nls_dt", c.nls_dt);
    std::string dom = c.domain;
    red.get("domain", dom);
    if (dom != c.domain) errs.push_back("reduction.domain '" + dom + "' disagrees with domain.kind '" + c.domain + "'");
    red.finish();
  }
  {
    auto d = r.child("diagnostics");
    d.get("cadence", c.cadence);
    d.get("snapshot_cadence", c.snapshot_cadence);
    d.get("l4_window", c.l4_window);
    d.finish();
  }
  {
    auto o = r.child("output");
    o.get("root", c.out_root);
    o.finish();
  }
  r.get("seed", c.seed);
  {
    auto cv = r.child("convergence");
    cv.get("metric", c.metric);
    cv.finish();
  }
  {
    auto ch = r.child("checks");
#define SMFLOW_READ(k) ch.get(#k, c.checks.k);
    SMFLOW_THRESHOLDS(SMFLOW_READ)
#undef SMFLOW_READ
    ch.finish();
  }
  r.finish();
  for (auto& e : validate(c)) errs.push_back(std::move(e));
  if (!errs.empty()) throw ValidationError(errs);
  return c;
}

inline RunConfig load_config(const std::filesystem::path& file, const std::vector<std::string>& overrides = {}) {
  std::ifstream in(file);
  if (!in) throw UsageError("cannot read config file '" + file.string() + "'");
  Json j = Json::parse(in, nullptr, false);
  if (j.is_discarded()) throw ValidationError({"'" + file.string() + "' is not valid JSON"});
  for (const auto& o : overrides) apply_override(j, o);
  return parse_config(j);
}

// ---------------------------------------------------------------------------
// Model construction

inline SurfaceFactor make_factor(const FactorConfig& f) {
  if (f.kind == "round_sphere") {
    if (!(f.radius > 0.0)) throw DomainError("radius must be positive");
    return SurfaceFactor::round_sphere(f.radius);
  }
  if (f.kind == "warped_sphere") {
    const Preset p = parse_preset(f.warp);
    if (p.name != "bump" || p.args.size() != 3) throw DomainError("warp must be bump(amplitude,width,center)");
    return SurfaceFactor::warped_sphere(WarpProfile::bump(p.args[0], p.args[1], p.args[2]));
  }
  if (f.kind == "hyperbolic_disk") return SurfaceFactor::hyperbolic_disk();
  if (f.kind == "flat_torus") {
    if (!(f.period > 0.0)) throw DomainError("period must be positive");
    return SurfaceFactor::flat_torus(f.period);
  }
  throw DomainError("unknown target kind '" + f.kind + "'");
}

inline SurfaceModel make_surface(const RunConfig& c) {
  std::vector<SurfaceFactor> fs;
  for (const auto& f : c.target) fs.push_back(make_factor(f));
  return SurfaceModel(fs);
}

/// Latitude with colatitude alpha + eps sum_m (c_m cos 2 pi m x + s_m sin 2 pi m x)/m,
/// coefficients standard normal from the seed.
inline LoopState random_latitude(const SurfaceModel& surface, const SpectralGrid& grid, double alpha, double eps,
                                 int modes, std::uint64_t seed) {
  if (!grid.is_circle()) throw DomainError("random_latitude needs the circle domain");
  if (modes < 1) throw DomainError("random_latitude needs at least one mode");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  std::vector<double> cs(modes), sn(modes);
  for (int m = 0; m < modes; ++m) {
    cs[m] = g(rng);
    sn[m] = g(rng);
  }
  return detail::build_loop(surface, grid, [&](const SurfaceFactor& fac, int, double x) -> Vector3 {
    double a = alpha;
    for (int m = 1; m <= modes; ++m)
      a += eps * (cs[m - 1] * std::cos(kTwoPi * m * x) + sn[m - 1] * std::sin(kTwoPi * m * x)) / m;
    if (fac.embedded()) return fac.radius() * sphere_point(a, kTwoPi * x);
    return detail::chart_circle(0.5 * std::sin(a), x);
  });
}

inline LoopState make_initial(const RunConfig& c, const SurfaceModel& surface, const SpectralGrid& grid) {
  const Preset p = parse_preset(c.init);
  auto need = [&](size_t n) {
    if (p.args.size() != n)
      throw DomainError("init '" + p.name + "' takes " + std::to_string(n) + " arguments, got " +
                        std::to_string(p.args.size()));
  };
  if (p.name == "constant") return need(0), constant_loop(surface, grid);
  if (p.name == "great_circle") return need(0), great_circle(surface, grid);
  if (p.name == "latitude") return need(1), latitude(surface, grid, p.args[0]);
  if (p.name == "perturbed_latitude") {
    need(3);
    return perturbed_latitude(surface, grid, p.args[0], p.args[1], static_cast<int>(std::lround(p.args[2])));
  }
  if (p.name == "random_latitude") {
    need(3);
    return random_latitude(surface, grid, p.args[0], p.args[1], static_cast<int>(std::lround(p.args[2])), c.seed);
  }
  if (p.name == "pulse") return need(2), pulse(surface, grid, p.args[0], p.args[1]);
  if (p.name == "fourier") {
    // Groups of: mode, cos amplitudes (ambient dim), sin amplitudes (ambient dim).
    const int dim = surface.ambient_dimension(), group = 1 + 2 * dim;
    if (p.args.empty() || p.args.size() % group != 0)
      throw DomainError("fourier init takes groups of " + std::to_string(group) + " numbers");
    std::vector<FourierTerm> terms;
    for (size_t k = 0; k < p.args.size(); k += group) {
      FourierTerm t;
      t.mode = static_cast<int>(std::lround(p.args[k]));
      t.cos_amplitude = Eigen::Map<const VectorX>(&p.args[k + 1], dim);
      t.sin_amplitude = Eigen::Map<const VectorX>(&p.args[k + 1 + dim], dim);
      terms.push_back(t);
    }
    return fourier_loop(surface, grid, terms);
  }
  throw DomainError("unknown init kind '" + p.name + "'");
}

/// Colatitude of a latitude preset on unit round spheres, the case with a
/// closed-form solution.
inline std::optional<double> exact_latitude(const RunConfig& c) {
  if (c.domain != "circle") return std::nullopt;
  for (const auto& f : c.target)
    if (f.kind != "round_sphere" || f.radius != 1.0) return std::nullopt;
  try {
    const Preset p = parse_preset(c.init);
    if (p.name == "latitude" && p.args.size() == 1) return p.args[0];
  } catch (const Error&) {
  }
  return std::nullopt;
}

inline std::vector<std::string> validate(const RunConfig& c) {
  std::vector<std::string> errs;
  auto positive = [&](double v, const std::string& what) {
    if (!(v > 0.0) || !std::isfinite(v)) errs.push_back(what + " must be positive and finite");
  };
  if (c.name.empty() || c.name.find('/') != std::string::npos || c.name == "." || c.name == "..")
    errs.push_back("name must be a plain, non-empty directory name");
  bool grid_ok = true;
  if (c.N < 16 || !detail::is_power_of_two(c.N)) {
    errs.push_back("domain.N = " + std::to_string(c.N) + " must be a power of two >= 16");
    grid_ok = false;
  }
  if (c.domain != "circle" && c.domain != "line") {
    errs.push_back("domain.kind must be 'circle' or 'line'");
    grid_ok = false;
  }
  if (c.domain == "line" && !(c.L > 0.0)) {
    errs.push_back("domain.L must be positive");
    grid_ok = false;
  }
  if (c.dt) {
    positive(*c.dt, "dt");
    if (grid_ok && *c.dt > stability_limit(c.grid()) * (1.0 + 1e-12)) {
      std::ostringstream os;
      os.precision(17);
      os << "dt = " << *c.dt << " exceeds the stability limit 0.2 dx^2 = " << stability_limit(c.grid());
      errs.push_back(os.str());
    }
  }
  if (!(c.T >= 0.0) || !std::isfinite(c.T)) errs.push_back("T must be finite and >= 0");
  if (c.mode != "none" && c.mode != "coupled" && c.mode != "autonomous")
    errs.push_back("reduction.mode must be 'none', 'coupled' or 'autonomous'");
  if (c.nls_dt) positive(*c.nls_dt, "reduction.nls_dt");
  if (c.cadence < 1) errs.push_back("diagnostics.cadence must be >= 1");
  if (c.snapshot_cadence < 0) errs.push_back("diagnostics.snapshot_cadence must be >= 0");
  positive(c.l4_window, "diagnostics.l4_window");
  if (c.metric != "auto" && c.metric != "analytic" && c.metric != "reference" && c.metric != "cross")
    errs.push_back("convergence.metric must be 'auto', 'analytic', 'reference' or 'cross'");
  if (c.metric == "analytic" && !exact_latitude(c))
    errs.push_back("convergence.metric 'analytic' needs a latitude init on unit round spheres");
  if (c.metric == "cross" && c.mode != "coupled") errs.push_back("convergence.metric 'cross' needs reduction.mode 'coupled'");
#define SMFLOW_CHECK_POS(k) positive(c.checks.k, "checks." #k);
  SMFLOW_THRESHOLDS(SMFLOW_CHECK_POS)
#undef SMFLOW_CHECK_POS
  if (c.target.empty()) errs.push_back("target needs at least one factor");

  std::optional<SurfaceModel> surface;
  try {
    surface = make_surface(c);
  } catch (const Error& e) {
    errs.push_back(std::string("target: ") + e.what());
  }
  if (surface && grid_ok) {
    try {
      const auto loop = make_initial(c, *surface, c.grid());
      if (c.mode == "coupled" && c.domain == "circle" && surface->complex_dimension() != 1)
        errs.push_back("coupled mode on the circle needs a single-factor target");
      if (c.mode == "autonomous" && (c.domain != "circle" || surface->complex_dimension() != 1))
        errs.push_back("autonomous mode needs the circle domain and a single-factor target");
      (void)loop;
    } catch (const Error& e) {
      errs.push_back(std::string("init: ") + e.what());
    }
  }
  return errs;
}

// ---------------------------------------------------------------------------
// Runs

/// One time-series row; NaN marks quantities the run does not produce.
struct DiagnosticsRecord {
  double t = 0.0;
  double energy = kNaN;
  double a_l2 = kNaN;
  double theta_ode = kNaN;
  double theta_gb = kNaN;
  double theta_rate = kNaN;
  double theta_rate_integrated = kNaN;
  double shift = kNaN;
  double l4_window = kNaN;
  double cross_error = kNaN;
  double twist_residual = kNaN;
  double periodicity_defect = kNaN;
  double phi_l2 = kNaN;
  double closure_gap = kNaN;
};

struct Snapshot {
  int index = 0;
  double t = 0.0;
  LoopState loop;
  MatrixXcd Phi;  // frame coefficients, n x N
  MatrixXcd phi;  // untwisted / NLS-evolved field, n x N
};

struct CheckItem {
  std::string name;
  double value = 0.0;
  double threshold = 0.0;
  bool pass = false;
};

inline CheckItem check_le(std::string name, double value, double threshold) {
  return {std::move(name), value, threshold, std::isfinite(value) && value <= threshold};
}

inline CheckItem check_ge(std::string name, double value, double threshold) {
  return {std::move(name), value, threshold, std::isfinite(value) && value >= threshold};
}

inline bool all_pass(const std::vector<CheckItem>& v) {
  for (const auto& c : v)
    if (!c.pass) return false;
  return true;
}

inline Json to_json(const CheckItem& c) {
  return Json{{"name", c.name}, {"value", c.value}, {"threshold", c.threshold}, {"pass", c.pass}};
}

struct RunResult {
  RunConfig config;
  LoopState final_loop;
  int steps = 0;         // macro steps (direct steps in mode none)
  double step = 0.0;     // their length
  int substeps = 1;      // direct steps per macro step
  std::vector<DiagnosticsRecord> records;
  HolonomyRecord holonomy;
  std::vector<CheckItem> checks;
  bool pass() const { return all_pass(checks); }
};

using SnapshotSink = std::function<void(const Snapshot&)>;

namespace detail {

/// Pointwise metric norm |u_x|, equal to |a| = |phi| at every sample.
inline std::vector<double> speed(const SurfaceModel& surface, const LoopState& loop) {
  const Eigen::MatrixXd ux = loop_derivative(loop);
  std::vector<double> out(loop.size());
  for (int j = 0; j < loop.size(); ++j) {
    const VectorX p = loop.points.col(j), v = ux.col(j);
    out[j] = std::sqrt(std::max(0.0, surface.metric(p, v, v)));
  }
  return out;
}

inline double lp(const std::vector<double>& f, double dx, double p) {
  double s = 0.0;
  for (double v : f) s += std::pow(v, p);
  return std::pow(s * dx, 1.0 / p);
}

inline MatrixXcd row_matrix(const std::vector<cplx>& v) {
  MatrixXcd m(1, v.size());
  for (size_t j = 0; j < v.size(); ++j) m(0, j) = v[j];
  return m;
}

/// Frame coefficients and untwisted field of a loop in the gauge of `seed`.
inline std::pair<MatrixXcd, MatrixXcd> loop_fields(const SurfaceModel& surface, const LoopState& loop,
                                                   const Eigen::MatrixXd& seed, double theta_prev) {
  if (loop.grid.is_circle() && surface.complex_dimension() == 1) {
    const auto r = reduce_circle(surface, loop, seed, theta_prev);
    return {r.coeffs.Phi, row_matrix(r.phi)};
  }
  const FrameField frame = parallel_frame(surface, loop, seed, 0);
  const FrameCoefficients c = coefficients(surface, loop, frame);
  if (!loop.grid.is_circle()) return {c.Phi, c.Phi};
  const MatrixXcd A = frame_holonomy(surface, loop, frame);
  return {c.Phi, holonomy_transforms(A, c.Phi, base_offsets(loop.grid, 0)).tilde};
}

inline double relative_drift(const std::vector<DiagnosticsRecord>& r, double DiagnosticsRecord::*field) {
  const double v0 = r.front().*field;
  double m = 0.0;
  for (const auto& x : r) m = std::max(m, std::abs(x.*field - v0));
  return v0 > 0.0 ? m / v0 : m;
}

inline double max_of(const std::vector<DiagnosticsRecord>& r, double DiagnosticsRecord::*field) {
  double m = 0.0;
  for (const auto& x : r)
    if (std::isfinite(x.*field)) m = std::max(m, x.*field);
  return m;
}

inline int step_count(double T, double h) { return T > 0.0 ? static_cast<int>(std::ceil(T / h * (1.0 - 1e-12))) : 0; }

inline bool on_cadence(int k, int steps, int every) { return k == 0 || k == steps || (every > 0 && k % every == 0); }

inline double windowed(const std::vector<std::pair<double, double>>& l4, double w) {
  if (l4.empty()) return kNaN;
  const double t = l4.back().first;
  double acc = 0.0;
  for (size_t k = 1; k < l4.size(); ++k)
    if (l4[k - 1].first >= t - w - 1e-12) acc += (l4[k].first - l4[k - 1].first) * std::pow(l4[k].second, 4);
  return std::pow(acc, 0.25);
}

inline void run_direct(const SurfaceModel& surface, const LoopState& loop0, RunResult& res, const SnapshotSink& sink) {
  const RunConfig& c = res.config;
  const bool scalar_circle = loop0.grid.is_circle() && surface.complex_dimension() == 1;
  const bool circle = loop0.grid.is_circle();
  res.steps = step_count(c.T, c.direct_dt());
  res.step = res.steps ? c.T / res.steps : 0.0;
  LoopState loop = loop0;
  CarriedVectors carried{0, tangent_seed(surface, loop, 0)};
  double theta = scalar_circle ? holonomy_ode(surface, loop).theta : kNaN;
  double theta_gb = theta, theta_int = theta, rate = scalar_circle ? holonomy_rate(surface, loop) : kNaN;
  Eigen::MatrixXd velocity = scalar_circle ? flow_rhs(surface, loop) : Eigen::MatrixXd();
  std::vector<std::pair<double, double>> l4;  // every step
  int snap = 0;

  auto emit = [&](int k) {
    const auto sp = speed(surface, loop);
    if (l4.empty() || l4.back().first != loop.time) l4.emplace_back(loop.time, lp(sp, loop.grid.dx(), 4.0));
    if (on_cadence(k, res.steps, c.cadence)) {
      DiagnosticsRecord r;
      r.t = loop.time;
      r.energy = energy(surface, loop);
      r.a_l2 = lp(sp, loop.grid.dx(), 2.0);
      r.phi_l2 = r.a_l2;
      r.theta_ode = theta;
      r.theta_gb = theta_gb;
      r.theta_rate = rate;
      r.theta_rate_integrated = theta_int;
      r.l4_window = windowed(l4, c.l4_window);
      res.records.push_back(r);
      if (circle) {
        const MatrixXcd A = scalar_circle ? MatrixXcd::Constant(1, 1, std::polar(1.0, -theta))
                                          : holonomy_matrix(surface, loop);
        res.holonomy.append(loop.time, theta, theta_gb, rate, A);
      }
    }
    if (sink && on_cadence(k, res.steps, c.snapshot_cadence) && (c.snapshot_cadence > 0 || k == 0 || k == res.steps)) {
      auto [Phi, phi] = loop_fields(surface, loop, carried.vectors, theta);
      sink(Snapshot{snap++, loop.time, loop, Phi, phi});
    }
  };

  emit(0);
  for (int k = 1; k <= res.steps; ++k) {
    LoopState next = step(surface, loop, res.step, &carried);
    next.time = k * res.step;
    if (scalar_circle) {
      Eigen::MatrixXd vnext = flow_rhs(surface, next);
      const std::vector<Eigen::MatrixXd> vel{velocity, vnext};
      theta_gb = holonomy_gauss_bonnet(surface, {loop, next}, theta_gb, &vel).theta.back();
      theta = continue_lift(theta, holonomy_ode(surface, next).theta);
      const double r1 = holonomy_rate(surface, next);
      theta_int += 0.5 * res.step * (rate + r1);
      rate = r1;
      velocity = std::move(vnext);
    }
    loop = std::move(next);
    emit(k);
  }
  res.final_loop = loop;
}

inline DiagnosticsRecord from_sample(const CoupledSample& s) {
  DiagnosticsRecord r;
  r.t = s.t;
  r.energy = s.energy;
  r.a_l2 = s.a_l2;
  r.theta_ode = s.theta_ode;
  r.theta_gb = s.theta_gb;
  r.theta_rate = s.theta_rate;
  r.theta_rate_integrated = s.theta_rate_integrated;
  r.shift = s.shift;
  r.cross_error = s.cross_error;
  r.twist_residual = s.twist_residual;
  r.periodicity_defect = s.periodicity_defect;
  r.phi_l2 = s.phi_l2;
  return r;
}

template <class Run, class Fields>
void run_coupled(Run& run, RunResult& res, const SnapshotSink& sink, Fields&& fields, bool circle) {
  const RunConfig& c = res.config;
  int snap = 0;
  auto emit = [&](int k) {
    if (on_cadence(k, res.steps, c.cadence)) {
      auto r = from_sample(run.samples().back());
      if (!circle) r.theta_ode = r.theta_gb = r.theta_rate = r.theta_rate_integrated = r.twist_residual = r.shift = kNaN;
      r.l4_window = windowed_l4(run.samples(), c.l4_window);
      res.records.push_back(r);
    }
    if (sink && on_cadence(k, res.steps, c.snapshot_cadence) && (c.snapshot_cadence > 0 || k == 0 || k == res.steps)) {
      auto [Phi, phi] = fields();
      sink(Snapshot{snap++, run.loop().time, run.loop(), Phi, phi});
    }
  };
  emit(0);
  for (int k = 1; k <= res.steps; ++k) {
    run.advance();
    emit(k);
  }
  res.final_loop = run.loop();
}

inline void run_autonomous(const SurfaceModel& surface, const LoopState& loop0, RunResult& res,
                           const SnapshotSink& sink) {
  const RunConfig& c = res.config;
  AutonomousRun run(surface, loop0, res.step > 0.0 ? res.step : c.macro_dt());
  std::vector<std::pair<double, double>> l4;
  int snap = 0;
  LoopState loop = loop0;
  auto emit = [&](int k) {
    l4.emplace_back(run.time(), run.phi_tilde().lp_norm(4.0));
    const bool row = on_cadence(k, res.steps, c.cadence);
    const bool shot = sink && on_cadence(k, res.steps, c.snapshot_cadence) &&
                      (c.snapshot_cadence > 0 || k == 0 || k == res.steps);
    if (!row && !shot && k != res.steps) return;
    if (k > 0) loop = run.loop();
    loop.time = run.time();
    if (row) {
      DiagnosticsRecord r;
      r.t = run.time();
      r.energy = energy(surface, loop);
      r.a_l2 = std::sqrt(2.0 * r.energy);
      r.theta_ode = run.theta();
      r.shift = run.shift();
      r.phi_l2 = run.phi_tilde().l2_norm();
      r.l4_window = windowed(l4, c.l4_window);
      r.closure_gap = run.max_closure_gap();
      res.records.push_back(r);
    }
    if (shot) {
      const auto phi = loop.grid.shift(run.phi_tilde().row(), -run.shift());
      sink(Snapshot{snap++, run.time(), loop, row_matrix(retwist(phi, run.theta(), 0)), row_matrix(phi)});
    }
  };
  emit(0);
  for (int k = 1; k <= res.steps; ++k) {
    run.advance();
    emit(k);
  }
  res.final_loop = loop;
}

inline void evaluate_checks(const SurfaceModel& surface, RunResult& res) {
  const RunConfig& c = res.config;
  const auto& r = res.records;
  auto& out = res.checks;
  const Thresholds& th = c.checks;
  out.push_back(check_le("energy_drift", relative_drift(r, &DiagnosticsRecord::energy), th.energy_drift));
  out.push_back(check_le("a_l2_drift", relative_drift(r, &DiagnosticsRecord::a_l2), th.a_l2_drift));
  const bool circle = c.domain == "circle", scalar = surface.complex_dimension() == 1;
  if (c.mode == "coupled") {
    out.push_back(check_le("cross_error", max_of(r, &DiagnosticsRecord::cross_error), th.cross_error));
    if (circle) {
      out.push_back(check_le("twist_residual", max_of(r, &DiagnosticsRecord::twist_residual), th.twist));
      out.push_back(check_le("periodicity_defect", max_of(r, &DiagnosticsRecord::periodicity_defect), th.periodicity));
    }
    out.push_back(check_le("phi_l2_drift", relative_drift(r, &DiagnosticsRecord::phi_l2), th.phi_l2_drift));
  }
  if (circle && scalar && c.mode != "autonomous") {
    double gb = 0.0, rate = 0.0;
    for (const auto& x : r) {
      gb = std::max(gb, std::abs(std::polar(1.0, x.theta_ode) - std::polar(1.0, x.theta_gb)));
      rate = std::max(rate, std::abs(x.theta_rate_integrated - x.theta_ode));
    }
    out.push_back(check_le("holonomy_gauss_bonnet_agreement", gb, th.holonomy_gb));
    out.push_back(check_le("holonomy_rate_agreement", rate, th.holonomy_rate));
  }
  if (circle && c.mode != "autonomous")
    out.push_back(check_le("holonomy_unitarity", res.holonomy.max_unitarity_defect(), th.unitarity));
  if (c.mode == "autonomous") {
    out.push_back(check_le("closure_gap", max_of(r, &DiagnosticsRecord::closure_gap), th.closure));
    out.push_back(check_le("phi_l2_drift", relative_drift(r, &DiagnosticsRecord::phi_l2), th.phi_l2_drift));
  }
  if (const auto alpha = exact_latitude(c); alpha && c.mode != "autonomous") {
    const auto exact = precessing_latitude(surface, res.final_loop.grid, *alpha, res.final_loop.time);
    out.push_back(check_le("exact_solution_error", sup_distance(res.final_loop, exact), th.exact));
  }
}

}  // namespace detail

/// Runs a validated configuration; snapshots go to `sink` when given.
inline RunResult simulate(const RunConfig& config, const SnapshotSink& sink = {}) {
  if (auto errs = validate(config); !errs.empty()) throw ValidationError(errs);
  RunResult res{config, LoopState(config.grid(), Eigen::MatrixXd()), 0, 0.0, 1, {}, {}, {}};
  const SurfaceModel surface = make_surface(config);
  const SpectralGrid grid = config.grid();
  const LoopState loop0 = make_initial(config, surface, grid);
  if (config.mode == "none") {
    detail::run_direct(surface, loop0, res, sink);
  } else {
    res.steps = detail::step_count(config.T, config.macro_dt());
    res.step = res.steps ? config.T / res.steps : config.macro_dt();
    if (config.mode == "coupled") {
      res.substeps = std::max(1, detail::step_count(res.step, config.direct_dt()));
      if (grid.is_circle()) {
        CircleCoupledRun run(surface, loop0, res.step, {}, res.substeps);
        detail::run_coupled(run, res, sink, [&] {
          return std::pair{run.reduction().coeffs.Phi,
                           detail::row_matrix(grid.shift(run.phi_tilde().row(), -run.shift()))};
        }, true);
        res.holonomy = run.holonomy();
      } else {
        LineCoupledRun run(surface, loop0, res.step, {}, res.substeps);
        detail::run_coupled(run, res, sink, [&] { return std::pair{run.reduction().coeffs.Phi, run.field().values()}; },
                            false);
      }
    } else {
      res.substeps = 0;
      detail::run_autonomous(surface, loop0, res, sink);
    }
  }
  detail::evaluate_checks(surface, res);
  return res;
}

// ---------------------------------------------------------------------------
// Artifacts

/// Shortest round-trip decimal; empty for non-finite values.
inline std::string format_number(double v) {
  if (!std::isfinite(v)) return "";
  char buf[40];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline std::filesystem::path output_root(const RunConfig& c) {
  if (const char* env = std::getenv("SMFLOW_OUT"); env && *env) return env;
  return c.out_root;
}

inline std::string timeseries_header() {
  return "t,energy,a_l2,theta_ode,theta_gb,theta_rate,theta_rate_integrated,shift,l4_window,cross_error,"
         "twist_residual,periodicity_defect,phi_l2,closure_gap";
}

inline std::string csv_row(const DiagnosticsRecord& r) {
  std::string s;
  for (double v : {r.t, r.energy, r.a_l2, r.theta_ode, r.theta_gb, r.theta_rate, r.theta_rate_integrated, r.shift,
                   r.l4_window, r.cross_error, r.twist_residual, r.periodicity_defect, r.phi_l2, r.closure_gap}) {
    if (!s.empty()) s += ',';
    s += format_number(v);
  }
  return s;
}

inline void write_snapshot(const std::filesystem::path& file, const Snapshot& s) {
  std::ofstream out(file);
  const int dim = static_cast<int>(s.loop.points.rows()), n = static_cast<int>(s.Phi.rows());
  out << "# " << kSchema << " snapshot t=" << format_number(s.t) << "\nx";
  for (int d = 0; d < dim; ++d) out << ",u" << d;
  for (int k = 0; k < n; ++k) out << ",re_Phi" << k << ",im_Phi" << k;
  for (int k = 0; k < n; ++k) out << ",re_phi" << k << ",im_phi" << k;
  out << ",abs_Phi\n";
  for (int j = 0; j < s.loop.size(); ++j) {
    out << format_number(s.loop.grid.x(j));
    for (int d = 0; d < dim; ++d) out << ',' << format_number(s.loop.points(d, j));
    for (int k = 0; k < n; ++k) out << ',' << format_number(s.Phi(k, j).real()) << ',' << format_number(s.Phi(k, j).imag());
    for (int k = 0; k < n; ++k) out << ',' << format_number(s.phi(k, j).real()) << ',' << format_number(s.phi(k, j).imag());
    out << ',' << format_number(s.Phi.col(j).norm()) << '\n';
  }
}

inline Json nan_to_null(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

inline Json holonomy_json(const RunResult& res) {
  Json j{{"schema", kSchema}};
  if (res.config.domain != "circle") {
    j["applicable"] = false;
    return j;
  }
  j["applicable"] = true;
  Json t = Json::array(), ode = Json::array(), gb = Json::array(), rate = Json::array(), integ = Json::array();
  for (const auto& r : res.records) {
    t.push_back(r.t);
    ode.push_back(nan_to_null(r.theta_ode));
    gb.push_back(nan_to_null(r.theta_gb));
    rate.push_back(nan_to_null(r.theta_rate));
    integ.push_back(nan_to_null(r.theta_rate_integrated));
  }
  j["t"] = t;
  j["theta_ode"] = ode;
  j["theta_gauss_bonnet"] = gb;
  j["theta_rate"] = rate;
  j["theta_rate_integrated"] = integ;
  Json ph = Json::array();
  for (const auto& e : res.holonomy.eigenphases) ph.push_back(e);
  j["eigenphases"] = ph;
  if (!res.holonomy.A.empty()) {
    const MatrixXcd& A = res.holonomy.A.back();
    Json re = Json::array(), im = Json::array();
    for (Eigen::Index r = 0; r < A.rows(); ++r) {
      Json rr = Json::array(), ri = Json::array();
      for (Eigen::Index c = 0; c < A.cols(); ++c) {
        rr.push_back(A(r, c).real());
        ri.push_back(A(r, c).imag());
      }
      re.push_back(rr);
      im.push_back(ri);
    }
    j["final_matrix"] = {{"re", re}, {"im", im}};
    j["max_unitarity_defect"] = res.holonomy.max_unitarity_defect();
  }
  return j;
}

inline Json summary_json(const RunResult& res) {
  Json checks = Json::array();
  for (const auto& c : res.checks) checks.push_back(to_json(c));
  const auto& last = res.records.back();
  return Json{{"schema", kSchema},
              {"name", res.config.name},
              {"mode", res.config.mode},
              {"final_time", res.final_loop.time},
              {"steps", res.steps},
              {"step", res.step},
              {"direct_substeps", res.substeps},
              {"final", {{"energy", nan_to_null(last.energy)},
                         {"a_l2", nan_to_null(last.a_l2)},
                         {"theta_ode", nan_to_null(last.theta_ode)},
                         {"l4_window", nan_to_null(last.l4_window)}}},
              {"checks", checks},
              {"pass", res.pass()}};
}

inline void write_json(const std::filesystem::path& file, const Json& j) {
  std::ofstream out(file);
  out << j.dump(2) << '\n';
}

struct ScenarioOutput {
  std::filesystem::path directory;
  RunResult result;
};

/// Runs the scenario and writes config.json, timeseries.csv,
/// snapshots/snapshot_NNNNNN.csv, holonomy.json and summary.json.
inline ScenarioOutput run_scenario(const RunConfig& config) {
  if (auto errs = validate(config); !errs.empty()) throw ValidationError(errs);
  const auto dir = output_root(config) / config.name;
  std::filesystem::create_directories(dir / "snapshots");
  for (const auto& e : std::filesystem::directory_iterator(dir / "snapshots")) std::filesystem::remove(e.path());
  write_json(dir / "config.json", to_json(config));
  auto res = simulate(config, [&](const Snapshot& s) {
    char name[32];
    std::snprintf(name, sizeof name, "snapshot_%06d.csv", s.index);
    write_snapshot(dir / "snapshots" / name, s);
  });
  {
    std::ofstream ts(dir / "timeseries.csv");
    ts << "# " << kSchema << " timeseries\n" << timeseries_header() << '\n';
    for (const auto& r : res.records) ts << csv_row(r) << '\n';
  }
  write_json(dir / "holonomy.json", holonomy_json(res));
  write_json(dir / "summary.json", summary_json(res));
  return {dir, std::move(res)};
}

// ---------------------------------------------------------------------------
// Convergence tables

struct GridLevel {
  int N = 0;
  double dt = kNaN;  // NaN: default step
};

/// "64:1e-3,128:5e-4,256" -> levels; a bare N keeps the default step.
inline std::vector<GridLevel> parse_levels(const std::string& spec) {
  std::vector<GridLevel> out;
  std::stringstream ss(spec);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    tok = detail::trim(tok);
    GridLevel g;
    const auto colon = tok.find(':');
    const std::string n = tok.substr(0, colon);
    const auto r = std::from_chars(n.data(), n.data() + n.size(), g.N);
    if (n.empty() || r.ec != std::errc() || r.ptr != n.data() + n.size())
      throw UsageError("bad level '" + tok + "' (expected N or N:dt)");
    if (colon != std::string::npos) {
      auto v = detail::parse_number(tok.substr(colon + 1));
      if (!v) throw UsageError("bad level '" + tok + "' (expected N or N:dt)");
      g.dt = *v;
    }
    out.push_back(g);
  }
  return out;
}

struct ConvergenceRow {
  int N = 0;
  double dt = 0.0;   // step that was varied: direct step, or macro step when coupled
  double error = 0.0;
  double ratio = kNaN;  // previous error / this error
  double order = kNaN;
};

struct ConvergenceTable {
  std::string metric;
  std::vector<ConvergenceRow> rows;

  std::string csv() const {
    std::string s = std::string("# ") + kSchema + " convergence metric=" + metric + "\nN,dt,error,ratio,order\n";
    for (const auto& r : rows)
      s += std::to_string(r.N) + ',' + format_number(r.dt) + ',' + format_number(r.error) + ',' +
           format_number(r.ratio) + ',' + format_number(r.order) + '\n';
    return s;
  }
};

inline Json to_json(const ConvergenceTable& t) {
  Json rows = Json::array();
  for (const auto& r : t.rows)
    rows.push_back({{"N", r.N}, {"dt", r.dt}, {"error", r.error}, {"ratio", nan_to_null(r.ratio)},
                    {"order", nan_to_null(r.order)}});
  return Json{{"schema", kSchema}, {"metric", t.metric}, {"rows", rows}};
}

inline std::string resolve_metric(const RunConfig& c) {
  if (c.metric != "auto") return c.metric;
  if (c.mode == "coupled") return "cross";
  if (exact_latitude(c)) return "analytic";
  return "reference";
}

/// Error per refinement level against the closed form, the finest level, or
/// the coupled cross-formulation error; observed orders between neighbours.
inline ConvergenceTable convergence_study(const RunConfig& config, const std::vector<GridLevel>& levels) {
  std::vector<std::string> errs;
  if (levels.size() < 3) errs.push_back("a convergence study needs at least 3 levels");
  std::vector<RunConfig> cfgs;
  for (size_t k = 0; k < levels.size(); ++k) {
    RunConfig c = config;
    c.N = levels[k].N;
    if (config.mode == "none") {
      c.dt = std::isnan(levels[k].dt) ? std::nullopt : std::optional<double>(levels[k].dt);
    } else {
      c.dt.reset();
      if (!std::isnan(levels[k].dt)) c.nls_dt = levels[k].dt;
    }
    for (const auto& e : validate(c)) errs.push_back("level " + std::to_string(k) + ": " + e);
    if (k > 0) {
      const auto& a = levels[k - 1];
      const auto& b = levels[k];
      const double da = std::isnan(a.dt) ? 0.0 : a.dt, db = std::isnan(b.dt) ? 0.0 : b.dt;
      if (b.N < a.N || (db > da && !std::isnan(b.dt) && !std::isnan(a.dt)))
        errs.push_back("levels " + std::to_string(k - 1) + " -> " + std::to_string(k) +
                       " are not a refinement (N must not decrease, dt must not increase)");
    }
    cfgs.push_back(c);
  }
  if (!errs.empty()) throw ValidationError(errs);

  ConvergenceTable table;
  table.metric = resolve_metric(config);
  std::vector<RunResult> runs;
  for (const auto& c : cfgs) runs.push_back(simulate(c));
  const LoopState& finest = runs.back().final_loop;
  for (size_t k = 0; k < runs.size(); ++k) {
    const auto& r = runs[k];
    ConvergenceRow row;
    row.N = cfgs[k].N;
    row.dt = r.step;
    if (table.metric == "analytic") {
      const SurfaceModel s = make_surface(cfgs[k]);
      row.error = sup_distance(r.final_loop, precessing_latitude(s, r.final_loop.grid, *exact_latitude(cfgs[k]),
                                                                 r.final_loop.time));
    } else if (table.metric == "cross") {
      row.error = detail::max_of(r.records, &DiagnosticsRecord::cross_error);
    } else {
      const int stride = finest.size() / r.final_loop.size();
      double e = 0.0;
      for (int j = 0; j < r.final_loop.size(); ++j)
        e = std::max(e, (r.final_loop.points.col(j) - finest.points.col(j * stride)).norm());
      row.error = e;
    }
    if (k > 0) {
      const auto& prev = table.rows.back();
      if (row.error > 0.0 && prev.error > 0.0) {
        row.ratio = prev.error / row.error;
        const double hp = prev.dt != row.dt ? prev.dt : 1.0 / prev.N, hr = prev.dt != row.dt ? row.dt : 1.0 / row.N;
        if (hp != hr) row.order = std::log(row.ratio) / std::log(hp / hr);
      }
    }
    table.rows.push_back(row);
  }
  return table;
}

}  // namespace smflow
