#pragma once

// Run configuration (JSON), field snapshots (raw little-endian float64 with a
// 16-byte header) and fixed-format CSV tables.
//
// Snapshot layout:
//   bytes 0..3   "PFSC"
//   bytes 4..7   u32 dim (1 or 2)
//   bytes 8..15  u32 counts per axis (1D files store 1 as the second count)
//   then         counts[0] * counts[1] float64 values, x index fastest

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "pfsc/errors.hpp"
#include "pfsc/grid.hpp"
#include "pfsc/optimizer.hpp"
#include "pfsc/state.hpp"

namespace pfsc {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Number formatting

/// Shortest-independent fixed format: 17 significant digits.
inline std::string fmt17(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

// ---------------------------------------------------------------------------
// Snapshots

struct Snapshot {
  std::uint32_t dim = 1;
  std::array<std::uint32_t, 2> counts{0, 1};
  std::vector<double> values;
};

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xffu));
}

inline std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline void put_f64(std::string& out, double x) {
  const auto bits = std::bit_cast<std::uint64_t>(x);
  for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xffu));
}

inline double get_f64(const unsigned char* p) {
  std::uint64_t bits = 0;
  for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(p[b]) << (8 * b);
  return std::bit_cast<double>(bits);
}

inline void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("write failed: " + path.string());
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string() + " for reading");
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

}  // namespace detail

inline std::string encode_snapshot(const Snapshot& s) {
  if (s.dim != 1 && s.dim != 2) throw DomainError("snapshot: dim must be 1 or 2");
  if (static_cast<std::size_t>(s.counts[0]) * s.counts[1] != s.values.size())
    throw GridMismatch("snapshot: value count differs from counts");
  std::string out = "PFSC";
  detail::put_u32(out, s.dim);
  detail::put_u32(out, s.counts[0]);
  detail::put_u32(out, s.counts[1]);
  for (double x : s.values) detail::put_f64(out, x);
  return out;
}

inline Snapshot decode_snapshot(const std::string& bytes, const std::string& where = "snapshot") {
  if (bytes.size() < 16 || bytes.compare(0, 4, "PFSC") != 0) throw IoError(where + ": not a PFSC snapshot");
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  Snapshot s;
  s.dim = detail::get_u32(p + 4);
  s.counts = {detail::get_u32(p + 8), detail::get_u32(p + 12)};
  if (s.dim != 1 && s.dim != 2) throw IoError(where + ": bad dimension");
  const std::size_t n = static_cast<std::size_t>(s.counts[0]) * s.counts[1];
  if (bytes.size() != 16 + 8 * n) throw IoError(where + ": payload size does not match the header");
  s.values.resize(n);
  for (std::size_t i = 0; i < n; ++i) s.values[i] = detail::get_f64(p + 16 + 8 * i);
  return s;
}

inline Snapshot snapshot_of(const ScalarField& f) {
  const Grid& g = *f.grid();
  Snapshot s;
  s.dim = static_cast<std::uint32_t>(g.dim());
  s.counts = {static_cast<std::uint32_t>(g.counts()[0]), static_cast<std::uint32_t>(g.dim() == 1 ? 1 : g.counts()[1])};
  s.values = f.vec();
  return s;
}

inline void write_snapshot(const std::filesystem::path& path, const ScalarField& f) {
  detail::write_file(path, encode_snapshot(snapshot_of(f)));
}

inline Snapshot read_snapshot(const std::filesystem::path& path) {
  return decode_snapshot(detail::read_file(path), path.string());
}

inline ScalarField field_from_snapshot(const GridPtr& grid, const Snapshot& s, const std::string& where) {
  const std::uint32_t ny = grid->dim() == 1 ? 1u : static_cast<std::uint32_t>(grid->counts()[1]);
  if (s.dim != static_cast<std::uint32_t>(grid->dim()) || s.counts[0] != grid->counts()[0] || s.counts[1] != ny)
    throw ConfigError(where + ": snapshot shape does not match the grid");
  return ScalarField(grid, s.values);
}

// ---------------------------------------------------------------------------
// Run configuration

struct GradcheckSpec {
  int directions = 10;
  double fd_step = 1e-5;
};

struct RunConfig {
  int dim = 1;
  std::array<double, 2> extents{1.0, 1.0};
  std::array<std::size_t, 2> counts{33, 1};
  double T = 1.0;
  std::size_t nt = 32;
  double theta_c = 1.0, lambda1 = 1.0, lambda2 = 1.0;
  json theta_f = 1.0;
  std::optional<double> theta_f_delta;
  json alpha = 1.0;
  double alpha_m = 0.0, alpha_M = 0.0;  // filled from the alpha spec when not given
  ControlBounds bounds;
  json theta0 = 1.0, phi0 = 0.0;
  double u0 = 0.0, v0 = 0.0, eta0 = 0.0;
  double eps = 0.1;
  std::optional<double> sigma;
  Schedule schedule{{0.4, 0.2, 0.1, 0.05}, {0.05, 0.025, 0.0125, 0.00625, 0.003125}};
  OptimizerOptions optimizer;
  NewtonOptions newton;
  LinfCaps caps;
  GradcheckSpec gradcheck;
  std::uint64_t seed = 0;
  std::string output = "out";
  int threads = 0;  // sweep workers, 0 = hardware concurrency
  std::filesystem::path base_dir = ".";
  std::vector<std::string> warnings;
};

namespace detail {

class ConfigReader {
 public:
  ConfigReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) fail("expected an object");
  }

  [[noreturn]] void fail(const std::string& msg) const { throw ConfigError("config " + path_ + ": " + msg); }
  std::string at(const std::string& key) const { return path_ + "/" + key; }

  bool has(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key) && !j_.at(key).is_null();
  }
  const json& raw(const std::string& key) {
    seen_.insert(key);
    return j_.at(key);
  }

  double number(const std::string& key, double def) {
    if (!has(key)) return def;
    return to_number(j_.at(key), at(key));
  }
  std::optional<double> opt_number(const std::string& key) {
    if (!has(key)) return std::nullopt;
    return to_number(j_.at(key), at(key));
  }
  long integer(const std::string& key, long def) {
    if (!has(key)) return def;
    const auto& v = j_.at(key);
    if (!v.is_number_integer()) throw ConfigError("config " + at(key) + ": expected an integer");
    return v.get<long>();
  }
  bool boolean(const std::string& key, bool def) {
    if (!has(key)) return def;
    const auto& v = j_.at(key);
    if (!v.is_boolean()) throw ConfigError("config " + at(key) + ": expected true or false");
    return v.get<bool>();
  }
  std::string string(const std::string& key, const std::string& def) {
    if (!has(key)) return def;
    const auto& v = j_.at(key);
    if (!v.is_string()) throw ConfigError("config " + at(key) + ": expected a string");
    return v.get<std::string>();
  }
  std::vector<double> numbers(const std::string& key, std::vector<double> def) {
    if (!has(key)) return def;
    const auto& v = j_.at(key);
    if (!v.is_array()) throw ConfigError("config " + at(key) + ": expected an array");
    std::vector<double> out;
    for (std::size_t i = 0; i < v.size(); ++i) out.push_back(to_number(v[i], at(key) + "/" + std::to_string(i)));
    return out;
  }
  ConfigReader child(const std::string& key) {
    seen_.insert(key);
    static const json empty = json::object();
    return ConfigReader(j_.contains(key) ? j_.at(key) : empty, at(key));
  }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) throw ConfigError("config " + at(k) + ": unknown key");
  }

  static double to_number(const json& v, const std::string& where) {
    if (v.is_number()) return v.get<double>();
    if (v.is_string()) {
      const auto s = v.get<std::string>();
      if (s == "inf" || s == "+inf" || s == "infinity") return std::numeric_limits<double>::infinity();
    }
    throw ConfigError("config " + where + ": expected a number");
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline json number_json(double x) {
  if (std::isinf(x)) return x > 0 ? json("inf") : json("-inf");
  return x;
}

/// Checks a field spec without a grid; the values are produced by make_profile.
inline void check_profile(const json& spec, const std::string& where) {
  if (spec.is_number()) return;
  if (!spec.is_object() || !spec.contains("kind") || !spec.at("kind").is_string())
    throw ConfigError("config " + where + ": expected a number or an object with \"kind\"");
  const auto kind = spec.at("kind").get<std::string>();
  std::set<std::string> allowed;
  if (kind == "constant") allowed = {"kind", "value"};
  else if (kind == "sign") allowed = {"kind", "base", "amplitude", "center", "axis"};
  else if (kind == "tanh") allowed = {"kind", "base", "amplitude", "center", "width", "axis"};
  else if (kind == "table") allowed = {"kind", "values"};
  else if (kind == "file") allowed = {"kind", "path"};
  else throw ConfigError("config " + where + "/kind: unknown profile kind '" + kind + "'");
  for (const auto& [k, v] : spec.items())
    if (!allowed.count(k)) throw ConfigError("config " + where + "/" + k + ": unknown key");
  if (kind == "tanh" && spec.contains("width") && !(ConfigReader::to_number(spec.at("width"), where + "/width") > 0.0))
    throw ConfigError("config " + where + "/width: must be positive");
  if (kind == "file" && !(spec.contains("path") && spec.at("path").is_string()))
    throw ConfigError("config " + where + "/path: expected a string");
  if (kind == "table" && !(spec.contains("values") && spec.at("values").is_array()))
    throw ConfigError("config " + where + "/values: expected an array");
}

inline json absolutize_files(json spec, const std::filesystem::path& base) {
  if (spec.is_object() && spec.value("kind", "") == "file") {
    std::filesystem::path p = spec.at("path").get<std::string>();
    if (p.is_relative()) p = base / p;
    spec["path"] = std::filesystem::absolute(p).lexically_normal().string();
  }
  return spec;
}

}  // namespace detail

/// Field values from a profile spec:
///   number | {"kind":"constant","value"}
///   {"kind":"sign","base","amplitude","center","axis"}   base + amplitude sgn(center - x)
///   {"kind":"tanh","base","amplitude","center","width","axis"}  base + amplitude tanh((center - x)/width)
///   {"kind":"table","values":[...]}   node values, x index fastest
///   {"kind":"file","path"}            PFSC snapshot
inline ScalarField make_profile(const GridPtr& grid, const json& spec, const std::filesystem::path& base_dir,
                                const std::string& where) {
  detail::check_profile(spec, where);
  if (spec.is_number()) return ScalarField(grid, spec.get<double>());
  const auto kind = spec.at("kind").get<std::string>();
  auto num = [&](const char* k, double def) {
    return spec.contains(k) ? detail::ConfigReader::to_number(spec.at(k), where + "/" + k) : def;
  };
  if (kind == "constant") return ScalarField(grid, num("value", 0.0));
  if (kind == "table") {
    std::vector<double> v;
    for (const auto& x : spec.at("values")) v.push_back(detail::ConfigReader::to_number(x, where + "/values"));
    if (v.size() != grid->size()) throw ConfigError("config " + where + "/values: need one value per grid node");
    return ScalarField(grid, std::move(v));
  }
  if (kind == "file") {
    std::filesystem::path p = spec.at("path").get<std::string>();
    if (p.is_relative()) p = base_dir / p;
    return field_from_snapshot(grid, read_snapshot(p), "config " + where);
  }
  const int axis = static_cast<int>(num("axis", 0.0));
  if (axis < 0 || axis >= grid->dim()) throw ConfigError("config " + where + "/axis: out of range");
  const double base = num("base", 0.0), amp = num("amplitude", 1.0);
  const double center = num("center", 0.5 * grid->extents()[axis]);
  ScalarField f(grid, 0.0);
  for (std::size_t i = 0; i < grid->size(); ++i) {
    const double x = axis == 0 ? grid->x(i) : grid->y(i);
    if (kind == "sign") {
      const double d = center - x;
      f[i] = base + amp * static_cast<double>((d > 0.0) - (d < 0.0));
    } else {
      f[i] = base + amp * std::tanh((center - x) / num("width", 1.0));
    }
  }
  return f;
}

inline RunConfig parse_config(const json& doc, const std::filesystem::path& base_dir = ".") {
  using detail::ConfigReader;
  const json& root_doc = doc.is_object() && doc.contains("config") && doc.contains("tool") ? doc.at("config") : doc;
  RunConfig c;
  c.base_dir = base_dir;
  ConfigReader root(root_doc, "");

  {
    auto g = root.child("grid");
    c.dim = static_cast<int>(g.integer("dim", 1));
    if (c.dim != 1 && c.dim != 2) g.fail("dim must be 1 or 2");
    const auto ext = g.numbers("extents", c.dim == 1 ? std::vector<double>{1.0} : std::vector<double>{1.0, 1.0});
    const auto cnt = g.numbers("counts", c.dim == 1 ? std::vector<double>{33} : std::vector<double>{17, 17});
    if (ext.size() != static_cast<std::size_t>(c.dim) || cnt.size() != static_cast<std::size_t>(c.dim))
      g.fail("extents and counts need one entry per axis");
    for (int a = 0; a < c.dim; ++a) {
      if (!(ext[a] > 0.0) || !std::isfinite(ext[a])) throw ConfigError("config " + g.at("extents") + ": must be positive");
      if (!(cnt[a] >= 3.0) || cnt[a] != std::floor(cnt[a]))
        throw ConfigError("config " + g.at("counts") + ": need integers >= 3");
      c.extents[a] = ext[a];
      c.counts[a] = static_cast<std::size_t>(cnt[a]);
    }
    g.finish();
  }
  {
    auto t = root.child("time");
    c.T = t.number("T", c.T);
    const long nt = t.integer("nt", static_cast<long>(c.nt));
    if (!(c.T > 0.0) || !std::isfinite(c.T)) throw ConfigError("config " + t.at("T") + ": must be positive");
    if (nt < 1) throw ConfigError("config " + t.at("nt") + ": nt >= 1 required");
    c.nt = static_cast<std::size_t>(nt);
    t.finish();
  }
  {
    auto m = root.child("model");
    c.theta_c = m.number("theta_c", c.theta_c);
    c.lambda1 = m.number("lambda1", c.lambda1);
    c.lambda2 = m.number("lambda2", c.lambda2);
    if (!(c.theta_c > 0.0)) throw ConfigError("config " + m.at("theta_c") + ": must be positive");
    if (c.lambda1 < 0.0 || c.lambda2 < 0.0) m.fail("lambda1 and lambda2 must be >= 0");
    if (m.has("theta_f")) c.theta_f = m.raw("theta_f");
    c.theta_f_delta = m.opt_number("theta_f_delta");
    m.finish();
    if (c.theta_f.is_object() && c.theta_f.value("kind", "") == "series") {
      if (!c.theta_f.contains("levels") || !c.theta_f.at("levels").is_array())
        throw ConfigError("config /model/theta_f/levels: expected an array");
      if (c.theta_f.at("levels").size() != c.nt + 1)
        throw ConfigError("config /model/theta_f/levels: need nt + 1 levels");
      for (std::size_t n = 0; n < c.theta_f.at("levels").size(); ++n)
        detail::check_profile(c.theta_f.at("levels")[n], "/model/theta_f/levels/" + std::to_string(n));
    } else {
      detail::check_profile(c.theta_f, "/model/theta_f");
    }
  }
  {
    if (root.has("alpha")) c.alpha = root.raw("alpha");
    std::optional<double> am, aM;
    json spec = c.alpha;
    if (spec.is_object()) {
      for (const auto& [k, v] : spec.items())
        if (k != "kind" && k != "value" && k != "values" && k != "alpha_m" && k != "alpha_M")
          throw ConfigError("config /alpha/" + k + ": unknown key");
      if (spec.contains("alpha_m")) am = ConfigReader::to_number(spec.at("alpha_m"), "/alpha/alpha_m");
      if (spec.contains("alpha_M")) aM = ConfigReader::to_number(spec.at("alpha_M"), "/alpha/alpha_M");
      const auto kind = spec.value("kind", "constant");
      if (kind != "constant" && kind != "table") throw ConfigError("config /alpha/kind: constant or table");
      if (kind == "table" && !(spec.contains("values") && spec.at("values").is_array()))
        throw ConfigError("config /alpha/values: expected an array");
    } else if (!spec.is_number()) {
      throw ConfigError("config /alpha: expected a number or an object");
    }
    std::vector<double> vals;
    if (spec.is_number()) vals = {spec.get<double>()};
    else if (spec.value("kind", "constant") == "constant")
      vals = {spec.contains("value") ? ConfigReader::to_number(spec.at("value"), "/alpha/value") : 1.0};
    else
      for (const auto& x : spec.at("values")) vals.push_back(ConfigReader::to_number(x, "/alpha/values"));
    if (vals.empty()) throw ConfigError("config /alpha/values: empty");
    const double lo = *std::min_element(vals.begin(), vals.end());
    const double hi = *std::max_element(vals.begin(), vals.end());
    c.alpha_m = am.value_or(lo);
    c.alpha_M = aM.value_or(hi);
    if (!(c.alpha_m > 0.0) || c.alpha_m > c.alpha_M || lo < c.alpha_m || hi > c.alpha_M)
      throw ConfigError("config /alpha: Robin coefficient must satisfy 0 < alpha_m <= alpha(x) <= alpha_M");
  }
  {
    auto b = root.child("bounds");
    c.bounds.u_min = b.number("u_min", c.bounds.u_min);
    c.bounds.u_max = b.number("u_max", c.bounds.u_max);
    c.bounds.v_min = b.number("v_min", c.bounds.v_min);
    c.bounds.v_max = b.number("v_max", c.bounds.v_max);
    if (c.bounds.u_min > c.bounds.u_max) b.fail("u_min > u_max, the distributed control set K1 is empty");
    if (c.bounds.v_min > c.bounds.v_max) b.fail("v_min > v_max, the boundary control set K2 is empty");
    b.finish();
  }
  {
    auto i = root.child("initial");
    if (i.has("theta")) c.theta0 = i.raw("theta");
    if (i.has("phi")) c.phi0 = i.raw("phi");
    detail::check_profile(c.theta0, "/initial/theta");
    detail::check_profile(c.phi0, "/initial/phi");
    i.finish();
  }
  {
    auto k = root.child("controls");
    c.u0 = k.number("u", c.u0);
    c.v0 = k.number("v", c.v0);
    c.eta0 = k.number("eta", c.eta0);
    k.finish();
    if (c.u0 < c.bounds.u_min || c.u0 > c.bounds.u_max) throw ConfigError("config /controls/u: outside K1");
    if (c.v0 < c.bounds.v_min || c.v0 > c.bounds.v_max) throw ConfigError("config /controls/v: outside K2");
    if (std::abs(c.eta0) > 1.0) throw ConfigError("config /controls/eta: outside [-1, 1]");
  }
  {
    auto p = root.child("problem");
    c.eps = p.number("eps", c.eps);
    c.sigma = p.opt_number("sigma");
    if (!(c.eps > 0.0)) throw ConfigError("config " + p.at("eps") + ": must be positive (or \"inf\")");
    if (c.sigma && !(*c.sigma > 0.0)) throw ConfigError("config " + p.at("sigma") + ": must be positive");
    p.finish();
  }
  {
    auto s = root.child("schedule");
    c.schedule.eps = s.numbers("eps", c.schedule.eps);
    c.schedule.sigma = s.numbers("sigma", c.schedule.sigma);
    try {
      c.schedule.validate();
    } catch (const DomainError& e) {
      throw ConfigError("config /schedule: " + std::string(e.what()) + " (need strictly decreasing positive lists)");
    }
    s.finish();
  }
  {
    auto o = root.child("optimizer");
    auto& op = c.optimizer;
    op.max_iter = static_cast<int>(o.integer("max_iter", op.max_iter));
    op.tol = o.number("tol", op.tol);
    op.armijo_c = o.number("armijo_c", op.armijo_c);
    op.backtrack = o.number("backtrack", op.backtrack);
    op.initial_step = o.number("initial_step", op.initial_step);
    op.max_backtracks = static_cast<int>(o.integer("max_backtracks", op.max_backtracks));
    op.exact_eta = o.boolean("exact_eta", op.exact_eta);
    op.tol_p_rel = o.number("tol_p_rel", op.tol_p_rel);
    op.tol_I3_rel = o.number("tol_I3_rel", op.tol_I3_rel);
    if (op.max_iter < 0 || !(op.tol > 0.0) || !(op.backtrack > 0.0 && op.backtrack < 1.0) || !(op.initial_step > 0.0) ||
        op.max_backtracks < 0 || !(op.armijo_c > 0.0 && op.armijo_c < 1.0))
      o.fail("invalid optimizer settings");
    o.finish();
  }
  {
    auto n = root.child("newton");
    c.newton.tol = n.number("tol", c.newton.tol);
    c.newton.max_iter = static_cast<int>(n.integer("max_iter", c.newton.max_iter));
    c.newton.max_halvings = static_cast<int>(n.integer("max_halvings", c.newton.max_halvings));
    if (!(c.newton.tol > 0.0) || c.newton.max_iter < 1 || c.newton.max_halvings < 0) n.fail("invalid Newton settings");
    n.finish();
  }
  {
    auto l = root.child("linf");
    c.caps.theta_max = l.number("theta_max", c.caps.theta_max);
    c.caps.inv_theta_max = l.number("inv_theta_max", c.caps.inv_theta_max);
    l.finish();
  }
  {
    auto gc = root.child("gradcheck");
    c.gradcheck.directions = static_cast<int>(gc.integer("directions", c.gradcheck.directions));
    c.gradcheck.fd_step = gc.number("fd_step", c.gradcheck.fd_step);
    if (c.gradcheck.directions < 1 || !(c.gradcheck.fd_step > 0.0)) gc.fail("invalid gradcheck settings");
    gc.finish();
  }
  {
    const long seed = root.integer("seed", 0);
    if (seed < 0) throw ConfigError("config /seed: must be >= 0");
    c.seed = static_cast<std::uint64_t>(seed);
    c.output = root.string("output", c.output);
    c.threads = static_cast<int>(root.integer("threads", 0));
    if (c.threads < 0) throw ConfigError("config /threads: must be >= 0");
  }
  root.finish();

  c.theta_f = detail::absolutize_files(c.theta_f, base_dir);
  if (c.theta_f.is_object() && c.theta_f.value("kind", "") == "series")
    for (auto& lv : c.theta_f["levels"]) lv = detail::absolutize_files(lv, base_dir);
  c.theta0 = detail::absolutize_files(c.theta0, base_dir);
  c.phi0 = detail::absolutize_files(c.phi0, base_dir);
  return c;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::string text;
  try {
    text = detail::read_file(path);
  } catch (const IoError& e) {
    throw ConfigError(e.what());
  }
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return parse_config(doc, std::filesystem::absolute(path).parent_path());
}

/// Normalized echo of a configuration (all defaults filled in).
inline json config_to_json(const RunConfig& c) {
  json j;
  j["grid"] = {{"dim", c.dim}};
  if (c.dim == 1) {
    j["grid"]["extents"] = {c.extents[0]};
    j["grid"]["counts"] = {c.counts[0]};
  } else {
    j["grid"]["extents"] = {c.extents[0], c.extents[1]};
    j["grid"]["counts"] = {c.counts[0], c.counts[1]};
  }
  j["time"] = {{"T", c.T}, {"nt", c.nt}};
  j["model"] = {{"theta_c", c.theta_c}, {"lambda1", c.lambda1}, {"lambda2", c.lambda2}, {"theta_f", c.theta_f}};
  if (c.theta_f_delta) j["model"]["theta_f_delta"] = *c.theta_f_delta;
  json a = c.alpha.is_number() ? json{{"kind", "constant"}, {"value", c.alpha}} : c.alpha;
  a["alpha_m"] = c.alpha_m;
  a["alpha_M"] = c.alpha_M;
  j["alpha"] = a;
  j["bounds"] = {{"u_min", c.bounds.u_min}, {"u_max", c.bounds.u_max}, {"v_min", c.bounds.v_min}, {"v_max", c.bounds.v_max}};
  j["initial"] = {{"theta", c.theta0}, {"phi", c.phi0}};
  j["controls"] = {{"u", c.u0}, {"v", c.v0}, {"eta", c.eta0}};
  j["problem"] = {{"eps", detail::number_json(c.eps)}};
  j["problem"]["sigma"] = c.sigma ? json(*c.sigma) : json(nullptr);
  j["schedule"] = {{"eps", c.schedule.eps}, {"sigma", c.schedule.sigma}};
  const auto& o = c.optimizer;
  j["optimizer"] = {{"max_iter", o.max_iter},         {"tol", o.tol},
                    {"armijo_c", o.armijo_c},         {"backtrack", o.backtrack},
                    {"initial_step", o.initial_step}, {"max_backtracks", o.max_backtracks},
                    {"exact_eta", o.exact_eta},       {"tol_p_rel", o.tol_p_rel},
                    {"tol_I3_rel", o.tol_I3_rel}};
  j["newton"] = {{"tol", c.newton.tol}, {"max_iter", c.newton.max_iter}, {"max_halvings", c.newton.max_halvings}};
  j["linf"] = {{"theta_max", detail::number_json(c.caps.theta_max)},
               {"inv_theta_max", detail::number_json(c.caps.inv_theta_max)}};
  j["gradcheck"] = {{"directions", c.gradcheck.directions}, {"fd_step", c.gradcheck.fd_step}};
  j["seed"] = c.seed;
  j["output"] = c.output;
  j["threads"] = c.threads;
  return j;
}

// ---------------------------------------------------------------------------
// Building the numerical objects

struct Setup {
  GridPtr grid;
  Model model;
  InitialData init;
  ControlSet controls;
};

inline GridPtr make_grid(const RunConfig& c) {
  return c.dim == 1 ? Grid::line(c.extents[0], c.counts[0])
                    : Grid::rectangle(c.extents[0], c.extents[1], c.counts[0], c.counts[1]);
}

inline BoundaryField make_alpha(const GridPtr& grid, const RunConfig& c) {
  const json& a = c.alpha;
  if (a.is_number()) return BoundaryField(grid, a.get<double>());
  if (a.value("kind", "constant") == "constant")
    return BoundaryField(grid, a.contains("value") ? detail::ConfigReader::to_number(a.at("value"), "/alpha/value") : 1.0);
  std::vector<double> v;
  for (const auto& x : a.at("values")) v.push_back(detail::ConfigReader::to_number(x, "/alpha/values"));
  if (v.size() != grid->boundary_size()) throw ConfigError("config /alpha/values: need one value per boundary node");
  return BoundaryField(grid, std::move(v));
}

inline Setup build_setup(RunConfig& c) {
  auto grid = make_grid(c);
  ModelParams P;
  P.theta_c = c.theta_c;
  P.lambda1 = c.lambda1;
  P.lambda2 = c.lambda2;
  P.bounds = c.bounds;
  P.T = c.T;
  P.nt = c.nt;
  if (c.theta_f.is_object() && c.theta_f.value("kind", "") == "series") {
    const auto& lv = c.theta_f.at("levels");
    for (std::size_t n = 0; n < lv.size(); ++n)
      P.theta_f.push_back(make_profile(grid, lv[n], c.base_dir, "/model/theta_f/levels/" + std::to_string(n)));
  } else {
    P.theta_f.assign(c.nt + 1, make_profile(grid, c.theta_f, c.base_dir, "/model/theta_f"));
  }
  if (c.theta_f_delta) {
    double dev = 0.0;
    for (const auto& f : P.theta_f)
      for (double x : f.values()) dev = std::max(dev, std::abs(x - c.theta_c));
    if (dev > *c.theta_f_delta)
      c.warnings.push_back("theta_f leaves the theta_f_delta neighbourhood of theta_c (max deviation " + fmt17(dev) + ")");
  }
  InitialData init{make_profile(grid, c.theta0, c.base_dir, "/initial/theta"),
                   make_profile(grid, c.phi0, c.base_dir, "/initial/phi")};
  if (!(init.theta0.min() > 0.0)) throw ConfigError("config /initial/theta: temperature must be positive");
  RobinOperator robin(grid, make_alpha(grid, c), c.alpha_m, c.alpha_M);
  Model model(grid, std::move(robin), std::move(P), c.newton, c.caps);
  auto controls = ControlSet::constant(grid, c.nt, c.u0, c.v0, c.eta0);
  return {grid, std::move(model), std::move(init), std::move(controls)};
}

// ---------------------------------------------------------------------------
// CSV tables

namespace detail {

inline std::string coords(const Grid& g, std::size_t id) {
  return g.dim() == 1 ? fmt17(g.x(id)) : fmt17(g.x(id)) + "," + fmt17(g.y(id));
}

inline std::string coord_header(const Grid& g) { return g.dim() == 1 ? "x" : "x,y"; }

}  // namespace detail

/// t, x[, y], theta, phi for every level and node.
inline std::string state_csv(const Model& model, const StateTrajectory& s) {
  const Grid& g = *model.grid;
  std::string out = "t," + detail::coord_header(g) + ",theta,phi\n";
  for (std::size_t n = 0; n < s.theta.size(); ++n) {
    const std::string t = fmt17(static_cast<double>(n) * model.tau());
    for (std::size_t i = 0; i < g.size(); ++i)
      out += t + "," + detail::coords(g, i) + "," + fmt17(s.theta[n][i]) + "," + fmt17(s.phi[n][i]) + "\n";
  }
  return out;
}

/// Long format: field, level, t0, t1, node, x[, y], value. u and v slice n
/// covers (t0, t1] = (t_n, t_{n+1}]; eta level n sits at t0 = t1 = t_n.
inline std::string controls_csv(const Model& model, const ControlSet& c) {
  const Grid& g = *model.grid;
  const double tau = model.tau();
  std::string out = "field,level,t0,t1,node," + detail::coord_header(g) + ",value\n";
  for (std::size_t n = 0; n < c.u.size(); ++n)
    for (std::size_t i = 0; i < g.size(); ++i)
      out += "u," + std::to_string(n) + "," + fmt17(n * tau) + "," + fmt17((n + 1) * tau) + "," + std::to_string(i) +
             "," + detail::coords(g, i) + "," + fmt17(c.u[n][i]) + "\n";
  for (std::size_t n = 0; n < c.v.size(); ++n)
    for (std::size_t k = 0; k < g.boundary_size(); ++k) {
      const auto id = g.boundary_index()[k];
      out += "v," + std::to_string(n) + "," + fmt17(n * tau) + "," + fmt17((n + 1) * tau) + "," + std::to_string(id) +
             "," + detail::coords(g, id) + "," + fmt17(c.v[n][k]) + "\n";
    }
  for (std::size_t n = 0; n < c.eta.size(); ++n)
    for (std::size_t i = 0; i < g.size(); ++i)
      out += "eta," + std::to_string(n) + "," + fmt17(n * tau) + "," + fmt17(n * tau) + "," + std::to_string(i) + "," +
             detail::coords(g, i) + "," + fmt17(c.eta[n][i]) + "\n";
  return out;
}

/// t, x[, y], p, q, I3.
inline std::string adjoint_csv(const Model& model, const AdjointPair& a, const AdjointSources& src) {
  const Grid& g = *model.grid;
  std::string out = "t," + detail::coord_header(g) + ",p,q,I3\n";
  for (std::size_t n = 0; n < a.p.size(); ++n) {
    const std::string t = fmt17(static_cast<double>(n) * model.tau());
    for (std::size_t i = 0; i < g.size(); ++i)
      out += t + "," + detail::coords(g, i) + "," + fmt17(a.p[n][i]) + "," + fmt17(a.q[n][i]) + "," +
             fmt17(src.I3[n][i]) + "\n";
  }
  return out;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) { detail::write_file(path, text); }

}  // namespace pfsc
