#include "sppfem/config.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <memory>
#include <sstream>

namespace sppfem {

const char* version() { return "1.0.0"; }

namespace {

std::string trim(std::string_view s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::optional<double> to_double(std::string_view s) {
  std::string t = trim(s);
  double v = 0;
  auto r = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || r.ec != std::errc() || r.ptr != t.data() + t.size()) return std::nullopt;
  return v;
}

std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    auto p = s.find(sep, start);
    out.push_back(trim(s.substr(start, p == std::string_view::npos ? std::string_view::npos : p - start)));
    if (p == std::string_view::npos) break;
    start = p + 1;
  }
  return out;
}

std::string g17(double v) { return fmt::format("{:.17g}", v); }

// Model grammar ---------------------------------------------------------------------

Mat3 parse_matrix(const std::string& text) {
  std::string t = trim(text);
  if (!t.empty() && t.front() == '[' && t.back() == ']') t = t.substr(1, t.size() - 2);
  auto parts = split(t, ',');
  std::vector<double> v;
  for (const auto& p : parts) {
    auto d = to_double(p);
    if (!d) throw Error(ErrorKind::Input, "bad matrix entry '" + p + "'");
    v.push_back(*d);
  }
  Mat3 G = Mat3::Zero();
  if (v.size() == 3) {
    G.diagonal() << v[0], v[1], v[2];
  } else if (v.size() == 9) {
    for (int i = 0; i < 9; ++i) G(i / 3, i % 3) = v[i];
  } else {
    throw Error(ErrorKind::Input, "matrix needs 3 (diagonal) or 9 entries: '" + text + "'");
  }
  return G;
}

std::map<std::string, std::string> parse_params(std::istringstream& is, const std::string& spec) {
  std::map<std::string, std::string> kv;
  std::string tok;
  while (is >> tok) {
    auto eq = tok.find('=');
    if (eq == std::string::npos || eq == 0) throw Error(ErrorKind::Input, "bad parameter '" + tok + "' in '" + spec + "'");
    kv[tok.substr(0, eq)] = tok.substr(eq + 1);
  }
  return kv;
}

double param(const std::map<std::string, std::string>& kv, const std::string& key, const std::string& spec) {
  auto it = kv.find(key);
  if (it == kv.end()) throw Error(ErrorKind::Input, "model '" + spec + "' needs " + key + "=");
  auto d = to_double(it->second);
  if (!d) throw Error(ErrorKind::Input, "bad value for " + key + " in '" + spec + "'");
  return *d;
}

void only_keys(const std::map<std::string, std::string>& kv, std::initializer_list<const char*> keys,
               const std::string& spec) {
  for (const auto& [k, v] : kv)
    if (std::none_of(keys.begin(), keys.end(), [&](const char* a) { return k == a; }))
      throw Error(ErrorKind::Input, "unknown parameter '" + k + "' in '" + spec + "'");
}

}  // namespace

AnisotropyModel parse_model(const std::string& spec_in) {
  const std::string spec = trim(spec_in);
  if (spec.rfind("sum(", 0) == 0) {
    if (spec.back() != ')') throw Error(ErrorKind::Input, "unterminated sum(...) in '" + spec + "'");
    std::string body = spec.substr(4, spec.size() - 5);
    std::vector<std::pair<double, AnisotropyModel>> terms;
    int depth = 0;
    std::size_t start = 0;
    auto flush = [&](std::size_t end) {
      std::string term = trim(std::string_view(body).substr(start, end - start));
      auto star = term.find('*');
      if (star == std::string::npos) throw Error(ErrorKind::Input, "sum term needs weight*model: '" + term + "'");
      auto w = to_double(term.substr(0, star));
      if (!w) throw Error(ErrorKind::Input, "bad sum weight in '" + term + "'");
      terms.emplace_back(*w, parse_model(term.substr(star + 1)));
    };
    for (std::size_t i = 0; i < body.size(); ++i) {
      char c = body[i];
      if (c == '(' || c == '[') ++depth;
      if (c == ')' || c == ']') --depth;
      // " + " separates terms; a bare '+' may be an exponent sign
      if (depth == 0 && c == '+' && i > 0 && body[i - 1] == ' ') {
        flush(i);
        start = i + 1;
      }
    }
    flush(body.size());
    return AnisotropyModel::weighted_sum(terms);
  }

  std::istringstream is(spec);
  std::string family;
  is >> family;
  auto kv = parse_params(is, spec);
  if (family == "isotropic") {
    only_keys(kv, {}, spec);
    return AnisotropyModel::isotropic();
  }
  if (family == "ellipsoidal") {
    only_keys(kv, {"G"}, spec);
    if (!kv.count("G")) throw Error(ErrorKind::Input, "ellipsoidal needs G=");
    return AnisotropyModel::ellipsoidal(parse_matrix(kv["G"]));
  }
  if (family == "lr") {
    only_keys(kv, {"r"}, spec);
    return AnisotropyModel::lr_norm(param(kv, "r", spec));
  }
  if (family == "fourfold") {
    only_keys(kv, {"beta"}, spec);
    return AnisotropyModel::four_fold(param(kv, "beta", spec));
  }
  if (family == "bgn") {
    only_keys(kv, {"r", "G"}, spec);
    if (!kv.count("G")) throw Error(ErrorKind::Input, "bgn needs G=");
    std::vector<Mat3> G;
    for (const auto& m : split(kv["G"], ';')) G.push_back(parse_matrix(m));
    return AnisotropyModel::regularized_bgn(param(kv, "r", spec), std::move(G));
  }
  throw Error(ErrorKind::Input,
              "unknown anisotropy '" + family + "' (isotropic | ellipsoidal | lr | fourfold | bgn | sum(...))");
}

// Config keys -------------------------------------------------------------------------

namespace {

struct Key {
  std::string name;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

double need_double(const std::string& key, const std::string& v) {
  auto d = to_double(v);
  if (!d) throw Error(ErrorKind::Config, fmt::format("key '{}': '{}' is not a number", key, v));
  return *d;
}

int need_int(const std::string& key, const std::string& v) {
  std::string t = trim(v);
  int x = 0;
  auto r = std::from_chars(t.data(), t.data() + t.size(), x);
  if (t.empty() || r.ec != std::errc() || r.ptr != t.data() + t.size())
    throw Error(ErrorKind::Config, fmt::format("key '{}': '{}' is not an integer", key, v));
  return x;
}

const std::vector<Key>& key_table() {
  static const std::vector<Key> keys = [] {
    std::vector<Key> k;
    auto str = [&](const char* name, std::string RunConfig::*m) {
      k.push_back({name, [m](RunConfig& c, const std::string& v) { c.*m = trim(v); },
                   [m](const RunConfig& c) { return c.*m; }});
    };
    auto num = [&](const char* name, double RunConfig::*m) {
      std::string n = name;
      k.push_back({n, [m, n](RunConfig& c, const std::string& v) { c.*m = need_double(n, v); },
                   [m](const RunConfig& c) { return g17(c.*m); }});
    };
    auto integer = [&](const char* name, int RunConfig::*m) {
      std::string n = name;
      k.push_back({n, [m, n](RunConfig& c, const std::string& v) { c.*m = need_int(n, v); },
                   [m](const RunConfig& c) { return std::to_string(c.*m); }});
    };
    str("shape", &RunConfig::shape);
    k.push_back({"shape.size",
                 [](RunConfig& c, const std::string& v) {
                   std::istringstream is(v);
                   std::string a, b, d, extra;
                   if (!(is >> a >> b >> d) || (is >> extra))
                     throw Error(ErrorKind::Config, "key 'shape.size': expected three numbers");
                   c.size = {need_double("shape.size", a), need_double("shape.size", b),
                             need_double("shape.size", d)};
                 },
                 [](const RunConfig& c) { return fmt::format("{} {} {}", g17(c.size[0]), g17(c.size[1]), g17(c.size[2])); }});
    str("shape.path", &RunConfig::shape_path);
    str("anisotropy", &RunConfig::anisotropy);
    str("stabilizer", &RunConfig::stabilizer);
    num("stabilizer.tol", &RunConfig::k0_tol);
    num("h", &RunConfig::h);
    k.push_back({"tau",
                 [](RunConfig& c, const std::string& v) {
                   std::string t = trim(v);
                   if (t.empty() || t == "auto") c.tau.reset();
                   else c.tau = need_double("tau", t);
                 },
                 [](const RunConfig& c) { return c.tau ? g17(*c.tau) : std::string("auto"); }});
    num("T", &RunConfig::T);
    str("output", &RunConfig::output);
    integer("snapshot_every", &RunConfig::snapshot_every);
    k.push_back({"formats",
                 [](RunConfig& c, const std::string& v) {
                   c.formats.clear();
                   for (auto& f : split(v, ','))
                     if (!f.empty()) c.formats.push_back(f);
                 },
                 [](const RunConfig& c) {
                   std::string s;
                   for (std::size_t i = 0; i < c.formats.size(); ++i) s += (i ? "," : "") + c.formats[i];
                   return s;
                 }});
    str("table_cache", &RunConfig::table_cache);
    num("newton.tol_x", &RunConfig::tol_x);
    num("newton.tol_mu", &RunConfig::tol_mu);
    integer("newton.max_iter", &RunConfig::max_newton);
    str("newton.jacobian", &RunConfig::jacobian);
    str("linear_solver", &RunConfig::linear_solver);
    return k;
  }();
  return keys;
}

const Key& find_key(const std::string& name) {
  for (const auto& k : key_table())
    if (k.name == name) return k;
  throw Error(ErrorKind::Config, fmt::format("unknown key '{}'", name));
}

}  // namespace

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> n;
    for (const auto& k : key_table()) n.push_back(k.name);
    return n;
  }();
  return names;
}

void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
  find_key(key).set(cfg, value);
}

std::string get_config_value(const RunConfig& cfg, const std::string& key) { return find_key(key).get(cfg); }

void RunConfig::validate() const {
  auto bad = [](const std::string& key, const std::string& why) {
    throw Error(ErrorKind::Config, fmt::format("key '{}': {}", key, why));
  };
  if (shape != "cuboid" && shape != "ellipsoid" && shape != "obj") bad("shape", "expected cuboid | ellipsoid | obj");
  if (shape == "obj" && shape_path.empty()) bad("shape.path", "required when shape = obj");
  if (shape != "obj" && !(size[0] > 0 && size[1] > 0 && size[2] > 0)) bad("shape.size", "sizes must be positive");
  try {
    parse_model(anisotropy);
  } catch (const Error& e) {
    bad("anisotropy", e.what());
  }
  try {
    Strategy::parse(stabilizer);
  } catch (const Error& e) {
    bad("stabilizer", e.what());
  }
  if (!(k0_tol >= 1e-6 && k0_tol <= 1e-2)) bad("stabilizer.tol", "must lie in [1e-6, 1e-2]");
  if (!(h > 0)) bad("h", "must be positive");
  if (tau && !(*tau > 0)) bad("tau", "must be positive");
  if (!(T > 0)) bad("T", "must be positive");
  if (!(T >= resolved_tau() * (1 - 1e-12))) bad("T", "must be at least one time step");
  if (snapshot_every < 1) bad("snapshot_every", "must be >= 1");
  for (const auto& f : formats)
    if (f != "obj" && f != "vtk") bad("formats", "unknown format '" + f + "' (obj, vtk)");
  if (output.empty()) bad("output", "must not be empty");
  if (!(tol_x > 0)) bad("newton.tol_x", "must be positive");
  if (!(tol_mu > 0)) bad("newton.tol_mu", "must be positive");
  if (max_newton < 1) bad("newton.max_iter", "must be >= 1");
  if (jacobian != "full" && jacobian != "lazy") bad("newton.jacobian", "expected full | lazy");
  if (linear_solver != "auto" && linear_solver != "umfpack" && linear_solver != "sparselu")
    bad("linear_solver", "expected auto | umfpack | sparselu");
}

RunConfig parse_config(std::istream& is, const std::string& source, bool validate) {
  RunConfig cfg;
  std::string line, section;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    auto hash = line.find('#');
    std::string t = trim(hash == std::string::npos ? line : line.substr(0, hash));
    if (t.empty()) continue;
    if (t.front() == '[') {
      if (t.back() != ']') throw Error(ErrorKind::Config, fmt::format("{}:{}: malformed section header", source, lineno));
      section = trim(t.substr(1, t.size() - 2));
      continue;
    }
    auto eq = t.find('=');
    if (eq == std::string::npos)
      throw Error(ErrorKind::Config, fmt::format("{}:{}: expected 'key = value', got '{}'", source, lineno, t));
    std::string key = trim(t.substr(0, eq));
    std::string value = trim(t.substr(eq + 1));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
    if (!section.empty()) key = section + "." + key;
    if (key == "version") continue;  // manifest header
    try {
      set_config_value(cfg, key, value);
    } catch (const Error& e) {
      throw Error(ErrorKind::Config, fmt::format("{}:{}: {}", source, lineno, e.what()));
    }
  }
  if (validate) cfg.validate();
  return cfg;
}

RunConfig load_config(const std::string& path, bool validate) {
  std::ifstream is(path);
  if (!is) throw Error(ErrorKind::Config, "cannot read config file " + path);
  return parse_config(is, path, validate);
}

std::string to_manifest(const RunConfig& cfg) {
  std::string s = fmt::format("# sppfem run manifest\nversion = {}\n", version());
  for (const auto& k : key_table()) s += fmt::format("{} = {}\n", k.name, k.get(cfg));
  return s;
}

SurfaceMesh build_shape(const RunConfig& cfg) {
  if (cfg.shape == "cuboid") return make_cuboid(cfg.size[0], cfg.size[1], cfg.size[2], cfg.h);
  if (cfg.shape == "ellipsoid") return make_ellipsoid(cfg.size[0], cfg.size[1], cfg.size[2], cfg.h);
  if (cfg.shape == "obj") return read_obj(cfg.shape_path);
  throw Error(ErrorKind::Config, "key 'shape': unknown shape '" + cfg.shape + "'");
}

StepperConfig stepper_config(const RunConfig& cfg, StabilizerTable table) {
  StepperConfig s;
  s.tau = cfg.resolved_tau();
  s.table = std::move(table);
  s.tol_x = cfg.tol_x;
  s.tol_mu = cfg.tol_mu;
  s.max_newton = cfg.max_newton;
  s.jacobian = cfg.jacobian == "full" ? JacobianPolicy::Full : JacobianPolicy::Lazy;
  s.linear_solver = cfg.linear_solver == "umfpack"    ? LinearSolverKind::Umfpack
                    : cfg.linear_solver == "sparselu" ? LinearSolverKind::SparseLU
                                                      : LinearSolverKind::Auto;
  return s;
}

StabilizerTable cached_table(const AnisotropyModel& model, Strategy strategy, double tol, const std::string& dir) {
  const std::string path = fmt::format("{}/k0_{:016x}_tol{:.17g}.txt", dir, model.hash(), tol);
  if (!dir.empty() && std::filesystem::exists(path)) {
    StabilizerTable t = StabilizerTable::load(path);
    if (t.model_hash() == model.hash() && t.tol() == tol)
      return StabilizerTable::from_k0(t.k0_values(), strategy, tol, model.hash());
  }
  StabilizerTable t = build_table(model, Strategy::exact(), tol);
  if (!dir.empty()) {
    std::filesystem::create_directories(dir);
    t.save(path);
  }
  return StabilizerTable::from_k0(t.k0_values(), strategy, tol, model.hash());
}

}  // namespace sppfem
