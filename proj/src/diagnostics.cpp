#include "sppfem/diagnostics.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>

namespace sppfem {

// BVH ray casting ----------------------------------------------------------------------

struct RayCaster::Impl {
  struct Node {
    Eigen::Vector3d lo, hi;
    int left = -1, right = -1;  // children, or -1 for a leaf
    int begin = 0, end = 0;     // leaf range into order
  };
  std::vector<Vec3> a, e1, e2, J;  // per triangle
  std::vector<int> order;
  std::vector<Node> nodes;

  int build(int begin, int end, const std::vector<Vec3>& centroid, const std::vector<Vec3>& lo,
            const std::vector<Vec3>& hi) {
    Node node;
    node.lo = Vec3::Constant(std::numeric_limits<double>::infinity());
    node.hi = -node.lo;
    Vec3 clo = node.lo, chi = node.hi;
    for (int k = begin; k < end; ++k) {
      int j = order[k];
      node.lo = node.lo.cwiseMin(lo[j]);
      node.hi = node.hi.cwiseMax(hi[j]);
      clo = clo.cwiseMin(centroid[j]);
      chi = chi.cwiseMax(centroid[j]);
    }
    int id = static_cast<int>(nodes.size());
    nodes.push_back(node);
    if (end - begin <= 4) {
      nodes[id].begin = begin;
      nodes[id].end = end;
      return id;
    }
    Eigen::Index axis;
    (chi - clo).maxCoeff(&axis);
    int mid = (begin + end) / 2;
    std::nth_element(order.begin() + begin, order.begin() + mid, order.begin() + end,
                     [&](int p, int q) { return centroid[p][axis] < centroid[q][axis]; });
    int l = build(begin, mid, centroid, lo, hi);
    int r = build(mid, end, centroid, lo, hi);
    nodes[id].left = l;
    nodes[id].right = r;
    return id;
  }

  static bool slab(const Node& n, const Vec3& o, const Vec3& inv) {
    double t0 = 0.0, t1 = std::numeric_limits<double>::infinity();
    for (int d = 0; d < 3; ++d) {
      double ta = (n.lo[d] - o[d]) * inv[d], tb = (n.hi[d] - o[d]) * inv[d];
      if (std::isnan(ta) || std::isnan(tb)) {  // 0 * inf: origin on the slab plane
        if (o[d] < n.lo[d] || o[d] > n.hi[d]) return false;
        continue;
      }
      if (ta > tb) std::swap(ta, tb);
      t0 = std::max(t0, ta);
      t1 = std::min(t1, tb);
    }
    return t0 <= t1 * (1 + 1e-12) + 1e-14;
  }
};

RayCaster::RayCaster(const SurfaceMesh& mesh) : impl_(std::make_unique<Impl>()) {
  const std::size_t nt = mesh.triangle_count();
  Impl& m = *impl_;
  m.a.resize(nt);
  m.e1.resize(nt);
  m.e2.resize(nt);
  m.J.resize(nt);
  std::vector<Vec3> centroid(nt), lo(nt), hi(nt);
  for (std::size_t j = 0; j < nt; ++j) {
    const Triangle& t = mesh.triangle(static_cast<int>(j));
    const Vec3 &p = mesh.vertex(t[0]), &q = mesh.vertex(t[1]), &r = mesh.vertex(t[2]);
    m.a[j] = p;
    m.e1[j] = q - p;
    m.e2[j] = r - p;
    m.J[j] = orientation_vector(p, q, r);
    centroid[j] = (p + q + r) / 3.0;
    lo[j] = p.cwiseMin(q).cwiseMin(r);
    hi[j] = p.cwiseMax(q).cwiseMax(r);
  }
  m.order.resize(nt);
  std::iota(m.order.begin(), m.order.end(), 0);
  m.nodes.reserve(2 * nt / 4 + 2);
  m.build(0, static_cast<int>(nt), centroid, lo, hi);
}

RayCaster::~RayCaster() = default;
RayCaster::RayCaster(RayCaster&&) noexcept = default;
RayCaster& RayCaster::operator=(RayCaster&&) noexcept = default;

std::vector<RayCaster::Hit> RayCaster::cast(const Vec3& o, const Vec3& d) const {
  const Impl& m = *impl_;
  constexpr double eps = 1e-12;
  Vec3 inv = d.cwiseInverse();
  std::vector<Hit> hits;
  int stack[128];
  int top = 0;
  stack[top++] = 0;
  while (top > 0) {
    const Impl::Node& n = m.nodes[stack[--top]];
    if (!Impl::slab(n, o, inv)) continue;
    if (n.left >= 0) {
      stack[top++] = n.left;
      stack[top++] = n.right;
      continue;
    }
    for (int k = n.begin; k < n.end; ++k) {
      int j = m.order[k];
      Vec3 p = d.cross(m.e2[j]);
      double det = m.e1[j].dot(p);
      if (std::abs(det) < 1e-300) continue;
      double inv_det = 1.0 / det;
      Vec3 s = o - m.a[j];
      double u = s.dot(p) * inv_det;
      if (u < -eps || u > 1 + eps) continue;
      Vec3 q = s.cross(m.e1[j]);
      double v = d.dot(q) * inv_det;
      if (v < -eps || u + v > 1 + eps) continue;
      double t = m.e2[j].dot(q) * inv_det;
      if (t <= 0) continue;
      hits.push_back({t, m.J[j].dot(d) > 0 ? 1 : -1});
    }
  }
  std::sort(hits.begin(), hits.end(), [](const Hit& x, const Hit& y) { return x.t < y.t; });
  // crossings of a closed surface alternate in sign; repeated signs come from
  // rays through shared edges or vertices
  std::vector<Hit> out;
  for (const Hit& h : hits)
    if (out.empty() || out.back().sign != h.sign) out.push_back(h);
  return out;
}

std::vector<std::pair<double, double>> RayCaster::inside(const Vec3& o, const Vec3& d) const {
  auto hits = cast(o, d);
  std::vector<std::pair<double, double>> iv;
  double enter = 0.0;
  bool in = !hits.empty() && hits.front().sign > 0;
  for (const Hit& h : hits) {
    if (h.sign < 0) {
      enter = h.t;
      in = true;
    } else if (in) {
      iv.emplace_back(enter, h.t);
      in = false;
    }
  }
  return iv;
}

// Quadrature --------------------------------------------------------------------------

SphereQuadrature cube_sphere_quadrature(int level) {
  if (level < 0 || level > 10) throw Error(ErrorKind::Input, "quadrature level out of range");
  const int n = 8 << level;
  const double cell = 2.0 / n;
  SphereQuadrature q;
  q.directions.reserve(6 * n * n);
  q.weights.reserve(6 * n * n);
  for (int axis = 0; axis < 3; ++axis)
    for (int side : {1, -1})
      for (int i = 0; i < n; ++i)
        for (int k = 0; k < n; ++k) {
          Vec3 p;
          p[axis] = side;
          p[(axis + 1) % 3] = -1 + (i + 0.5) * cell;
          p[(axis + 2) % 3] = -1 + (k + 0.5) * cell;
          double r = p.norm();
          q.directions.push_back(p / r);
          q.weights.push_back(cell * cell / (r * r * r));
        }
  return q;
}

namespace {

double cube_diff(double a, double b) { return (b - a) * (a * a + a * b + b * b) / 3.0; }

// integral of |1_A - 1_B| r^2 dr along one ray
double ray_symmetric_difference(const std::vector<std::pair<double, double>>& A,
                                const std::vector<std::pair<double, double>>& B) {
  if (A.size() == 1 && B.size() == 1 && A[0].first == 0.0 && B[0].first == 0.0) {
    double a = A[0].second, b = B[0].second;
    return std::abs(cube_diff(std::min(a, b), std::max(a, b)));
  }
  std::vector<std::pair<double, int>> ev;  // (r, delta code)
  for (auto [lo, hi] : A) {
    ev.emplace_back(lo, 1);
    ev.emplace_back(hi, -1);
  }
  for (auto [lo, hi] : B) {
    ev.emplace_back(lo, 2);
    ev.emplace_back(hi, -2);
  }
  std::sort(ev.begin(), ev.end());
  int inA = 0, inB = 0;
  double prev = 0.0, sum = 0.0;
  for (auto [r, code] : ev) {
    if (inA != inB) sum += cube_diff(prev, r);
    prev = r;
    if (code == 1) inA = 1;
    if (code == -1) inA = 0;
    if (code == 2) inB = 1;
    if (code == -2) inB = 0;
  }
  return sum;
}

}  // namespace

double manifold_distance_at(const RayCaster& A, const RayCaster& B, const Vec3& center, int level) {
  SphereQuadrature q = cube_sphere_quadrature(level);
  double sum = 0.0;
  for (std::size_t k = 0; k < q.directions.size(); ++k) {
    const Vec3& d = q.directions[k];
    sum += q.weights[k] * ray_symmetric_difference(A.inside(center, d), B.inside(center, d));
  }
  return sum;
}

DistanceResult manifold_distance(const SurfaceMesh& A, const SurfaceMesh& B, const DistanceOptions& opt) {
  if (opt.start_level < 0 || opt.max_level < opt.start_level)
    throw Error(ErrorKind::Input, "invalid quadrature level range");
  // full validation (closedness, orientation) even for meshes built unchecked
  for (const SurfaceMesh* m : {&A, &B}) SurfaceMesh(m->vertices(), m->triangles());
  DistanceResult res;
  res.center = 0.5 * (enclosed_centroid(A) + enclosed_centroid(B));
  const double scale = std::max(enclosed_volume(A), enclosed_volume(B));
  RayCaster ca(A), cb(B);
  double prev = std::numeric_limits<double>::quiet_NaN();
  for (int level = opt.start_level; level <= opt.max_level; ++level) {
    double v = manifold_distance_at(ca, cb, res.center, level);
    res.value = v;
    res.level = level;
    res.directions = 6u * (8u << level) * (8u << level);
    if (!std::isnan(prev)) {
      double diff = std::abs(v - prev);
      if (diff <= opt.rel_tol * std::abs(v) || std::max(std::abs(v), std::abs(prev)) <= 1e-13 * scale) {
        res.converged = true;
        break;
      }
    }
    prev = v;
  }
  return res;
}

// Snapshots ---------------------------------------------------------------------------

SurfaceMesh Snapshots::at(double t) const {
  if (!(tau > 0)) throw Error(ErrorKind::Input, "snapshots have no time step");
  double s = t / tau;
  double r = std::round(s);
  auto get = [&](int step) -> const std::vector<Vec3>& {
    auto it = by_step.find(step);
    if (it == by_step.end())
      throw Error(ErrorKind::Input, fmt::format("time {:.17g} (step {}) outside the stored trajectory", t, step));
    return it->second;
  };
  if (std::abs(s - r) <= 1e-9 * std::max(1.0, s))
    return SurfaceMesh(get(static_cast<int>(r)), triangles);
  int lo = static_cast<int>(std::floor(s));
  const auto& a = get(lo);
  const auto& b = get(lo + 1);
  double w = s - lo;  // weight of the later step
  std::vector<Vec3> x(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) x[i] = (1 - w) * a[i] + w * b[i];
  return SurfaceMesh(std::move(x), triangles);
}

DistanceResult numerical_error(const Snapshots& run, const Snapshots& reference, double t,
                               const DistanceOptions& opt) {
  return manifold_distance(run.at(t), reference.at(t), opt);
}

// Cases -------------------------------------------------------------------------------

BenchmarkCase benchmark_case(int id) {
  switch (id) {
    case 1:
      return {1, "gamma = 1 + (n1^4+n2^4+n3^4)/4, k = k0", AnisotropyModel::four_fold(0.25), Strategy::exact()};
    case 2:
      return {2, "gamma = 1 + (n1^4+n2^4+n3^4)/2, k = k0", AnisotropyModel::four_fold(0.5), Strategy::exact()};
    case 3:
      return {3, "gamma = (n1^4+n2^4+n3^4)^(1/4), k = k0", AnisotropyModel::lr_norm(4), Strategy::exact()};
    case 4:
      return {4, "gamma = (n1^4+n2^4+n3^4)^(1/4), k = k0 + 1", AnisotropyModel::lr_norm(4), Strategy::plus(1)};
    case 5:
      return {5, "gamma = (n1^4+n2^4+n3^4)^(1/4), k = k0 + 2", AnisotropyModel::lr_norm(4), Strategy::plus(2)};
    case 6:
      return {6, "gamma = (n1^4+n2^4+n3^4)^(1/4), k = k0 + 5", AnisotropyModel::lr_norm(4), Strategy::plus(5)};
    default:
      throw Error(ErrorKind::Input, fmt::format("case id {} not in 1..6", id));
  }
}

// Suite -------------------------------------------------------------------------------

namespace {

std::string key_of(const AnisotropyModel& model, double tol) {
  return fmt::format("{:016x}_tol{:.0e}", model.hash(), tol);
}

std::string file_safe(std::string s) {
  for (char& c : s)
    if (c == ':' || c == '/' || c == ' ') c = '_';
  return s;
}

std::set<int> steps_for(const std::vector<double>& times, double tau) {
  std::set<int> steps;
  for (double t : times) {
    double s = t / tau, r = std::round(s);
    if (std::abs(s - r) <= 1e-9 * std::max(1.0, s)) {
      steps.insert(static_cast<int>(r));
    } else {
      steps.insert(static_cast<int>(std::floor(s)));
      steps.insert(static_cast<int>(std::floor(s)) + 1);
    }
  }
  return steps;
}

}  // namespace

const StabilizerTable& SuiteCache::table(const AnisotropyModel& model, Strategy strategy, double tol) {
  const std::string base = key_of(model, tol);
  const std::string key = base + "_" + strategy.to_string();
  if (auto it = tables_.find(key); it != tables_.end()) return it->second;

  // k0 itself does not depend on the strategy; cache the exact table
  const std::string exact_key = base + "_exact";
  auto it = tables_.find(exact_key);
  if (it == tables_.end()) {
    std::optional<StabilizerTable> t;
    std::string path = dir_.empty() ? std::string() : dir_ + "/table_" + base + ".txt";
    if (!path.empty() && std::filesystem::exists(path)) {
      StabilizerTable loaded = StabilizerTable::load(path);
      if (loaded.model_hash() == model.hash()) t = loaded;
    }
    if (!t) {
      t = build_table(model, Strategy::exact(), tol);
      if (!path.empty()) {
        std::filesystem::create_directories(dir_);
        t->save(path);
      }
    }
    it = tables_.emplace(exact_key, StabilizerTable::from_k0(t->k0_values(), Strategy::exact(), tol, model.hash()))
             .first;
  }
  if (strategy.kind == StrategyKind::Exact) return it->second;
  return tables_
      .emplace(key, StabilizerTable::from_k0(it->second.k0_values(), strategy, tol, model.hash()))
      .first->second;
}

const Snapshots& SuiteCache::run(const AnisotropyModel& model, Strategy strategy, int level, const SuiteOptions& opt) {
  const double h = std::ldexp(1.0, -level);
  const double tau = 2.0 / 25.0 * h * h;
  const double T = *std::max_element(opt.times.begin(), opt.times.end());
  std::string key = file_safe(fmt::format("{}_{}_L{}_T{:.6g}", key_of(model, opt.k0_tol), strategy.to_string(), level, T));
  if (auto it = runs_.find(key); it != runs_.end()) return it->second;

  SurfaceMesh mesh = make_cuboid(2, 2, 1, h);
  std::set<int> wanted = steps_for(opt.times, tau);
  Snapshots snap;
  snap.tau = tau;
  snap.triangles = mesh.triangles();

  // a failed run is cached as the snapshots it reached plus a .failed marker
  const std::string failed_path = fmt::format("{}/run_{}.failed", dir_, key);
  bool loaded = false;
  if (!dir_.empty()) {
    bool failed = std::filesystem::exists(failed_path);
    loaded = true;
    for (int s : wanted) {
      std::string path = fmt::format("{}/run_{}_step{}.obj", dir_, key, s);
      if (!std::filesystem::exists(path)) {
        if (failed) continue;
        loaded = false;
        break;
      }
      SurfaceMesh m = read_obj(path);
      if (m.triangles() != snap.triangles) {
        loaded = false;
        break;
      }
      snap.by_step[s] = m.vertices();
    }
    if (loaded && failed) {
      std::ifstream in(failed_path);
      std::getline(in, snap.failure);
    }
    if (!loaded) snap.by_step.clear();
  }
  if (!loaded) {
    if (opt.log) opt.log(fmt::format("run {} h=2^-{} tau={:.6g} ({} steps)", strategy.to_string(), level, tau,
                                     step_count(T, tau)));
    StepperConfig cfg;
    cfg.tau = tau;
    cfg.table = table(model, strategy, opt.k0_tol);
    cfg.jacobian = opt.jacobian;
    EvolveHooks hooks;
    hooks.on_step = [&](const EvolutionState& s, const SeriesRow&) {
      if (wanted.count(s.step)) snap.record(s);
    };
    try {
      evolve(mesh, model, cfg, T, hooks);
    } catch (const Error& e) {
      snap.failure = fmt::format("{} error: {}", to_string(e.kind()), e.what());
    }
    if (!dir_.empty()) {
      std::filesystem::create_directories(dir_);
      for (const auto& [s, x] : snap.by_step)
        write_obj(fmt::format("{}/run_{}_step{}.obj", dir_, key, s), SurfaceMesh(x, snap.triangles));
      if (!snap.failure.empty()) std::ofstream(failed_path) << snap.failure << "\n";
    }
  }
  return runs_.emplace(key, std::move(snap)).first->second;
}

ConvergenceReport convergence_suite(int case_id, const SuiteOptions& opt, SuiteCache* cache) {
  BenchmarkCase pc = benchmark_case(case_id);
  if (opt.times.empty() || opt.levels.empty()) throw Error(ErrorKind::Input, "suite needs levels and times");
  for (std::size_t i = 1; i < opt.levels.size(); ++i)
    if (opt.levels[i] <= opt.levels[i - 1]) throw Error(ErrorKind::Input, "suite levels must increase (h decreasing)");
  SuiteCache local(opt.cache_dir);
  SuiteCache& c = cache ? *cache : local;

  ConvergenceReport rep;
  rep.case_id = case_id;
  rep.label = pc.label;
  rep.times = opt.times;
  const double nan = std::numeric_limits<double>::quiet_NaN();

  const Snapshots* ref = nullptr;
  try {
    ref = &c.run(pc.model, Strategy::exact(), opt.reference_level, opt);
    if (!ref->failure.empty())
      rep.failures.push_back(fmt::format("reference run h=2^-{}: {}", opt.reference_level, ref->failure));
  } catch (const Error& e) {
    rep.failures.push_back(fmt::format("reference run h=2^-{}: {}", opt.reference_level, e.what()));
  }
  auto reached = [](const Snapshots& s, double t) {
    for (int step : steps_for({t}, s.tau))
      if (!s.by_step.count(step)) return false;
    return true;
  };
  for (int level : opt.levels) {
    ConvergenceRow row;
    row.h = std::ldexp(1.0, -level);
    row.tau = 2.0 / 25.0 * row.h * row.h;
    row.errors.assign(opt.times.size(), nan);
    row.orders.assign(opt.times.size(), nan);
    row.distance_converged.assign(opt.times.size(), false);
    try {
      SurfaceMesh m0 = make_cuboid(2, 2, 1, row.h);
      row.triangles = m0.triangle_count();
      row.vertices = m0.vertex_count();
      const Snapshots& run = c.run(pc.model, pc.strategy, level, opt);
      if (!run.failure.empty()) rep.failures.push_back(fmt::format("run h=2^-{}: {}", level, run.failure));
      if (ref) {
        for (std::size_t k = 0; k < opt.times.size(); ++k) {
          if (!reached(run, opt.times[k]) || !reached(*ref, opt.times[k])) continue;
          DistanceResult d = numerical_error(run, *ref, opt.times[k], opt.distance);
          row.errors[k] = d.value;
          row.distance_converged[k] = d.converged;
          if (!d.converged)
            rep.failures.push_back(fmt::format("distance at h=2^-{}, t={:.6g} not converged at level {}", level,
                                               opt.times[k], d.level));
        }
      }
    } catch (const Error& e) {
      rep.failures.push_back(fmt::format("run h=2^-{}: {} error: {}", level, to_string(e.kind()), e.what()));
    }
    if (!rep.rows.empty())
      for (std::size_t k = 0; k < opt.times.size(); ++k)
        row.orders[k] = std::log2(rep.rows.back().errors[k] / row.errors[k]) /
                        std::log2(row.h > 0 ? rep.rows.back().h / row.h : 2.0);
    rep.rows.push_back(std::move(row));
  }
  return rep;
}

void ConvergenceReport::write_csv(std::ostream& os) const {
  os << "case,h,tau,triangles,vertices,t,error,order,distance_converged\n";
  for (const auto& r : rows)
    for (std::size_t k = 0; k < times.size(); ++k)
      os << fmt::format("{},{:.17g},{:.17g},{},{},{:.17g},{:.17g},{:.17g},{}\n", case_id, r.h, r.tau, r.triangles,
                        r.vertices, times[k], r.errors[k], r.orders[k], r.distance_converged[k] ? 1 : 0);
}

std::string ConvergenceReport::table() const {
  std::ostringstream os;
  os << fmt::format("Case {}: {}\n", case_id, label);
  os << fmt::format("{:>22}", "(h, tau)");
  for (double t : times) os << fmt::format(" | {:>10} {:>6}", fmt::format("e({:g})", t), "order");
  os << "\n";
  for (const auto& r : rows) {
    os << fmt::format("{:>22}", fmt::format("({:g}, {:.3e})", r.h, r.tau));
    for (std::size_t k = 0; k < times.size(); ++k) {
      std::string order = std::isnan(r.orders[k]) ? "-" : fmt::format("{:.2f}", r.orders[k]);
      os << fmt::format(" | {:>10.2e} {:>6}", r.errors[k], order);
    }
    os << "\n";
  }
  for (const auto& f : failures) os << "  failure: " << f << "\n";
  return os.str();
}

}  // namespace sppfem
