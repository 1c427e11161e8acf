#include "sppfem/stabilizer.hpp"

#include <fmt/format.h>

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <numbers>
#include <ostream>
#include <sstream>

namespace sppfem {

namespace {
constexpr double kPi = std::numbers::pi;
constexpr double kFeasibilityFloor = -1e-12;
constexpr int kDescentIterations = 200;
constexpr double kDescentMinStep = 1e-7;
constexpr std::size_t kDescentStarts = 32;
}  // namespace

Mat3 z_matrix(const AnisotropyModel& model, double k, const Vec3& n) {
  double g = model.gamma(n);
  Vec3 x = model.xi(n);
  Mat3 Z;
  for (int i = 0; i < 3; ++i)
    for (int j = i; j < 3; ++j) {
      double v = k * n[i] * n[j] - (n[i] * x[j] + x[i] * n[j]);
      if (i == j) v += g;
      Z(i, j) = Z(j, i) = v;
    }
  return Z;
}

double f_k(const AnisotropyModel& model, double k, const Vec3& n, const Vec3& u, const Vec3& v) {
  require_unit(u, "u");
  require_unit(v, "v");
  Mat3 Z = z_matrix(model, k, n);
  return u.dot(Z * u) * v.dot(Z * v);
}

double k_upper(const AnisotropyModel& model, const Vec3& n) {
  double g = model.gamma(n);
  double x = model.xi(n).norm();
  return (6 * x * x + 8 * g * x + 16 * model.c1()) / g;
}

K0Solver::K0Solver(AnisotropyModel model) : model_(std::move(model)) {
  grid_.reserve(kThetaCount * kPhiCount);
  for (int b = 0; b < kPhiCount; ++b) {
    double phi = -kPi / 2 + kPi * (b + 0.5) / kPhiCount;
    for (int a = 0; a < kThetaCount; ++a) {
      double theta = -kPi + 2 * kPi * a / kThetaCount;
      grid_.emplace_back(std::cos(phi) * std::cos(theta), std::cos(phi) * std::sin(theta), std::sin(phi));
    }
  }
  const std::size_t m = grid_.size();
  cross_sq_.assign(m * m, 0.0);
  for (std::size_t a = 0; a < m; ++a)
    for (std::size_t b = a; b < m; ++b)
      cross_sq_[a * m + b] = cross_sq_[b * m + a] = model_.gamma_ext_sq(grid_[a].cross(grid_[b]));
}

double K0Solver::min_excess(const Vec3& n, double k, Vec3* u_out, Vec3* v_out) const {
  const Mat3 Z = z_matrix(model_, k, n);
  const std::size_t m = grid_.size();
  std::vector<double> q(m);
  for (std::size_t a = 0; a < m; ++a) q[a] = grid_[a].dot(Z * grid_[a]);

  // Best partner per u node. The exact minimum sits in one of several shallow
  // basins (the tangent pairs always give zero excess), so every local minimum
  // of the row minimum over the u grid is a descent start, lowest first.
  std::vector<std::pair<double, std::size_t>> rows(m, {std::numeric_limits<double>::infinity(), 0});
  for (std::size_t a = 0; a < m; ++a) {
    const double qa = q[a];
    const double* row = cross_sq_.data() + a * m;
    for (std::size_t b = a; b < m; ++b) {
      double e = qa * q[b] - row[b];
      if (e < rows[a].first) rows[a] = {e, b};
      if (e < rows[b].first) rows[b] = {e, a};
    }
  }
  std::vector<std::pair<double, std::pair<std::size_t, std::size_t>>> seeds;
  for (int pb = 0; pb < kPhiCount; ++pb)
    for (int ta = 0; ta < kThetaCount; ++ta) {
      const std::size_t a = static_cast<std::size_t>(pb * kThetaCount + ta);
      bool is_min = true;
      for (int dp = -1; dp <= 1 && is_min; ++dp)
        for (int dt = -1; dt <= 1; ++dt) {
          int p2 = pb + dp;
          if ((dp == 0 && dt == 0) || p2 < 0 || p2 >= kPhiCount) continue;
          const std::size_t c = static_cast<std::size_t>(p2 * kThetaCount + (ta + dt + kThetaCount) % kThetaCount);
          if (rows[c].first < rows[a].first || (rows[c].first == rows[a].first && c < a)) {
            is_min = false;
            break;
          }
        }
      if (is_min) seeds.push_back({rows[a].first, {a, rows[a].second}});
    }
  std::sort(seeds.begin(), seeds.end());
  const std::size_t starts = std::min<std::size_t>(kDescentStarts, seeds.size());

  auto excess = [&](const Vec3& u, const Vec3& v) {
    return u.dot(Z * u) * v.dot(Z * v) - model_.gamma_ext_sq(u.cross(v));
  };

  double result = seeds[0].first;
  Vec3 ru = grid_[seeds[0].second.first], rv = grid_[seeds[0].second.second];
  for (std::size_t s = 0; s < starts; ++s) {
    Vec3 u = grid_[seeds[s].second.first], v = grid_[seeds[s].second.second];
    double f = excess(u, v);
    double step = kPi / kPhiCount;
    for (int it = 0; it < kDescentIterations && step >= kDescentMinStep; ++it) {
      bool moved = false;
      for (int which = 0; which < 2; ++which) {
        Vec3& w = which == 0 ? u : v;
        auto [t1, t2] = tangent_basis(w);
        for (const Vec3& t : {t1, t2}) {
          for (double sgn : {1.0, -1.0}) {
            Vec3 trial = (w + sgn * step * t).normalized();
            double ft = which == 0 ? excess(trial, v) : excess(u, trial);
            if (ft < f) {
              f = ft;
              w = trial;
              moved = true;
              break;
            }
          }
        }
      }
      if (!moved) step *= 0.5;
    }
    if (f < result) {
      result = f;
      ru = u;
      rv = v;
    }
  }
  if (u_out) *u_out = ru;
  if (v_out) *v_out = rv;
  return result;
}

bool K0Solver::feasible(const Vec3& n, double k, K0Result* detail) const {
  Eigen::SelfAdjointEigenSolver<Mat3> es(z_matrix(model_, k, n), Eigen::EigenvaluesOnly);
  Vec3 u, v;
  double e = min_excess(n, k, &u, &v);
  if (detail) {
    detail->witness_u = u;
    detail->witness_v = v;
    detail->slack = e;
  }
  return es.eigenvalues().minCoeff() >= kFeasibilityFloor && e >= kFeasibilityFloor;
}

K0Result K0Solver::solve(const Vec3& n, double tol) const {
  require_unit(n);
  if (!(tol >= 1e-6 && tol <= 1e-2)) throw Error(ErrorKind::Input, "k0 tolerance must lie in [1e-6, 1e-2]");
  double lo = model_.gamma(n);
  double hi = k_upper(model_, n);
  K0Result out;
  if (!feasible(n, hi, &out))
    throw Error(ErrorKind::Internal,
                fmt::format("upper bound K(n)={:.17g} infeasible at n=({:.17g}, {:.17g}, {:.17g}); "
                            "min excess {:.3g}",
                            hi, n.x(), n.y(), n.z(), out.slack));
  K0Result trial;
  if (feasible(n, lo, &trial)) {
    trial.value = lo;
    return trial;
  }
  // The witness is the pair that refuted the largest infeasible k: the
  // constraint that is tight at k0 (tangent pairs are always tight at zero).
  Vec3 wu = trial.witness_u, wv = trial.witness_v;
  int steps = 0;
  while (hi - lo > tol) {
    double mid = 0.5 * (lo + hi);
    ++steps;
    if (feasible(n, mid, &trial)) {
      hi = mid;
    } else {
      lo = mid;
      wu = trial.witness_u;
      wv = trial.witness_v;
    }
  }
  out.value = hi;
  out.bisection_steps = steps;
  out.witness_u = wu;
  out.witness_v = wv;
  out.slack = f_k(model_, hi, n, wu, wv) - model_.gamma_ext_sq(wu.cross(wv));
  return out;
}

double k0_at(const AnisotropyModel& model, const Vec3& n, double tol) {
  return K0Solver(model).solve(n, tol).value;
}

// ---------------------------------------------------------------------------

Strategy Strategy::plus(double c) {
  if (!(c >= 0.0)) throw Error(ErrorKind::Input, "plus strategy needs a nonnegative constant");
  return {StrategyKind::PlusConstant, c};
}

Strategy Strategy::parse(const std::string& text) {
  if (text == "exact") return exact();
  if (text == "sup") return global_sup();
  if (text.rfind("plus:", 0) == 0) {
    std::size_t used = 0;
    double c = 0.0;
    try {
      c = std::stod(text.substr(5), &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != text.size() - 5)
      throw Error(ErrorKind::Input, "bad stabilizer strategy '" + text + "'");
    return plus(c);
  }
  throw Error(ErrorKind::Input, "bad stabilizer strategy '" + text + "' (exact | plus:<c> | sup)");
}

std::string Strategy::to_string() const {
  switch (kind) {
    case StrategyKind::Exact: return "exact";
    case StrategyKind::GlobalSup: return "sup";
    case StrategyKind::PlusConstant: return fmt::format("plus:{:.17g}", offset);
  }
  return "exact";
}

double StabilizerTable::phi(int i) { return -kPi / 2 + i * kPi / 10; }
double StabilizerTable::theta(int j) { return -kPi + j * kPi / 5; }

Vec3 StabilizerTable::node(int i, int j) {
  if (i == 0) return Vec3(0, 0, -1);
  if (i == kRows - 1) return Vec3(0, 0, 1);
  double p = phi(i), t = theta(j);
  return Vec3(std::cos(p) * std::cos(t), std::cos(p) * std::sin(t), std::sin(p));
}

StabilizerTable StabilizerTable::constant(double value) {
  Grid g;
  for (auto& row : g) row.fill(value);
  return from_k0(g, Strategy::exact(), 0.0, 0);
}

StabilizerTable StabilizerTable::from_k0(const Grid& k0, Strategy strategy, double tol,
                                         std::uint64_t model_hash) {
  StabilizerTable t;
  t.k0_ = k0;
  t.strategy_ = strategy;
  t.tol_ = tol;
  t.model_hash_ = model_hash;
  double sup = -std::numeric_limits<double>::infinity();
  for (const auto& row : k0)
    for (double v : row) sup = std::max(sup, v);
  for (int i = 0; i < kRows; ++i)
    for (int j = 0; j < kCols; ++j) {
      switch (strategy.kind) {
        case StrategyKind::Exact: t.values_[i][j] = k0[i][j]; break;
        case StrategyKind::PlusConstant: t.values_[i][j] = k0[i][j] + strategy.offset; break;
        case StrategyKind::GlobalSup: t.values_[i][j] = sup; break;
      }
    }
  return t;
}

double StabilizerTable::max_value() const {
  double m = -std::numeric_limits<double>::infinity();
  for (const auto& row : values_)
    for (double v : row) m = std::max(m, v);
  return m;
}

double StabilizerTable::min_value() const {
  double m = std::numeric_limits<double>::infinity();
  for (const auto& row : values_)
    for (double v : row) m = std::min(m, v);
  return m;
}

double StabilizerTable::k_of(const Vec3& n) const {
  double ph = std::atan2(n.z(), std::hypot(n.x(), n.y()));
  double th = std::atan2(n.y(), n.x());
  auto locate = [](double x, int cells, int& idx, double& frac) {
    idx = std::clamp(static_cast<int>(std::floor(x)), 0, cells - 1);
    frac = std::clamp(x - idx, 0.0, 1.0);
    if (frac < 1e-9) frac = 0.0;
    if (frac > 1.0 - 1e-9) frac = 1.0;
  };
  int i, j;
  double s, t;
  locate((ph + kPi / 2) / (kPi / 10), kRows - 1, i, s);
  locate((th + kPi) / (kPi / 5), kCols - 1, j, t);
  const auto& v = values_;
  return (1 - s) * (1 - t) * v[i][j] + s * (1 - t) * v[i + 1][j] + (1 - s) * t * v[i][j + 1] +
         s * t * v[i + 1][j + 1];
}

void StabilizerTable::write(std::ostream& os) const {
  os << "sppfem-stabilizer-table 1\n";
  os << fmt::format("model_hash {:016x}\n", model_hash_);
  os << fmt::format("grid {} {}\n", kRows, kCols);
  os << "strategy " << strategy_.to_string() << "\n";
  os << fmt::format("tol {:.17g}\n", tol_);
  for (const auto& row : k0_) {
    for (int j = 0; j < kCols; ++j) os << fmt::format("{}{:.17g}", j ? " " : "", row[j]);
    os << "\n";
  }
}

StabilizerTable StabilizerTable::read(std::istream& is) {
  auto fail = [](const std::string& what) { return Error(ErrorKind::Input, "stabilizer table: " + what); };
  std::string magic;
  int version = 0;
  if (!(is >> magic >> version) || magic != "sppfem-stabilizer-table" || version != 1)
    throw fail("unrecognized header");
  std::string key, hash_text, strategy_text;
  int rows = 0, cols = 0;
  double tol = 0.0;
  if (!(is >> key >> hash_text) || key != "model_hash") throw fail("missing model_hash");
  if (!(is >> key >> rows >> cols) || key != "grid") throw fail("missing grid");
  if (rows != kRows || cols != kCols) throw fail("grid must be 11 x 11");
  if (!(is >> key >> strategy_text) || key != "strategy") throw fail("missing strategy");
  if (!(is >> key >> tol) || key != "tol") throw fail("missing tol");
  Grid g;
  for (auto& row : g)
    for (double& v : row)
      if (!(is >> v)) throw fail("truncated value block");
  std::uint64_t hash = std::stoull(hash_text, nullptr, 16);
  return from_k0(g, Strategy::parse(strategy_text), tol, hash);
}

void StabilizerTable::save(const std::string& path) const {
  std::ofstream os(path);
  if (!os) throw Error(ErrorKind::Input, "cannot write " + path);
  write(os);
}

StabilizerTable StabilizerTable::load(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error(ErrorKind::Input, "cannot read " + path);
  return read(is);
}

StabilizerTable build_table(const AnisotropyModel& model, Strategy strategy, double tol,
                            std::vector<K0Result>* node_details) {
  K0Solver solver(model);
  using Grid = StabilizerTable::Grid;
  Grid k0{};
  std::vector<K0Result> details(StabilizerTable::kRows * StabilizerTable::kCols);
  auto record = [&](int i, int j, const K0Result& r) {
    k0[i][j] = r.value;
    details[i * StabilizerTable::kCols + j] = r;
  };
  for (int i : {0, StabilizerTable::kRows - 1}) {
    K0Result r = solver.solve(StabilizerTable::node(i, 0), tol);
    for (int j = 0; j < StabilizerTable::kCols; ++j) record(i, j, r);
  }
  for (int i = 1; i < StabilizerTable::kRows - 1; ++i) {
    for (int j = 0; j < StabilizerTable::kCols - 1; ++j)
      record(i, j, solver.solve(StabilizerTable::node(i, j), tol));
    record(i, StabilizerTable::kCols - 1, details[i * StabilizerTable::kCols]);
  }
  if (node_details) *node_details = std::move(details);
  return StabilizerTable::from_k0(k0, strategy, tol, model.hash());
}

}  // namespace sppfem
