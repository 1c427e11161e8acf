#include "sppfem/solver.hpp"

#include <fmt/format.h>

#include <Eigen/SparseLU>
#ifdef SPPFEM_HAVE_UMFPACK
#include <Eigen/UmfPackSupport>
#endif

#include <algorithm>
#include <cmath>
#include <limits>

namespace sppfem {

namespace {

std::array<Vec3, 3> corners(std::span<const Vec3> X, const Triangle& t) { return {X[t[0]], X[t[1]], X[t[2]]}; }

// |sigma^m| n^{m+1/2} = (J(old) + 4 J(mid) + J(new)) / 12
Vec3 weighted_normal(const std::array<Vec3, 3>& o, const std::array<Vec3, 3>& x) {
  std::array<Vec3, 3> m{0.5 * (o[0] + x[0]), 0.5 * (o[1] + x[1]), 0.5 * (o[2] + x[2])};
  return (orientation_vector(o[0], o[1], o[2]) + 4.0 * orientation_vector(m[0], m[1], m[2]) +
          orientation_vector(x[0], x[1], x[2])) /
         12.0;
}

void check_sizes(std::size_t nv, std::span<const Vec3> X, std::span<const double> mu) {
  if (X.size() != nv || mu.size() != nv) throw Error(ErrorKind::Input, "candidate fields not sized to the mesh");
}

}  // namespace

Vec3 n_half(const std::array<Vec3, 3>& old_tri, const std::array<Vec3, 3>& new_tri) {
  double len = orientation_vector(old_tri[0], old_tri[1], old_tri[2]).norm();
  if (!(len > 1e-14)) throw Error(ErrorKind::Geometry, "n_half: degenerate old triangle");
  return weighted_normal(old_tri, new_tri) * 2.0 / len;
}

// Assembly ---------------------------------------------------------------------

StepAssembler::StepAssembler(const AnisotropyModel& model, const EvolutionState& state, const StepperConfig& cfg)
    : model_(&model), cfg_(&cfg) {
  reset(state);
}

void StepAssembler::reset(const EvolutionState& state) {
  if (state_ && state.mesh.triangle_count() != frozen_.size()) jac_.resize(0, 0);
  state_ = &state;
  const SurfaceMesh& mesh = state.mesh;
  nv_ = mesh.vertex_count();
  frozen_.resize(mesh.triangle_count());
  for (std::size_t j = 0; j < mesh.triangle_count(); ++j) {
    const auto& t = mesh.triangle(static_cast<int>(j));
    Vec3 J = orientation_vector(mesh, static_cast<int>(j));
    Frozen& f = frozen_[j];
    f.area = 0.5 * J.norm();
    f.n = J / J.norm();
    f.Z = z_matrix(*model_, cfg_->table.k_of(f.n), f.n);
    auto g = hat_gradients(mesh.vertex(t[0]), mesh.vertex(t[1]), mesh.vertex(t[2]));
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b) f.K(a, b) = f.area * g[a].dot(g[b]);
    // rows sum to zero by construction, so the residual can use differences
    for (int a = 0; a < 3; ++a) f.K(a, a) = -(f.K(a, (a + 1) % 3) + f.K(a, (a + 2) % 3));
  }
}

// The residual is accumulated in extended precision: near the solution its
// entries come from heavy cancellation, and a double evaluation puts a floor
// of about 1e-12 under the Euclidean norm of the mu update on fine meshes.
// The long double overload takes the Newton iterates themselves.
Eigen::VectorXd StepAssembler::residual(std::span<const Vec3> X, std::span<const double> mu) const {
  check_sizes(nv_, X, mu);
  std::vector<LVec3> XL(X.size());
  std::vector<long double> muL(mu.begin(), mu.end());
  for (std::size_t i = 0; i < X.size(); ++i) XL[i] = X[i].cast<long double>();
  return residual(std::span<const LVec3>(XL), std::span<const long double>(muL));
}

Eigen::VectorXd StepAssembler::residual(std::span<const LVec3> X, std::span<const long double> mu) const {
  using L = long double;
  using V = LVec3;
  if (X.size() != nv_ || mu.size() != nv_) throw Error(ErrorKind::Input, "candidate fields not sized to the mesh");
  const SurfaceMesh& mesh = state_->mesh;
  const auto& Xm = mesh.vertices();
  const L inv3tau = 1.0L / (3.0L * static_cast<L>(cfg_->tau));
  const Eigen::Index I = static_cast<Eigen::Index>(nv_);
  Eigen::Matrix<L, Eigen::Dynamic, 1> R = Eigen::Matrix<L, Eigen::Dynamic, 1>::Zero(4 * I);
  auto J = [](const V& a, const V& b, const V& c) -> V { return (b - a).cross(c - b); };
  for (std::size_t j = 0; j < frozen_.size(); ++j) {
    const Triangle& t = mesh.triangle(static_cast<int>(j));
    const Frozen& f = frozen_[j];
    std::array<V, 3> o, x, m;
    for (int a = 0; a < 3; ++a) {
      o[a] = Xm[t[a]].cast<L>();
      x[a] = X[t[a]];
      m[a] = (o[a] + x[a]) / 2;
    }
    V N = (J(o[0], o[1], o[2]) + 4 * J(m[0], m[1], m[2]) + J(x[0], x[1], x[2])) / 12;
    Eigen::Matrix<L, 3, 3> Z = f.Z.cast<L>();
    // Stiffness terms in difference form: on slivers K is huge, and the
    // undifferenced sums cancel badly enough to stall Newton at ~1e-12.
    for (int a = 0; a < 3; ++a) {
      int i = t[a];
      L r1 = inv3tau * (x[a] - o[a]).dot(N);
      V r2 = (mu[i] / 3) * N;
      for (int b = 0; b < 3; ++b) {
        if (b == a) continue;
        L k = f.K(a, b);
        r1 += k * (mu[t[b]] - mu[i]);
        r2 -= k * (Z * (x[b] - x[a]));
      }
      R[i] += r1;
      R.template segment<3>(I + 3 * i) += r2;
    }
  }
  return R.cast<double>();
}

void StepAssembler::build_pattern() {
  const SurfaceMesh& mesh = state_->mesh;
  const int I = static_cast<int>(nv_);
  auto row_of = [I](int v, int d) { return d == 3 ? v : I + 3 * v + d; };
  auto col_of = [I](int v, int d) { return d == 3 ? 3 * I + v : 3 * v + d; };
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(mesh.triangle_count() * 144);
  for (const auto& t : mesh.triangles())
    for (int a = 0; a < 3; ++a)
      for (int da = 0; da < 4; ++da)
        for (int b = 0; b < 3; ++b)
          for (int db = 0; db < 4; ++db) trip.emplace_back(row_of(t[a], da), col_of(t[b], db), 0.0);
  jac_.resize(4 * I, 4 * I);
  jac_.setFromTriplets(trip.begin(), trip.end());
  jac_.makeCompressed();
  slots_.resize(mesh.triangle_count() * 144);
  const int* outer = jac_.outerIndexPtr();
  const int* inner = jac_.innerIndexPtr();
  std::size_t k = 0;
  for (const auto& t : mesh.triangles())
    for (int a = 0; a < 3; ++a)
      for (int da = 0; da < 4; ++da)
        for (int b = 0; b < 3; ++b)
          for (int db = 0; db < 4; ++db) {
            int r = row_of(t[a], da), c = col_of(t[b], db);
            const int* pos = std::lower_bound(inner + outer[c], inner + outer[c + 1], r);
            slots_[k++] = static_cast<int>(pos - inner);
          }
}

const Eigen::SparseMatrix<double>& StepAssembler::jacobian(std::span<const Vec3> X, std::span<const double> mu) {
  check_sizes(nv_, X, mu);
  if (jac_.rows() != static_cast<Eigen::Index>(4 * nv_) || slots_.size() != frozen_.size() * 144)
    build_pattern();
  const SurfaceMesh& mesh = state_->mesh;
  const auto& Xm = mesh.vertices();
  const double inv3tau = 1.0 / (3.0 * cfg_->tau);
  double* val = jac_.valuePtr();
  std::fill(val, val + jac_.nonZeros(), 0.0);

  Eigen::Matrix<double, 12, 12> L;
  for (std::size_t j = 0; j < frozen_.size(); ++j) {
    const Triangle& t = mesh.triangle(static_cast<int>(j));
    const Frozen& f = frozen_[j];
    auto o = corners(Xm, t);
    auto x = corners(X, t);
    Vec3 N = weighted_normal(o, x);
    // dN/dX_c = (2 [mid_prev - mid_next]_x + [X_prev - X_next]_x) / 12
    std::array<Mat3, 3> dN;
    for (int c = 0; c < 3; ++c) {
      int nx = (c + 1) % 3, pv = (c + 2) % 3;
      Vec3 dmid = 0.5 * ((o[pv] + x[pv]) - (o[nx] + x[nx]));
      dN[c] = (2.0 * cross_matrix(dmid) + cross_matrix(x[pv] - x[nx])) / 12.0;
    }
    L.setZero();
    for (int a = 0; a < 3; ++a) {
      Vec3 dx = x[a] - o[a];
      double mua = mu[t[a]];
      for (int c = 0; c < 3; ++c) {
        // eq1 row (local 4a+3) w.r.t. X_c and mu_c
        Eigen::RowVector3d d1 = inv3tau * dx.transpose() * dN[c];
        if (a == c) d1 += inv3tau * N.transpose();
        L.block<1, 3>(4 * a + 3, 4 * c) = d1;
        L(4 * a + 3, 4 * c + 3) = f.K(a, c);
        // eq2 rows (local 4a..4a+2) w.r.t. X_c
        L.block<3, 3>(4 * a, 4 * c) = (mua / 3.0) * dN[c] - f.K(a, c) * f.Z;
      }
      L.block<3, 1>(4 * a, 4 * a + 3) = N / 3.0;
    }
    const int* s = slots_.data() + 144 * j;
    for (int r = 0; r < 12; ++r)
      for (int c = 0; c < 12; ++c) val[s[12 * r + c]] += L(r, c);
  }
  return jac_;
}

Eigen::SparseMatrix<double> StepAssembler::stiffness() const {
  std::vector<Eigen::Triplet<double>> trip;
  const SurfaceMesh& mesh = state_->mesh;
  for (std::size_t j = 0; j < frozen_.size(); ++j) {
    const Triangle& t = mesh.triangle(static_cast<int>(j));
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b) trip.emplace_back(t[a], t[b], frozen_[j].K(a, b));
  }
  Eigen::SparseMatrix<double> K(nv_, nv_);
  K.setFromTriplets(trip.begin(), trip.end());
  return K;
}

Eigen::VectorXd assemble_residual(const AnisotropyModel& model, const EvolutionState& state,
                                  std::span<const Vec3> X, std::span<const double> mu,
                                  const StepperConfig& cfg) {
  return StepAssembler(model, state, cfg).residual(X, mu);
}

Eigen::SparseMatrix<double> assemble_jacobian(const AnisotropyModel& model, const EvolutionState& state,
                                              std::span<const Vec3> X, std::span<const double> mu,
                                              const StepperConfig& cfg) {
  StepAssembler as(model, state, cfg);
  return as.jacobian(X, mu);
}

// Initial potential ----------------------------------------------------------------

std::vector<double> initial_mu(const SurfaceMesh& mesh, const AnisotropyModel& model,
                               const StabilizerTable& table) {
  const std::size_t nv = mesh.vertex_count();
  std::vector<Vec3> a(nv, Vec3::Zero()), b(nv, Vec3::Zero());
  for (std::size_t j = 0; j < mesh.triangle_count(); ++j) {
    const Triangle& t = mesh.triangle(static_cast<int>(j));
    Vec3 J = orientation_vector(mesh, static_cast<int>(j));
    double area = 0.5 * J.norm();
    Vec3 n = J / J.norm();
    Mat3 Z = z_matrix(model, table.k_of(n), n);
    auto g = hat_gradients(mesh.vertex(t[0]), mesh.vertex(t[1]), mesh.vertex(t[2]));
    for (int i = 0; i < 3; ++i) {
      a[t[i]] += area * n / 3.0;
      for (int c = 0; c < 3; ++c) b[t[i]] += area * g[i].dot(g[c]) * (Z * mesh.vertex(t[c]));
    }
  }
  std::vector<double> mu(nv);
  for (std::size_t i = 0; i < nv; ++i) mu[i] = a[i].dot(b[i]) / a[i].squaredNorm();
  return mu;
}

EvolutionState initial_state(const SurfaceMesh& mesh, const AnisotropyModel& model,
                             const StabilizerTable& table) {
  return EvolutionState{mesh, initial_mu(mesh, model, table), 0, 0.0, enclosed_volume(mesh),
                        surface_energy(mesh, model)};
}

// Newton --------------------------------------------------------------------------

struct Stepper::Linear {
  bool use_umfpack = false;
#ifdef SPPFEM_HAVE_UMFPACK
  Eigen::UmfPackLU<Eigen::SparseMatrix<double>> umf;
#endif
  Eigen::SparseLU<Eigen::SparseMatrix<double>> slu;
  bool analyzed = false;
  bool factored = false;
  std::unique_ptr<StepAssembler> assembler;

  void factorize(const Eigen::SparseMatrix<double>& A) {
    factored = false;
#ifdef SPPFEM_HAVE_UMFPACK
    if (use_umfpack) {
      if (!analyzed) umf.analyzePattern(A);
      analyzed = true;
      umf.factorize(A);
      if (umf.info() != Eigen::Success) throw Error(ErrorKind::Solver, "UMFPACK factorization failed (singular Jacobian)");
      factored = true;
      return;
    }
#endif
    if (!analyzed) slu.analyzePattern(A);
    analyzed = true;
    slu.factorize(A);
    if (slu.info() != Eigen::Success)
      throw Error(ErrorKind::Solver, "sparse LU factorization failed: " + slu.lastErrorMessage());
    factored = true;
  }

  Eigen::VectorXd solve(const Eigen::VectorXd& rhs) {
#ifdef SPPFEM_HAVE_UMFPACK
    if (use_umfpack) {
      Eigen::VectorXd x = umf.solve(rhs);
      if (umf.info() != Eigen::Success) throw Error(ErrorKind::Solver, "UMFPACK solve failed");
      return x;
    }
#endif
    return slu.solve(rhs);
  }
};

Stepper::Stepper(AnisotropyModel model, StepperConfig cfg)
    : model_(std::move(model)), cfg_(std::move(cfg)), linear_(std::make_unique<Linear>()) {
  if (!(cfg_.tau > 0)) throw Error(ErrorKind::Input, "time step must be positive");
  if (!(cfg_.tol_x > 0 && cfg_.tol_mu > 0)) throw Error(ErrorKind::Input, "Newton tolerances must be positive");
  if (cfg_.max_newton < 1) throw Error(ErrorKind::Input, "max Newton iterations must be >= 1");
#ifdef SPPFEM_HAVE_UMFPACK
  linear_->use_umfpack = cfg_.linear_solver != LinearSolverKind::SparseLU;
  // Newton corrects solve error itself; refinement sweeps cost more than the factorization
  linear_->umf.umfpackControl()(UMFPACK_IRSTEP) = 0;
#else
  if (cfg_.linear_solver == LinearSolverKind::Umfpack)
    throw Error(ErrorKind::Input, "UMFPACK requested but not available in this build");
#endif
}

Stepper::~Stepper() = default;

bool Stepper::newton(const EvolutionState& state, bool lazy, std::vector<Vec3>& X, std::vector<double>& mu,
                     StepReport& rep) {
  using LVec3 = StepAssembler::LVec3;
  StepAssembler& as = *linear_->assembler;
  const Eigen::Index I = static_cast<Eigen::Index>(X.size());
  // Iterates are carried in extended precision so that the last updates
  // measure convergence rather than the rounding of X and mu to double.
  std::vector<LVec3> XL(I);
  std::vector<long double> muL(state.mu.begin(), state.mu.end());
  for (Eigen::Index i = 0; i < I; ++i) XL[i] = state.mesh.vertex(static_cast<int>(i)).cast<long double>();
  auto round = [&] {
    for (Eigen::Index i = 0; i < I; ++i) {
      X[i] = XL[i].cast<double>();
      mu[i] = static_cast<double>(muL[i]);
    }
  };
  round();
  double prev = std::numeric_limits<double>::infinity();
  bool refactor = !lazy || !linear_->factored;
  for (int iter = 1; iter <= cfg_.max_newton; ++iter) {
    Eigen::VectorXd R = as.residual(std::span<const LVec3>(XL), std::span<const long double>(muL));
    if (refactor) {
      linear_->factorize(as.jacobian(X, mu));
      ++rep.factorizations;
    }
    Eigen::VectorXd delta = linear_->solve(-R);
    if (!delta.allFinite()) throw Error(ErrorKind::Solver, "linear solve produced non-finite update");
    double dx = 0;
    for (Eigen::Index i = 0; i < I; ++i) {
      Vec3 d = delta.segment<3>(3 * i);
      XL[i] += d.cast<long double>();
      dx = std::max(dx, d.cwiseAbs().maxCoeff());
    }
    for (Eigen::Index i = 0; i < I; ++i) muL[i] += delta[3 * I + i];
    round();
    rep.newton_iters = iter;
    rep.last_dx = dx;
    rep.last_dmu = delta.tail(I).norm();
    if (dx <= cfg_.tol_x && rep.last_dmu <= cfg_.tol_mu) return true;
    // a stale Jacobian that contracts by less than 4x gets replaced
    double size = std::max(dx, rep.last_dmu);
    refactor = !lazy || size > 0.25 * prev;
    prev = size;
  }
  return false;
}

EvolutionState Stepper::step(const EvolutionState& state, StepReport* report) {
  const std::size_t nv = state.mesh.vertex_count();
  if (state.mu.size() != nv) throw Error(ErrorKind::Input, "state mu not sized to the mesh");
  if (!linear_->assembler || linear_->assembler->unknowns() != 4 * nv) {
    linear_->assembler = std::make_unique<StepAssembler>(model_, state, cfg_);
    linear_->analyzed = false;
    linear_->factored = false;
  } else {
    linear_->assembler->reset(state);
  }

  std::vector<Vec3> X(nv);
  std::vector<double> mu(nv);
  StepReport rep;
  bool lazy = cfg_.jacobian == JacobianPolicy::Lazy;
  bool converged = newton(state, lazy, X, mu, rep);
  if (!converged && lazy) {
    int used = rep.factorizations;
    rep = StepReport{};
    converged = newton(state, false, X, mu, rep);
    rep.factorizations += used;
  }
  if (!converged)
    throw Error(ErrorKind::NonConvergence,
                fmt::format("Newton did not converge in {} iterations at step {} (|dX|_inf = {:.3e}, |dmu|_2 = {:.3e})",
                            rep.newton_iters, state.step + 1, rep.last_dx, rep.last_dmu));

  EvolutionState next{state.mesh.with_vertices(std::move(X)), std::move(mu), state.step + 1,
                      (state.step + 1) * cfg_.tau, state.initial_volume, state.initial_energy};

  double V0 = enclosed_volume(state.mesh), V1 = enclosed_volume(next.mesh);
  double W0 = surface_energy(state.mesh, model_), W1 = surface_energy(next.mesh, model_);
  rep.volume_drift = (V1 - V0) / V0;
  rep.energy_change = W1 - W0;
  if (report) *report = rep;
  if (!(std::abs(rep.volume_drift) <= 1e-10))
    throw Error(ErrorKind::StructureViolation,
                fmt::format("volume drift {:.3e} at step {} exceeds 1e-10", rep.volume_drift, next.step));
  if (!(W1 <= W0 + 1e-12 * state.initial_energy))
    throw Error(ErrorKind::StructureViolation,
                fmt::format("energy increased by {:.3e} at step {} (W = {:.17g})", W1 - W0, next.step, W1));
  return next;
}

EvolutionState step(const AnisotropyModel& model, const EvolutionState& state, const StepperConfig& cfg,
                    StepReport* report) {
  Stepper s(model, cfg);
  return s.step(state, report);
}

// Driver ----------------------------------------------------------------------------

SeriesRow series_row(const EvolutionState& state, const AnisotropyModel& model, int newton_iters) {
  double V = enclosed_volume(state.mesh), W = surface_energy(state.mesh, model);
  return SeriesRow{state.step,
                   state.t,
                   V,
                   (V - state.initial_volume) / state.initial_volume,
                   W,
                   W / state.initial_energy,
                   newton_iters,
                   min_triangle_quality(state.mesh)};
}

int step_count(double T, double tau) {
  if (!(tau > 0)) throw Error(ErrorKind::Input, "time step must be positive");
  if (!(T >= tau * (1 - 1e-12))) throw Error(ErrorKind::Input, "final time must be at least one time step");
  return static_cast<int>(std::ceil(T / tau - 1e-9));
}

Trajectory evolve(const SurfaceMesh& initial, const AnisotropyModel& model, const StepperConfig& cfg, double T,
                  const EvolveHooks& hooks) {
  const int steps = step_count(T, cfg.tau);
  Stepper stepper(model, cfg);
  EvolutionState state = initial_state(initial, model, cfg.table);
  std::vector<SeriesRow> series;
  series.reserve(steps + 1);
  series.push_back(series_row(state, model, 0));
  if (hooks.on_step) hooks.on_step(state, series.back());
  for (int m = 0; m < steps; ++m) {
    StepReport rep;
    state = stepper.step(state, &rep);
    series.push_back(series_row(state, model, rep.newton_iters));
    if (hooks.on_step) hooks.on_step(state, series.back());
  }
  return Trajectory{std::move(series), std::move(state)};
}

}  // namespace sppfem
