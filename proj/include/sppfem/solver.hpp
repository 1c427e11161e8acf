#pragma once

#include <Eigen/Sparse>

#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "sppfem/anisotropy.hpp"
#include "sppfem/mesh.hpp"
#include "sppfem/stabilizer.hpp"

namespace sppfem {

enum class LinearSolverKind { Auto, Umfpack, SparseLU };

/// Full: factorize the Jacobian at every Newton iterate.
/// Lazy: keep the last factorization (across iterations and steps) and
/// refactor only when the update stops contracting by at least 4x; a step that
/// fails to converge lazily is retried with full Newton.
enum class JacobianPolicy { Full, Lazy };

struct StepperConfig {
  double tau = 0.0;
  StabilizerTable table = StabilizerTable::constant(2.0);
  double tol_x = 1e-12;   // max norm of the position update
  double tol_mu = 1e-12;  // Euclidean norm of the mu update
  int max_newton = 50;
  LinearSolverKind linear_solver = LinearSolverKind::Auto;
  JacobianPolicy jacobian = JacobianPolicy::Full;
};

struct EvolutionState {
  SurfaceMesh mesh;
  std::vector<double> mu;
  int step = 0;
  double t = 0.0;
  double initial_volume = 0.0;
  double initial_energy = 0.0;
};

/// (J(old) + 4 J(mid) + J(new)) / (6 |J(old)|), not normalized.
Vec3 n_half(const std::array<Vec3, 3>& old_tri, const std::array<Vec3, 3>& new_tri);

/// Least-squares mu solving the second equation of the scheme with X^{m+1} = X^m.
/// The system is block diagonal, so each vertex is solved independently.
std::vector<double> initial_mu(const SurfaceMesh& mesh, const AnisotropyModel& model,
                               const StabilizerTable& table);

EvolutionState initial_state(const SurfaceMesh& mesh, const AnisotropyModel& model,
                             const StabilizerTable& table);

/// Unknown layout: [X_0, X_1, ..., X_{I-1}, mu_0, ..., mu_{I-1}] (3I + I).
/// Residual layout: rows 0..I-1 are the mu/velocity equation tested with psi_i,
/// rows I + 3i + d the position equation tested with e_d psi_i.
class StepAssembler {
 public:
  StepAssembler(const AnisotropyModel& model, const EvolutionState& state, const StepperConfig& cfg);

  using LVec3 = Eigen::Matrix<long double, 3, 1>;

  Eigen::VectorXd residual(std::span<const Vec3> X, std::span<const double> mu) const;
  /// Same residual at extended-precision candidate fields (the Newton iterates).
  Eigen::VectorXd residual(std::span<const LVec3> X, std::span<const long double> mu) const;
  /// Exact Jacobian of residual(). The sparsity pattern depends only on the
  /// connectivity and is fixed after the first call.
  const Eigen::SparseMatrix<double>& jacobian(std::span<const Vec3> X, std::span<const double> mu);

  std::size_t unknowns() const { return 4 * nv_; }
  /// Scalar P1 stiffness matrix on S^m.
  Eigen::SparseMatrix<double> stiffness() const;

  /// Re-freezes geometry at a new state with the same connectivity.
  void reset(const EvolutionState& state);

 private:
  struct Frozen {
    double area;
    Vec3 n;
    Mat3 Z;
    Eigen::Matrix3d K;  // area * grad psi_a . grad psi_b
  };
  void build_pattern();

  const AnisotropyModel* model_;
  const StepperConfig* cfg_;
  const EvolutionState* state_ = nullptr;
  std::size_t nv_ = 0;
  std::vector<Frozen> frozen_;
  Eigen::SparseMatrix<double> jac_;
  std::vector<int> slots_;  // per triangle, 12x12 local block -> value index
};

Eigen::VectorXd assemble_residual(const AnisotropyModel& model, const EvolutionState& state,
                                  std::span<const Vec3> X, std::span<const double> mu,
                                  const StepperConfig& cfg);
Eigen::SparseMatrix<double> assemble_jacobian(const AnisotropyModel& model, const EvolutionState& state,
                                              std::span<const Vec3> X, std::span<const double> mu,
                                              const StepperConfig& cfg);

struct StepReport {
  int newton_iters = 0;
  int factorizations = 0;
  double last_dx = 0.0;
  double last_dmu = 0.0;
  double volume_drift = 0.0;  // (V^{m+1} - V^m) / V^m
  double energy_change = 0.0;  // W^{m+1} - W^m
};

/// Newton solver for one time step; keeps the symbolic factorization across steps.
class Stepper {
 public:
  Stepper(AnisotropyModel model, StepperConfig cfg);
  ~Stepper();
  // The assembler keeps pointers to model_ and cfg_.
  Stepper(const Stepper&) = delete;
  Stepper& operator=(const Stepper&) = delete;

  EvolutionState step(const EvolutionState& state, StepReport* report = nullptr);

  const StepperConfig& config() const { return cfg_; }
  const AnisotropyModel& model() const { return model_; }

 private:
  struct Linear;
  bool newton(const EvolutionState& state, bool lazy, std::vector<Vec3>& X, std::vector<double>& mu,
              StepReport& rep);
  AnisotropyModel model_;
  StepperConfig cfg_;
  std::unique_ptr<Linear> linear_;
};

EvolutionState step(const AnisotropyModel& model, const EvolutionState& state, const StepperConfig& cfg,
                    StepReport* report = nullptr);

struct SeriesRow {
  int step = 0;
  double t = 0.0;
  double V = 0.0;
  double dV_rel = 0.0;
  double W = 0.0;
  double W_rel = 0.0;
  int newton_iters = 0;
  double min_quality = 0.0;
};

SeriesRow series_row(const EvolutionState& state, const AnisotropyModel& model, int newton_iters);

struct EvolveHooks {
  /// Called for the initial state (step 0) and after every step.
  std::function<void(const EvolutionState&, const SeriesRow&)> on_step;
};

struct Trajectory {
  std::vector<SeriesRow> series;
  EvolutionState final_state;
};

/// Advances ceil(T / tau) steps from the initial mesh, starting from initial_mu.
Trajectory evolve(const SurfaceMesh& initial, const AnisotropyModel& model, const StepperConfig& cfg,
                  double T, const EvolveHooks& hooks = {});

int step_count(double T, double tau);

}  // namespace sppfem
