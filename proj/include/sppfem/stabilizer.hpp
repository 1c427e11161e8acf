#pragma once

#include <array>
#include <iosfwd>
#include <string>
#include <vector>

#include "sppfem/anisotropy.hpp"

namespace sppfem {

/// Z_k(n) = gamma(n) I - n xi^T - xi n^T + k n n^T.
Mat3 z_matrix(const AnisotropyModel& model, double k, const Vec3& n);

/// F_k(n, u, v) = (u^T Z_k u)(v^T Z_k v).
double f_k(const AnisotropyModel& model, double k, const Vec3& n, const Vec3& u, const Vec3& v);

/// K(n) = (6|xi|^2 + 8 gamma |xi| + 16 C_1) / gamma, an upper bound for k_0(n).
double k_upper(const AnisotropyModel& model, const Vec3& n);

struct K0Result {
  double value = 0.0;
  Vec3 witness_u = Vec3::Zero();  // pair refuting the largest infeasible k (the tight constraint)
  Vec3 witness_v = Vec3::Zero();
  double slack = 0.0;             // F_k - gamma^2(u x v) for that pair at the returned k
  int bisection_steps = 0;
};

/// Computes the minimal stabilizing function k_0 for one model.
///
/// k_0(n) = inf{k : F_k(n,u,v) >= gamma^2(u x v) for all unit u, v} is found by
/// bisection on [gamma(n), K(n)]. A candidate k is accepted when Z_k(n) is
/// positive semidefinite and the minimum of F_k - gamma^2(u x v) is >= -1e-12,
/// where the minimum is taken over a 48 x 24 spherical grid for each factor
/// and then refined by projected coordinate descent started from the local
/// minima of the per-u grid minimum (lowest 32).
/// gamma^2(u x v) on the grid is independent of n and is tabulated once.
class K0Solver {
 public:
  explicit K0Solver(AnisotropyModel model);

  K0Result solve(const Vec3& n, double tol) const;
  /// Refined minimum of F_k - gamma^2(u x v) and the PSD check for one k.
  bool feasible(const Vec3& n, double k, K0Result* detail = nullptr) const;

  const AnisotropyModel& model() const { return model_; }

  static constexpr int kThetaCount = 48;
  static constexpr int kPhiCount = 24;

 private:
  double min_excess(const Vec3& n, double k, Vec3* u_out, Vec3* v_out) const;

  AnisotropyModel model_;
  std::vector<Vec3> grid_;
  std::vector<double> cross_sq_;  // gamma^2(u_a x u_b), row-major
};

/// k0_at with the default solver; pre: tol in [1e-6, 1e-2].
double k0_at(const AnisotropyModel& model, const Vec3& n, double tol);

enum class StrategyKind { Exact, PlusConstant, GlobalSup };

struct Strategy {
  StrategyKind kind = StrategyKind::GlobalSup;
  double offset = 0.0;  // PlusConstant only

  static Strategy exact() { return {StrategyKind::Exact, 0.0}; }
  static Strategy plus(double c);
  static Strategy global_sup() { return {StrategyKind::GlobalSup, 0.0}; }
  /// "exact" | "plus:<c>" | "sup"
  static Strategy parse(const std::string& text);
  std::string to_string() const;
};

/// Stabilizing function k(n) sampled on the 11 x 11 (phi, theta) grid
/// n_ij = (cos phi_i cos theta_j, cos phi_i sin theta_j, sin phi_i),
/// phi_i = -pi/2 + i pi/10, theta_j = -pi + j pi/5, and bilinearly interpolated.
class StabilizerTable {
 public:
  static constexpr int kRows = 11;
  static constexpr int kCols = 11;
  using Grid = std::array<std::array<double, kCols>, kRows>;

  StabilizerTable() = default;
  /// Table with k(n) = value everywhere (e.g. k = 2 for isotropic energy).
  static StabilizerTable constant(double value);
  static StabilizerTable from_k0(const Grid& k0, Strategy strategy, double tol,
                                 std::uint64_t model_hash);

  static Vec3 node(int i, int j);
  static double phi(int i);
  static double theta(int j);

  double k_of(const Vec3& n) const;

  const Grid& values() const { return values_; }
  const Grid& k0_values() const { return k0_; }
  Strategy strategy() const { return strategy_; }
  double tol() const { return tol_; }
  std::uint64_t model_hash() const { return model_hash_; }
  double max_value() const;
  double min_value() const;

  /// Versioned text format, 17 significant digits.
  void write(std::ostream& os) const;
  static StabilizerTable read(std::istream& is);
  void save(const std::string& path) const;
  static StabilizerTable load(const std::string& path);

 private:
  Grid k0_{};
  Grid values_{};
  Strategy strategy_ = Strategy::exact();
  double tol_ = 0.0;
  std::uint64_t model_hash_ = 0;
};

/// Per-node k_0 computation; pole rows computed once and replicated, and the
/// theta = +pi column copied from theta = -pi.
StabilizerTable build_table(const AnisotropyModel& model, Strategy strategy, double tol,
                            std::vector<K0Result>* node_details = nullptr);

}  // namespace sppfem
