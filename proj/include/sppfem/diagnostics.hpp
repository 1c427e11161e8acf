#pragma once

#include <functional>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "sppfem/anisotropy.hpp"
#include "sppfem/mesh.hpp"
#include "sppfem/solver.hpp"
#include "sppfem/stabilizer.hpp"

namespace sppfem {

// Manifold distance ----------------------------------------------------------------

/// Ray-casting acceleration structure over one closed mesh.
class RayCaster {
 public:
  explicit RayCaster(const SurfaceMesh& mesh);
  ~RayCaster();
  RayCaster(RayCaster&&) noexcept;
  RayCaster& operator=(RayCaster&&) noexcept;

  struct Hit {
    double t;
    int sign;  // +1 leaving the enclosed region, -1 entering
  };
  /// All crossings with t > 0 sorted by t, near-duplicates (ray through an
  /// edge or vertex) merged.
  std::vector<Hit> cast(const Vec3& origin, const Vec3& dir) const;
  /// Sorted [enter, leave] parameter intervals of the ray inside the region.
  std::vector<std::pair<double, double>> inside(const Vec3& origin, const Vec3& dir) const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Sphere quadrature of the cube-map kind: each cube face split into n x n
/// cells with n = 8 * 2^level. Weights are the midpoint rule for the gnomonic
/// change of variables (cell^2 / |p|^3), which integrates r^3/3 exactly when
/// r is the distance to a plane parallel to the face, e.g. for boxes.
struct SphereQuadrature {
  std::vector<Vec3> directions;
  std::vector<double> weights;
};
SphereQuadrature cube_sphere_quadrature(int level);

struct DistanceOptions {
  int start_level = 0;
  int max_level = 7;
  double rel_tol = 1e-3;
};

struct DistanceResult {
  double value = 0.0;
  bool converged = false;
  int level = 0;
  std::size_t directions = 0;
  Vec3 center = Vec3::Zero();
};

/// |Omega_A symmetric-difference Omega_B| by radial integration about the
/// midpoint of the two enclosed-region centroids.
double manifold_distance_at(const RayCaster& A, const RayCaster& B, const Vec3& center, int level);
DistanceResult manifold_distance(const SurfaceMesh& A, const SurfaceMesh& B, const DistanceOptions& opt = {});

// Errors and convergence ----------------------------------------------------------

/// Vertex positions at discrete steps of one run; all steps share connectivity.
struct Snapshots {
  double tau = 0.0;
  std::vector<Triangle> triangles;
  std::map<int, std::vector<Vec3>> by_step;
  std::string failure;  // non-empty when the run stopped early; by_step holds what it reached

  void record(const EvolutionState& s) { by_step[s.step] = s.mesh.vertices(); }
  /// Surface at time t: a stored step when t is a step time, otherwise linear
  /// interpolation of vertex positions between the neighbouring stored steps.
  SurfaceMesh at(double t) const;
};

/// manifold_distance(run(t), reference(t)).
DistanceResult numerical_error(const Snapshots& run, const Snapshots& reference, double t,
                               const DistanceOptions& opt = {});

struct BenchmarkCase {
  int id = 0;
  std::string label;
  AnisotropyModel model;
  Strategy strategy;
};
/// Cases 1..6 of the convergence study; throws ErrorKind::Input otherwise.
BenchmarkCase benchmark_case(int id);

struct SuiteOptions {
  std::vector<int> levels{1, 2, 3};  // h = 2^-level
  int reference_level = 4;
  std::vector<double> times{0.5, 1.0};
  double k0_tol = 1e-4;
  JacobianPolicy jacobian = JacobianPolicy::Lazy;
  DistanceOptions distance{};
  /// When non-empty, stabilizer tables and reference snapshots are cached here.
  std::string cache_dir;
  std::function<void(const std::string&)> log;
};

struct ConvergenceRow {
  double h = 0.0;
  double tau = 0.0;
  std::size_t triangles = 0;
  std::size_t vertices = 0;
  std::vector<double> errors;  // one per time; NaN when the run failed
  std::vector<double> orders;  // log2(e_prev / e); NaN in the first row
  std::vector<bool> distance_converged;
};

struct ConvergenceReport {
  int case_id = 0;
  std::string label;
  std::vector<double> times;
  std::vector<ConvergenceRow> rows;
  std::vector<std::string> failures;

  void write_csv(std::ostream& os) const;
  std::string table() const;
};

/// Shared state across suite invocations (tables and reference runs keyed by
/// model hash, strategy and level).
class SuiteCache {
 public:
  explicit SuiteCache(std::string dir = {}) : dir_(std::move(dir)) {}
  const StabilizerTable& table(const AnisotropyModel& model, Strategy strategy, double tol);
  /// Cuboid 2x2x1 run at h = 2^-level with every step at the requested times kept.
  const Snapshots& run(const AnisotropyModel& model, Strategy strategy, int level, const SuiteOptions& opt);

 private:
  std::string dir_;
  std::map<std::string, StabilizerTable> tables_;
  std::map<std::string, Snapshots> runs_;
};

ConvergenceReport convergence_suite(int case_id, const SuiteOptions& opt = {}, SuiteCache* cache = nullptr);

}  // namespace sppfem
