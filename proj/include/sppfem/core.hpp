#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <stdexcept>
#include <string>

namespace sppfem {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// Error categories; the CLI maps each to a distinct exit code.
enum class ErrorKind {
  Input,            // malformed argument or precondition violation
  Config,           // run-config parse/validation failure
  Domain,           // evaluation outside the function domain (e.g. gamma at 0)
  ModelValidation,  // anisotropy model fails a consistency check
  Geometry,         // degenerate triangle
  Topology,         // open / non-manifold / inconsistently oriented mesh
  NonConvergence,   // Newton iteration did not converge
  Solver,           // singular linear system
  StructureViolation,  // volume or energy postcondition failed
  Internal,         // contradicts a proven bound; indicates a bug
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

const char* to_string(ErrorKind kind);

/// Unit vector check used by every operation taking a normal.
inline void require_unit(const Vec3& n, const char* what = "normal") {
  double dev = std::abs(n.norm() - 1.0);
  if (!(dev <= 1e-9))
    throw Error(ErrorKind::Input, std::string(what) + " is not a unit vector");
}

/// Orthonormal tangent pair for a unit vector, built by Gram-Schmidt against
/// the coordinate axis least aligned with it.
inline std::pair<Vec3, Vec3> tangent_basis(const Vec3& n) {
  Eigen::Index axis;
  n.cwiseAbs().minCoeff(&axis);
  Vec3 e = Vec3::Unit(axis);
  Vec3 t1 = (e - n.dot(e) * n).normalized();
  Vec3 t2 = n.cross(t1);
  return {t1, t2};
}

inline Mat3 cross_matrix(const Vec3& a) {
  Mat3 m;
  m << 0, -a.z(), a.y(),
       a.z(), 0, -a.x(),
       -a.y(), a.x(), 0;
  return m;
}

}  // namespace sppfem
