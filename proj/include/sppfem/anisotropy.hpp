#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "sppfem/core.hpp"

namespace sppfem {

class AnisotropyModel;

namespace family {
struct Isotropic {};
struct Ellipsoidal {
  Mat3 G;
};
struct LrNorm {
  double r;
};
struct FourFold {
  double beta;
};
struct RegularizedBGN {
  double r;
  std::vector<Mat3> G;
};
/// User supplied energy. `gamma` receives unit vectors; `xi` is optional and
/// falls back to central differences of the homogeneous extension.
struct Custom {
  std::string name;
  std::function<double(const Vec3&)> gamma;
  std::function<Vec3(const Vec3&)> xi;
};
/// Nonnegative linear combination sum_i c_i gamma_i.
struct Combination {
  std::vector<std::pair<double, std::shared_ptr<const AnisotropyModel>>> terms;
};
}  // namespace family

using Family = std::variant<family::Isotropic, family::Ellipsoidal, family::LrNorm,
                            family::FourFold, family::RegularizedBGN, family::Custom,
                            family::Combination>;

/// A surface energy density gamma(n) on the unit sphere together with its
/// one-homogeneous extension gamma(p) = |p| gamma(p/|p|), the Cahn-Hoffman
/// vector xi(n) = grad gamma(p)|_{p=n} and the Hessian H(n) of gamma(p) at n.
///
/// Models are immutable and cheap to copy (shared state).
class AnisotropyModel {
 public:
  static AnisotropyModel isotropic();
  static AnisotropyModel ellipsoidal(const Mat3& G);
  static AnisotropyModel lr_norm(double r);
  static AnisotropyModel four_fold(double beta);
  static AnisotropyModel regularized_bgn(double r, std::vector<Mat3> G);
  static AnisotropyModel custom(std::string name, std::function<double(const Vec3&)> gamma,
                                std::function<Vec3(const Vec3&)> xi = {});
  static AnisotropyModel weighted_sum(const std::vector<std::pair<double, AnisotropyModel>>& terms);

  AnisotropyModel scaled(double c) const;

  /// gamma(n); throws ErrorKind::Input if |n| deviates from 1 by more than 1e-9.
  double gamma(const Vec3& n) const;
  /// One-homogeneous extension; throws ErrorKind::Domain at p = 0.
  double gamma_ext(const Vec3& p) const;
  /// gamma_ext(p)^2 continuously extended by 0 at the origin.
  double gamma_ext_sq(const Vec3& p) const;
  Vec3 xi(const Vec3& n) const;
  Mat3 hessian(const Vec3& n) const;

  /// C_1 = 1/2 sup_{m in S^2} ||H_{gamma^2}(m)||_2 sampled on a 2000-point
  /// Fibonacci lattice; computed once per model.
  double c1() const;

  const Family& family() const;
  /// Canonical text form; parameters at 17 significant digits.
  std::string description() const;
  std::uint64_t hash() const;

 private:
  struct State;
  explicit AnisotropyModel(Family f);
  double gamma_unit(const Vec3& n) const;

  std::shared_ptr<State> state_;
};

enum class AnisotropyKind { Weak, Strong };

struct Classification {
  AnisotropyKind kind = AnisotropyKind::Weak;
  Vec3 witness_normal = Vec3::Zero();
  Vec3 witness_tangent = Vec3::Zero();
  double lambda1_min = 0.0;  // smallest tangential eigenvalue seen
  double lambda1_max = 0.0;  // largest value of the smaller eigenvalue
  double lambda2_max = 0.0;  // largest tangential eigenvalue seen
};

/// Two tangential eigenvalues (ascending) of H restricted to the plane n-perp,
/// and the eigenvector of the smaller one.
struct TangentialSpectrum {
  double lambda1;
  double lambda2;
  Vec3 tangent1;
};
TangentialSpectrum tangential_spectrum(const AnisotropyModel& model, const Vec3& n);

/// Quasi-uniform deterministic point set on S^2.
std::vector<Vec3> fibonacci_sphere(int count);

/// Samples sample_count (>= 200) Fibonacci points and reports Strong when
/// some tangential eigenvalue is below -1e-10.
Classification classify(const AnisotropyModel& model, int sample_count = 2000);

const char* to_string(AnisotropyKind kind);

}  // namespace sppfem
