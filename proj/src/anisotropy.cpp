#include "sppfem/anisotropy.hpp"

#include <fmt/format.h>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <cmath>
#include <mutex>
#include <numbers>

namespace sppfem {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Input: return "input";
    case ErrorKind::Config: return "config";
    case ErrorKind::Domain: return "domain";
    case ErrorKind::ModelValidation: return "model-validation";
    case ErrorKind::Geometry: return "geometry";
    case ErrorKind::Topology: return "topology";
    case ErrorKind::NonConvergence: return "nonconvergence";
    case ErrorKind::Solver: return "solver";
    case ErrorKind::StructureViolation: return "structure-violation";
    case ErrorKind::Internal: return "internal";
  }
  return "unknown";
}

const char* to_string(AnisotropyKind kind) {
  return kind == AnisotropyKind::Weak ? "Weak" : "Strong";
}

struct AnisotropyModel::State {
  Family family;
  std::once_flag c1_once;
  double c1 = 0.0;
};

namespace {

constexpr double kGradStep = 1e-6;
constexpr double kHessStep = 1e-5;

void require_spd(const Mat3& G, const char* what) {
  if (!G.isApprox(G.transpose(), 1e-12))
    throw Error(ErrorKind::ModelValidation, std::string(what) + ": matrix is not symmetric");
  Eigen::LLT<Mat3> llt(G);
  if (llt.info() != Eigen::Success)
    throw Error(ErrorKind::ModelValidation, std::string(what) + ": matrix is not positive definite");
}

std::string format_matrix(const Mat3& G) {
  std::string s = "[";
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) s += fmt::format("{}{:.17g}", (i || j) ? "," : "", G(i, j));
  return s + "]";
}

template <class F>
Vec3 central_gradient(const F& f, const Vec3& p, double h) {
  Vec3 g;
  for (int i = 0; i < 3; ++i) {
    Vec3 e = Vec3::Unit(i) * h;
    g[i] = (f(p + e) - f(p - e)) / (2 * h);
  }
  return g;
}

template <class F>
Mat3 central_hessian(const F& f, const Vec3& p, double h) {
  Mat3 H;
  for (int i = 0; i < 3; ++i) {
    for (int j = i; j < 3; ++j) {
      Vec3 ei = Vec3::Unit(i) * h, ej = Vec3::Unit(j) * h;
      double v = (f(p + ei + ej) - f(p + ei - ej) - f(p - ei + ej) + f(p - ei - ej)) / (4 * h * h);
      H(i, j) = H(j, i) = v;
    }
  }
  return H;
}

}  // namespace

AnisotropyModel::AnisotropyModel(Family f) : state_(std::make_shared<State>()) {
  state_->family = std::move(f);
}

AnisotropyModel AnisotropyModel::isotropic() { return AnisotropyModel(family::Isotropic{}); }

AnisotropyModel AnisotropyModel::ellipsoidal(const Mat3& G) {
  require_spd(G, "ellipsoidal");
  return AnisotropyModel(family::Ellipsoidal{G});
}

AnisotropyModel AnisotropyModel::lr_norm(double r) {
  if (!(r >= 2.0)) throw Error(ErrorKind::ModelValidation, "lr-norm requires r >= 2");
  return AnisotropyModel(family::LrNorm{r});
}

AnisotropyModel AnisotropyModel::four_fold(double beta) {
  if (!(beta >= 0.0)) throw Error(ErrorKind::ModelValidation, "four-fold requires beta >= 0");
  return AnisotropyModel(family::FourFold{beta});
}

AnisotropyModel AnisotropyModel::regularized_bgn(double r, std::vector<Mat3> G) {
  if (!(r >= 1.0)) throw Error(ErrorKind::ModelValidation, "regularized BGN requires r >= 1");
  if (G.empty()) throw Error(ErrorKind::ModelValidation, "regularized BGN needs at least one matrix");
  for (const auto& g : G) require_spd(g, "regularized BGN");
  return AnisotropyModel(family::RegularizedBGN{r, std::move(G)});
}

AnisotropyModel AnisotropyModel::custom(std::string name, std::function<double(const Vec3&)> gamma,
                                        std::function<Vec3(const Vec3&)> xi) {
  if (!gamma) throw Error(ErrorKind::ModelValidation, "custom model needs a gamma evaluator");
  return AnisotropyModel(family::Custom{std::move(name), std::move(gamma), std::move(xi)});
}

AnisotropyModel AnisotropyModel::weighted_sum(
    const std::vector<std::pair<double, AnisotropyModel>>& terms) {
  if (terms.empty()) throw Error(ErrorKind::ModelValidation, "empty combination");
  family::Combination c;
  for (const auto& [w, m] : terms) {
    if (!(w > 0.0)) throw Error(ErrorKind::ModelValidation, "combination weights must be positive");
    c.terms.emplace_back(w, std::make_shared<const AnisotropyModel>(m));
  }
  return AnisotropyModel(std::move(c));
}

AnisotropyModel AnisotropyModel::scaled(double c) const { return weighted_sum({{c, *this}}); }

const Family& AnisotropyModel::family() const { return state_->family; }

double AnisotropyModel::gamma(const Vec3& n) const {
  require_unit(n);
  return gamma_unit(n);
}

double AnisotropyModel::gamma_unit(const Vec3& n) const {
  return std::visit(
      [&](const auto& f) -> double {
        using T = std::decay_t<decltype(f)>;
        if constexpr (std::is_same_v<T, family::Custom>) {
          return f.gamma(n);
        } else {
          return gamma_ext(n);
        }
      },
      state_->family);
}

double AnisotropyModel::gamma_ext(const Vec3& p) const {
  return std::visit(
      [&](const auto& f) -> double {
        using T = std::decay_t<decltype(f)>;
        if constexpr (!std::is_same_v<T, family::Combination>) {
          if (p.squaredNorm() == 0.0)
            throw Error(ErrorKind::Domain, "gamma is undefined at the origin");
        }
        if constexpr (std::is_same_v<T, family::Isotropic>) {
          return p.norm();
        } else if constexpr (std::is_same_v<T, family::Ellipsoidal>) {
          return std::sqrt(p.dot(f.G * p));
        } else if constexpr (std::is_same_v<T, family::LrNorm>) {
          // scale first so large r does not overflow
          double m = p.cwiseAbs().maxCoeff();
          double s = 0.0;
          for (int i = 0; i < 3; ++i) s += std::pow(std::abs(p[i]) / m, f.r);
          return m * std::pow(s, 1.0 / f.r);
        } else if constexpr (std::is_same_v<T, family::FourFold>) {
          double r2 = p.squaredNorm();
          double r = std::sqrt(r2);
          double s4 = p.array().pow(4).sum();
          return r + f.beta * s4 / (r2 * r);
        } else if constexpr (std::is_same_v<T, family::RegularizedBGN>) {
          double s = 0.0;
          for (const auto& G : f.G) s += std::pow(p.dot(G * p), f.r / 2);
          return std::pow(s, 1.0 / f.r);
        } else if constexpr (std::is_same_v<T, family::Custom>) {
          double r = p.norm();
          return r * f.gamma(p / r);
        } else {
          double s = 0.0;
          for (const auto& [w, m] : f.terms) s += w * m->gamma_ext(p);
          return s;
        }
      },
      state_->family);
}

double AnisotropyModel::gamma_ext_sq(const Vec3& p) const {
  if (p.squaredNorm() == 0.0) return 0.0;
  double g = gamma_ext(p);
  return g * g;
}

Vec3 AnisotropyModel::xi(const Vec3& n) const {
  require_unit(n);
  return std::visit(
      [&](const auto& f) -> Vec3 {
        using T = std::decay_t<decltype(f)>;
        if constexpr (std::is_same_v<T, family::Isotropic>) {
          return n;
        } else if constexpr (std::is_same_v<T, family::Ellipsoidal>) {
          Vec3 Gn = f.G * n;
          return Gn / std::sqrt(n.dot(Gn));
        } else if constexpr (std::is_same_v<T, family::LrNorm>) {
          double g = gamma_ext(n);
          Vec3 out;
          for (int i = 0; i < 3; ++i) out[i] = std::pow(std::abs(n[i]), f.r - 2) * n[i];
          return std::pow(g, 1 - f.r) * out;
        } else if constexpr (std::is_same_v<T, family::FourFold>) {
          double s4 = n.array().pow(4).sum();
          Vec3 c = 4 * n.array().pow(3).matrix() - 3 * s4 * n;
          return n + f.beta * c;
        } else if constexpr (std::is_same_v<T, family::RegularizedBGN>) {
          double g = gamma_ext(n);
          Vec3 w = Vec3::Zero();
          for (const auto& G : f.G) {
            Vec3 Gn = G * n;
            w += std::pow(n.dot(Gn), (f.r - 2) / 2) * Gn;
          }
          return std::pow(g, 1 - f.r) * w;
        } else if constexpr (std::is_same_v<T, family::Custom>) {
          Vec3 x = f.xi ? f.xi(n)
                        : central_gradient([&](const Vec3& p) { return gamma_ext(p); }, n, kGradStep);
          double euler = std::abs(x.dot(n) - f.gamma(n));
          if (!(euler <= 1e-6))
            throw Error(ErrorKind::ModelValidation,
                        fmt::format("custom model '{}': xi.n differs from gamma by {:.3g}", f.name, euler));
          return x;
        } else {
          Vec3 s = Vec3::Zero();
          for (const auto& [w, m] : f.terms) s += w * m->xi(n);
          return s;
        }
      },
      state_->family);
}

Mat3 AnisotropyModel::hessian(const Vec3& n) const {
  require_unit(n);
  return std::visit(
      [&](const auto& f) -> Mat3 {
        using T = std::decay_t<decltype(f)>;
        if constexpr (std::is_same_v<T, family::Isotropic>) {
          return Mat3::Identity() - n * n.transpose();
        } else if constexpr (std::is_same_v<T, family::Ellipsoidal>) {
          Vec3 Gn = f.G * n;
          double g = std::sqrt(n.dot(Gn));
          return f.G / g - Gn * Gn.transpose() / (g * g * g);
        } else if constexpr (std::is_same_v<T, family::LrNorm>) {
          double g = gamma_ext(n);
          Vec3 a, b;  // |n_i|^{r-2}, |n_i|^{r-2} n_i
          for (int i = 0; i < 3; ++i) {
            a[i] = std::pow(std::abs(n[i]), f.r - 2);
            b[i] = a[i] * n[i];
          }
          Mat3 H = std::pow(g, 1 - f.r) * Mat3(a.asDiagonal()) -
                   std::pow(g, 1 - 2 * f.r) * b * b.transpose();
          return (f.r - 1) * H;
        } else if constexpr (std::is_same_v<T, family::FourFold>) {
          Vec3 n2 = n.array().square();
          Vec3 n3 = n.array().cube();
          double s4 = n2.squaredNorm();
          Mat3 quartic = 12 * Mat3(n2.asDiagonal()) - 12 * (n3 * n.transpose() + n * n3.transpose()) -
                         3 * s4 * Mat3::Identity() + 15 * s4 * n * n.transpose();
          return Mat3::Identity() - n * n.transpose() + f.beta * quartic;
        } else if constexpr (std::is_same_v<T, family::RegularizedBGN>) {
          double g = gamma_ext(n);
          double r = f.r;
          Mat3 M1 = Mat3::Zero(), M2 = Mat3::Zero();
          Vec3 w = Vec3::Zero();
          for (const auto& G : f.G) {
            Vec3 Gn = G * n;
            double gl = std::sqrt(n.dot(Gn));
            M1 += std::pow(gl, r - 4) * (gl * gl * G - Gn * Gn.transpose());
            M2 += std::pow(gl, r - 4) * Gn * Gn.transpose();
            w += std::pow(gl, r - 2) * Gn;
          }
          double gr = std::pow(g, r);
          M1 *= gr;
          M2 = gr * M2 - w * w.transpose();
          return std::pow(g, 1 - 2 * r) * (M1 + (r - 1) * M2);
        } else if constexpr (std::is_same_v<T, family::Custom>) {
          Mat3 H = central_hessian([&](const Vec3& p) { return gamma_ext(p); }, n, kHessStep);
          // the exact Hessian annihilates n; project out the round-off
          Mat3 P = Mat3::Identity() - n * n.transpose();
          Mat3 Hp = P * H * P;
          return 0.5 * (Hp + Hp.transpose());
        } else {
          Mat3 s = Mat3::Zero();
          for (const auto& [w, m] : f.terms) s += w * m->hessian(n);
          return s;
        }
      },
      state_->family);
}

double AnisotropyModel::c1() const {
  std::call_once(state_->c1_once, [&] {
    double sup = 0.0;
    for (const Vec3& m : fibonacci_sphere(2000)) {
      double g = gamma_unit(m);
      Vec3 x = xi(m);
      Mat3 H2 = 2.0 * (x * x.transpose() + g * hessian(m));
      Eigen::SelfAdjointEigenSolver<Mat3> es(H2, Eigen::EigenvaluesOnly);
      sup = std::max(sup, es.eigenvalues().cwiseAbs().maxCoeff());
    }
    state_->c1 = 0.5 * sup;
  });
  return state_->c1;
}

std::string AnisotropyModel::description() const {
  return std::visit(
      [&](const auto& f) -> std::string {
        using T = std::decay_t<decltype(f)>;
        if constexpr (std::is_same_v<T, family::Isotropic>) {
          return "isotropic";
        } else if constexpr (std::is_same_v<T, family::Ellipsoidal>) {
          return "ellipsoidal G=" + format_matrix(f.G);
        } else if constexpr (std::is_same_v<T, family::LrNorm>) {
          return fmt::format("lr r={:.17g}", f.r);
        } else if constexpr (std::is_same_v<T, family::FourFold>) {
          return fmt::format("fourfold beta={:.17g}", f.beta);
        } else if constexpr (std::is_same_v<T, family::RegularizedBGN>) {
          std::string s = fmt::format("bgn r={:.17g} G=", f.r);
          for (std::size_t i = 0; i < f.G.size(); ++i) s += (i ? ";" : "") + format_matrix(f.G[i]);
          return s;
        } else if constexpr (std::is_same_v<T, family::Custom>) {
          return "custom:" + f.name;
        } else {
          std::string s = "sum(";
          for (std::size_t i = 0; i < f.terms.size(); ++i)
            s += fmt::format("{}{:.17g}*{}", i ? " + " : "", f.terms[i].first,
                             f.terms[i].second->description());
          return s + ")";
        }
      },
      state_->family);
}

std::uint64_t AnisotropyModel::hash() const {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : description()) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::vector<Vec3> fibonacci_sphere(int count) {
  std::vector<Vec3> pts;
  pts.reserve(count);
  const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
  for (int i = 0; i < count; ++i) {
    double z = 1.0 - (2.0 * i + 1.0) / count;
    double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    double phi = golden * i;
    pts.emplace_back(r * std::cos(phi), r * std::sin(phi), z);
  }
  return pts;
}

TangentialSpectrum tangential_spectrum(const AnisotropyModel& model, const Vec3& n) {
  Mat3 H = model.hessian(n);
  auto [t1, t2] = tangent_basis(n);
  double a = t1.dot(H * t1), b = t1.dot(H * t2), c = t2.dot(H * t2);
  double mean = 0.5 * (a + c);
  double rad = std::hypot(0.5 * (a - c), b);
  double l1 = mean - rad, l2 = mean + rad;
  // eigenvector of the 2x2 block for l1, expressed back in R^3
  Vec3 t;
  if (rad == 0.0) {
    t = t1;
  } else if (a - l1 >= c - l1) {
    t = (-b * t1 + (a - l1) * t2).normalized();
    if (!t.allFinite() || t.norm() == 0.0) t = t1;
  } else {
    t = ((c - l1) * t1 - b * t2).normalized();
  }
  return {l1, l2, t};
}

Classification classify(const AnisotropyModel& model, int sample_count) {
  if (sample_count < 200) throw Error(ErrorKind::Input, "classification needs at least 200 samples");
  Classification out;
  out.lambda1_min = std::numeric_limits<double>::infinity();
  out.lambda1_max = -std::numeric_limits<double>::infinity();
  out.lambda2_max = -std::numeric_limits<double>::infinity();
  for (const Vec3& n : fibonacci_sphere(sample_count)) {
    Vec3 nu = n.normalized();
    TangentialSpectrum s = tangential_spectrum(model, nu);
    out.lambda1_max = std::max(out.lambda1_max, s.lambda1);
    out.lambda2_max = std::max(out.lambda2_max, s.lambda2);
    if (s.lambda1 < out.lambda1_min) {
      out.lambda1_min = s.lambda1;
      out.witness_normal = nu;
      out.witness_tangent = s.tangent1;
    }
  }
  out.kind = out.lambda1_min < -1e-10 ? AnisotropyKind::Strong : AnisotropyKind::Weak;
  if (out.kind == AnisotropyKind::Weak) {
    out.witness_normal = Vec3::Zero();
    out.witness_tangent = Vec3::Zero();
  }
  return out;
}

}  // namespace sppfem
