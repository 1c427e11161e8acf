#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include <Eigen/Eigenvalues>

#include "sppfem/stabilizer.hpp"
#include "test_util.hpp"

using namespace sppfem;
using sppfem::testing::random_unit;

namespace {

double min_excess_sampled(const AnisotropyModel& m, double k, const Vec3& n, int pairs, std::mt19937_64& rng) {
  double worst = 1e300;
  for (int s = 0; s < pairs; ++s) {
    Vec3 u = random_unit(rng), v = random_unit(rng);
    worst = std::min(worst, f_k(m, k, n, u, v) - m.gamma_ext_sq(u.cross(v)));
  }
  return worst;
}

}  // namespace

TEST(ZMatrix, IsotropicWithKTwoIsIdentity) {
  std::mt19937_64 rng(1);
  auto iso = AnisotropyModel::isotropic();
  for (int i = 0; i < 20; ++i) {
    Vec3 n = random_unit(rng);
    EXPECT_LE((z_matrix(iso, 2.0, n) - Mat3::Identity()).norm(), 1e-15);
    EXPECT_NEAR(n.dot(z_matrix(iso, 3.7, n) * n), 3.7 - 1.0, 1e-14);
  }
}

TEST(ZMatrix, TangentialActionIsGamma) {
  std::mt19937_64 rng(2);
  for (const auto& [name, m] : sppfem::testing::catalog())
    for (int i = 0; i < 50; ++i) {
      Vec3 n = random_unit(rng);
      auto [t1, t2] = tangent_basis(n);
      Vec3 t = std::cos(0.3 * i) * t1 + std::sin(0.3 * i) * t2;
      Mat3 Z = z_matrix(m, 1.0 + i, n);
      EXPECT_NEAR(t.dot(Z * t), m.gamma(n), 1e-13) << name;
      EXPECT_EQ(Z, Z.transpose()) << name;
    }
}

// Z P = gamma P - xi_T n^T (tangential part of xi), so trace(Z P) = 2 gamma.
TEST(ZMatrix, TraceAgainstTangentProjector) {
  std::mt19937_64 rng(3);
  for (const auto& [name, m] : sppfem::testing::catalog())
    for (int i = 0; i < 50; ++i) {
      Vec3 n = random_unit(rng);
      Mat3 P = Mat3::Identity() - n * n.transpose();
      EXPECT_NEAR((z_matrix(m, 5.0, n) * P).trace(), 2.0 * m.gamma(n), 1e-13) << name;
    }
}

TEST(Fk, ReferenceValues) {
  auto iso = AnisotropyModel::isotropic();
  const Vec3 n(0, 0, 1), u(1, 0, 0), v(0, 1, 0);
  for (double k : {0.5, 2.0, 9.0}) {
    EXPECT_NEAR(f_k(iso, k, n, u, v), 1.0, 1e-15);
    EXPECT_NEAR(iso.gamma_ext_sq(u.cross(v)), 1.0, 1e-15);
    EXPECT_GE(f_k(iso, k, n, u, u), 0.0);
  }
  EXPECT_EQ(iso.gamma_ext_sq(u.cross(u)), 0.0);
  EXPECT_NEAR(f_k(iso, 2.0, n, n, u), 1.0, 1e-15);
  EXPECT_NEAR(iso.gamma_ext_sq(n.cross(u)), 1.0, 1e-15);
}

TEST(KUpper, Isotropic) {
  std::mt19937_64 rng(4);
  for (int i = 0; i < 10; ++i) EXPECT_NEAR(k_upper(AnisotropyModel::isotropic(), random_unit(rng)), 30.0, 1e-10);
}

TEST(KUpper, ScalesWithGamma) {
  std::mt19937_64 rng(5);
  for (const auto& [name, m] : sppfem::testing::catalog()) {
    auto m3 = m.scaled(3.0);
    Vec3 n = random_unit(rng);
    EXPECT_NEAR(k_upper(m3, n), 3.0 * k_upper(m, n), 1e-9 * k_upper(m, n)) << name;
  }
}

TEST(K0, IsotropicIsTwo) {
  std::mt19937_64 rng(6);
  const double tol = 1e-4;
  for (int i = 0; i < 5; ++i) {
    double k = k0_at(AnisotropyModel::isotropic(), random_unit(rng), tol);
    EXPECT_GE(k, 2.0);
    EXPECT_LE(k, 2.0 + tol);
  }
}

TEST(K0, OrderingFeasibilityMinimality) {
  std::mt19937_64 rng(7);
  const double tol = 1e-4;
  for (const auto& [name, m] : sppfem::testing::catalog()) {
    K0Solver solver(m);
    bool some_violated = false;
    for (int i = 0; i < 3; ++i) {
      Vec3 n = random_unit(rng);
      K0Result r = solver.solve(n, tol);
      EXPECT_GE(r.value, m.gamma(n) - 1e-9) << name;
      EXPECT_LE(r.value, k_upper(m, n) + tol) << name;
      EXPECT_GE(min_excess_sampled(m, r.value + tol, n, 20000, rng), -1e-9) << name;
      double below = std::min(f_k(m, r.value - 10 * tol, n, r.witness_u, r.witness_v) -
                                  m.gamma_ext_sq(r.witness_u.cross(r.witness_v)),
                              min_excess_sampled(m, r.value - 10 * tol, n, 20000, rng));
      if (below < -1e-9) some_violated = true;
    }
    EXPECT_TRUE(some_violated) << name;
  }
}

TEST(K0, PositiveHomogeneity) {
  std::mt19937_64 rng(8);
  const double tol = 1e-4;
  auto m = AnisotropyModel::four_fold(0.25);
  auto m2 = m.scaled(2.0);
  for (int i = 0; i < 3; ++i) {
    Vec3 n = random_unit(rng);
    EXPECT_NEAR(k0_at(m2, n, tol), 2.0 * k0_at(m, n, tol), 2.0 * tol);
  }
}

TEST(K0, Subadditivity) {
  std::mt19937_64 rng(9);
  const double tol = 1e-4;
  auto iso = AnisotropyModel::isotropic();
  auto quartic = AnisotropyModel::custom("quartic", [](const Vec3& n) { return 0.25 * n.array().pow(4).sum(); },
                                         [](const Vec3& n) {
                                           double S = n.array().pow(4).sum();
                                           return Vec3((0.25 * (4.0 * n.array().pow(3) - 3.0 * S * n.array())).matrix());
                                         });
  auto ff = AnisotropyModel::four_fold(0.25);
  for (int i = 0; i < 3; ++i) {
    Vec3 n = random_unit(rng);
    EXPECT_LE(k0_at(ff, n, tol), k0_at(iso, n, tol) + k0_at(quartic, n, tol) + 3 * tol);
  }
}

TEST(K0, RejectsToleranceOutOfRange) {
  EXPECT_THROW(k0_at(AnisotropyModel::isotropic(), Vec3(0, 0, 1), 1e-8), Error);
  EXPECT_THROW(k0_at(AnisotropyModel::isotropic(), Vec3(0, 0, 1), 0.1), Error);
}

TEST(Table, NodesAndPoles) {
  EXPECT_LE((StabilizerTable::node(0, 3) - Vec3(0, 0, -1)).norm(), 1e-15);
  EXPECT_LE((StabilizerTable::node(10, 7) - Vec3(0, 0, 1)).norm(), 1e-15);
  EXPECT_NEAR(StabilizerTable::phi(5), 0.0, 1e-15);
  EXPECT_NEAR(StabilizerTable::theta(0), -std::numbers::pi, 1e-15);
}

TEST(Table, IsotropicExactIsConstant) {
  StabilizerTable t = build_table(AnisotropyModel::isotropic(), Strategy::exact(), 1e-4);
  double v = t.values()[0][0];
  EXPECT_GE(v, 2.0);
  for (const auto& row : t.values())
    for (double x : row) EXPECT_EQ(x, v);
}

class FourFoldTable : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    exact_ = new StabilizerTable(build_table(AnisotropyModel::four_fold(0.25), Strategy::exact(), 1e-4));
  }
  static void TearDownTestSuite() { delete exact_; }
  static StabilizerTable* exact_;
};
StabilizerTable* FourFoldTable::exact_ = nullptr;

TEST_F(FourFoldTable, Invariants) {
  auto m = AnisotropyModel::four_fold(0.25);
  const auto& k = exact_->values();
  for (int i = 0; i < 11; ++i)
    for (int j = 0; j < 11; ++j) {
      Vec3 n = StabilizerTable::node(i, j);
      EXPECT_GE(k[i][j], m.gamma(n) - 1e-9);
      EXPECT_LE(k[i][j], k_upper(m, n) + 1e-9);
    }
  for (int j = 1; j < 11; ++j) {
    EXPECT_EQ(k[0][j], k[0][0]);
    EXPECT_EQ(k[10][j], k[10][0]);
  }
}

TEST_F(FourFoldTable, CubicSymmetry) {
  // theta -> -theta and phi -> -phi are sign flips; theta -> theta + pi/2 is a
  // coordinate permutation with a sign flip.
  const auto& k = exact_->values();
  const double tol = 1e-4;
  for (int i = 0; i < 11; ++i)
    for (int j = 0; j < 11; ++j) {
      EXPECT_NEAR(k[i][j], k[10 - i][j], 2 * tol);
      EXPECT_NEAR(k[i][j], k[i][10 - j], 2 * tol);
      EXPECT_NEAR(k[i][j], k[i][(j + 5) % 10], 2 * tol);
    }
}

TEST_F(FourFoldTable, Interpolation) {
  const auto& k = exact_->values();
  EXPECT_EQ(exact_->k_of(StabilizerTable::node(3, 4)), k[3][4]);
  EXPECT_NEAR(exact_->k_of(Vec3(0, 0, 1)), k[10][0], 1e-15);
  Vec3 a = StabilizerTable::node(6, 2);
  double phi = StabilizerTable::phi(6), th = 0.5 * (StabilizerTable::theta(2) + StabilizerTable::theta(3));
  Vec3 mid(std::cos(phi) * std::cos(th), std::cos(phi) * std::sin(th), std::sin(phi));
  (void)a;
  EXPECT_NEAR(exact_->k_of(mid), 0.5 * (k[6][2] + k[6][3]), 1e-12);
  // periodic in theta
  Vec3 back(-std::cos(phi), 1e-13, std::sin(phi));
  Vec3 front(-std::cos(phi), -1e-13, std::sin(phi));
  EXPECT_NEAR(exact_->k_of(back.normalized()), exact_->k_of(front.normalized()), 1e-9);
}

TEST_F(FourFoldTable, Strategies) {
  StabilizerTable plus = StabilizerTable::from_k0(exact_->k0_values(), Strategy::plus(1.0), 1e-4, 0);
  StabilizerTable sup = StabilizerTable::from_k0(exact_->k0_values(), Strategy::global_sup(), 1e-4, 0);
  for (int i = 0; i < 11; ++i)
    for (int j = 0; j < 11; ++j) {
      EXPECT_EQ(plus.values()[i][j], exact_->values()[i][j] + 1.0);
      EXPECT_EQ(sup.values()[i][j], exact_->max_value());
    }
}

TEST_F(FourFoldTable, PositiveSemidefiniteZ) {
  std::mt19937_64 rng(10);
  auto m = AnisotropyModel::four_fold(0.25);
  for (int i = 0; i < 1000; ++i) {
    Vec3 n = random_unit(rng);
    Eigen::SelfAdjointEigenSolver<Mat3> es(z_matrix(m, exact_->k_of(n), n));
    EXPECT_GE(es.eigenvalues().minCoeff(), -1e-10);
  }
}

TEST_F(FourFoldTable, TextRoundTrip) {
  std::stringstream ss;
  exact_->write(ss);
  StabilizerTable back = StabilizerTable::read(ss);
  EXPECT_EQ(back.values(), exact_->values());
  EXPECT_EQ(back.k0_values(), exact_->k0_values());
  EXPECT_EQ(back.model_hash(), exact_->model_hash());
  std::stringstream again;
  back.write(again);
  std::stringstream first;
  exact_->write(first);
  EXPECT_EQ(again.str(), first.str());
}

// Lemma: for k >= k0, (1/2)|sigma| (Z_k grad X) : grad X >= gamma(n_bar)|sigma_bar|
// with X the affine map of sigma onto sigma_bar.
TEST_F(FourFoldTable, PerTriangleInequality) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  auto m = AnisotropyModel::four_fold(0.25);
  for (int s = 0; s < 1000; ++s) {
    // sigma lies in the plane of a grid node normal, where the table holds k0 exactly
    int ni = 1 + s % 9, nj = (s / 9) % 10;
    Vec3 n = StabilizerTable::node(ni, nj);
    auto [t1, t2] = tangent_basis(n);
    std::array<Vec3, 3> a, b;
    for (int i = 0; i < 3; ++i) {
      a[i] = u(rng) * t1 + u(rng) * t2 + Vec3(0.3, -0.2, 0.1);
      b[i] = Vec3(u(rng), u(rng), u(rng));
    }
    if (orientation_vector(a[0], a[1], a[2]).dot(n) < 0) std::swap(a[1], a[2]);
    Vec3 Ja = orientation_vector(a[0], a[1], a[2]), Jb = orientation_vector(b[0], b[1], b[2]);
    if (Ja.norm() < 1e-3 || Jb.norm() < 1e-3) continue;
    auto g = hat_gradients(a[0], a[1], a[2]);
    Mat3 D = b[0] * g[0].transpose() + b[1] * g[1].transpose() + b[2] * g[2].transpose();
    Mat3 Z = z_matrix(m, exact_->k0_values()[ni][nj] + 1e-4, n);
    double lhs = 0.5 * 0.5 * Ja.norm() * (Z * D).cwiseProduct(D).sum();
    double rhs = m.gamma(Jb.normalized()) * 0.5 * Jb.norm();
    EXPECT_GE(lhs, rhs - 1e-9);
  }
}

TEST(Strategy, Parse) {
  EXPECT_EQ(Strategy::parse("exact").kind, StrategyKind::Exact);
  EXPECT_EQ(Strategy::parse("sup").kind, StrategyKind::GlobalSup);
  Strategy p = Strategy::parse("plus:2.5");
  EXPECT_EQ(p.kind, StrategyKind::PlusConstant);
  EXPECT_EQ(p.offset, 2.5);
  EXPECT_EQ(Strategy::parse(p.to_string()).offset, 2.5);
  EXPECT_THROW(Strategy::parse("plus:-1"), Error);
  EXPECT_THROW(Strategy::parse("bogus"), Error);
}
