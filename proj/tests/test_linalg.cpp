#include "fedrf/linalg.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>

using namespace fedrf;
using fedrf::testing::random_symmetric;

TEST(Lanczos, DiagonalTopThree) {
  Vector d = Vector::LinSpaced(10, 1.0, 10.0);
  const auto pairs = lanczos_top_m([&](const Vector& x, Vector& y) { y = d.cwiseProduct(x); }, 10, 3);
  EXPECT_NEAR(pairs.values(0), 10.0, 1e-10);
  EXPECT_NEAR(pairs.values(1), 9.0, 1e-10);
  EXPECT_NEAR(pairs.values(2), 8.0, 1e-10);
}

TEST(Lanczos, MatchesDenseOnRandomSymmetric) {
  const Matrix a = random_symmetric(100, 11);
  const auto dense = dense_top_eigenpairs(a, 5);
  const auto lz = lanczos_top_m([&](const Vector& x, Vector& y) { y = a * x; }, 100, 5);
  const double norm = symmetric_spectral_norm(a);
  for (Index j = 0; j < 5; ++j) {
    EXPECT_NEAR(lz.values(j), dense.values(j), 1e-8 * norm);
    const Vector r = a * lz.vectors.col(j) - lz.values(j) * lz.vectors.col(j);
    EXPECT_LT(r.norm(), 1e-8 * norm);
  }
  EXPECT_LT(max_principal_angle_sin(lz.vectors, dense.vectors), 1e-8);
}

TEST(Lanczos, CallbackAndMaterialisedAgree) {
  // Operator u u^T + diag, applied without ever forming the matrix.
  const Index n = 80;
  const Vector u = fedrf::testing::random_matrix(n, 1, 3).col(0);
  const Vector d = Vector::LinSpaced(n, 0.0, 1.0);
  const Matrix dense = u * u.transpose() + Matrix(d.asDiagonal());
  const auto a = lanczos_top_m([&](const Vector& x, Vector& y) { y = u * u.dot(x) + d.cwiseProduct(x); }, n, 4);
  const auto b = lanczos_top_m([&](const Vector& x, Vector& y) { y = dense * x; }, n, 4);
  for (Index j = 0; j < 4; ++j) EXPECT_NEAR(a.values(j), b.values(j), 1e-10);
  EXPECT_LT(max_principal_angle_sin(a.vectors, b.vectors), 1e-8);
}

TEST(Lanczos, RepeatedEigenvaluesFound) {
  // Identity block: the Krylov space from one start vector is invariant early.
  Vector d = Vector::Ones(40);
  d.head(3).setConstant(5.0);
  const auto pairs = lanczos_top_m([&](const Vector& x, Vector& y) { y = d.cwiseProduct(x); }, 40, 3);
  for (Index j = 0; j < 3; ++j) EXPECT_NEAR(pairs.values(j), 5.0, 1e-10);
}

TEST(Lanczos, CapThrowsConvergenceError) {
  const Matrix a = random_symmetric(60, 5);
  LanczosOptions opts;
  opts.max_dim = 6;
  opts.tolerance = 1e-14;
  try {
    lanczos_top_m([&](const Vector& x, Vector& y) { y = a * x; }, 60, 3, opts);
    FAIL() << "expected ConvergenceError";
  } catch (const ConvergenceError& e) {
    EXPECT_GT(e.residual(), 0.0);
    EXPECT_EQ(e.last_iterate().size(), 60);
  }
}

TEST(PowerNorm, DiagonalMixedSigns) {
  const Vector d = (Vector(3) << 3.0, -5.0, 1.0).finished();
  EXPECT_NEAR(power_norm([&](const Vector& x, Vector& y) { y = d.cwiseProduct(x); }, 3), 5.0, 1e-8);
}

TEST(PowerNorm, ZeroOperator) {
  EXPECT_EQ(power_norm([](const Vector& x, Vector& y) { y = Vector::Zero(x.size()); }, 4), 0.0);
}

TEST(PowerNorm, StartInNullSpace) {
  // All-ones lies in the kernel of this operator.
  Matrix a(2, 2);
  a << 1.0, -1.0, -1.0, 1.0;
  EXPECT_NEAR(power_norm([&](const Vector& x, Vector& y) { y = a * x; }, 2), 2.0, 1e-8);
}

TEST(PowerNorm, IterationCapThrows) {
  // Equal-magnitude +/- pair with different multiplicities converges slowly
  // only if the cap is tiny.
  Vector d(3);
  d << 1.0, 0.999, 0.5;
  PowerOptions opts;
  opts.max_iterations = 2;
  opts.tolerance = 1e-15;
  EXPECT_THROW(power_norm([&](const Vector& x, Vector& y) { y = d.cwiseProduct(x); }, 3, opts), ConvergenceError);
}

TEST(DenseEigen, SortedAndSigned) {
  const Matrix a = random_symmetric(20, 9);
  const auto pairs = dense_eigenpairs(a);
  for (Index j = 1; j < 20; ++j) EXPECT_GE(pairs.values(j - 1), pairs.values(j));
  for (Index j = 0; j < 20; ++j) {
    Index first = 0;
    while (std::abs(pairs.vectors(first, j)) <= 1e-8 * pairs.vectors.col(j).cwiseAbs().maxCoeff()) ++first;
    EXPECT_GT(pairs.vectors(first, j), 0.0);
  }
}

TEST(DenseEigen, StableTieOrder) {
  const Vector d = (Vector(4) << 2.0, 3.0, 3.0, 1.0).finished();
  const auto pairs = dense_top_eigenpairs(Matrix(d.asDiagonal()), 2);
  EXPECT_EQ(pairs.values(0), 3.0);
  EXPECT_EQ(pairs.values(1), 3.0);
}

TEST(PrincipalAngles, KnownAngle) {
  Matrix a = Matrix::Zero(3, 1);
  Matrix b = Matrix::Zero(3, 1);
  a(0, 0) = 1.0;
  b(0, 0) = std::cos(1e-9);
  b(1, 0) = std::sin(1e-9);
  EXPECT_NEAR(max_principal_angle_sin(a, b), std::sin(1e-9), 1e-20);
  EXPECT_NEAR(max_principal_angle_sin(a, -a), 0.0, 1e-15);
}
