#include "fedrf/kernel_rff.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>

using namespace fedrf;
using fedrf::testing::random_matrix;

namespace {

Matrix unit_columns(Matrix x) {
  for (Index j = 0; j < x.cols(); ++j) x.col(j).normalize();
  return x;
}

}  // namespace

TEST(GaussianKernel, UnitDiagonalAndSymmetric) {
  const Matrix x = random_matrix(5, 30, 1);
  const Matrix k = gaussian_kernel(x, 1.3);
  for (Index i = 0; i < 30; ++i) EXPECT_EQ(k(i, i), 1.0);
  EXPECT_EQ((k - k.transpose()).cwiseAbs().maxCoeff(), 0.0);
  Eigen::SelfAdjointEigenSolver<Matrix> eig(k, Eigen::EigenvaluesOnly);
  EXPECT_GT(eig.eigenvalues().minCoeff(), -1e-10);
}

TEST(GaussianKernel, DuplicateColumns) {
  Matrix x = random_matrix(3, 4, 2);
  x.col(3) = x.col(1);
  EXPECT_DOUBLE_EQ(gaussian_kernel(x, 0.7)(1, 3), 1.0);
}

TEST(GaussianKernel, ScalarEvaluation) {
  const double sigma = 0.8;
  Matrix x(1, 2);
  x << 0.0, std::sqrt(2.0) * sigma;
  EXPECT_NEAR(gaussian_kernel(x, sigma)(0, 1), std::exp(-1.0), 1e-15);
  EXPECT_NEAR(std::exp(-1.0), 0.367879, 1e-6);
}

TEST(GaussianKernel, RejectsNonFinite) {
  Matrix x = random_matrix(2, 3, 3);
  x(1, 1) = std::nan("");
  EXPECT_THROW(gaussian_kernel(x, 1.0), InvalidInputError);
  EXPECT_THROW(gaussian_kernel(random_matrix(2, 3, 3), 0.0), InvalidInputError);
}

TEST(Projection, Deterministic) {
  const KernelConfig cfg{1.5, 64, 99};
  EXPECT_EQ(make_projection(cfg, 7).omega, make_projection(cfg, 7).omega);
  const KernelConfig other{1.5, 64, 100};
  EXPECT_NE(make_projection(cfg, 7).omega, make_projection(other, 7).omega);
}

TEST(Projection, MomentsMatchBandwidth) {
  for (double sigma : {1.0, 2.0}) {
    const auto proj = make_projection({sigma, 1000, 5}, 1000);
    const double mean = proj.omega.mean();
    const double var = (proj.omega.array() - mean).square().mean();
    EXPECT_NEAR(mean, 0.0, 0.005 / sigma);
    EXPECT_NEAR(var * sigma * sigma, 1.0, 0.01);
  }
}

TEST(Projection, RejectsBadConfig) {
  EXPECT_THROW(make_projection({0.0, 10, 1}, 3), InvalidInputError);
  EXPECT_THROW(make_projection({1.0, 0, 1}, 3), InvalidInputError);
  EXPECT_THROW(make_projection({1.0, 10, 1}, 0), InvalidInputError);
}

TEST(RffMap, ColumnsHaveUnitNorm) {
  const Matrix x = 3.0 * random_matrix(6, 40, 4);
  const auto proj = make_projection({1.0, 128, 1}, 6);
  const Matrix s = rff_map(x, proj);
  ASSERT_EQ(s.rows(), 256);
  ASSERT_EQ(s.cols(), 40);
  for (Index j = 0; j < 40; ++j) EXPECT_NEAR(s.col(j).squaredNorm(), 1.0, 1e-12);
}

TEST(RffMap, ZeroInput) {
  const auto proj = make_projection({1.0, 16, 1}, 3);
  const Matrix s = rff_map(Matrix::Zero(3, 4), proj);
  EXPECT_TRUE(s.topRows(16).isApproxToConstant(1.0 / 4.0, 1e-15));
  EXPECT_TRUE(s.bottomRows(16).isZero(0.0));
}

TEST(RffMap, ShapeMismatch) {
  const auto proj = make_projection({1.0, 16, 1}, 3);
  EXPECT_THROW(rff_map(Matrix::Zero(4, 2), proj), ShapeError);
}

TEST(RffMap, SpectralErrorShrinksWithN) {
  const Matrix x = unit_columns(random_matrix(10, 200, 6));
  const double sigma = median_bandwidth(x);
  const Matrix k = gaussian_kernel(x, sigma);
  const double knorm = symmetric_spectral_norm(k);
  auto rel_err = [&](std::size_t n_feat) {
    double total = 0.0;
    for (std::uint64_t seed = 0; seed < 4; ++seed) {
      const Matrix s = rff_map(x, make_projection({sigma, n_feat, seed}, 10));
      total += spectral_error(s.transpose() * s, k) / knorm;
    }
    return total / 4.0;
  };
  const double coarse = rel_err(512);
  const double fine = rel_err(8192);
  EXPECT_LT(fine, coarse);
  EXPECT_GE(fine / coarse, 0.15);
  EXPECT_LE(fine / coarse, 0.5);
}

TEST(SpectralError, ZeroAndDiagonal) {
  const Matrix a = fedrf::testing::random_symmetric(6, 7);
  EXPECT_NEAR(spectral_error(a, a), 0.0, 1e-12);
  const Vector d = (Vector(3) << 3.0, -5.0, 1.0).finished();
  EXPECT_NEAR(spectral_error(Matrix(d.asDiagonal()), Matrix::Zero(3, 3)), 5.0, 1e-8);
}

TEST(SpectralError, MatchesDense) {
  const Matrix a = fedrf::testing::random_symmetric(50, 8);
  const Matrix b = fedrf::testing::random_symmetric(50, 9);
  Eigen::SelfAdjointEigenSolver<Matrix> eig(a - b, Eigen::EigenvaluesOnly);
  const double oracle = eig.eigenvalues().cwiseAbs().maxCoeff();
  EXPECT_NEAR(spectral_error(a, b), oracle, 1e-8 * oracle);
}

TEST(SpectralError, RejectsAsymmetric) {
  Matrix a = Matrix::Identity(3, 3);
  a(0, 1) = 1.0;
  EXPECT_THROW(spectral_error(a, Matrix::Zero(3, 3)), InvalidInputError);
}

TEST(IntrinsicDim, KnownCases) {
  EXPECT_NEAR(intrinsic_dim(Matrix::Identity(7, 7)), 7.0, 1e-12);
  Vector u = random_matrix(5, 1, 1).col(0).normalized();
  EXPECT_NEAR(intrinsic_dim(u * u.transpose()), 1.0, 1e-12);
  EXPECT_THROW(intrinsic_dim(Matrix::Zero(3, 3)), InvalidInputError);
}

TEST(IntrinsicDim, MatchesDenseOnClusters) {
  const Matrix x = fedrf::testing::clustered_points(3, 2, 40, 35, 25);
  const Matrix k = gaussian_kernel(x, 1.0);
  Eigen::SelfAdjointEigenSolver<Matrix> eig(k, Eigen::EigenvaluesOnly);
  const double oracle = eig.eigenvalues().sum() / eig.eigenvalues().maxCoeff();
  EXPECT_NEAR(intrinsic_dim(k), oracle, 1e-8);
  EXPECT_GE(intrinsic_dim(k), 1.0);
  EXPECT_LE(intrinsic_dim(k), 100.0);
}

TEST(Center, ConstantColumnVanishes) {
  Matrix m = random_matrix(6, 3, 2);
  m.col(1).setConstant(4.2);
  const Matrix c = center(m);
  EXPECT_LT(c.col(1).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_LT(c.colwise().sum().cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Center, MatchesExplicitProductAndIsIdempotent) {
  const Matrix m = random_matrix(10, 3, 3);
  const Matrix h = fedrf::testing::centering(10);
  EXPECT_LT((center(m) - h * m).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((center(center(m)) - center(m)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Center, BothSides) {
  const Matrix m = fedrf::testing::random_symmetric(8, 4);
  const Matrix h = fedrf::testing::centering(8);
  const Matrix c = center(m, CenterMode::both);
  EXPECT_LT((c - h * m * h).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT(c.rowwise().sum().cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_LT(c.colwise().sum().cwiseAbs().maxCoeff(), 1e-10);
}

TEST(MedianBandwidth, KnownConfiguration) {
  // Points 0, 1, 3 on a line: distances {1, 2, 3}.
  Matrix x(1, 3);
  x << 0.0, 1.0, 3.0;
  EXPECT_DOUBLE_EQ(median_bandwidth(x), 2.0);
  EXPECT_THROW(median_bandwidth(Matrix::Zero(2, 4)), InvalidInputError);
}
