#pragma once

#include "fedrf/core.hpp"
#include "fedrf/random.hpp"

#include <algorithm>
#include <functional>
#include <numeric>
#include <vector>

namespace fedrf {

/// y = A x for a symmetric operator that may never be materialised.
using MatVec = std::function<void(const Vector& x, Vector& y)>;

struct EigenPairs {
  Vector values;   // nonincreasing
  Matrix vectors;  // unit columns
};

/// Flip each column so that its first entry of non-negligible magnitude is
/// positive.
inline void canonicalize_signs(Matrix& vectors) {
  for (Index j = 0; j < vectors.cols(); ++j) {
    auto col = vectors.col(j);
    const double scale = col.cwiseAbs().maxCoeff();
    if (scale == 0.0) continue;
    for (Index i = 0; i < col.size(); ++i) {
      if (std::abs(col(i)) > 1e-8 * scale) {
        if (col(i) < 0.0) col = -col;
        break;
      }
    }
  }
}

namespace detail {

/// Pick the `m` largest of `values`, ties kept in original index order.
inline std::vector<Index> top_indices(const Vector& values, Index m) {
  std::vector<Index> order(static_cast<std::size_t>(values.size()));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](Index a, Index b) { return values(a) > values(b); });
  order.resize(static_cast<std::size_t>(m));
  return order;
}

}  // namespace detail

/// All eigenpairs of a dense symmetric matrix, nonincreasing.
inline EigenPairs dense_eigenpairs(const Matrix& a) {
  require_shape(a.rows() == a.cols(), "dense_eigenpairs: matrix must be square, got " + shape_str(a));
  Eigen::SelfAdjointEigenSolver<Matrix> solver(a);
  if (solver.info() != Eigen::Success) {
    throw ConvergenceError("dense_eigenpairs: eigensolver failed", Vector(), 0.0);
  }
  // Eigen returns ascending order; reverse it.
  EigenPairs out;
  out.values = solver.eigenvalues().reverse();
  out.vectors = solver.eigenvectors().rowwise().reverse();
  canonicalize_signs(out.vectors);
  return out;
}

inline EigenPairs dense_top_eigenpairs(const Matrix& a, Index m) {
  require_shape(m >= 1 && m <= a.rows(), "dense_top_eigenpairs: m out of range");
  Eigen::SelfAdjointEigenSolver<Matrix> solver(a);
  if (solver.info() != Eigen::Success) {
    throw ConvergenceError("dense_top_eigenpairs: eigensolver failed", Vector(), 0.0);
  }
  const auto order = detail::top_indices(solver.eigenvalues(), m);
  EigenPairs out{Vector(m), Matrix(a.rows(), m)};
  for (Index j = 0; j < m; ++j) {
    out.values(j) = solver.eigenvalues()(order[static_cast<std::size_t>(j)]);
    out.vectors.col(j) = solver.eigenvectors().col(order[static_cast<std::size_t>(j)]);
  }
  canonicalize_signs(out.vectors);
  return out;
}

struct LanczosOptions {
  double tolerance = 1e-10;  // residual bound relative to the largest Ritz value
  Index max_dim = 0;         // Krylov dimension cap; 0 means n
  std::uint64_t seed = 0x1a2c05;
};

/// Top-m eigenpairs of a symmetric operator given only as a matrix-vector
/// product. Lanczos with full reorthogonalisation; the Krylov space grows
/// until every wanted Ritz pair has residual below tolerance * |theta_max|.
inline EigenPairs lanczos_top_m(const MatVec& apply, Index n, Index m,
                                const LanczosOptions& opts = {}) {
  if (n < 1 || m < 1 || m > n) {
    throw ShapeError("lanczos_top_m: need 1 <= m <= n");
  }
  const Index cap = opts.max_dim > 0 ? std::min(opts.max_dim, n) : n;
  rng::CounterRng gen(opts.seed, "lanczos-start", {static_cast<std::uint64_t>(n)});

  Matrix basis(n, std::min<Index>(cap, 64));
  std::vector<double> alpha;
  std::vector<double> beta;  // beta[j] couples basis j and j+1

  auto orthogonalize = [&](Vector& v, Index k) {
    // Two passes of classical Gram-Schmidt.
    for (int pass = 0; pass < 2; ++pass) {
      if (k > 0) v -= basis.leftCols(k) * (basis.leftCols(k).transpose() * v);
    }
  };
  auto fresh_direction = [&](Index k) -> Vector {
    for (int attempt = 0; attempt < 8; ++attempt) {
      Vector v(n);
      for (Index i = 0; i < n; ++i) v(i) = gen.normal();
      orthogonalize(v, k);
      const double nv = v.norm();
      if (nv > 1e-8) return v / nv;
    }
    return Vector();
  };

  Vector q(n);
  for (Index i = 0; i < n; ++i) q(i) = 1.0 + 0.1 * gen.normal();
  q.normalize();
  Vector w(n);
  Index k = 0;
  EigenPairs result;
  double last_residual = 0.0;

  const auto ritz = [&](Index dim, Eigen::SelfAdjointEigenSolver<Matrix>& solver) {
    Matrix t = Matrix::Zero(dim, dim);
    for (Index i = 0; i < dim; ++i) {
      t(i, i) = alpha[static_cast<std::size_t>(i)];
      if (i + 1 < dim) {
        t(i, i + 1) = beta[static_cast<std::size_t>(i)];
        t(i + 1, i) = beta[static_cast<std::size_t>(i)];
      }
    }
    solver.compute(t);
  };

  while (k < cap) {
    if (basis.cols() <= k) basis.conservativeResize(Eigen::NoChange, std::min<Index>(cap, 2 * basis.cols()));
    basis.col(k) = q;
    apply(q, w);
    const double a = q.dot(w);
    alpha.push_back(a);
    orthogonalize(w, k + 1);
    double b = w.norm();
    ++k;

    // Ritz estimates are only trusted inside a live Krylov block; after an
    // invariant subspace the restart may still uncover larger eigenvalues.
    const bool check = k >= m && b >= 1e-12;
    if (check || k == cap) {
      Eigen::SelfAdjointEigenSolver<Matrix> solver;
      ritz(k, solver);
      const Vector& theta = solver.eigenvalues();
      const double scale = std::max(std::abs(theta(0)), std::abs(theta(k - 1)));
      bool converged = k >= m;
      last_residual = 0.0;
      if (converged) {
        const auto order = detail::top_indices(theta, m);
        for (Index j : order) {
          const double r = std::abs(b * solver.eigenvectors()(k - 1, j));
          last_residual = std::max(last_residual, r);
          if (r > opts.tolerance * std::max(scale, 1e-300)) converged = false;
        }
        if (converged || k == cap) {
          result.values.resize(m);
          result.vectors = Matrix(n, m);
          for (Index j = 0; j < m; ++j) {
            const Index idx = order[static_cast<std::size_t>(j)];
            result.values(j) = theta(idx);
            result.vectors.col(j) = (basis.leftCols(k) * solver.eigenvectors().col(idx)).normalized();
          }
        }
      }
      if (converged) break;
      if (k == cap) {
        if (cap == n) break;  // exact up to round-off
        throw ConvergenceError("lanczos_top_m: Krylov dimension cap reached",
                               result.vectors.size() ? Vector(result.vectors.col(0)) : Vector(q),
                               last_residual);
      }
    }

    if (b < 1e-12) {
      // Invariant subspace: restart in the orthogonal complement.
      beta.push_back(0.0);
      q = fresh_direction(k);
      if (q.size() == 0) break;
    } else {
      beta.push_back(b);
      q = w / b;
    }
  }
  if (result.values.size() != m) {
    throw ConvergenceError("lanczos_top_m: failed to resolve requested eigenpairs", q, last_residual);
  }
  canonicalize_signs(result.vectors);
  return result;
}

/// Dense solve at or below this dimension, Lanczos above.
inline constexpr Index kDenseEigenLimit = 512;

inline EigenPairs top_eigenpairs(const Matrix& a, Index m) {
  if (a.rows() <= kDenseEigenLimit) return dense_top_eigenpairs(a, m);
  return lanczos_top_m([&](const Vector& x, Vector& y) { y.noalias() = a.selfadjointView<Eigen::Lower>() * x; },
                       a.rows(), m);
}

struct PowerOptions {
  int max_iterations = 10000;
  double tolerance = 1e-10;
};

/// Spectral norm of a symmetric operator by power iteration, started from the
/// normalised all-ones vector. Iterates v <- Av/|Av| and stops when the
/// Rayleigh quotient of A^2, |Av|^2, changes by less than tolerance
/// (relative). Using A^2 makes +/- lambda pairs converge.
inline double power_norm(const MatVec& apply, Index n, const PowerOptions& opts = {}) {
  Vector v = Vector::Ones(n) / std::sqrt(static_cast<double>(n));
  Vector w(n);
  double previous = -1.0;
  for (int it = 0; it < opts.max_iterations; ++it) {
    apply(v, w);
    const double norm = w.norm();
    if (norm == 0.0) {
      if (it == 0) {
        // The start vector may lie in the null space; try once more from a
        // generic vector before declaring the operator zero.
        rng::CounterRng gen(0x5eed, "power-restart", {static_cast<std::uint64_t>(n)});
        for (Index i = 0; i < n; ++i) v(i) = gen.normal();
        v.normalize();
        apply(v, w);
        if (w.norm() == 0.0) return 0.0;
        continue;
      }
      return 0.0;
    }
    const double rq = norm * norm;
    if (previous >= 0.0 && std::abs(rq - previous) <= opts.tolerance * rq) {
      return norm;
    }
    previous = rq;
    v = w / norm;
  }
  throw ConvergenceError("power_norm: no convergence within iteration cap", v,
                         std::sqrt(std::max(previous, 0.0)));
}

/// Orthonormal basis of the column span.
inline Matrix orthonormal_basis(const Matrix& a) {
  Eigen::HouseholderQR<Matrix> qr(a);
  return qr.householderQ() * Matrix::Identity(a.rows(), a.cols());
}

/// Sine of the largest principal angle between span(a) and span(b).
/// Computed as |(I - Qa Qa^T) Qb|_2, which stays accurate for tiny angles.
inline double max_principal_angle_sin(const Matrix& a, const Matrix& b) {
  require_shape(a.rows() == b.rows() && a.cols() == b.cols(),
                "max_principal_angle_sin: bases must have equal shape");
  const Matrix qa = orthonormal_basis(a);
  const Matrix qb = orthonormal_basis(b);
  const Matrix residual = qb - qa * (qa.transpose() * qb);
  Eigen::JacobiSVD<Matrix> svd(residual);
  return svd.singularValues().size() ? svd.singularValues()(0) : 0.0;
}

inline double symmetric_spectral_norm(const Matrix& a) {
  if (a.rows() <= kDenseEigenLimit) {
    Eigen::SelfAdjointEigenSolver<Matrix> solver(a, Eigen::EigenvaluesOnly);
    return solver.eigenvalues().cwiseAbs().maxCoeff();
  }
  return power_norm([&](const Vector& x, Vector& y) { y.noalias() = a * x; }, a.rows());
}

}  // namespace fedrf
