#pragma once

// Transfer component analysis: the vanilla, regularised (R-TCA) and
// random-features (RF-TCA) solvers.
//
// Every solver works on a symmetric reduction of its generalised eigenproblem
// so that a plain symmetric eigensolver (dense or Lanczos) applies:
//
//   vanilla   A   = H (K^2 - K^2 l l^T K^2 / (gamma + l^T K^2 l)) H
//   R-TCA     A_R = (1/gamma) H (K - K l l^T K / (gamma + l^T K l)) H
//   RF-TCA    R S R with S = Sigma H Sigma^T and R = I + c u u^T, u = Sigma l
//
// where the rank-one inverses are applied in closed form (Sherman-Morrison).
// Projectors are returned with unit-norm columns; the W^T K H K W = I
// scaling of the constrained problem is not applied.

#include "fedrf/core.hpp"
#include "fedrf/kernel_rff.hpp"
#include "fedrf/linalg.hpp"

#include <limits>
#include <string>
#include <vector>

namespace fedrf {

/// l_i = 1/n_S on source positions, -1/n_T on target positions.
struct LabelVector {
  Vector values;
  std::size_t n_source = 0;
  std::size_t n_target = 0;

  std::size_t size() const noexcept { return n_source + n_target; }
};

inline LabelVector label_vector(std::size_t n_source, std::size_t n_target) {
  if (n_source < 1 || n_target < 1) throw InvalidInputError("label_vector: n_S and n_T must be >= 1");
  LabelVector ell{Vector(static_cast<Index>(n_source + n_target)), n_source, n_target};
  ell.values.head(static_cast<Index>(n_source)).setConstant(1.0 / static_cast<double>(n_source));
  ell.values.tail(static_cast<Index>(n_target)).setConstant(-1.0 / static_cast<double>(n_target));
  return ell;
}

enum class TcaVariant { vanilla, regularized, random_features };

struct TcaConfig {
  double gamma = 1.0;
  std::size_t m = 10;
  TcaVariant variant = TcaVariant::vanilla;
  bool ridge_lift = true;  // R-TCA only: lift near-singular K by 1e-10 |K|_2 I
};

struct TcaSolution {
  Matrix projector;         // n x m (vanilla, R-TCA) or 2N x m (RF-TCA)
  Vector eigenvalues;       // nonincreasing
  Matrix aligned_features;  // m x n, projector^T K or projector^T Sigma
  bool degenerate_cut = false;
  std::vector<std::string> warnings;
};

/// (gamma I + K l l^T K)^{-1} v = (1/gamma)(v - K l (l^T K v) / (gamma + l^T K^2 l)).
inline Vector sherman_morrison_inv_apply(const Matrix& k, const LabelVector& ell, double gamma, const Vector& v) {
  require_shape(k.rows() == k.cols() && k.rows() == ell.values.size() && v.size() == k.rows(),
                "sherman_morrison_inv_apply: dimension mismatch");
  if (!(gamma > 0.0)) throw SingularityError("sherman_morrison_inv_apply: gamma must be > 0");
  const Vector kl = k * ell.values;
  const double denom = gamma + kl.squaredNorm();
  if (denom == 0.0) throw SingularityError("sherman_morrison_inv_apply: gamma + l^T K^2 l = 0");
  return (v - kl * (kl.dot(v) / denom)) / gamma;
}

/// Relative eigen-gap: min_{i<=m} |lambda_i - lambda_{i+1}| / norm_k.
inline double eigen_gap(const Vector& eigenvalues, std::size_t m, double norm_k) {
  if (m < 1 || static_cast<Index>(m) + 1 > eigenvalues.size()) {
    throw InvalidInputError("eigen_gap: need at least m+1 eigenvalues");
  }
  if (!(norm_k > 0.0)) throw InvalidInputError("eigen_gap: norm must be > 0");
  double gap = std::numeric_limits<double>::infinity();
  for (Index i = 0; i < static_cast<Index>(m); ++i) {
    gap = std::min(gap, std::abs(eigenvalues(i) - eigenvalues(i + 1)));
  }
  return gap / norm_k;
}

struct RegularizationBounds {
  double lower = 0.0;
  double upper = 0.0;
  double value = 0.0;  // the nonzero eigenvalue l^T K^4 l / (gamma + l^T K^2 l) of the rank-one term
};

inline RegularizationBounds regularization_bounds(const Matrix& k, const LabelVector& ell, double gamma) {
  require_shape(k.rows() == k.cols() && k.rows() == ell.values.size(), "regularization_bounds: dimension mismatch");
  if (gamma < 0.0) throw InvalidInputError("regularization_bounds: gamma must be >= 0");
  Eigen::SelfAdjointEigenSolver<Matrix> solver(k, Eigen::EigenvaluesOnly);
  const double lmin = std::max(0.0, solver.eigenvalues().minCoeff());
  const double lmax = solver.eigenvalues().maxCoeff();
  const Vector kl = k * ell.values;
  const Vector k2l = k * kl;
  const double l_k2_l = kl.squaredNorm();
  const double l_k4_l = k2l.squaredNorm();
  const double denom = gamma + l_k2_l;
  if (denom == 0.0) throw SingularityError("regularization_bounds: gamma + l^T K^2 l = 0");
  const auto n = static_cast<double>(ell.size());
  const double ns_nt = static_cast<double>(ell.n_source) * static_cast<double>(ell.n_target);
  auto bound = [&](double lam) {
    const double l2 = lam * lam;
    const double d = gamma * ns_nt + l2 * n;
    return d == 0.0 ? 0.0 : l2 * l2 * n / d;
  };
  return {bound(lmin), bound(lmax), l_k4_l / denom};
}

/// gamma in [l^T K^2 l / 10, 10 l^T K^2 l] is where the rank-one MMD term and
/// the regulariser trade off; outside it the solution barely moves with gamma.
struct GammaInterval {
  double low = 0.0;
  double high = 0.0;
};

inline GammaInterval sensitive_gamma_interval(const Matrix& k, const LabelVector& ell) {
  const double l_k2_l = (k * ell.values).squaredNorm();
  return {0.1 * l_k2_l, 10.0 * l_k2_l};
}

/// gamma = 1/n for balanced splits, 1 when one side is tiny (min(n_S, n_T) <= sqrt n).
inline double default_gamma(std::size_t n_source, std::size_t n_target) {
  const auto n = static_cast<double>(n_source + n_target);
  const auto smaller = static_cast<double>(std::min(n_source, n_target));
  return smaller <= std::sqrt(n) ? 1.0 : 1.0 / n;
}

/// L_gamma(W) = tr(W^T K l l^T K W) + gamma tr(W^T W).
inline double tca_objective(const Matrix& k, const LabelVector& ell, const Matrix& w, double gamma) {
  const Vector proj = w.transpose() * (k * ell.values);
  return proj.squaredNorm() + gamma * w.squaredNorm();
}

/// L~_gamma(W) = tr(W^T K l l^T K W) + gamma tr(W^T K W).
inline double r_tca_objective(const Matrix& k, const LabelVector& ell, const Matrix& w, double gamma) {
  const Vector proj = w.transpose() * (k * ell.values);
  return proj.squaredNorm() + gamma * (w.transpose() * k * w).trace();
}

namespace detail {

inline void check_tca_inputs(const Matrix& k, const LabelVector& ell, const TcaConfig& cfg, const char* who) {
  require_shape(k.rows() == k.cols(), std::string(who) + ": K must be square, got " + shape_str(k));
  require_shape(k.rows() == ell.values.size(), std::string(who) + ": K and label vector disagree on n");
  require_finite(k, who);
  if (cfg.m < 1 || static_cast<Index>(cfg.m) > k.rows() - 1) {
    throw InvalidInputError(std::string(who) + ": need 1 <= m <= n-1");
  }
  if (cfg.gamma < 0.0) throw InvalidInputError(std::string(who) + ": gamma must be >= 0");
}

/// Top m+1 eigenpairs so the cut gap can be inspected, then trimmed.
inline EigenPairs solve_with_gap(const Matrix* dense, const MatVec* op, Index n, Index m, TcaSolution& sol) {
  const Index want = std::min(m + 1, n);
  EigenPairs pairs = dense ? top_eigenpairs(*dense, want) : lanczos_top_m(*op, n, want);
  if (want > m) {
    const double scale = std::max(1.0, std::abs(pairs.values(0)));
    if (std::abs(pairs.values(m - 1) - pairs.values(m)) < 1e-12 * scale) {
      sol.degenerate_cut = true;
      sol.warnings.emplace_back("degenerate subspace: eigenvalues " + std::to_string(m) + " and " +
                                std::to_string(m + 1) + " coincide; the eigen-gap bound is vacuous");
    }
  }
  pairs.values.conservativeResize(m);
  pairs.vectors.conservativeResize(Eigen::NoChange, m);
  return pairs;
}

inline void normalize_columns(Matrix& w) {
  for (Index j = 0; j < w.cols(); ++j) {
    const double nrm = w.col(j).norm();
    if (nrm > 0.0) w.col(j) /= nrm;
  }
}

}  // namespace detail

/// Vanilla TCA through the Lemma-1 reduction; eigenvalues are those of A.
/// The projector W solves (gamma I + K l l^T K)^{-1} K H K W = W Lambda and is
/// recovered from an eigenvector u of A as W ~ (I - K l l^T K / c) K H u.
inline TcaSolution vanilla_tca(const Matrix& k, const LabelVector& ell, const TcaConfig& cfg) {
  detail::check_tca_inputs(k, ell, cfg, "vanilla_tca");
  const Index n = k.rows();
  const auto m = static_cast<Index>(cfg.m);
  const Vector kl = k * ell.values;
  const Vector k2l = k * kl;
  const double denom = cfg.gamma + kl.squaredNorm();
  if (denom == 0.0) throw SingularityError("vanilla_tca: gamma + l^T K^2 l = 0");

  TcaSolution sol;
  EigenPairs pairs;
  if (n <= kDenseEigenLimit) {
    Matrix a = k * k;
    a.noalias() -= k2l * k2l.transpose() / denom;
    a = center(a, CenterMode::both);
    a = 0.5 * (a + a.transpose());
    pairs = detail::solve_with_gap(&a, nullptr, n, m, sol);
  } else {
    const MatVec op = [&](const Vector& v, Vector& out) {
      const Vector hv = v.array() - v.mean();
      Vector y = k * (k * hv);
      y -= k2l * (k2l.dot(hv) / denom);
      out = y.array() - y.mean();
    };
    pairs = detail::solve_with_gap(nullptr, &op, n, m, sol);
  }

  Matrix hu = center(pairs.vectors, CenterMode::rows);
  Matrix w = k * hu;
  w.noalias() -= kl * (kl.transpose() * w) / denom;
  detail::normalize_columns(w);
  canonicalize_signs(w);
  sol.projector = std::move(w);
  sol.eigenvalues = std::move(pairs.values);
  sol.aligned_features = sol.projector.transpose() * k;
  return sol;
}

/// R-TCA: top eigenpairs of A_R; W_R ~ (I - l l^T K / (gamma + l^T K l)) H u.
inline TcaSolution r_tca(const Matrix& k_in, const LabelVector& ell, const TcaConfig& cfg) {
  detail::check_tca_inputs(k_in, ell, cfg, "r_tca");
  if (!(cfg.gamma > 0.0)) throw InvalidInputError("r_tca: gamma must be > 0");
  const Index n = k_in.rows();
  const auto m = static_cast<Index>(cfg.m);

  TcaSolution sol;
  Matrix k = k_in;
  if (n <= kDenseEigenLimit) {
    Eigen::SelfAdjointEigenSolver<Matrix> spectrum(k, Eigen::EigenvaluesOnly);
    const double lmax = spectrum.eigenvalues().maxCoeff();
    const double lmin = spectrum.eigenvalues().minCoeff();
    if (lmin <= 1e-10 * lmax) {
      if (!cfg.ridge_lift) throw SingularityError("r_tca: K is numerically singular and ridge lift is disabled");
      k.diagonal().array() += 1e-10 * lmax;
      sol.warnings.emplace_back("r_tca: near-singular K lifted by 1e-10 |K|_2 I");
    }
  }

  const Vector kl = k * ell.values;
  const double denom = cfg.gamma + ell.values.dot(kl);
  if (denom == 0.0) throw SingularityError("r_tca: gamma + l^T K l = 0");

  EigenPairs pairs;
  if (n <= kDenseEigenLimit) {
    Matrix a = k - kl * kl.transpose() / denom;
    a = center(a, CenterMode::both) / cfg.gamma;
    a = 0.5 * (a + a.transpose());
    pairs = detail::solve_with_gap(&a, nullptr, n, m, sol);
  } else {
    const MatVec op = [&](const Vector& v, Vector& out) {
      const Vector hv = v.array() - v.mean();
      Vector y = k * hv;
      y -= kl * (kl.dot(hv) / denom);
      out = (y.array() - y.mean()) / cfg.gamma;
    };
    pairs = detail::solve_with_gap(nullptr, &op, n, m, sol);
  }

  Matrix w = center(pairs.vectors, CenterMode::rows);
  w.noalias() -= ell.values * (kl.transpose() * w) / denom;
  detail::normalize_columns(w);
  canonicalize_signs(w);
  sol.projector = std::move(w);
  sol.eigenvalues = std::move(pairs.values);
  sol.aligned_features = sol.projector.transpose() * k;
  return sol;
}

/// RF-TCA on a precomputed RFF matrix (2N x n, source columns first).
/// Eigenvectors of Sigma H Sigma^T - Sigma l l^T Sigma^T Sigma H Sigma^T / (gamma + l^T Sigma^T Sigma l),
/// i.e. R^2 S with S = Sigma H Sigma^T. Only 2N x 2N matrices are formed.
inline TcaSolution rf_tca(const Matrix& sigma, const LabelVector& ell, const TcaConfig& cfg) {
  require_shape(sigma.cols() == ell.values.size(), "rf_tca: RFF matrix and label vector disagree on n");
  require_finite(sigma, "rf_tca");
  const Index dim = sigma.rows();
  const Index n = sigma.cols();
  const auto m = static_cast<Index>(cfg.m);
  if (m < 1 || m > std::min(dim, n)) throw InvalidInputError("rf_tca: need 1 <= m <= min(2N, n)");
  if (cfg.gamma < 0.0) throw InvalidInputError("rf_tca: gamma must be >= 0");

  const Vector u = sigma * ell.values;
  const double uu = u.squaredNorm();
  if (cfg.gamma + uu == 0.0) throw SingularityError("rf_tca: gamma + l^T Sigma^T Sigma l = 0");
  // R = I + c u u^T is the symmetric square root of gamma (gamma I + u u^T)^{-1};
  // at gamma = 0 it degenerates to the projector onto u's complement.
  double c = 0.0;
  if (uu > 0.0) {
    c = cfg.gamma > 0.0 ? (1.0 / std::sqrt(1.0 + uu / cfg.gamma) - 1.0) / uu : -1.0 / uu;
  }
  const Vector mean = sigma.rowwise().mean();
  auto apply_r = [&](const Vector& v) -> Vector { return v + u * (c * u.dot(v)); };

  TcaSolution sol;
  EigenPairs pairs;
  if (dim <= kDenseEigenLimit) {
    Matrix s(dim, dim);
    s.setZero();
    s.selfadjointView<Eigen::Lower>().rankUpdate(sigma);
    s = s.selfadjointView<Eigen::Lower>();
    s.noalias() -= static_cast<double>(n) * mean * mean.transpose();
    // R S R with R = I + c u u^T.
    const Vector su = s * u;
    const double usu = u.dot(su);
    Matrix rsr = s;
    rsr.noalias() += c * (u * su.transpose() + su * u.transpose());
    rsr.noalias() += (c * c * usu) * u * u.transpose();
    rsr = 0.5 * (rsr + rsr.transpose());
    pairs = detail::solve_with_gap(&rsr, nullptr, dim, m, sol);
  } else {
    const MatVec op = [&](const Vector& v, Vector& out) {
      const Vector rv = apply_r(v);
      const Vector t = sigma.transpose() * rv;
      Vector st = sigma * t;
      st -= static_cast<double>(n) * mean * mean.dot(rv);
      out = apply_r(st);
    };
    pairs = detail::solve_with_gap(nullptr, &op, dim, m, sol);
  }

  Matrix w(dim, m);
  for (Index j = 0; j < m; ++j) w.col(j) = apply_r(pairs.vectors.col(j));
  detail::normalize_columns(w);
  canonicalize_signs(w);
  sol.projector = std::move(w);
  sol.eigenvalues = std::move(pairs.values);
  sol.aligned_features = sol.projector.transpose() * sigma;
  return sol;
}

/// RF-TCA from raw source and target features (Alg. "RF-TCA" end to end).
inline TcaSolution rf_tca(const FeatureMatrix& x_source, const FeatureMatrix& x_target, const KernelConfig& kcfg,
                          const TcaConfig& cfg) {
  require_shape(x_source.dim() == x_target.dim(), "rf_tca: source and target dimensions differ");
  if (cfg.m > kcfg.n_features) throw InvalidInputError("rf_tca: need N >= m");
  const RffProjection proj = make_projection(kcfg, x_source.dim());
  Matrix x(x_source.dim(), x_source.samples() + x_target.samples());
  x << x_source.data, x_target.data;
  const Matrix sigma = rff_map(x, proj);
  const LabelVector ell =
      label_vector(static_cast<std::size_t>(x_source.samples()), static_cast<std::size_t>(x_target.samples()));
  return rf_tca(sigma, ell, cfg);
}

}  // namespace fedrf
