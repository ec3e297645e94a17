#pragma once

// Gaussian kernels, random Fourier feature maps, centring, and the spectral
// diagnostics used to compare the RFF Gram matrix with the exact kernel.

#include "fedrf/core.hpp"
#include "fedrf/linalg.hpp"
#include "fedrf/random.hpp"

#include <algorithm>
#include <string>
#include <vector>

namespace fedrf {

/// Columns are samples: p x n.
struct FeatureMatrix {
  Matrix data;
  std::string domain_tag;

  Index dim() const noexcept { return data.rows(); }
  Index samples() const noexcept { return data.cols(); }
};

struct KernelConfig {
  double sigma = 1.0;
  std::size_t n_features = 1000;  // N; the RFF matrix has 2N rows
  std::uint64_t seed = 0;

  void validate() const {
    if (!(sigma > 0.0) || !std::isfinite(sigma)) throw InvalidInputError("KernelConfig: sigma must be > 0");
    if (n_features < 1) throw InvalidInputError("KernelConfig: n_features must be >= 1");
  }
};

/// Omega, N x p, entries i.i.d. N(0, 1/sigma^2).
struct RffProjection {
  Matrix omega;
  std::uint64_t seed = 0;
  double sigma = 1.0;

  Index n_features() const noexcept { return omega.rows(); }
  Index input_dim() const noexcept { return omega.cols(); }
};

/// K_ij = exp(-|x_i - x_j|^2 / (2 sigma^2)).
inline Matrix gaussian_kernel(const Matrix& x, double sigma) {
  if (!(sigma > 0.0)) throw InvalidInputError("gaussian_kernel: sigma must be > 0");
  require_finite(x, "gaussian_kernel");
  const Index n = x.cols();
  const Vector sq = x.colwise().squaredNorm().transpose();
  Matrix gram = x.transpose() * x;
  const double inv = 1.0 / (2.0 * sigma * sigma);
  Matrix k(n, n);
  for (Index j = 0; j < n; ++j) {
    k(j, j) = 1.0;
    for (Index i = j + 1; i < n; ++i) {
      const double d2 = std::max(0.0, sq(i) + sq(j) - 2.0 * gram(i, j));
      const double v = std::exp(-d2 * inv);
      k(i, j) = v;
      k(j, i) = v;
    }
  }
  return k;
}

inline Matrix gaussian_kernel(const FeatureMatrix& x, double sigma) { return gaussian_kernel(x.data, sigma); }

/// Deterministic in (seed, N, p, sigma): entry (r, c) is the (r*p + c)-th
/// normal of the stream keyed by (seed, "rff-omega", N, p).
inline RffProjection make_projection(const KernelConfig& cfg, Index p) {
  cfg.validate();
  if (p < 1) throw InvalidInputError("make_projection: p must be >= 1");
  const auto n_feat = static_cast<Index>(cfg.n_features);
  const rng::CounterRng stream(cfg.seed, "rff-omega",
                               {static_cast<std::uint64_t>(n_feat), static_cast<std::uint64_t>(p)});
  RffProjection proj{Matrix(n_feat, p), cfg.seed, cfg.sigma};
  const double scale = 1.0 / cfg.sigma;
  for (Index r = 0; r < n_feat; ++r) {
    for (Index c = 0; c < p; ++c) {
      proj.omega(r, c) = scale * stream.normal_at(static_cast<std::uint64_t>(r * p + c));
    }
  }
  return proj;
}

/// Sigma = (1/sqrt N) [cos(Omega X); sin(Omega X)], 2N x n.
inline Matrix rff_map(const Matrix& x, const RffProjection& proj) {
  require_shape(x.rows() == proj.input_dim(),
                "rff_map: input has " + std::to_string(x.rows()) + " rows, projection expects " +
                    std::to_string(proj.input_dim()));
  const Index n_feat = proj.n_features();
  const Matrix u = proj.omega * x;
  const double scale = 1.0 / std::sqrt(static_cast<double>(n_feat));
  Matrix sigma(2 * n_feat, x.cols());
  for (Index j = 0; j < u.cols(); ++j) {
    for (Index i = 0; i < n_feat; ++i) {
      double s = 0.0, c = 0.0;
      ::sincos(u(i, j), &s, &c);
      sigma(i, j) = scale * c;
      sigma(n_feat + i, j) = scale * s;
    }
  }
  return sigma;
}

inline Matrix rff_map(const FeatureMatrix& x, const RffProjection& proj) { return rff_map(x.data, proj); }

/// |A - B|_2 for symmetric A, B via power iteration on the difference.
inline double spectral_error(const Matrix& a, const Matrix& b, const PowerOptions& opts = {}) {
  require_shape(a.rows() == a.cols() && a.rows() == b.rows() && a.cols() == b.cols(),
                "spectral_error: shapes " + shape_str(a) + " and " + shape_str(b));
  const Matrix diff = a - b;
  const double scale = std::max(1.0, diff.cwiseAbs().maxCoeff());
  if ((diff - diff.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale) {
    throw InvalidInputError("spectral_error: inputs must be symmetric");
  }
  return power_norm([&](const Vector& v, Vector& out) { out.noalias() = diff * v; }, diff.rows(), opts);
}

/// dim(K) = tr K / |K|_2.
inline double intrinsic_dim(const Matrix& k) {
  require_shape(k.rows() == k.cols(), "intrinsic_dim: matrix must be square");
  const double norm = symmetric_spectral_norm(k);
  if (!(norm > 0.0)) throw InvalidInputError("intrinsic_dim: zero matrix");
  return k.trace() / norm;
}

enum class CenterMode { rows, both };

/// rows: H M (every column minus its mean); both: H M H.
inline Matrix center(const Matrix& m, CenterMode mode = CenterMode::rows) {
  if (m.rows() < 1) throw InvalidInputError("center: need at least one row");
  Matrix out = m.rowwise() - m.colwise().mean();
  if (mode == CenterMode::both) {
    require_shape(m.rows() == m.cols(), "center(both): matrix must be square");
    out = out.colwise() - out.rowwise().mean();
  }
  return out;
}

/// Median pairwise Euclidean distance over a deterministic subsample of at
/// most `max_samples` columns.
inline double median_bandwidth(const Matrix& x, std::size_t max_samples = 256, std::uint64_t seed = 0) {
  require_finite(x, "median_bandwidth");
  const auto n = static_cast<std::size_t>(x.cols());
  if (n < 2) throw InvalidInputError("median_bandwidth: need at least two samples");
  rng::CounterRng gen(seed, "median-bandwidth", {n});
  std::vector<std::size_t> idx = gen.sample_without_replacement(n, std::min(n, max_samples));
  std::sort(idx.begin(), idx.end());
  std::vector<double> dists;
  dists.reserve(idx.size() * (idx.size() - 1) / 2);
  for (std::size_t a = 0; a < idx.size(); ++a) {
    for (std::size_t b = a + 1; b < idx.size(); ++b) {
      dists.push_back((x.col(static_cast<Index>(idx[a])) - x.col(static_cast<Index>(idx[b]))).norm());
    }
  }
  auto mid = dists.begin() + static_cast<std::ptrdiff_t>(dists.size() / 2);
  std::nth_element(dists.begin(), mid, dists.end());
  const double med = *mid;
  if (!(med > 0.0)) throw InvalidInputError("median_bandwidth: all sampled points coincide");
  return med;
}

}  // namespace fedrf
