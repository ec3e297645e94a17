#pragma once

// Random-feature MMD between one source and the target, as exchanged in the
// federated protocol: |W^T (Sigma_S l_S + Sigma_T l_T)|^2. Each side only ever
// ships its signed batch mean, a 2N vector.

#include "fedrf/core.hpp"
#include "fedrf/kernel_rff.hpp"

namespace fedrf {

enum class Side { source, target };

/// +1 for source batches, -1 for target batches.
inline double side_sign(Side side) noexcept { return side == Side::source ? 1.0 : -1.0; }

struct MmdBatch {
  Vector summed_source;  // + mean of source-batch RFF columns
  Vector summed_target;  // - mean of target-batch RFF columns

  Vector discrepancy() const {
    require_shape(summed_source.size() == summed_target.size(), "MmdBatch: summed vectors differ in length");
    return summed_source + summed_target;
  }
};

struct LossWeights {
  double lambda = 1.0;
};

/// Sigma l for a batch: the signed column mean of its RFF matrix.
inline Vector summed_feature(const Matrix& sigma, Side side) {
  if (sigma.cols() < 1) throw InvalidInputError("summed_feature: empty batch");
  return side_sign(side) * sigma.rowwise().mean();
}

inline double mmd_loss(const Vector& d, const Matrix& w) {
  require_shape(d.size() == w.rows(), "mmd_loss: discrepancy length " + std::to_string(d.size()) +
                                          " does not match W " + shape_str(w));
  return (w.transpose() * d).squaredNorm();
}

inline double mmd_loss(const MmdBatch& batch, const Matrix& w) { return mmd_loss(batch.discrepancy(), w); }

/// d/dW |W^T d|^2 = 2 d d^T W.
inline Matrix mmd_grad_W(const MmdBatch& batch, const Matrix& w) {
  const Vector d = batch.discrepancy();
  require_shape(d.size() == w.rows(), "mmd_grad_W: shape mismatch");
  return 2.0 * d * (d.transpose() * w);
}

/// d/dd |W^T d|^2 = 2 W W^T d.
inline Vector mmd_grad_discrepancy(const Vector& d, const Matrix& w) {
  require_shape(d.size() == w.rows(), "mmd_grad_discrepancy: shape mismatch");
  return 2.0 * w * (w.transpose() * d);
}

/// Pull a gradient on the RFF matrix (2N x b) back to the inputs (p x b).
/// With U = Omega X: dU = (1/sqrt N)(-sin U .* G_cos + cos U .* G_sin), dX = Omega^T dU.
inline Matrix rff_backward(const RffProjection& proj, const Matrix& x, const Matrix& grad_sigma) {
  const Index n_feat = proj.n_features();
  require_shape(x.rows() == proj.input_dim() && grad_sigma.rows() == 2 * n_feat && grad_sigma.cols() == x.cols(),
                "rff_backward: shape mismatch");
  const Matrix u = proj.omega * x;
  const double scale = 1.0 / std::sqrt(static_cast<double>(n_feat));
  const Matrix du =
      scale * (u.array().cos() * grad_sigma.bottomRows(n_feat).array() -
               u.array().sin() * grad_sigma.topRows(n_feat).array())
                  .matrix();
  return proj.omega.transpose() * du;
}

/// Gradient of |W^T d|^2 with respect to the features of the batch on `side`.
/// Each column enters its summed vector with weight +-1/b.
inline Matrix mmd_grad_features(const MmdBatch& batch, const Matrix& w, const RffProjection& proj,
                                const Matrix& x_batch, Side side) {
  const Vector d = batch.discrepancy();
  require_shape(d.size() == 2 * proj.n_features(), "mmd_grad_features: W rows must equal 2N");
  if (x_batch.cols() < 1) throw InvalidInputError("mmd_grad_features: empty batch");
  const Vector gd = mmd_grad_discrepancy(d, w) * (side_sign(side) / static_cast<double>(x_batch.cols()));
  const Matrix grad_sigma = gd.replicate(1, x_batch.cols());
  return rff_backward(proj, x_batch, grad_sigma);
}

inline Matrix mmd_grad_features(const MmdBatch& batch, const Matrix& w, const RffProjection& proj,
                                const FeatureMatrix& x_batch, Side side) {
  return mmd_grad_features(batch, w, proj, x_batch.data, side);
}

/// L_S = L_C + lambda L_MMD.
inline double source_loss(double classif_loss, double mmd, const LossWeights& w) {
  if (!std::isfinite(classif_loss) || !std::isfinite(mmd)) throw InvalidInputError("source_loss: non-finite component");
  if (w.lambda < 0.0) throw InvalidInputError("source_loss: lambda must be >= 0");
  return classif_loss + w.lambda * mmd;
}

}  // namespace fedrf
