#pragma once

// Local learners: an MLP feature extractor G, the adaptive layer W_RF on top
// of the random features, and a softmax classifier C, plus SGD and the joint
// backward pass of the hybrid loss.

#include "fedrf/core.hpp"
#include "fedrf/kernel_rff.hpp"
#include "fedrf/mmd.hpp"
#include "fedrf/random.hpp"

#include <functional>
#include <span>
#include <vector>

namespace fedrf {

struct DenseLayer {
  Matrix weight;  // out x in
  Vector bias;
};

/// input -> h -> ... -> h -> output with rectifiers between layers and a
/// linear output.
struct MlpExtractor {
  std::vector<DenseLayer> layers;
  bool freeze_first = false;  // models the fixed part of a pretrained extractor

  Index input_dim() const { return layers.front().weight.cols(); }
  Index output_dim() const { return layers.back().weight.rows(); }
};

/// Uniform fan-in initialisation: hidden layers draw from U(-sqrt(6/fan_in),
/// sqrt(6/fan_in)), the linear output from U(-sqrt(3/fan_in), sqrt(3/fan_in)),
/// biases start at zero.
inline MlpExtractor make_mlp(Index input_dim, const std::vector<Index>& hidden, Index output_dim, std::uint64_t seed) {
  if (input_dim < 1 || output_dim < 1) throw InvalidInputError("make_mlp: dimensions must be >= 1");
  MlpExtractor g;
  std::vector<Index> dims{input_dim};
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(output_dim);
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const Index in = dims[l], out = dims[l + 1];
    rng::CounterRng gen(seed, "mlp-init", {l, static_cast<std::uint64_t>(in), static_cast<std::uint64_t>(out)});
    const bool last = l + 2 == dims.size();
    const double bound = std::sqrt((last ? 3.0 : 6.0) / static_cast<double>(in));
    DenseLayer layer{Matrix(out, in), Vector::Zero(out)};
    for (Index j = 0; j < in; ++j)
      for (Index i = 0; i < out; ++i) layer.weight(i, j) = gen.uniform(-bound, bound);
    g.layers.push_back(std::move(layer));
  }
  return g;
}

struct MlpCache {
  std::vector<Matrix> inputs;  // input to each layer
  std::vector<Matrix> pre;     // pre-activation of each layer
};

inline Matrix forward_extract(const MlpExtractor& g, const Matrix& x, MlpCache* cache = nullptr) {
  require_shape(!g.layers.empty() && x.rows() == g.input_dim(),
                "forward_extract: input has " + std::to_string(x.rows()) + " rows, extractor expects " +
                    std::to_string(g.layers.empty() ? 0 : g.input_dim()));
  Matrix h = x;
  if (cache) {
    cache->inputs.clear();
    cache->pre.clear();
  }
  for (std::size_t l = 0; l < g.layers.size(); ++l) {
    Matrix z = g.layers[l].weight * h;
    z.colwise() += g.layers[l].bias;
    if (cache) {
      cache->inputs.push_back(std::move(h));
      cache->pre.push_back(z);
    }
    h = l + 1 < g.layers.size() ? Matrix(z.cwiseMax(0.0)) : std::move(z);
  }
  return h;
}

inline FeatureMatrix forward_extract(const MlpExtractor& g, const FeatureMatrix& x) {
  return {forward_extract(g, x.data), x.domain_tag};
}

struct MlpGrads {
  std::vector<DenseLayer> layers;
};

inline MlpGrads backward_extract(const MlpExtractor& g, const MlpCache& cache, const Matrix& grad_out) {
  MlpGrads grads;
  grads.layers.resize(g.layers.size());
  Matrix delta = grad_out;
  for (std::size_t l = g.layers.size(); l-- > 0;) {
    if (l + 1 < g.layers.size()) delta = delta.cwiseProduct((cache.pre[l].array() > 0.0).cast<double>().matrix());
    grads.layers[l].weight = delta * cache.inputs[l].transpose();
    grads.layers[l].bias = delta.rowwise().sum();
    if (l > 0) delta = g.layers[l].weight.transpose() * delta;
  }
  if (g.freeze_first) {
    grads.layers[0].weight.setZero();
    grads.layers[0].bias.setZero();
  }
  return grads;
}

struct SoftmaxClassifier {
  Matrix weight;  // m x c
  Vector bias;    // c

  Index classes() const { return weight.cols(); }
};

inline SoftmaxClassifier make_classifier(Index m, Index classes, std::uint64_t seed) {
  if (m < 1 || classes < 1) throw InvalidInputError("make_classifier: need m >= 1 and classes >= 1");
  rng::CounterRng gen(seed, "classifier-init", {static_cast<std::uint64_t>(m), static_cast<std::uint64_t>(classes)});
  const double bound = std::sqrt(3.0 / static_cast<double>(m));
  SoftmaxClassifier c{Matrix(m, classes), Vector::Zero(classes)};
  for (Index j = 0; j < classes; ++j)
    for (Index i = 0; i < m; ++i) c.weight(i, j) = gen.uniform(-bound, bound);
  return c;
}

/// c x b logits.
inline Matrix logits(const SoftmaxClassifier& c, const Matrix& f) {
  require_shape(f.rows() == c.weight.rows(), "logits: feature dimension does not match classifier");
  Matrix z = c.weight.transpose() * f;
  z.colwise() += c.bias;
  return z;
}

/// Column-wise softmax, shifted by the column max for stability.
inline Matrix softmax(const Matrix& z) {
  Matrix p = z.rowwise() - z.colwise().maxCoeff();
  p = p.array().exp();
  p.array().rowwise() /= p.colwise().sum().array();
  return p;
}

inline std::vector<int> predict(const SoftmaxClassifier& c, const Matrix& f) {
  const Matrix z = logits(c, f);
  std::vector<int> out(static_cast<std::size_t>(z.cols()));
  for (Index j = 0; j < z.cols(); ++j) {
    Index arg = 0;
    z.col(j).maxCoeff(&arg);  // first maximum: ties go to the lowest class
    out[static_cast<std::size_t>(j)] = static_cast<int>(arg);
  }
  return out;
}

inline void check_labels(const std::vector<int>& y, Index count, Index classes) {
  require_shape(static_cast<Index>(y.size()) == count, "labels: count does not match batch");
  for (int v : y) {
    if (v < 0 || v >= classes) throw InvalidInputError("labels: value out of range");
  }
}

/// -mean log p_true, computed with log-sum-exp.
inline double cross_entropy(const SoftmaxClassifier& c, const Matrix& f, const std::vector<int>& y) {
  const Matrix z = logits(c, f);
  check_labels(y, z.cols(), z.rows());
  double total = 0.0;
  for (Index j = 0; j < z.cols(); ++j) {
    const double mx = z.col(j).maxCoeff();
    const double lse = mx + std::log((z.col(j).array() - mx).exp().sum());
    total += lse - z(y[static_cast<std::size_t>(j)], j);
  }
  return total / static_cast<double>(z.cols());
}

inline double cross_entropy(const SoftmaxClassifier& c, const FeatureMatrix& f, const std::vector<int>& y) {
  return cross_entropy(c, f.data, y);
}

struct SgdConfig {
  double learning_rate = 0.05;
  std::size_t batch_size = 64;
  double momentum = 0.9;
  double weight_decay = 0.0;
  std::size_t steps = 1;  // local steps per round
  double extractor_lr_scale = 1.0;  // learning-rate multiplier for G
  std::uint64_t seed = 0;

  void validate() const {
    if (!(learning_rate > 0.0)) throw InvalidInputError("SgdConfig: learning rate must be > 0");
    if (batch_size < 1) throw InvalidInputError("SgdConfig: batch size must be >= 1");
    if (momentum < 0.0 || momentum >= 1.0) throw InvalidInputError("SgdConfig: momentum must be in [0, 1)");
    if (weight_decay < 0.0) throw InvalidInputError("SgdConfig: weight decay must be >= 0");
    if (!(extractor_lr_scale >= 0.0)) throw InvalidInputError("SgdConfig: extractor_lr_scale must be >= 0");
  }
};

/// v <- mu v + (g + wd p); p <- p - lr v.
inline void sgd_step(std::span<double> params, std::span<const double> grads, std::span<double> velocity,
                     const SgdConfig& cfg) {
  require_shape(params.size() == grads.size() && params.size() == velocity.size(), "sgd_step: size mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    velocity[i] = cfg.momentum * velocity[i] + grads[i] + cfg.weight_decay * params[i];
    params[i] -= cfg.learning_rate * velocity[i];
  }
}

template <class Derived>
std::span<double> span_of(Eigen::PlainObjectBase<Derived>& m) {
  return {m.data(), static_cast<std::size_t>(m.size())};
}

template <class Derived>
std::span<const double> span_of(const Eigen::PlainObjectBase<Derived>& m) {
  return {m.data(), static_cast<std::size_t>(m.size())};
}

/// Everything a client trains: extractor G, adaptive layer W_RF, classifier C.
struct LocalModel {
  MlpExtractor g;
  Matrix w;  // 2N x m
  SoftmaxClassifier c;
};

struct ModelGrads {
  MlpGrads g;
  Matrix w;
  SoftmaxClassifier c;

  static ModelGrads zeros_like(const LocalModel& model) {
    ModelGrads out;
    for (const auto& layer : model.g.layers) {
      out.g.layers.push_back({Matrix::Zero(layer.weight.rows(), layer.weight.cols()), Vector::Zero(layer.bias.size())});
    }
    out.w = Matrix::Zero(model.w.rows(), model.w.cols());
    out.c = {Matrix::Zero(model.c.weight.rows(), model.c.weight.cols()), Vector::Zero(model.c.bias.size())};
    return out;
  }
};

/// Visit (parameter, gradient) tensor pairs in a fixed order.
template <class Model, class Grads, class Fn>
void for_each_tensor(Model& model, Grads& grads, Fn&& fn) {
  for (std::size_t l = 0; l < model.g.layers.size(); ++l) {
    fn(model.g.layers[l].weight, grads.g.layers[l].weight);
    fn(model.g.layers[l].bias, grads.g.layers[l].bias);
  }
  fn(model.w, grads.w);
  fn(model.c.weight, grads.c.weight);
  fn(model.c.bias, grads.c.bias);
}

/// Which parameter groups an update may touch.
struct TrainMask {
  bool extractor = true;
  bool aligner = true;
  bool classifier = true;
};

/// Momentum SGD over a whole LocalModel. Velocity buffers persist across steps.
class ModelOptimizer {
 public:
  explicit ModelOptimizer(const LocalModel& model) : velocity_(ModelGrads::zeros_like(model)) {}

  void step(LocalModel& model, const ModelGrads& grads, const SgdConfig& cfg, const TrainMask& mask = {}) {
    const std::size_t n_layers = model.g.layers.size();
    SgdConfig extractor_cfg = cfg;
    extractor_cfg.learning_rate *= cfg.extractor_lr_scale;
    std::size_t index = 0;
    for_each_tensor(model, velocity_, [&](auto& param, auto& vel) {
      const std::size_t i = index++;
      const bool is_extractor = i < 2 * n_layers;
      const bool is_aligner = i == 2 * n_layers;
      const bool allowed = is_extractor ? mask.extractor : (is_aligner ? mask.aligner : mask.classifier);
      if (!allowed) return;
      if (is_extractor && model.g.freeze_first && i < 2) return;
      sgd_step(span_of(param), grad_span(grads, i), span_of(vel), is_extractor ? extractor_cfg : cfg);
    });
  }

  /// Drop momentum for the aligner or classifier after their values were
  /// overwritten by aggregation.
  void reset_aligner() { velocity_.w.setZero(); }
  void reset_classifier() {
    velocity_.c.weight.setZero();
    velocity_.c.bias.setZero();
  }

 private:
  static std::span<const double> grad_span(const ModelGrads& grads, std::size_t index) {
    const std::size_t n_layers = grads.g.layers.size();
    if (index < 2 * n_layers) {
      const auto& layer = grads.g.layers[index / 2];
      return index % 2 == 0 ? span_of(layer.weight) : span_of(layer.bias);
    }
    if (index == 2 * n_layers) return span_of(grads.w);
    return index == 2 * n_layers + 1 ? span_of(grads.c.weight) : span_of(grads.c.bias);
  }

  ModelGrads velocity_;
};

/// What the local objective contains.
///   classification: add mean cross-entropy of C on W^T Sigma (labels required)
///   lambda * sum_r |W^T (own + remote_r)|^2 over every cached remote message
struct LossSpec {
  bool classification = true;
  double lambda = 0.0;
  Side side = Side::source;
  std::vector<Vector> remote;
  // The paper's figure puts C on top of W^T Sigma, so L_C depends on W_RF.
  // Off by default: W_RF then only follows the alignment term and an L_C-only
  // step leaves it untouched.
  bool aligner_from_classification = false;
};

struct LossReport {
  double classification = 0.0;
  double mmd = 0.0;  // unweighted sum over remote messages
  double total = 0.0;
  Vector summed;     // this batch's own signed mean, the outgoing message
};

struct ForwardState {
  MlpCache cache;
  Matrix features;  // p x b
  Matrix sigma;     // 2N x b
  Matrix aligned;   // m x b
};

inline ForwardState forward_model(const LocalModel& model, const RffProjection& proj, const Matrix& x) {
  ForwardState st;
  st.features = forward_extract(model.g, x, &st.cache);
  st.sigma = rff_map(st.features, proj);
  require_shape(model.w.rows() == st.sigma.rows(), "forward_model: W_RF rows must equal 2N");
  st.aligned = model.w.transpose() * st.sigma;
  return st;
}

/// Aligned target-side features W^T Sigma(G(x)) for evaluation.
inline Matrix aligned_features(const LocalModel& model, const RffProjection& proj, const Matrix& x) {
  return model.w.transpose() * rff_map(forward_extract(model.g, x), proj);
}

/// Loss and gradients for every trainable tensor of `model` on one batch.
inline std::pair<ModelGrads, LossReport> backward_through(const LocalModel& model, const RffProjection& proj,
                                                          const Matrix& x, const std::vector<int>& y,
                                                          const LossSpec& spec) {
  if (x.cols() < 1) throw InvalidInputError("backward_through: empty batch");
  if (spec.lambda < 0.0) throw InvalidInputError("backward_through: lambda must be >= 0");
  const ForwardState st = forward_model(model, proj, x);
  const auto b = static_cast<double>(x.cols());

  ModelGrads grads = ModelGrads::zeros_like(model);
  LossReport report;
  report.summed = summed_feature(st.sigma, spec.side);
  Matrix grad_sigma = Matrix::Zero(st.sigma.rows(), st.sigma.cols());

  if (spec.classification) {
    const Matrix z = logits(model.c, st.aligned);
    check_labels(y, z.cols(), z.rows());
    report.classification = cross_entropy(model.c, st.aligned, y);
    Matrix dz = softmax(z);
    for (Index j = 0; j < dz.cols(); ++j) dz(y[static_cast<std::size_t>(j)], j) -= 1.0;
    dz /= b;
    grads.c.weight = st.aligned * dz.transpose();
    grads.c.bias = dz.rowwise().sum();
    const Matrix d_aligned = model.c.weight * dz;
    grad_sigma.noalias() += model.w * d_aligned;
    if (spec.aligner_from_classification) grads.w.noalias() += st.sigma * d_aligned.transpose();
  }

  if (spec.lambda > 0.0 && !spec.remote.empty()) {
    Vector d_own = Vector::Zero(report.summed.size());
    for (const Vector& r : spec.remote) {
      require_shape(r.size() == report.summed.size(), "backward_through: remote message length must equal 2N");
      const Vector d = report.summed + r;
      report.mmd += mmd_loss(d, model.w);
      grads.w.noalias() += spec.lambda * 2.0 * d * (d.transpose() * model.w);
      d_own += spec.lambda * mmd_grad_discrepancy(d, model.w);
    }
    grad_sigma.colwise() += d_own * (side_sign(spec.side) / b);
  }
  report.total = report.classification + spec.lambda * report.mmd;

  const Matrix grad_features = rff_backward(proj, st.features, grad_sigma);
  grads.g = backward_extract(model.g, st.cache, grad_features);
  return {std::move(grads), report};
}

/// Loss only, same definition as backward_through (finite-difference oracle).
inline double evaluate_loss(const LocalModel& model, const RffProjection& proj, const Matrix& x,
                            const std::vector<int>& y, const LossSpec& spec) {
  const ForwardState st = forward_model(model, proj, x);
  double total = spec.classification ? cross_entropy(model.c, st.aligned, y) : 0.0;
  if (spec.lambda > 0.0) {
    const Vector own = summed_feature(st.sigma, spec.side);
    for (const Vector& r : spec.remote) total += spec.lambda * mmd_loss(own + r, model.w);
  }
  return total;
}

/// Unweighted mean of models' parameters, summed in the given order.
inline Matrix average(const std::vector<const Matrix*>& items) {
  if (items.empty()) throw InvalidInputError("average: empty collection");
  Matrix acc = *items.front();
  for (std::size_t i = 1; i < items.size(); ++i) {
    require_shape(items[i]->rows() == acc.rows() && items[i]->cols() == acc.cols(), "average: shape mismatch");
    acc += *items[i];
  }
  return acc / static_cast<double>(items.size());
}

}  // namespace fedrf
