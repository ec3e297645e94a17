#include "fedrf/learners.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>

using namespace fedrf;
using fedrf::testing::random_matrix;

namespace {

LocalModel small_model(std::uint64_t seed, Index d = 3, Index p = 4, std::size_t n_feat = 8, Index m = 3,
                       Index classes = 3) {
  LocalModel model{make_mlp(d, {6, 5}, p, seed), random_matrix(2 * static_cast<Index>(n_feat), m, seed + 1) * 0.5,
                   make_classifier(m, classes, seed + 2)};
  // Non-zero biases so every code path is exercised.
  for (auto& layer : model.g.layers) layer.bias = random_matrix(layer.bias.size(), 1, seed + 3).col(0) * 0.1;
  model.c.bias = random_matrix(classes, 1, seed + 4).col(0) * 0.1;
  return model;
}

std::vector<int> labels_for(Index b, Index classes, std::uint64_t seed) {
  rng::CounterRng gen(seed, "labels");
  std::vector<int> y(static_cast<std::size_t>(b));
  for (auto& v : y) v = static_cast<int>(gen.below(static_cast<std::uint64_t>(classes)));
  return y;
}

/// Max relative discrepancy between analytic and central-difference
/// gradients over every tensor of the model.
double fd_check(LocalModel model, const RffProjection& proj, const Matrix& x, const std::vector<int>& y,
                const LossSpec& spec, bool aligner_uses_mmd_only) {
  const auto [grads, report] = backward_through(model, proj, x, y, spec);
  (void)report;
  ModelGrads analytic = grads;
  double worst = 0.0;
  const double h = 1e-6;
  std::size_t tensor = 0;
  const std::size_t aligner_index = 2 * model.g.layers.size();
  for_each_tensor(model, analytic, [&](auto& param, auto& grad) {
    const std::size_t t = tensor++;
    LossSpec local = spec;
    if (t == aligner_index && aligner_uses_mmd_only) local.classification = false;
    const double scale = std::max(grad.cwiseAbs().maxCoeff(), 1e-6);
    for (Index k = 0; k < param.size(); ++k) {
      const double orig = param.data()[k];
      param.data()[k] = orig + h;
      const double up = evaluate_loss(model, proj, x, y, local);
      param.data()[k] = orig - h;
      const double down = evaluate_loss(model, proj, x, y, local);
      param.data()[k] = orig;
      worst = std::max(worst, std::abs(grad.data()[k] - (up - down) / (2 * h)) / scale);
    }
  });
  return worst;
}

}  // namespace

TEST(Extractor, ZeroWeightsGiveZeroFeatures) {
  auto g = make_mlp(3, {5, 5}, 2, 1);
  for (auto& layer : g.layers) layer.weight.setZero();
  EXPECT_TRUE(forward_extract(g, random_matrix(3, 4, 1)).isZero(0.0));
}

TEST(Extractor, IdentityPassthrough) {
  MlpExtractor g{{DenseLayer{Matrix::Identity(4, 4), Vector::Zero(4)}}};
  const Matrix x = random_matrix(4, 6, 2);
  EXPECT_LT((forward_extract(g, x) - x).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Extractor, MatchesStraightLineEvaluation) {
  const auto g = make_mlp(5, {100, 100}, 7, 3);
  ASSERT_EQ(g.layers.size(), 3u);
  EXPECT_EQ(g.layers[0].weight.rows(), 100);
  const Matrix x = random_matrix(5, 9, 4);
  Matrix oracle(7, 9);
  for (Index j = 0; j < 9; ++j) {
    Vector h = x.col(j);
    for (std::size_t l = 0; l < 3; ++l) {
      Vector z(g.layers[l].weight.rows());
      for (Index r = 0; r < z.size(); ++r) {
        double acc = g.layers[l].bias(r);
        for (Index c = 0; c < h.size(); ++c) acc += g.layers[l].weight(r, c) * h(c);
        z(r) = l < 2 ? std::max(acc, 0.0) : acc;
      }
      h = z;
    }
    oracle.col(j) = h;
  }
  EXPECT_LT((forward_extract(g, x) - oracle).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_THROW(forward_extract(g, random_matrix(4, 2, 1)), ShapeError);
}

TEST(Extractor, InitIsDeterministic) {
  EXPECT_EQ(make_mlp(3, {10}, 2, 5).layers[0].weight, make_mlp(3, {10}, 2, 5).layers[0].weight);
  EXPECT_NE(make_mlp(3, {10}, 2, 5).layers[0].weight, make_mlp(3, {10}, 2, 6).layers[0].weight);
}

TEST(CrossEntropy, UniformLogits) {
  SoftmaxClassifier c{Matrix::Zero(2, 5), Vector::Zero(5)};
  EXPECT_NEAR(cross_entropy(c, random_matrix(2, 6, 1), {0, 1, 2, 3, 4, 0}), std::log(5.0), 1e-14);
}

TEST(CrossEntropy, SaturatedPrediction) {
  SoftmaxClassifier c{Matrix::Zero(1, 2), Vector::Zero(2)};
  c.weight(0, 0) = 1.0;
  c.weight(0, 1) = -1.0;
  EXPECT_LT(cross_entropy(c, Matrix::Constant(1, 1, 50.0), {0}), 1e-40);
}

TEST(CrossEntropy, TwoClassHandValue) {
  SoftmaxClassifier c{Matrix::Identity(2, 2), Vector::Zero(2)};
  Matrix f(2, 1);
  f << 1.0, -1.0;
  EXPECT_NEAR(cross_entropy(c, f, {0}), std::log1p(std::exp(-2.0)), 1e-15);
  EXPECT_NEAR(cross_entropy(c, f, {0}), 0.126928, 1e-6);
  EXPECT_THROW(cross_entropy(c, f, {2}), InvalidInputError);
}

TEST(Softmax, RowsArePositiveAndSumToOne) {
  const Matrix p = softmax(random_matrix(4, 10, 3) * 30.0);
  EXPECT_GE(p.minCoeff(), 0.0);
  for (Index j = 0; j < p.cols(); ++j) EXPECT_NEAR(p.col(j).sum(), 1.0, 1e-9);
}

TEST(Predict, TiesGoToLowestClass) {
  SoftmaxClassifier c{Matrix::Zero(1, 3), Vector::Zero(3)};
  EXPECT_EQ(predict(c, Matrix::Ones(1, 2)), (std::vector<int>{0, 0}));
}

TEST(Sgd, ZeroGradientNoMomentum) {
  std::vector<double> p{1.0, -2.0}, g{0.0, 0.0}, v{0.0, 0.0};
  sgd_step(p, g, v, {0.1, 1, 0.0});
  EXPECT_EQ(p, (std::vector<double>{1.0, -2.0}));
}

TEST(Sgd, PlainStep) {
  std::vector<double> p{1.0, -2.0}, g{0.5, 0.25}, v{0.0, 0.0};
  sgd_step(p, g, v, {1.0, 1, 0.0});
  EXPECT_EQ(p, (std::vector<double>{0.5, -2.25}));
}

TEST(Sgd, QuadraticBowlConverges) {
  // f(x) = 0.5 (x - 3)^2, minimum at 3.
  std::vector<double> p{-4.0}, v{0.0};
  const SgdConfig cfg{0.5, 1, 0.5};
  for (int i = 0; i < 100; ++i) {
    std::vector<double> g{p[0] - 3.0};
    sgd_step(p, g, v, cfg);
  }
  EXPECT_NEAR(p[0], 3.0, 1e-6);
}

TEST(BackwardThrough, ZeroLambdaHasNoAlignmentGradient) {
  const auto model = small_model(1);
  const auto proj = make_projection({1.0, 8, 1}, 4);
  const Matrix x = random_matrix(3, 5, 2);
  LossSpec spec{true, 0.0, Side::source, {random_matrix(16, 1, 3).col(0)}};
  const auto [grads, report] = backward_through(model, proj, x, labels_for(5, 3, 1), spec);
  EXPECT_TRUE(grads.w.isZero(0.0));
  EXPECT_EQ(report.mmd, 0.0);
}

TEST(BackwardThrough, SingleSampleSingleClassHandChain) {
  // One class: cross-entropy is identically zero, so only the alignment term
  // contributes. One linear layer, p = 1, N = 1.
  LocalModel model{MlpExtractor{{DenseLayer{Matrix::Constant(1, 1, 0.8), Vector::Constant(1, 0.1)}}},
                   (Matrix(2, 1) << 0.5, -1.5).finished(), SoftmaxClassifier{Matrix::Ones(1, 1), Vector::Zero(1)}};
  const auto proj = make_projection({1.0, 1, 4}, 1);
  const double om = proj.omega(0, 0);
  const Vector r = (Vector(2) << -0.3, 0.2).finished();
  const double x0 = 0.6;
  LossSpec spec{true, 2.0, Side::source, {r}};
  const auto [grads, report] = backward_through(model, proj, Matrix::Constant(1, 1, x0), {0}, spec);
  EXPECT_NEAR(report.classification, 0.0, 1e-15);
  const double f = 0.8 * x0 + 0.1;
  const Vector d = (Vector(2) << std::cos(om * f) + r(0), std::sin(om * f) + r(1)).finished();
  const double wd = model.w.col(0).dot(d);
  const double dl_df = 2.0 * 2.0 * wd * (-0.5 * om * std::sin(om * f) - 1.5 * om * std::cos(om * f));
  EXPECT_NEAR(grads.g.layers[0].weight(0, 0), dl_df * x0, 1e-12);
  EXPECT_NEAR(grads.g.layers[0].bias(0), dl_df, 1e-12);
  EXPECT_NEAR(grads.w(0, 0), 2.0 * 2.0 * wd * d(0), 1e-12);
  EXPECT_NEAR(grads.c.weight(0, 0), 0.0, 1e-15);
}

TEST(BackwardThrough, FiniteDifferenceSuite) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto model = small_model(10 * seed);
    const auto proj = make_projection({1.3, 8, seed}, 4);
    const Matrix x = random_matrix(3, 6, 1000 + seed);
    const auto y = labels_for(6, 3, seed);
    LossSpec spec{true, 0.7, seed % 2 ? Side::target : Side::source,
                  {random_matrix(16, 1, 2000 + seed).col(0) * 0.3, random_matrix(16, 1, 3000 + seed).col(0) * 0.3}};
    spec.aligner_from_classification = seed % 3 == 0;
    EXPECT_LT(fd_check(model, proj, x, y, spec, !spec.aligner_from_classification), 1e-3) << "seed " << seed;
  }
}

TEST(BackwardThrough, FrozenFirstLayer) {
  auto model = small_model(5);
  model.g.freeze_first = true;
  const auto proj = make_projection({1.0, 8, 1}, 4);
  const auto [grads, report] =
      backward_through(model, proj, random_matrix(3, 4, 1), labels_for(4, 3, 2), LossSpec{true, 0.0, Side::source, {}});
  EXPECT_TRUE(grads.g.layers[0].weight.isZero(0.0));
  EXPECT_FALSE(grads.g.layers[1].weight.isZero(0.0));
}

TEST(ModelOptimizer, MaskLeavesTensorsUntouched) {
  auto model = small_model(6);
  const auto proj = make_projection({1.0, 8, 1}, 4);
  const auto before = model;
  ModelOptimizer opt(model);
  const auto [grads, report] = backward_through(model, proj, random_matrix(3, 4, 1), labels_for(4, 3, 2),
                                                LossSpec{true, 1.0, Side::source, {Vector::Ones(16) * 0.1}});
  opt.step(model, grads, {0.1, 4}, TrainMask{true, false, true});
  EXPECT_EQ(model.w, before.w);
  EXPECT_NE(model.c.weight, before.c.weight);
  EXPECT_NE(model.g.layers[0].weight, before.g.layers[0].weight);
}

TEST(ModelOptimizer, ExtractorLearningRateScale) {
  auto model = small_model(7);
  const auto proj = make_projection({1.0, 8, 1}, 4);
  const auto [grads, report] = backward_through(model, proj, random_matrix(3, 4, 1), labels_for(4, 3, 2), LossSpec{});
  SgdConfig cfg{0.1, 4, 0.0};
  cfg.extractor_lr_scale = 0.0;
  auto frozen = model;
  ModelOptimizer(frozen).step(frozen, grads, cfg);
  EXPECT_EQ(frozen.g.layers[0].weight, model.g.layers[0].weight);
  EXPECT_NE(frozen.c.weight, model.c.weight);

  cfg.extractor_lr_scale = 0.5;
  auto half = model;
  ModelOptimizer(half).step(half, grads, cfg);
  const Matrix expected = model.g.layers[1].weight - 0.05 * grads.g.layers[1].weight;
  EXPECT_TRUE(half.g.layers[1].weight.isApprox(expected, 1e-14));
  EXPECT_TRUE(half.c.weight.isApprox(model.c.weight - 0.1 * grads.c.weight, 1e-14));
}

TEST(HybridTraining, BothLossesDecreaseOnSeparableTask) {
  // Two Gaussian classes; the target batch is the source batch shifted.
  double c0 = 0.0, c1 = 0.0, m0 = 0.0, m1 = 0.0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Index b = 64, d = 2;
    Matrix xs = random_matrix(d, b, 50 + seed) * 0.3;
    std::vector<int> y(static_cast<std::size_t>(b));
    for (Index j = 0; j < b; ++j) {
      y[static_cast<std::size_t>(j)] = static_cast<int>(j % 2);
      xs(0, j) += j % 2 ? 1.5 : -1.5;
    }
    Matrix xt = xs;
    xt.row(1).array() += 1.0;
    LocalModel src{make_mlp(d, {16}, 4, seed), random_matrix(64, 8, seed) * 0.2, make_classifier(8, 2, seed)};
    LocalModel tgt = src;
    const auto proj = make_projection({1.5, 32, seed}, 4);
    ModelOptimizer opt_s(src), opt_t(tgt);
    const SgdConfig cfg{0.02, 64, 0.9};
    double first_c = 0.0, first_m = 0.0, last_c = 0.0, last_m = 0.0;
    for (int step = 0; step < 100; ++step) {
      const Vector tmsg = summed_feature(rff_map(forward_extract(tgt.g, xt), proj), Side::target);
      const auto [gs, rs] = backward_through(src, proj, xs, y, LossSpec{true, 1.0, Side::source, {tmsg}});
      const auto [gt, rt] = backward_through(tgt, proj, xt, {}, LossSpec{false, 1.0, Side::target, {rs.summed}});
      (void)rt;
      if (step == 0) {
        first_c = rs.classification;
        first_m = rs.mmd;
      }
      last_c = rs.classification;
      last_m = rs.mmd;
      opt_s.step(src, gs, cfg);
      opt_t.step(tgt, gt, cfg, TrainMask{true, true, false});
    }
    c0 += first_c;
    c1 += last_c;
    m0 += first_m;
    m1 += last_m;
  }
  EXPECT_LT(c1, c0);
  EXPECT_LT(m1, m0);
}
