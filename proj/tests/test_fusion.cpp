#include "cslid/fusion.hpp"

#include <gtest/gtest.h>

#include "cslid/ctc.hpp"
#include "cslid/lid.hpp"
#include "test_util.hpp"

namespace cslid {
namespace {

using LT = LanguageTag;

struct Instance {
  Matrix z;
  Matrix u;
  std::vector<int> target;
  LidLabelSeq labels;
  TokenTypeMap l;
};

Instance random_instance(std::mt19937_64& rng) {
  Instance in;
  const int a = testing::uniform_int(rng, 1, 3);
  const int b = testing::uniform_int(rng, 1, 3);
  const Vocabulary vocab = testing::make_vocab(a, b);
  in.l = TokenTypeMap::from_vocab(vocab);
  const int frames = testing::uniform_int(rng, 3, 9);
  in.z = testing::random_matrix(rng, frames, vocab.size(), 1.5);
  in.u = testing::random_matrix(rng, frames, 3, 1.5);
  const int len = testing::uniform_int(rng, 0, 3);
  for (int i = 0; i < len; ++i) in.target.push_back(testing::uniform_int(rng, 1, vocab.size() - 1));
  in.labels.resize(frames);
  for (auto& c : in.labels) c = static_cast<LT>(testing::uniform_int(rng, 0, 2));
  return in;
}

TEST(TokenTypeMap, BlankIsSilence) {
  const auto l = TokenTypeMap::from_vocab(testing::make_vocab(2, 1));
  EXPECT_EQ(l.size(), 4);
  EXPECT_EQ(l[0], 0);
  EXPECT_EQ(l[1], 1);
  EXPECT_EQ(l[2], 1);
  EXPECT_EQ(l[3], 2);
}

TEST(FuseLogits, ZeroLidLogitsIsPlainLogSoftmax) {
  std::mt19937_64 rng(1);
  const auto in = random_instance(rng);
  const Matrix fused = fuse_logits(in.z, Matrix::Zero(in.z.rows(), 3), in.l);
  EXPECT_TRUE(fused == log_softmax_rows(in.z));
}

TEST(FuseLogits, DirectFormulaThreeTokens) {
  const auto l = TokenTypeMap::from_vocab(testing::make_vocab(1, 1));
  Matrix z(1, 3);
  z << 0.3, -1.2, 2.0;
  Matrix u(1, 3);
  u << 0.5, 1.5, -0.25;
  const double e0 = std::exp(0.3 + 0.5);
  const double e1 = std::exp(-1.2 + 1.5);
  const double e2 = std::exp(2.0 - 0.25);
  const Matrix p = fuse_logits(z, u, l).array().exp();
  EXPECT_NEAR(p(0, 0), e0 / (e0 + e1 + e2), 1e-12);
  EXPECT_NEAR(p(0, 1), e1 / (e0 + e1 + e2), 1e-12);
  EXPECT_NEAR(p(0, 2), e2 / (e0 + e1 + e2), 1e-12);
}

TEST(FuseLogits, ClassShiftMovesOnlyThatClass) {
  std::mt19937_64 rng(2);
  const auto in = random_instance(rng);
  Matrix shifted = in.u;
  shifted.col(1).array() += 2.0;
  const Matrix a = fused_logits(in.z, in.u, in.l);
  const Matrix b = fused_logits(in.z, shifted, in.l);
  for (int y = 0; y < in.l.size(); ++y) {
    const double expect = in.l[y] == 1 ? 2.0 : 0.0;
    EXPECT_LT(((b.col(y) - a.col(y)).array() - expect).abs().maxCoeff(), 1e-12);
  }
}

TEST(FuseLogits, SingleClassVocabularyShiftCancels) {
  TokenTypeMap l{{1, 1, 1}};
  std::mt19937_64 rng(3);
  const Matrix z = testing::random_matrix(rng, 4, 3);
  const Matrix u = testing::random_matrix(rng, 4, 3);
  EXPECT_LT((fuse_logits(z, u, l) - log_softmax_rows(z)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(FuseLogits, RowsNormalized) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    const auto in = random_instance(rng);
    const Matrix p = fuse_logits(in.z, in.u, in.l).array().exp();
    EXPECT_LT((p.rowwise().sum().array() - 1.0).abs().maxCoeff(), 1e-12);
  }
}

TEST(FuseLogitsBackward, ClassAggregationIsExact) {
  std::mt19937_64 rng(5);
  const auto in = random_instance(rng);
  const Matrix g = testing::random_matrix(rng, in.z.rows(), in.z.cols());
  const FusionGrad fg = fuse_logits_backward(g, in.l);
  EXPECT_TRUE(fg.z == g);
  for (Eigen::Index t = 0; t < g.rows(); ++t) {
    double sums[3] = {0, 0, 0};
    for (int y = 0; y < in.l.size(); ++y) sums[in.l[y]] += g(t, y);
    for (int c = 0; c < 3; ++c) EXPECT_EQ(fg.u(t, c), sums[c]);
  }
}

TEST(FuseLogits, ShapeMismatchRejected) {
  const auto l = TokenTypeMap::from_vocab(testing::make_vocab(1, 1));
  EXPECT_THROW(fuse_logits(Matrix::Zero(3, 3), Matrix::Zero(2, 3), l), ValidationError);
  EXPECT_THROW(fuse_logits(Matrix::Zero(3, 4), Matrix::Zero(3, 3), l), ValidationError);
  EXPECT_THROW(fuse_logits(Matrix::Zero(3, 3), Matrix::Zero(3, 2), l), ValidationError);
}

TEST(JointLoss, ReducesToCtcWhenLidLogitsZeroAndLambdaZero) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 100; ++trial) {
    auto in = random_instance(rng);
    in.u.setZero();
    const auto j = joint_loss(in.z, in.u, in.target, in.labels, {0.0}, in.l);
    const auto c = ctc_loss(log_softmax_rows(in.z), in.target);
    if (!c.feasible) {
      EXPECT_FALSE(j.feasible);
      continue;
    }
    EXPECT_NEAR(j.loss, c.loss, 1e-12);
  }
}

TEST(JointLoss, LambdaZeroStillTrainsLidThroughFusion) {
  std::mt19937_64 rng(7);
  auto in = random_instance(rng);
  in.target = {1};
  const auto j = joint_loss(in.z, in.u, in.target, in.labels, {0.0}, in.l);
  EXPECT_GT(j.grad_u.cwiseAbs().maxCoeff(), 0.0);
}

TEST(JointLoss, LambdaOneIsCrossEntropyOnly) {
  std::mt19937_64 rng(8);
  const auto in = random_instance(rng);
  const auto j = joint_loss(in.z, in.u, in.target, in.labels, {1.0}, in.l);
  EXPECT_EQ(j.loss, lid_ce_loss(in.u, in.labels).loss);
  EXPECT_TRUE(j.grad_z.isZero());
  EXPECT_TRUE(j.grad_u == lid_ce_loss(in.u, in.labels).grad);
}

TEST(JointLoss, InterpolationComposesIndependentLosses) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 100; ++trial) {
    const auto in = random_instance(rng);
    const auto j = joint_loss(in.z, in.u, in.target, in.labels, {0.1}, in.l);
    const auto c = ctc_loss(fuse_logits(in.z, in.u, in.l), in.target);
    if (!c.feasible) continue;
    const double ce = lid_ce_loss(in.u, in.labels).loss;
    EXPECT_NEAR(j.loss, 0.9 * c.loss + 0.1 * ce, 1e-12);
    EXPECT_EQ(j.ctc, c.loss);
    EXPECT_EQ(j.ce, ce);
  }
}

TEST(JointLoss, GradientThroughFusedPathMatchesFiniteDifferences) {
  std::mt19937_64 rng(10);
  int checked = 0;
  for (int trial = 0; checked < 100; ++trial) {
    const auto in = random_instance(rng);
    const double lambda = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    const auto j = joint_loss(in.z, in.u, in.target, in.labels, {lambda}, in.l);
    if (!j.feasible) continue;
    const Eigen::Index nz = in.z.size();
    Vector x(nz + in.u.size());
    x << testing::flatten(in.z), testing::flatten(in.u);
    Vector g(x.size());
    g << testing::flatten(j.grad_z), testing::flatten(j.grad_u);
    auto f = [&](const Vector& v) {
      return joint_loss(testing::unflatten(v.head(nz), in.z.rows(), in.z.cols()),
                        testing::unflatten(v.tail(in.u.size()), in.u.rows(), 3), in.target, in.labels, {lambda}, in.l)
          .loss;
    };
    EXPECT_LT(testing::directional_check(f, x, g, testing::random_vector(rng, x.size())), 1e-4);
    ++checked;
  }
}

TEST(JointLoss, InfeasibleTargetHasZeroGradients) {
  const auto l = TokenTypeMap::from_vocab(testing::make_vocab(2, 0));
  const auto j = joint_loss(Matrix::Zero(1, 3), Matrix::Zero(1, 3), {1, 2}, {LT::LangA}, {0.1}, l);
  EXPECT_FALSE(j.feasible);
  EXPECT_TRUE(std::isinf(j.loss));
  EXPECT_TRUE(j.grad_z.isZero());
  EXPECT_TRUE(j.grad_u.isZero());
}

TEST(JointLoss, LambdaOutOfRangeRejected) {
  const auto l = TokenTypeMap::from_vocab(testing::make_vocab(1, 1));
  EXPECT_THROW(joint_loss(Matrix::Zero(2, 3), Matrix::Zero(2, 3), {1}, {LT::LangA, LT::LangA}, {1.5}, l),
               ValidationError);
}

TEST(MultiplyFuse, UniformLidLeavesCtcUnchanged) {
  std::mt19937_64 rng(11);
  const auto in = random_instance(rng);
  const Matrix p = softmax_rows(in.z);
  const auto m = multiply_fuse(p, Matrix::Constant(p.rows(), 3, 1.0 / 3.0), in.l);
  EXPECT_LT((m.probs - p).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_EQ(m.fallback_frames, 0);
}

TEST(MultiplyFuse, CertainSilenceKeepsOnlyBlank) {
  const auto l = TokenTypeMap::from_vocab(testing::make_vocab(1, 1));
  Matrix p(1, 3);
  p << 0.2, 0.5, 0.3;
  Matrix lid(1, 3);
  lid << 1.0, 0.0, 0.0;
  const auto m = multiply_fuse(p, lid, l);
  EXPECT_EQ(m.probs(0, 0), 1.0);
  EXPECT_EQ(m.probs(0, 1), 0.0);
  EXPECT_EQ(m.probs(0, 2), 0.0);
}

TEST(MultiplyFuse, HandTwoTokenCase) {
  TokenTypeMap l{{0, 2}};
  Matrix p(1, 2);
  p << 0.4, 0.6;
  Matrix lid(1, 3);
  lid << 0.5, 0.2, 0.3;
  const auto m = multiply_fuse(p, lid, l);
  // 0.2 and 0.18, renormalized over 0.38.
  EXPECT_NEAR(m.probs(0, 0), 0.2 / 0.38, 1e-15);
  EXPECT_NEAR(m.probs(0, 1), 0.18 / 0.38, 1e-15);
}

TEST(MultiplyFuse, EmptyRowFallsBackAndCounts) {
  const auto l = TokenTypeMap::from_vocab(testing::make_vocab(1, 1));
  Matrix p(2, 3);
  p << 0.0, 1.0, 0.0, 0.3, 0.3, 0.4;
  Matrix lid(2, 3);
  lid << 1.0, 0.0, 0.0, 0.2, 0.5, 0.3;
  const auto m = multiply_fuse(p, lid, l);
  EXPECT_EQ(m.fallback_frames, 1);
  EXPECT_TRUE(m.probs.row(0) == p.row(0));
  EXPECT_NEAR(m.probs.row(1).sum(), 1.0, 1e-15);
}

TEST(MultiplyFuse, ArgmaxInvariantToLidRowScaling) {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 50; ++trial) {
    const auto in = random_instance(rng);
    const Matrix p = softmax_rows(in.z);
    const Matrix lid = softmax_rows(in.u);
    Matrix scaled = lid;
    for (Eigen::Index t = 0; t < lid.rows(); ++t) scaled.row(t) *= std::exp(testing::random_vector(rng, 1)(0) * 3.0);
    const auto a = multiply_fuse(p, lid, in.l);
    const auto b = multiply_fuse(p, scaled, in.l);
    for (Eigen::Index t = 0; t < p.rows(); ++t) EXPECT_EQ(argmax_row(a.probs.row(t)), argmax_row(b.probs.row(t)));
  }
}

}  // namespace
}  // namespace cslid
