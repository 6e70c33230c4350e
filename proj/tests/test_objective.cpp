#include "ijepa/objective.hpp"
#include "ijepa/schedule.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace ijepa;

namespace {

ViTConfig nano() {
  ViTConfig c;
  c.width = 16;
  c.depth = 2;
  c.heads = 2;
  c.image_size = 16;
  c.patch_size = 4;
  return c;
}

TokenSequence<double> seq(std::vector<int> idx, Mat<double> e) { return {std::move(idx), std::move(e)}; }

Mat<double> random_patches(const ViTConfig& c, std::uint64_t seed) {
  Rng rng(seed);
  Mat<double> m(c.grid().n_patches(), c.patch_dim());
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform();
  return m;
}

}  // namespace

TEST(Loss, EqualPairsGiveExactlyZero) {
  Rng rng(1);
  Mat<double> a(4, 8);
  for (Index i = 0; i < a.size(); ++i) a.data()[i] = rng.normal();
  const LossReport r = compute_loss<double>({seq({1, 2, 3, 4}, a), seq({7, 8, 9, 10}, a)},
                                            {seq({1, 2, 3, 4}, a), seq({7, 8, 9, 10}, a)});
  EXPECT_EQ(r.total, 0.0);
  EXPECT_EQ(r.per_block, (std::vector<double>{0.0, 0.0}));
}

TEST(Loss, SinglePatchThreeFourFive) {
  Mat<double> p(1, 2), t(1, 2);
  p << 3.0, 4.0;
  t << 0.0, 0.0;
  const LossReport r = compute_loss<double>({seq({0}, p)}, {seq({0}, t)});
  EXPECT_EQ(r.per_block[0], 25.0);
  EXPECT_EQ(r.total, 25.0);
}

TEST(Loss, TwoBlocksWithUnitErrorsMatchBruteForceOracle) {
  Rng rng(2);
  std::vector<TokenSequence<double>> preds, tgts;
  for (int n : {2, 3}) {
    Mat<double> t(n, 5), e(n, 5);
    for (Index i = 0; i < t.size(); ++i) t.data()[i] = rng.normal();
    for (Index i = 0; i < e.size(); ++i) e.data()[i] = rng.normal();
    e.rowwise().normalize();
    std::vector<int> idx(static_cast<std::size_t>(n));
    for (int k = 0; k < n; ++k) idx[static_cast<std::size_t>(k)] = 10 * n + k;
    preds.push_back(seq(idx, t + e));
    tgts.push_back(seq(idx, t));
  }
  double oracle = 0.0;
  for (std::size_t b = 0; b < 2; ++b) {
    for (Index j = 0; j < preds[b].embeddings.rows(); ++j) {
      for (Index c = 0; c < 5; ++c) {
        const double d = preds[b].embeddings(j, c) - tgts[b].embeddings(j, c);
        oracle += d * d;
      }
    }
  }
  oracle /= 2.0;
  const LossReport r = compute_loss(preds, tgts);
  EXPECT_NEAR(r.total, 2.5, 1e-12);
  EXPECT_NEAR(r.total, oracle, 1e-12);
  EXPECT_EQ(r.n_predicted_patches, 5);
}

TEST(Loss, TotalIsMeanOfPerBlock) {
  Rng rng(3);
  std::vector<TokenSequence<double>> preds, tgts;
  for (int b = 0; b < 4; ++b) {
    Mat<double> p(3, 4), t(3, 4);
    for (Index i = 0; i < p.size(); ++i) p.data()[i] = rng.normal();
    for (Index i = 0; i < t.size(); ++i) t.data()[i] = rng.normal();
    preds.push_back(seq({b, b + 4, b + 8}, p));
    tgts.push_back(seq({b, b + 4, b + 8}, t));
  }
  const LossReport r = compute_loss(preds, tgts);
  double mean = 0.0;
  for (double v : r.per_block) {
    EXPECT_GE(v, 0.0);
    mean += v / 4.0;
  }
  EXPECT_NEAR(r.total, mean, 1e-12);
}

TEST(Loss, GradientMatchesFiniteDifference) {
  Rng rng(4);
  Mat<double> p(3, 4), t(3, 4);
  for (Index i = 0; i < p.size(); ++i) p.data()[i] = rng.normal();
  for (Index i = 0; i < t.size(); ++i) t.data()[i] = rng.normal();
  std::vector<Mat<double>> g;
  compute_loss<double>({seq({0, 1, 2}, p)}, {seq({0, 1, 2}, t)}, {}, &g);
  for (Index i = 0; i < p.size(); ++i) {
    Mat<double> up = p, down = p;
    up.data()[i] += 1e-6;
    down.data()[i] -= 1e-6;
    const double fd = (compute_loss<double>({seq({0, 1, 2}, up)}, {seq({0, 1, 2}, t)}).total -
                       compute_loss<double>({seq({0, 1, 2}, down)}, {seq({0, 1, 2}, t)}).total) /
                      2e-6;
    EXPECT_NEAR(g[0].data()[i], fd, 1e-7);
  }
}

TEST(Loss, PerPatchNormalizationDividesByBlockSize) {
  Mat<double> p = Mat<double>::Ones(4, 2), t = Mat<double>::Zero(4, 2);
  const LossReport r = compute_loss<double>({seq({0, 1, 2, 3}, p)}, {seq({0, 1, 2, 3}, t)}, LossOptions{true});
  EXPECT_EQ(r.total, 2.0);
}

TEST(Loss, IndexMismatchIsContractViolation) {
  const Mat<double> a = Mat<double>::Zero(2, 3);
  EXPECT_THROW(compute_loss<double>({seq({0, 1}, a)}, {seq({0, 2}, a)}), ContractViolation);
  EXPECT_THROW(compute_loss<double>({seq({0, 1}, a)}, {}), ContractViolation);
}

TEST(PixelLoss, ExactPixelsGiveZero) {
  const ViTConfig c = nano();
  const Mat<double> pv = random_patches(c, 5);
  const Mask m{c.grid(), {1, 2, 5, 6}};
  const LossReport r = compute_pixel_loss<double>({seq(m.indices, gather_rows(pv, m.indices))}, pv, {m});
  EXPECT_EQ(r.total, 0.0);
}

TEST(PixelLoss, ZeroPredictionOnHalfGreyImage) {
  const ViTConfig c = nano();
  const Mat<double> pv = Mat<double>::Constant(c.grid().n_patches(), 48, 0.5);
  const Mask m{c.grid(), {0, 1, 4, 5}};
  const LossReport r = compute_pixel_loss<double>({seq(m.indices, Mat<double>::Zero(4, 48))}, pv, {m});
  // 4 patches * 48 values * 0.5^2
  EXPECT_DOUBLE_EQ(r.per_block[0], 48.0);
}

TEST(Targets, OutputModeSelectsFromOneForward) {
  const ViTConfig c = nano();
  Rng rng(6);
  const auto p = EncoderParams<double>::init(c, rng);
  const Mat<double> pv = random_patches(c, 7);
  const Mat<double> pos = positional_embedding<double>(c.grid(), c.width);
  const std::vector<Mask> masks{Mask{c.grid(), {1, 2, 5}}, Mask{c.grid(), {2, 5, 9}}};
  const auto t = compute_targets<double>(p, c, pv, masks, pos, TargetMaskMode::kOutput);
  EXPECT_EQ(t[0].embeddings.row(1), t[1].embeddings.row(0));
  EXPECT_EQ(t[0].embeddings.row(2), t[1].embeddings.row(1));

  const auto full = compute_targets<double>(p, c, pv, {full_mask(c.grid())}, pos, TargetMaskMode::kOutput);
  const Mat<double> direct = encode_visible<double>(p, c, pv, full_mask(c.grid()).indices, pos, nullptr);
  EXPECT_EQ(full[0].embeddings, direct);
}

TEST(Targets, InputModeDiffersFromOutputMode) {
  const ViTConfig c = nano();
  Rng rng(8);
  const auto p = EncoderParams<double>::init(c, rng);
  const Mat<double> pv = random_patches(c, 9);
  const Mat<double> pos = positional_embedding<double>(c.grid(), c.width);
  const std::vector<Mask> masks{Mask{c.grid(), {0, 1, 4, 5}}};
  const auto out = compute_targets<double>(p, c, pv, masks, pos, TargetMaskMode::kOutput);
  const auto in = compute_targets<double>(p, c, pv, masks, pos, TargetMaskMode::kInput);
  EXPECT_GT((out[0].embeddings - in[0].embeddings).norm(), 1e-3);
}

TEST(Targets, EmptyMaskIsContractViolation) {
  const ViTConfig c = nano();
  Rng rng(0);
  const auto p = EncoderParams<double>::init(c, rng);
  const Mat<double> pos = positional_embedding<double>(c.grid(), c.width);
  EXPECT_THROW(compute_targets<double>(p, c, random_patches(c, 0), {Mask{c.grid(), {}}}, pos, TargetMaskMode::kOutput),
               ContractViolation);
}

class EmaTest : public ::testing::Test {
 protected:
  ViTConfig c = nano();
  Rng rng{10};
  EncoderParams<double> target = EncoderParams<double>::init(c, rng);
  EncoderParams<double> context = EncoderParams<double>::init(c, rng);
};

TEST_F(EmaTest, MomentumOneFreezesTargetBitwise) {
  const auto before = target;
  for (int i = 0; i < 100; ++i) ema_update(target, context, 1.0);
  zip_tensors(target, before, [](const std::string& n, Mat<double>& a, const Mat<double>& b) { EXPECT_EQ(a, b) << n; });
}

TEST_F(EmaTest, MomentumZeroCopiesContext) {
  ema_update(target, context, 0.0);
  zip_tensors(target, context, [](const std::string& n, Mat<double>& a, const Mat<double>& b) { EXPECT_EQ(a, b) << n; });
}

TEST_F(EmaTest, ScalarProbe) {
  target.patch_b(0, 0) = 2.0;
  context.patch_b(0, 0) = 4.0;
  ema_update(target, context, 0.5);
  EXPECT_EQ(target.patch_b(0, 0), 3.0);
}

TEST_F(EmaTest, TwiceWithMEqualsOnceWithMSquared) {
  const double m = 0.9;
  auto twice = target;
  ema_update(twice, context, m);
  ema_update(twice, context, m);
  auto once = target;
  ema_update(once, context, m * m);
  zip_tensors(twice, once, [](const std::string& n, Mat<double>& a, const Mat<double>& b) {
    EXPECT_LT((a - b).cwiseAbs().maxCoeff(), 1e-12) << n;
  });
}

TEST_F(EmaTest, OutOfRangeMomentumIsRejected) {
  EXPECT_THROW(ema_update(target, context, 1.5), ContractViolation);
  EXPECT_THROW(ema_update(target, context, -0.1), ContractViolation);
}

TEST(Momentum, RampEndpointsAndMidpoint) {
  const EmaSchedule s{0.996, 1.0, 1000};
  EXPECT_EQ(momentum_at(s, 0), 0.996);
  EXPECT_EQ(momentum_at(s, 1000), 1.0);
  EXPECT_NEAR(momentum_at(s, 500), 0.998, 1e-15);
  EXPECT_EQ(momentum_at(s, 5000), 1.0);
  EXPECT_THROW(validate(EmaSchedule{0.999, 0.99, 10}), ConfigError);
}
