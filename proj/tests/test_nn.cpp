#include "ijepa/nn.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <functional>

using namespace ijepa;

namespace {

Mat<double> randn(Index r, Index c, Rng& rng, double s = 1.0) {
  Mat<double> m(r, c);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = s * rng.normal();
  return m;
}

// Perturbs every parameter so zero biases and unit gains do not mask bugs.
template <class P>
void jitter(P& params, Rng& rng, double s) {
  for (auto& nt : named_tensors(params)) {
    for (Index i = 0; i < nt.tensor->size(); ++i) nt.tensor->data()[i] += s * rng.normal();
  }
}

double rel_err(double a, double b) { return std::abs(a - b) / std::max(std::abs(a) + std::abs(b), 1e-6); }

// Naive per-element attention used as an oracle.
Mat<double> attention_oracle(const BlockParams<double>& p, const Mat<double>& a, int heads) {
  const Index n = a.rows(), d = a.cols(), hd = d / heads;
  const Mat<double> qkv = a * p.qkv_w + p.qkv_b.replicate(n, 1);
  Mat<double> ctx = Mat<double>::Zero(n, d);
  for (int h = 0; h < heads; ++h) {
    for (Index i = 0; i < n; ++i) {
      std::vector<double> s(static_cast<std::size_t>(n));
      double mx = -1e300;
      for (Index j = 0; j < n; ++j) {
        double dot = 0.0;
        for (Index e = 0; e < hd; ++e) dot += qkv(i, h * hd + e) * qkv(j, d + h * hd + e);
        s[static_cast<std::size_t>(j)] = dot / std::sqrt(static_cast<double>(hd));
        mx = std::max(mx, s[static_cast<std::size_t>(j)]);
      }
      double z = 0.0;
      for (double& v : s) z += (v = std::exp(v - mx));
      for (Index j = 0; j < n; ++j) {
        for (Index e = 0; e < hd; ++e) ctx(i, h * hd + e) += s[static_cast<std::size_t>(j)] / z * qkv(j, 2 * d + h * hd + e);
      }
    }
  }
  return ctx * p.proj_w + p.proj_b.replicate(n, 1);
}

}  // namespace

TEST(Gelu, MatchesReferenceValues) {
  // 0.5 x (1 + erf(x / sqrt 2)) at a few points, computed with mpmath to 16 digits.
  EXPECT_NEAR(gelu(1.0), 0.8413447460685429, 1e-15);
  EXPECT_NEAR(gelu(-1.0), -0.15865525393145707, 1e-15);
  EXPECT_NEAR(gelu(2.5), 2.48447583668556, 1e-12);
  EXPECT_EQ(gelu(0.0), 0.0);
}

TEST(Gelu, GradientMatchesFiniteDifference) {
  for (double x = -4.0; x <= 4.0; x += 0.37) {
    const double fd = (gelu(x + 1e-6) - gelu(x - 1e-6)) / 2e-6;
    EXPECT_NEAR(gelu_grad(x), fd, 1e-8) << x;
  }
}

TEST(LayerNorm, MatchesLoopOracle) {
  Rng rng(1);
  const Mat<double> x = randn(5, 8, rng, 3.0);
  const Mat<double> g = randn(1, 8, rng);
  const Mat<double> b = randn(1, 8, rng);
  const Mat<double> y = layer_norm<double>(x, g, b, nullptr);
  for (Index i = 0; i < 5; ++i) {
    double mu = 0.0, var = 0.0;
    for (Index j = 0; j < 8; ++j) mu += x(i, j) / 8;
    for (Index j = 0; j < 8; ++j) var += (x(i, j) - mu) * (x(i, j) - mu) / 8;
    for (Index j = 0; j < 8; ++j) {
      EXPECT_NEAR(y(i, j), (x(i, j) - mu) / std::sqrt(var + 1e-6) * g(0, j) + b(0, j), 1e-12);
    }
  }
}

TEST(LayerNorm, BackwardMatchesFiniteDifference) {
  Rng rng(2);
  Mat<double> x = randn(3, 6, rng);
  Mat<double> g = randn(1, 6, rng);
  Mat<double> b = randn(1, 6, rng);
  const Mat<double> w = randn(3, 6, rng);  // loss = sum(w .* y)
  LayerNormCache<double> c;
  layer_norm<double>(x, g, b, &c);
  Mat<double> dg = Mat<double>::Zero(1, 6), db = Mat<double>::Zero(1, 6);
  const Mat<double> dx = layer_norm_backward<double>(c, g, w, dg, db);
  auto loss = [&] { return layer_norm<double>(x, g, b, nullptr).cwiseProduct(w).sum(); };
  for (Index i = 0; i < x.size(); ++i) {
    const double s = x.data()[i];
    x.data()[i] = s + 1e-6;
    const double up = loss();
    x.data()[i] = s - 1e-6;
    const double down = loss();
    x.data()[i] = s;
    EXPECT_LT(rel_err(dx.data()[i], (up - down) / 2e-6), 1e-6);
  }
  for (Index j = 0; j < 6; ++j) {
    const double s = g(0, j);
    g(0, j) = s + 1e-6;
    const double up = loss();
    g(0, j) = s - 1e-6;
    const double down = loss();
    g(0, j) = s;
    EXPECT_LT(rel_err(dg(0, j), (up - down) / 2e-6), 1e-6);
  }
}

TEST(Attention, MatchesNaiveOracle) {
  Rng rng(3);
  auto p = BlockParams<double>::init(8, 16, rng);
  jitter(p, rng, 0.3);
  const Mat<double> a = randn(7, 8, rng);
  const Mat<double> fast = attention<double>(p, a, 2, nullptr);
  EXPECT_TRUE(fast.isApprox(attention_oracle(p, a, 2), 1e-12));
}

TEST(Attention, StackIsPermutationEquivariantWithoutPositions) {
  Rng rng(4);
  auto s = StackParams<double>::init(8, 2, 2.0, rng);
  jitter(s, rng, 0.2);
  const Mat<double> x = randn(6, 8, rng);
  Eigen::PermutationMatrix<Eigen::Dynamic> perm(6);
  perm.indices() << 3, 0, 5, 1, 4, 2;
  const Mat<double> y = stack_forward<double>(s, x, {2, "s", 0}, nullptr);
  const Mat<double> yp = stack_forward<double>(s, perm * x, {2, "s", 0}, nullptr);
  EXPECT_TRUE((perm * y).isApprox(yp, 1e-12));
}

TEST(Block, BackwardMatchesFiniteDifferenceForAllParameters) {
  Rng rng(5);
  auto s = StackParams<double>::init(8, 2, 2.0, rng);
  jitter(s, rng, 0.2);
  const Mat<double> x0 = randn(5, 8, rng);
  const Mat<double> w = randn(5, 8, rng);
  StackCache<double> cache;
  stack_forward<double>(s, x0, {2, "s", 0}, &cache);
  StackParams<double> grads = zeros_like(s);
  const Mat<double> dx = stack_backward<double>(s, cache, w, 2, grads);
  auto loss = [&](const Mat<double>& x) { return stack_forward<double>(s, x, {2, "s", 0}, nullptr).cwiseProduct(w).sum(); };

  double worst = 0.0;
  auto params = named_tensors(s);
  auto gs = named_tensors(grads);
  for (std::size_t t = 0; t < params.size(); ++t) {
    Mat<double>& m = *params[t].tensor;
    for (Index i = 0; i < m.size(); i += 1 + m.size() / 7) {
      const double saved = m.data()[i];
      m.data()[i] = saved + 1e-6;
      const double up = loss(x0);
      m.data()[i] = saved - 1e-6;
      const double down = loss(x0);
      m.data()[i] = saved;
      const double fd = (up - down) / 2e-6;
      const double an = gs[t].tensor->data()[i];
      if (std::abs(an) + std::abs(fd) > 1e-7) worst = std::max(worst, rel_err(an, fd));
    }
  }
  EXPECT_LT(worst, 1e-5);
  Mat<double> x = x0;
  for (Index i = 0; i < x.size(); ++i) {
    const double saved = x.data()[i];
    x.data()[i] = saved + 1e-6;
    const double up = loss(x);
    x.data()[i] = saved - 1e-6;
    const double down = loss(x);
    x.data()[i] = saved;
    EXPECT_LT(rel_err(dx.data()[i], (up - down) / 2e-6), 1e-5);
  }
}

TEST(Stack, NonFiniteActivationNamesLayer) {
  Rng rng(6);
  auto s = StackParams<double>::init(8, 3, 2.0, rng);
  s.blocks[1].fc2_b(0, 0) = std::numeric_limits<double>::quiet_NaN();
  try {
    stack_forward<double>(s, randn(4, 8, rng), {2, "encoder", 0}, nullptr);
    FAIL() << "expected NumericalFailure";
  } catch (const NumericalFailure& e) {
    EXPECT_EQ(e.layer(), 1);
    EXPECT_NE(std::string(e.what()).find("encoder"), std::string::npos);
  }
}

TEST(TruncNormal, StaysWithinTwoSigmaAndHasRoughStd) {
  Rng rng(7);
  const Mat<double> m = trunc_normal<double>(200, 200, rng, 0.02);
  EXPECT_LE(m.cwiseAbs().maxCoeff(), 0.04);
  const double sd = std::sqrt(m.array().square().mean());
  // std of a normal truncated at +-2 sigma is 0.8796 sigma
  EXPECT_NEAR(sd, 0.02 * 0.8796, 0.0005);
}

TEST(NamedTensors, FollowCheckpointNaming) {
  Rng rng(8);
  auto s = StackParams<double>::init(8, 1, 2.0, rng);
  const auto names = named_tensors(s, "enc/");
  ASSERT_EQ(names.size(), 14u);
  EXPECT_EQ(names.front().name, "enc/blocks.0.norm1.weight");
  EXPECT_EQ(names.back().name, "enc/norm.bias");
}
