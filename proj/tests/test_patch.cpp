#include "ijepa/dataset.hpp"
#include "ijepa/patch.hpp"
#include "ijepa/rng.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <set>

using namespace ijepa;

namespace {

Image random_image(int h, int w, int c, std::uint64_t seed) {
  Rng rng(seed);
  Image img(h, w, c);
  for (float& v : img.data) v = static_cast<float>(rng.uniform());
  return img;
}

}  // namespace

TEST(Patchify, GridOf224With16IsFourteenSquared) {
  const PatchGrid g = grid_for(224, 224, 16);
  EXPECT_EQ(g.rows, 14);
  EXPECT_EQ(g.cols, 14);
  EXPECT_EQ(g.n_patches(), 196);
}

TEST(Patchify, NonDivisibleSizeIsRejected) {
  EXPECT_THROW(grid_for(30, 32, 4), DimensionError);
  EXPECT_THROW(patchify(Image(30, 32, 3), 4), DimensionError);
}

TEST(Patchify, TooSmallGridIsRejected) {
  EXPECT_THROW(grid_for(4, 8, 4), DimensionError);
  EXPECT_THROW(make_grid(1, 5), DimensionError);
}

TEST(Patchify, LayoutMatchesIndexOracle) {
  const Image img = random_image(8, 12, 3, 1);
  const auto p = patchify<double>(img, 4);
  ASSERT_EQ(p.vectors.rows(), 6);
  ASSERT_EQ(p.vectors.cols(), 48);
  for (int k = 0; k < 6; ++k) {
    const int r = k / 3;
    const int c = k % 3;
    for (int ch = 0; ch < 3; ++ch) {
      for (int dy = 0; dy < 4; ++dy) {
        for (int dx = 0; dx < 4; ++dx) {
          EXPECT_EQ(p.vectors(k, ch * 16 + dy * 4 + dx), img.at(ch, 4 * r + dy, 4 * c + dx));
        }
      }
    }
  }
}

TEST(Patchify, RoundTripIsExact) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Image img = random_image(16, 24, 3, seed);
    EXPECT_EQ(unpatchify(patchify<float>(img, 4), 3), img);
  }
}

TEST(PositionalEmbedding, MatchesClosedForm) {
  const PatchGrid g = make_grid(5, 7);
  const int d = 16;
  const Mat<double> t = positional_embedding<double>(g, d);
  ASSERT_EQ(t.rows(), 35);
  ASSERT_EQ(t.cols(), d);
  for (int k = 0; k < g.n_patches(); ++k) {
    const double r = k / 7;
    const double c = k % 7;
    for (int f = 0; f < 4; ++f) {
      const double w = 1.0 / std::pow(10000.0, f / 4.0);
      EXPECT_NEAR(t(k, f), std::sin(r * w), 1e-15);
      EXPECT_NEAR(t(k, 4 + f), std::cos(r * w), 1e-15);
      EXPECT_NEAR(t(k, 8 + f), std::sin(c * w), 1e-15);
      EXPECT_NEAR(t(k, 12 + f), std::cos(c * w), 1e-15);
    }
  }
}

TEST(PositionalEmbedding, RowsAreDistinct) {
  const Mat<double> t = positional_embedding<double>(make_grid(14, 14), 64);
  for (int a = 0; a < t.rows(); ++a) {
    for (int b = a + 1; b < t.rows(); ++b) EXPECT_GT((t.row(a) - t.row(b)).norm(), 1e-6);
  }
}

TEST(PositionalEmbedding, WidthMustBeMultipleOfFour) {
  EXPECT_THROW(positional_embedding<double>(make_grid(2, 2), 18), ConfigError);
}

TEST(EmbedPatches, SubsetEqualsFullSelection) {
  const Image img = random_image(16, 16, 3, 9);
  const auto p = patchify<double>(img, 4);
  Rng rng(2);
  Mat<double> w(48, 8), b(1, 8);
  for (Index i = 0; i < w.size(); ++i) w.data()[i] = rng.normal();
  for (Index i = 0; i < b.size(); ++i) b.data()[i] = rng.normal();
  const Mat<double> pos = positional_embedding<double>(p.grid, 8);
  std::vector<int> all(16);
  for (int k = 0; k < 16; ++k) all[static_cast<std::size_t>(k)] = k;
  const auto full = embed_patches(p.vectors, all, w, b, pos);
  const std::vector<int> sub{1, 5, 6, 15};
  const auto part = embed_patches(p.vectors, sub, w, b, pos);
  for (std::size_t i = 0; i < sub.size(); ++i) {
    EXPECT_TRUE(part.embeddings.row(static_cast<Index>(i)).isApprox(full.embeddings.row(sub[i]), 1e-14));
  }
  const Mat<double> oracle = p.vectors.row(5) * w + b + pos.row(5);
  EXPECT_TRUE(part.embeddings.row(1).isApprox(oracle, 1e-14));
}

TEST(EmbedPatches, WrongPatchLengthIsDimensionError) {
  const Mat<double> pv = Mat<double>::Zero(4, 10);
  const Mat<double> w = Mat<double>::Zero(12, 4);
  const Mat<double> b = Mat<double>::Zero(1, 4);
  const Mat<double> pos = Mat<double>::Zero(4, 4);
  EXPECT_THROW(embed_patches(pv, {0}, w, b, pos), DimensionError);
}

TEST(Dataset, SaveLoadRoundTripWithLabels) {
  SyntheticSpec spec;
  spec.n_images = 12;
  spec.size = 16;
  spec.seed = 3;
  const Dataset ds = make_synthetic(spec);
  const auto dir = ijepa::testing::temp_dir("dataset");
  const std::string path = (dir / "d.ijds").string();
  save_dataset(ds, path);
  const Dataset back = load_dataset(path);
  ASSERT_EQ(back.images.size(), ds.images.size());
  for (std::size_t i = 0; i < ds.images.size(); ++i) {
    EXPECT_EQ(back.images[i], ds.images[i]);
    EXPECT_EQ(back.labels[i].shape, ds.labels[i].shape);
    EXPECT_EQ(back.labels[i].count, ds.labels[i].count);
  }
}

TEST(Dataset, SyntheticCorpusIsSeededAndBalancedEnough) {
  SyntheticSpec spec;
  spec.n_images = 400;
  const Dataset a = make_synthetic(spec);
  const Dataset b = make_synthetic(spec);
  std::vector<int> counts(kNumShapes, 0);
  for (std::size_t i = 0; i < a.images.size(); ++i) {
    ASSERT_EQ(a.images[i], b.images[i]);
    ASSERT_GE(a.labels[i].count, spec.min_objects);
    ASSERT_LE(a.labels[i].count, spec.max_objects);
    ++counts[static_cast<std::size_t>(a.labels[i].shape)];
    for (float v : a.images[i].data) ASSERT_TRUE(v >= 0.0f && v <= 1.0f);
  }
  for (int c : counts) EXPECT_GT(c, 60);
}
