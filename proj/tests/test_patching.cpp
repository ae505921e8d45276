#include <gtest/gtest.h>

#include <set>

#include "test_util.hpp"

using namespace hsmae;

TEST(Patchify, DeskAndPaperTokenCounts) {
  const GridDims d = make_grid_dims(32, 32, 24, 8, 4);
  EXPECT_EQ(d.token_count(), 96u);
  EXPECT_EQ(d.token_len(), 256u);
  const GridDims e = make_grid_dims(128, 128, 240, 16, 10);
  EXPECT_EQ(e.token_count(), 1536u);
}

TEST(Patchify, NonDivisibleDimsThrow) {
  EXPECT_THROW(make_grid_dims(30, 32, 24, 8, 4), std::invalid_argument);
  EXPECT_THROW(make_grid_dims(32, 32, 23, 8, 4), std::invalid_argument);
}

TEST(Patchify, TokenContentsFollowLayout) {
  const auto v = fixtures::random_volume<double>(4, 6, 6, 1);
  const auto grid = patchify(v, 2, 3);
  const GridDims& d = grid.dims;
  for (std::size_t i = 0; i < d.gh; ++i)
    for (std::size_t j = 0; j < d.gw; ++j)
      for (std::size_t g = 0; g < d.gs; ++g) {
        std::size_t n = 0;
        for (std::size_t y = 0; y < 2; ++y)
          for (std::size_t x = 0; x < 2; ++x)
            for (std::size_t b = 0; b < 3; ++b)
              EXPECT_EQ(grid.tokens(d.token_index(i, j, g), n++), v(i * 2 + y, j * 2 + x, g * 3 + b));
      }
}

TEST(Patchify, RoundTripOverRandomDivisors) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t p = 1 + rng() % 4, s = 1 + rng() % 4;
    const std::size_t h = p * (1 + rng() % 4), w = p * (1 + rng() % 4), c = s * (1 + rng() % 5);
    const auto v = fixtures::random_volume<float>(h, w, c, rng());
    EXPECT_EQ(unpatchify(patchify(v, p, s), h, w, c), v);
  }
}

TEST(SampleMask, SpectralExample) {
  const GridDims d = make_grid_dims(8, 8, 96, 4, 4);  // gs = 24
  const MaskPlan plan = sample_mask(MaskStrategy::spectral, d, 0.75, 1);
  std::set<std::size_t> groups;
  for (std::size_t t : plan.masked()) groups.insert(d.group_of(t));
  EXPECT_EQ(groups.size(), 18u);
  EXPECT_EQ(plan.masked_count(), 18u * d.spatial_count());
}

TEST(SampleMask, SpatialSpectralExample) {
  const GridDims d = make_grid_dims(32, 32, 24, 8, 4);
  EXPECT_EQ(sample_mask(MaskStrategy::spatial_spectral, d, 0.75, 3).masked_count(), 72u);
  EXPECT_EQ(sample_mask(MaskStrategy::spatial, d, 0.0, 3).masked_count(), 0u);
}

TEST(SampleMask, SpatialPlansAreConstantAcrossGroups) {
  const GridDims d = make_grid_dims(16, 16, 12, 4, 3);
  const MaskPlan plan = sample_mask(MaskStrategy::spatial, d, 0.5, 9);
  for (std::size_t t = 0; t < d.token_count(); ++t)
    EXPECT_EQ(plan.is_masked(t), plan.is_masked(d.token_index(d.row_of(t), d.col_of(t), 0)));
  EXPECT_EQ(plan.masked_count(), 8u * d.gs);
}

TEST(SampleMask, InvalidRatioThrows) {
  const GridDims d = make_grid_dims(8, 8, 8, 4, 4);
  EXPECT_THROW(sample_mask(MaskStrategy::spectral, d, 1.0, 0), std::invalid_argument);
  EXPECT_THROW(sample_mask(MaskStrategy::spectral, d, -0.1, 0), std::invalid_argument);
  EXPECT_THROW(sample_mask(MaskStrategy::fixed_bands, d, 0.5, 0), std::invalid_argument);
}

TEST(SampleMask, DeterministicAndSeedSensitive) {
  const GridDims d = make_grid_dims(32, 32, 24, 8, 4);
  std::set<std::vector<std::size_t>> seen;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    EXPECT_EQ(sample_mask(MaskStrategy::spatial_spectral, d, 0.75, seed),
              sample_mask(MaskStrategy::spatial_spectral, d, 0.75, seed));
    seen.insert(sample_mask(MaskStrategy::spatial_spectral, d, 0.75, seed).masked());
  }
  EXPECT_EQ(seen.size(), 100u);
}

TEST(SampleMask, RoundHalfAwayFromZero) {
  EXPECT_EQ(masked_unit_count(0.5, 5), 3u);
  EXPECT_EQ(masked_unit_count(0.25, 2), 1u);
  EXPECT_EQ(masked_unit_count(0.75, 96), 72u);
}

TEST(MaskPlanJson, RoundTrip) {
  const GridDims d = make_grid_dims(16, 16, 8, 4, 2);
  const MaskPlan plan = sample_mask(MaskStrategy::spectral, d, 0.5, 42);
  const MaskPlan back = mask_plan_from_json(to_json(plan));
  EXPECT_EQ(back, plan);
  EXPECT_EQ(back.strategy(), MaskStrategy::spectral);
  EXPECT_EQ(back.seed(), std::optional<std::uint64_t>(42));
}

TEST(FixedBands, Examples) {
  const GridDims d = make_grid_dims(8, 8, 12, 4, 4);
  const std::vector<std::size_t> first{0, 1, 2, 3};
  const MaskPlan a = mask_from_visible_bands(first, d);
  EXPECT_EQ(a.masked_count(), (d.gs - 1) * d.spatial_count());
  EXPECT_EQ(a.strategy(), MaskStrategy::fixed_bands);
  EXPECT_EQ(mask_from_visible_bands({}, d).masked_count(), d.token_count());
  const std::vector<std::size_t> one_each{3, 4, 10};
  EXPECT_EQ(mask_from_visible_bands(one_each, d).masked_count(), 0u);
  const std::vector<std::size_t> bad{12};
  EXPECT_THROW(mask_from_visible_bands(bad, d), std::invalid_argument);
}

TEST(PosEmbed, SpectralSliceOnlyDiffersAcrossGroups) {
  const GridDims d = make_grid_dims(16, 16, 9, 4, 3);
  const Mat<double> pe = build_pos_embed<double>(d, 32);
  for (std::size_t g = 1; g < d.gs; ++g) {
    const auto a = pe.row(d.token_index(2, 1, 0)), b = pe.row(d.token_index(2, 1, g));
    EXPECT_EQ(a.head(16), b.head(16));
    EXPECT_NE(a.tail(16), b.tail(16));
  }
  EXPECT_EQ(pe, build_pos_embed<double>(d, 32));
}

TEST(PosEmbed, InvalidWidthThrows) {
  const GridDims d = make_grid_dims(8, 8, 8, 4, 4);
  EXPECT_THROW(build_pos_embed<float>(d, 12), std::invalid_argument);
  EXPECT_THROW(build_pos_embed<float>(d, 0), std::invalid_argument);
}

TEST(PosEmbed, SelfSimilarityIsMaximalBruteForce) {
  // 4x4 spatial grid, 3 groups: every row's dot product with itself beats every other row,
  // and all rows are distinct.
  const GridDims d = make_grid_dims(16, 16, 6, 4, 2);
  const Mat<double> pe = build_pos_embed<double>(d, 32);
  for (Eigen::Index a = 0; a < pe.rows(); ++a) {
    const double self = pe.row(a).dot(pe.row(a));
    for (Eigen::Index b = 0; b < pe.rows(); ++b) {
      if (a == b) continue;
      EXPECT_LT(pe.row(a).dot(pe.row(b)), self);
    }
  }
}

TEST(PosEmbed, ValuesMatchSinCosFormula) {
  const GridDims d = make_grid_dims(8, 8, 4, 4, 2);
  const std::size_t w = 16;
  const Mat<double> pe = build_pos_embed<double>(d, w);
  const std::size_t t = d.token_index(1, 0, 1);
  // Row block: width 4, two frequencies 1 and 1/100.
  EXPECT_NEAR(pe(t, 0), std::sin(1.0), 1e-15);
  EXPECT_NEAR(pe(t, 1), std::sin(1.0 / 100.0), 1e-15);
  EXPECT_NEAR(pe(t, 2), std::cos(1.0), 1e-15);
  EXPECT_NEAR(pe(t, 4), 0.0, 1e-15);  // column 0
  EXPECT_NEAR(pe(t, 6), 1.0, 1e-15);
  EXPECT_NEAR(pe(t, 8), std::sin(1.0), 1e-15);  // group 1, width 8
  EXPECT_NEAR(pe(t, 12), std::cos(1.0), 1e-15);
}
