#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include "rforge/slic3d.hpp"
#include "slic_oracle.hpp"
#include "test_util.hpp"

using namespace rforge;
using test::naive_slic;
using test::NaiveSlic;

namespace {

std::vector<std::size_t> histogram(const SuperpixelMap& m) {
  std::vector<std::size_t> h(m.count, 0);
  for (auto l : m.labels) ++h[l];
  return h;
}

Volume single(Dims d, std::uint64_t seed) { return test::random_volume(1, d, seed); }

}  // namespace

TEST(SlicOracle, MatchesNaiveOnAllSmallFixtures) {
  const std::vector<Dims> shapes = {{2, 2, 2}, {3, 3, 3}, {4, 4, 4}, {2, 3, 5}, {4, 6, 3},
                                    {5, 5, 5}, {8, 8, 4}, {6, 7, 8}, {8, 8, 8}, {1, 8, 8}};
  std::size_t fixtures = 0;
  for (const Dims& d : shapes)
    for (std::uint32_t k = 2; k <= 8 && k <= d.count(); ++k)
      for (double m : {0.1, 1.0, 10.0})
        for (std::uint64_t seed = 0; seed < 2; ++seed) {
          const Volume v = single(d, seed * 100 + k);
          SlicConfig cfg;
          cfg.k = k;
          cfg.compactness = m;
          const SlicAssignment got = slic_assign(v, cfg);
          const NaiveSlic want = naive_slic(v, k, m, cfg.max_iters);
          ASSERT_EQ(got.labels, want.labels) << to_string(d) << " k=" << k << " m=" << m;
          ++fixtures;
        }
  EXPECT_GT(fixtures, 300u);
}

TEST(SlicOracle, ConstantVolumeIsSpatialVoronoi) {
  const Volume v(1, {8, 8, 8}, 0.5f);
  for (double m : {0.1, 1.0, 10.0}) {
    SlicConfig cfg;
    cfg.k = 8;
    cfg.compactness = m;
    const SuperpixelMap s = slic_segment(v, cfg);
    ASSERT_EQ(s.count, 8u);
    for (auto h : histogram(s)) EXPECT_EQ(h, 64u);
    for (std::uint32_t z = 0; z < 8; ++z)
      for (std::uint32_t y = 0; y < 8; ++y)
        for (std::uint32_t x = 0; x < 8; ++x)
          EXPECT_EQ(s.labels[(z * 8 + y) * 8 + x], s.labels[((z / 4 * 4) * 8 + y / 4 * 4) * 8 + x / 4 * 4]);
    EXPECT_EQ(naive_slic(v, 8, m, 10).labels, slic_assign(v, cfg).labels);
  }
}

TEST(SlicOracle, TwoBlocksSeparate) {
  Volume v(1, {8, 8, 4});
  for (std::uint32_t z = 0; z < 8; ++z)
    for (std::uint32_t y = 0; y < 8; ++y)
      for (std::uint32_t x = 0; x < 4; ++x) v.at(0, z, y, x) = y < 4 ? 0.0f : 1.0f;
  SlicConfig cfg;
  cfg.k = 2;
  cfg.compactness = 0.01;
  const SuperpixelMap s = slic_segment(v, cfg);
  ASSERT_EQ(s.count, 2u);
  for (std::uint32_t z = 0; z < 8; ++z)
    for (std::uint32_t y = 0; y < 8; ++y)
      for (std::uint32_t x = 0; x < 4; ++x) EXPECT_EQ(s.labels[(z * 8 + y) * 4 + x], y < 4 ? 0u : 1u);
  EXPECT_EQ(naive_slic(v, 2, 0.01, 10).labels, slic_assign(v, cfg).labels);
}

TEST(Slic, KEqualsNGivesSingletons) {
  const Volume v = single({2, 3, 2}, 4);
  SlicConfig cfg;
  cfg.k = 12;
  const SuperpixelMap s = slic_segment(v, cfg);
  EXPECT_EQ(s.count, 12u);
  for (auto h : histogram(s)) EXPECT_EQ(h, 1u);
}

TEST(Slic, Rejections) {
  const Volume v = single({2, 2, 2}, 1);
  SlicConfig cfg;
  cfg.k = 9;
  EXPECT_THROW(slic_segment(v, cfg), SpecError);
  cfg.k = 1;
  EXPECT_THROW(slic_segment(v, cfg), SpecError);
  cfg.k = 2;
  cfg.compactness = 0;
  EXPECT_THROW(slic_segment(v, cfg), SpecError);
  EXPECT_THROW(slic_segment(Volume(2, {2, 2, 2}), SlicConfig{2}), DimensionError);
}

TEST(Slic, PartitionAndConnectivityOnRandomVolumes) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    CounterRng rng(seed, 31);
    const Dims d{static_cast<std::uint32_t>(4 + rng.below(13)), static_cast<std::uint32_t>(4 + rng.below(13)),
                 static_cast<std::uint32_t>(4 + rng.below(13))};
    SlicConfig cfg;
    cfg.k = static_cast<std::uint32_t>(2 + rng.below(60));
    cfg.compactness = std::pow(10.0, rng.uniform(-1.5, 1.5));
    const SuperpixelMap s = slic_segment(single(d, seed), cfg);
    EXPECT_TRUE(is_partition(s)) << seed;
    EXPECT_TRUE(is_connected(s)) << seed;
    std::size_t total = 0;
    for (auto h : histogram(s)) total += h;
    EXPECT_EQ(total, d.count());
  }
}

TEST(Slic, Deterministic) {
  const Volume v = single({12, 12, 12}, 8);
  SlicConfig cfg;
  cfg.k = 27;
  EXPECT_EQ(slic_segment(v, cfg), slic_segment(v, cfg));
}

TEST(Slic, CompactnessMonotonicity) {
  const Volume v = single({16, 16, 16}, 5);
  SlicConfig cfg;
  cfg.k = 27;
  double prev = std::numeric_limits<double>::infinity();
  for (double m : {0.1, 1.0, 10.0}) {
    cfg.compactness = m;
    const double r = mean_surface_to_volume(slic_segment(v, cfg));
    EXPECT_LE(r, prev) << "m=" << m;
    prev = r;
  }
}

TEST(SlicGrid, FactorsTargetCount) {
  EXPECT_EQ(slic_grid({8, 8, 8}, 8), (std::array<std::uint32_t, 3>{2, 2, 2}));
  EXPECT_EQ(slic_grid({32, 32, 32}, 64), (std::array<std::uint32_t, 3>{4, 4, 4}));
  EXPECT_EQ(slic_grid({8, 8, 4}, 2), (std::array<std::uint32_t, 3>{1, 2, 1}));
}

TEST(Connectivity, ConnectedMapUnchangedUpToRelabel) {
  const Dims d{4, 4, 4};
  std::vector<std::uint32_t> labels(64);
  for (std::size_t i = 0; i < 64; ++i) labels[i] = (i % 4) < 2 ? 7 : 3;
  SlicConfig cfg;
  cfg.k = 2;
  const SuperpixelMap s = enforce_connectivity(d, labels, cfg);
  EXPECT_EQ(s.count, 2u);
  for (std::size_t i = 0; i < 64; ++i) EXPECT_EQ(s.labels[i], (i % 4) < 2 ? 0u : 1u);
}

TEST(Connectivity, StrayVoxelAbsorbed) {
  const Dims d{4, 4, 4};
  std::vector<std::uint32_t> labels(64, 0);
  for (std::size_t i = 0; i < 64; ++i)
    if (i / 16 >= 2) labels[i] = 1;
  labels[(0 * 4 + 2) * 4 + 1] = 1;  // island inside label 0
  SlicConfig cfg;
  cfg.k = 2;
  const SuperpixelMap s = enforce_connectivity(d, labels, cfg);
  EXPECT_EQ(s.count, 2u);
  EXPECT_EQ(s.labels[(0 * 4 + 2) * 4 + 1], s.labels[0]);
  EXPECT_TRUE(is_connected(s));
}

TEST(Connectivity, SplitsDisconnectedLabel) {
  const Dims d{1, 1, 9};
  const std::vector<std::uint32_t> labels{0, 0, 0, 1, 1, 1, 0, 0, 0};
  SlicConfig cfg;
  cfg.k = 3;
  cfg.min_size_fraction = 0;
  const SuperpixelMap s = enforce_connectivity(d, labels, cfg);
  EXPECT_EQ(s.count, 3u);
  EXPECT_EQ(s.labels, (std::vector<std::uint32_t>{0, 0, 0, 1, 1, 1, 2, 2, 2}));
}

TEST(Connectivity, RandomLabelingsBecomeValid) {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const Dims d{5, 6, 7};
    CounterRng rng(seed, 3);
    std::vector<std::uint32_t> labels(d.count());
    for (auto& l : labels) l = static_cast<std::uint32_t>(rng.below(4));
    SlicConfig cfg;
    cfg.k = 10;
    const SuperpixelMap s = enforce_connectivity(d, labels, cfg);
    EXPECT_TRUE(is_partition(s));
    EXPECT_TRUE(is_connected(s));
    for (auto h : histogram(s)) EXPECT_GE(static_cast<double>(h), 0.25 * d.count() / cfg.k);
  }
}

TEST(SuperpixelMap, VolumeRoundTrip) {
  SlicConfig cfg;
  cfg.k = 8;
  const SuperpixelMap s = slic_segment(single({6, 6, 6}, 2), cfg);
  EXPECT_EQ(SuperpixelMap::from_volume(s.to_volume()), s);
}
