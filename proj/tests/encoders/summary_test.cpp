// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include "cpl/common/error.hpp"
#include "cpl/common/rng.hpp"
#include "cpl/encoders/summary.hpp"

namespace cpl::enc {
namespace {

FeatureMap random_map(Rng& rng, std::size_t w, std::size_t h, std::size_t c) {
  FeatureMap m{w, h, c, std::vector<double>(w * h * c)};
  for (double& v : m.values) v = rng.normal() * 10.0;
  return m;
}

TEST(MultiLevelSummary, ConstantMapGivesConstantRow) {
  const std::vector<FeatureMap> maps = {{3, 2, 4, std::vector<double>(24, 3.0)}};
  const auto rows = multi_level_summary(maps);
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0], std::vector<double>(4, 3.0));
}

TEST(MultiLevelSummary, TwoByTwoSingleChannel) {
  const std::vector<FeatureMap> maps = {{2, 2, 1, {1, 2, 3, 4}}};
  EXPECT_EQ(multi_level_summary(maps)[0], std::vector<double>{2.5});
}

TEST(MultiLevelSummary, MatchesBruteForceMeanInLayerOrder) {
  Rng rng(11);
  const std::vector<FeatureMap> maps = {random_map(rng, 7, 7, 5), random_map(rng, 3, 4, 2), random_map(rng, 1, 1, 6)};
  const auto rows = multi_level_summary(maps);
  ASSERT_EQ(rows.size(), 3u);
  for (std::size_t q = 0; q < maps.size(); ++q) {
    ASSERT_EQ(rows[q].size(), maps[q].channels);
    for (std::size_t c = 0; c < maps[q].channels; ++c) {
      double sum = 0.0;
      for (std::size_t x = 0; x < maps[q].width; ++x) {
        for (std::size_t y = 0; y < maps[q].height; ++y) sum += maps[q].at(x, y, c);
      }
      EXPECT_NEAR(rows[q][c], sum / static_cast<double>(maps[q].width * maps[q].height), 1e-12);
    }
  }
}

TEST(MultiLevelSummary, InvariantUnderSpatialPermutation) {
  Rng rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    const FeatureMap base = random_map(rng, 1 + rng.index(6), 1 + rng.index(6), 1 + rng.index(4));
    const std::size_t cells = base.width * base.height;
    std::vector<std::size_t> perm(cells);
    for (std::size_t i = 0; i < cells; ++i) perm[i] = i;
    rng.shuffle(perm);
    FeatureMap shuffled = base;
    for (std::size_t i = 0; i < cells; ++i) {
      for (std::size_t c = 0; c < base.channels; ++c) {
        shuffled.values[perm[i] * base.channels + c] = base.values[i * base.channels + c];
      }
    }
    const std::vector<FeatureMap> a = {base};
    const std::vector<FeatureMap> b = {shuffled};
    EXPECT_EQ(multi_level_summary(a), multi_level_summary(b));
  }
}

TEST(MultiLevelSummary, EmptyInputsAreDimensionErrors) {
  const std::vector<FeatureMap> none;
  const std::vector<FeatureMap> zero_width = {{0, 2, 1, {}}};
  const std::vector<FeatureMap> short_values = {{2, 2, 1, {1, 2, 3}}};
  for (const auto* maps : {&none, &zero_width, &short_values}) {
    try {
      multi_level_summary(*maps);
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::dimension);
    }
  }
}

}  // namespace
}  // namespace cpl::enc
