// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "cpl/feature_store/records.hpp"

namespace cpl::enc {

// One encoder layer's spatial output, laid out [W][H][C].
struct FeatureMap {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 0;
  std::vector<double> values;

  double at(std::size_t x, std::size_t y, std::size_t c) const { return values[(x * height + y) * channels + c]; }
};

// Global average pooling per level, in layer order. Each channel's values
// are summed in sorted order, so the result does not depend on how the
// spatial positions are arranged.
store::LevelSummaries multi_level_summary(std::span<const FeatureMap> maps);

}  // namespace cpl::enc
