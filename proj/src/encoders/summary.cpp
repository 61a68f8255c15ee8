// SPDX-License-Identifier: Apache-2.0
#include "cpl/encoders/summary.hpp"

#include <algorithm>

#include "cpl/common/error.hpp"

namespace cpl::enc {

store::LevelSummaries multi_level_summary(std::span<const FeatureMap> maps) {
  require(!maps.empty(), ErrorCode::dimension, "multi-level summary needs at least one feature map");
  store::LevelSummaries out;
  out.reserve(maps.size());
  for (std::size_t q = 0; q < maps.size(); ++q) {
    const auto& m = maps[q];
    require(m.width >= 1 && m.height >= 1 && m.channels >= 1, ErrorCode::dimension,
            "feature map " + std::to_string(q) + " is empty");
    const std::size_t cells = m.width * m.height;
    require(m.values.size() == cells * m.channels, ErrorCode::dimension,
            "feature map " + std::to_string(q) + " holds " + std::to_string(m.values.size()) + " values, expected " +
                std::to_string(cells * m.channels));
    std::vector<double> row(m.channels);
    std::vector<double> column(cells);
    for (std::size_t c = 0; c < m.channels; ++c) {
      for (std::size_t i = 0; i < cells; ++i) column[i] = m.values[i * m.channels + c];
      std::sort(column.begin(), column.end());
      double sum = 0.0;
      for (double v : column) sum += v;
      row[c] = sum / static_cast<double>(cells);
    }
    out.push_back(std::move(row));
  }
  return out;
}

}  // namespace cpl::enc
