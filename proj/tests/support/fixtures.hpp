// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "cpl/common/rng.hpp"
#include "cpl/numcore/tensor.hpp"

namespace cpl::testing {

inline num::Tensor random_tensor(Rng& rng, num::Shape shape, double scale = 1.0) {
  std::vector<double> data(num::shape_numel(shape));
  for (double& v : data) v = scale * rng.normal();
  return num::Tensor(std::move(shape), std::move(data));
}

inline std::vector<double> random_unit(Rng& rng, std::size_t d) {
  std::vector<double> v(d);
  double n = 0.0;
  for (double& x : v) {
    x = rng.normal();
    n += x * x;
  }
  n = std::sqrt(n);
  for (double& x : v) x /= n;
  return v;
}

// Same direction rounded through single precision, as stored in files.
inline std::vector<double> random_unit_stored(Rng& rng, std::size_t d) {
  auto v = random_unit(rng, d);
  for (double& x : v) x = static_cast<double>(static_cast<float>(x));
  return v;
}

inline double max_abs_diff(const num::Tensor& a, const num::Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// Fresh per-test scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir() {
  const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
  auto dir = std::filesystem::temp_directory_path() / "cpl_tests" /
             (std::string(info->test_suite_name()) + "." + info->name());
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace cpl::testing
