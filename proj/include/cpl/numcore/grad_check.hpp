// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "cpl/numcore/autodiff.hpp"

namespace cpl::num {

struct ParamBlock {
  std::string name;
  Tensor value;
};

struct BlockError {
  std::string name;
  double max_relative_error = 0.0;
  double max_abs_gradient = 0.0;
};

struct GradCheckReport {
  std::vector<BlockError> blocks;
  double max_relative_error = 0.0;
  bool passed = false;
};

// Builds the scalar objective on a fresh tape. `leaves` holds one leaf per
// parameter block, in block order.
using ScalarFn = std::function<Var(Tape&, std::span<const Var> leaves)>;

// Compares reverse-mode gradients with central differences. The relative
// error of a block is max|analytic - numeric| over the block divided by the
// larger of the two gradients' max-magnitudes (floored at `scale_floor`).
GradCheckReport grad_check(const ScalarFn& fn, std::span<const ParamBlock> params, double step,
                           double tolerance, double scale_floor = 1e-8);

}  // namespace cpl::num
