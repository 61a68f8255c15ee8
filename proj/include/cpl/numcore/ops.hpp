// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>

#include "cpl/numcore/tensor.hpp"

namespace cpl::num {

// Value-level kernels. The tape ops in autodiff.hpp call these for their
// forward pass.

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

// axis indexes the tensor's extents; only rank 1 and rank 2 are supported.
Tensor softmax(const Tensor& x, std::size_t axis);
Tensor softmax_rows(const Tensor& x);
Tensor log_softmax_rows(const Tensor& x);

// Normalizes each row over the last extent, then applies gain and bias.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps);

// Unit Euclidean norm per row; a zero row is a degenerate-input error.
Tensor l2_normalize(const Tensor& x);

double dot(std::span<const double> a, std::span<const double> b);
double norm(std::span<const double> a);

// Drops finite-precision error back to single precision, matching what the
// binary containers store.
double to_stored(double v);

}  // namespace cpl::num
