// SPDX-License-Identifier: Apache-2.0
#include "cpl/numcore/ops.hpp"

#include <algorithm>
#include <cmath>

#include "cpl/common/error.hpp"

namespace cpl::num {

Tensor matmul(const Tensor& a, const Tensor& b) {
  require(a.rank() == 2 && b.rank() == 2, ErrorCode::dimension,
          "matmul expects matrices, got " + shape_string(a.shape()) + " and " + shape_string(b.shape()));
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  require(b.shape()[0] == k, ErrorCode::dimension,
          "matmul inner extents differ: " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    auto dst = out.row(i);
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a.at(i, p);
      if (aip == 0.0) continue;
      auto src = b.row(p);
      for (std::size_t j = 0; j < n; ++j) dst[j] += aip * src[j];
    }
  }
  return out;
}

Tensor transpose(const Tensor& a) {
  require(a.rank() == 2, ErrorCode::dimension, "transpose expects a matrix");
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  Tensor out({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.at(j, i) = a.at(i, j);
  return out;
}

namespace {

void softmax_inplace(std::span<double> v) {
  const double peak = *std::max_element(v.begin(), v.end());
  double total = 0.0;
  for (double& x : v) {
    x = std::exp(x - peak);
    total += x;
  }
  for (double& x : v) x /= total;
}

}  // namespace

Tensor softmax_rows(const Tensor& x) {
  require(x.numel() > 0, ErrorCode::dimension, "softmax over an empty axis");
  Tensor out = x;
  for (std::size_t r = 0; r < out.rows(); ++r) softmax_inplace(out.row(r));
  return out;
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  require(x.numel() > 0, ErrorCode::dimension, "softmax over an empty axis");
  require(x.rank() <= 2 && axis < x.rank(), ErrorCode::dimension,
          "softmax axis " + std::to_string(axis) + " invalid for shape " + shape_string(x.shape()));
  if (axis + 1 == x.rank()) return softmax_rows(x);
  return transpose(softmax_rows(transpose(x)));
}

Tensor log_softmax_rows(const Tensor& x) {
  require(x.numel() > 0, ErrorCode::dimension, "log_softmax over an empty axis");
  Tensor out = x;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto v = out.row(r);
    const double peak = *std::max_element(v.begin(), v.end());
    double total = 0.0;
    for (double xv : v) total += std::exp(xv - peak);
    const double lse = peak + std::log(total);
    for (double& xv : v) xv -= lse;
  }
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const std::size_t d = x.cols();
  require(d >= 1, ErrorCode::dimension, "layer_norm needs a non-empty last extent");
  require(gain.numel() == d && bias.numel() == d, ErrorCode::dimension,
          "layer_norm gain/bias must have " + std::to_string(d) + " entries");
  Tensor out = x;
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto v = out.row(r);
    double mean = 0.0;
    for (double xv : v) mean += xv;
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (double xv : v) var += (xv - mean) * (xv - mean);
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) v[j] = (v[j] - mean) * inv * gain[j] + bias[j];
  }
  return out;
}

double dot(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), ErrorCode::dimension, "dot of unequal lengths");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

Tensor l2_normalize(const Tensor& x) {
  Tensor out = x;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto v = out.row(r);
    const double n = norm(v);
    require(n > 0.0, ErrorCode::degenerate, "cannot normalize a zero vector (row " + std::to_string(r) + ")");
    for (double& xv : v) xv /= n;
  }
  return out;
}

double to_stored(double v) { return static_cast<double>(static_cast<float>(v)); }

}  // namespace cpl::num
