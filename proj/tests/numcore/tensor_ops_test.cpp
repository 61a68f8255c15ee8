// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>

#include "cpl/common/error.hpp"
#include "cpl/numcore/ops.hpp"
#include "support/fixtures.hpp"

namespace cpl::num {
namespace {

using cpl::testing::random_tensor;

TEST(Tensor, RejectsNonPositiveExtentsAndNonFiniteData) {
  EXPECT_THROW(Tensor({0, 2}), Error);
  EXPECT_THROW(Tensor({2}, std::vector<double>{1.0}), Error);
  try {
    Tensor({1}, std::vector<double>{std::nan("")});
    FAIL() << "expected non-finite error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::non_finite);
  }
}

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
  const Tensor m = Tensor::matrix(2, 2, {1, 2, 3, 4});
  EXPECT_EQ(matmul(Tensor::identity(2), m), m);
}

TEST(Matmul, OrthogonalBasisGivesZero) {
  const Tensor a = Tensor::matrix(1, 2, {1, 0});
  const Tensor b = Tensor::matrix(2, 1, {0, 1});
  const Tensor c = matmul(a, b);
  ASSERT_EQ(c.shape(), (Shape{1, 1}));
  EXPECT_EQ(c[0], 0.0);
}

TEST(Matmul, InnerExtentMismatchIsDimensionError) {
  try {
    matmul(Tensor({2, 3}), Tensor({2, 3}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::dimension);
  }
}

TEST(Matmul, AssociativeOnRandomTriples) {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t m = 1 + rng.index(5), k = 1 + rng.index(5), n = 1 + rng.index(5), p = 1 + rng.index(5);
    const Tensor a = random_tensor(rng, {m, k});
    const Tensor b = random_tensor(rng, {k, n});
    const Tensor c = random_tensor(rng, {n, p});
    const Tensor left = matmul(matmul(a, b), c);
    const Tensor right = matmul(a, matmul(b, c));
    double scale = 0.0;
    for (double v : left.data()) scale = std::max(scale, std::abs(v));
    EXPECT_LE(cpl::testing::max_abs_diff(left, right), 1e-9 * std::max(scale, 1.0));
  }
}

TEST(Softmax, SymmetricInputIsUniform) {
  const Tensor p = softmax(Tensor::vector({0, 0}), 0);
  EXPECT_DOUBLE_EQ(p[0], 0.5);
  EXPECT_DOUBLE_EQ(p[1], 0.5);
}

TEST(Softmax, LargeLogitsDoNotOverflow) {
  const Tensor p = softmax(Tensor::vector({1000, 0}), 0);
  EXPECT_NEAR(p[0], 1.0, 1e-15);
  EXPECT_GE(p[1], 0.0);
  EXPECT_LT(p[1], 1e-300);
}

TEST(Softmax, MatchesHighPrecisionValue) {
  // 1 / (1 + e^-10) evaluated at 30 significant digits.
  const Tensor p = softmax(Tensor::vector({20, 10}), 0);
  EXPECT_NEAR(p[0], 0.999954602131297565605, 1e-15);
  EXPECT_NEAR(p[1], 4.53978687024343945047e-05, 1e-15);
}

TEST(Softmax, ColumnAxisNormalizesColumns) {
  const Tensor x = Tensor::matrix(2, 2, {0, 1, 0, 3});
  const Tensor p = softmax(x, 0);
  EXPECT_DOUBLE_EQ(p.at(0, 0), 0.5);
  EXPECT_NEAR(p.at(0, 1) + p.at(1, 1), 1.0, 1e-15);
}

TEST(Softmax, SumsToOneOnFuzzedInputs) {
  Rng rng(3);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t n = 1 + rng.index(40);
    const Tensor x = random_tensor(rng, {n}, std::pow(10.0, rng.uniform(-2.0, 3.0)));
    const Tensor p = softmax(x, 0);
    double total = 0.0;
    for (double v : p.data()) {
      EXPECT_GE(v, 0.0);
      total += v;
    }
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
}

TEST(LayerNorm, ConstantRowMapsToZero) {
  const Tensor y = layer_norm(Tensor::vector({3, 3, 3}), Tensor({3}, 1.0), Tensor({3}), 1e-5);
  for (double v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(LayerNorm, NormalizedRowIsFixedPoint) {
  const Tensor y = layer_norm(Tensor::vector({1, -1}), Tensor({2}, 1.0), Tensor({2}), 1e-14);
  EXPECT_NEAR(y[0], 1.0, 1e-12);
  EXPECT_NEAR(y[1], -1.0, 1e-12);
}

TEST(LayerNorm, RowsHaveZeroMeanUnitVariance) {
  Rng rng(5);
  const Tensor x = random_tensor(rng, {4, 7}, 3.0);
  const Tensor y = layer_norm(x, Tensor({7}, 1.0), Tensor({7}), 1e-12);
  for (std::size_t r = 0; r < 4; ++r) {
    double mean = 0.0, sq = 0.0;
    for (double v : y.row(r)) mean += v;
    mean /= 7.0;
    for (double v : y.row(r)) sq += (v - mean) * (v - mean);
    EXPECT_NEAR(mean, 0.0, 1e-12);
    EXPECT_NEAR(sq / 7.0, 1.0, 1e-9);
  }
}

TEST(L2Normalize, ThreeFourFive) {
  const Tensor y = l2_normalize(Tensor::vector({3, 4}));
  EXPECT_DOUBLE_EQ(y[0], 0.6);
  EXPECT_DOUBLE_EQ(y[1], 0.8);
}

TEST(L2Normalize, UnitAndAxisVectors) {
  EXPECT_EQ(l2_normalize(Tensor::vector({0, 1, 0})), Tensor::vector({0, 1, 0}));
  EXPECT_EQ(l2_normalize(Tensor::vector({2, 0, 0})), Tensor::vector({1, 0, 0}));
}

TEST(L2Normalize, ZeroVectorIsDegenerate) {
  try {
    l2_normalize(Tensor({3}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::degenerate);
  }
}

TEST(L2Normalize, IdempotentAndUnitNorm) {
  Rng rng(9);
  for (int trial = 0; trial < 200; ++trial) {
    const Tensor x = random_tensor(rng, {1 + rng.index(64)}, rng.uniform(0.01, 100.0));
    const Tensor once = l2_normalize(x);
    const Tensor twice = l2_normalize(once);
    EXPECT_NEAR(norm(once.data()), 1.0, 1e-12);
    EXPECT_LE(cpl::testing::max_abs_diff(once, twice), 1e-12);
  }
}

}  // namespace
}  // namespace cpl::num
