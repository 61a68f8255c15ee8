// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <limits>

#include "cpl/common/error.hpp"
#include "cpl/numcore/autodiff.hpp"
#include "cpl/numcore/grad_check.hpp"
#include "support/fixtures.hpp"

namespace cpl::num {
namespace {

using cpl::testing::random_tensor;

TEST(GradCheck, QuadraticMatchesClosedForm) {
  const ParamBlock x{"x", Tensor::vector({1, 2})};
  Tape tape;
  Var leaf = tape.leaf(x.value);
  Var f = sum(mul(leaf, leaf));
  tape.backward(f);
  EXPECT_DOUBLE_EQ(leaf.grad()[0], 2.0);
  EXPECT_DOUBLE_EQ(leaf.grad()[1], 4.0);

  const auto report = grad_check([](Tape&, std::span<const Var> v) { return sum(mul(v[0], v[0])); },
                                 std::span(&x, 1), 1e-5, 1e-8);
  EXPECT_TRUE(report.passed) << report.max_relative_error;
}

TEST(GradCheck, NonScalarObjectiveIsContractError) {
  const ParamBlock x{"x", Tensor::vector({1, 2})};
  try {
    grad_check([](Tape&, std::span<const Var> v) { return scale(v[0], 2.0); }, std::span(&x, 1), 1e-5, 1e-6);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::contract);
  }
}

TEST(GradCheck, StepOutsideRangeIsRejected) {
  const ParamBlock x{"x", Tensor::vector({1})};
  auto fn = [](Tape&, std::span<const Var> v) { return sum(v[0]); };
  EXPECT_THROW(grad_check(fn, std::span(&x, 1), 1e-7, 1e-6), Error);
  EXPECT_THROW(grad_check(fn, std::span(&x, 1), 1e-2, 1e-6), Error);
}

TEST(Autodiff, MatmulSumOfEntriesMatchesFiniteDifferences) {
  Rng rng(21);
  const ParamBlock blocks[] = {{"a", random_tensor(rng, {3, 4})}, {"b", random_tensor(rng, {4, 2})}};
  const auto report =
      grad_check([](Tape&, std::span<const Var> v) { return sum(matmul(v[0], v[1])); }, blocks, 1e-5, 1e-6);
  EXPECT_TRUE(report.passed) << report.max_relative_error;
}

TEST(Autodiff, LayerNormMatchesFiniteDifferences) {
  Rng rng(22);
  const ParamBlock blocks[] = {{"x", random_tensor(rng, {3, 5})},
                               {"gain", random_tensor(rng, {5})},
                               {"bias", random_tensor(rng, {5})},
                               {"w", random_tensor(rng, {3, 5})}};
  const auto report = grad_check(
      [](Tape&, std::span<const Var> v) { return sum(mul(layer_norm(v[0], v[1], v[2], 1e-5), v[3])); }, blocks,
      1e-5, 1e-5);
  EXPECT_TRUE(report.passed) << report.max_relative_error;
}

TEST(Autodiff, RootGradientIsOneAndShapesMatch) {
  Rng rng(23);
  Tape tape;
  Var a = tape.leaf(random_tensor(rng, {2, 3}));
  Var b = tape.leaf(random_tensor(rng, {3, 4}));
  Var root = mean(gelu(matmul(a, b)));
  tape.backward(root);
  EXPECT_DOUBLE_EQ(root.grad()[0], 1.0);
  EXPECT_EQ(a.grad().shape(), a.value().shape());
  EXPECT_EQ(b.grad().shape(), b.value().shape());
}

TEST(Autodiff, ConstantsReceiveNoGradient) {
  Tape tape;
  Var c = tape.constant(Tensor::vector({1, 2}));
  Var x = tape.leaf(Tensor::vector({3, 4}));
  Var root = sum(mul(c, x));
  tape.backward(root);
  EXPECT_FALSE(c.has_grad());
  EXPECT_DOUBLE_EQ(x.grad()[1], 2.0);
}

TEST(Autodiff, NonFiniteValueAbortsWithRuleName) {
  Tape tape;
  Var x = tape.leaf(Tensor::vector({1e300, 1.0}));
  try {
    scale(x, 1e300);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::non_finite);
    EXPECT_NE(std::string(e.what()).find("scale"), std::string::npos);
  }
}

// One objective per registered backward rule; each reduces to a scalar with
// a random weighting so that no gradient is trivially uniform.
struct RuleCase {
  const char* name;
  std::vector<Shape> shapes;
  std::function<Var(Tape&, std::span<const Var>)> fn;
};

Var weighted(Tape& t, Var x, std::uint64_t seed) {
  Rng rng(seed);
  return sum(mul(x, t.constant(random_tensor(rng, x.value().shape()))));
}

TEST(Autodiff, EveryBackwardRulePassesGradCheck) {
  const std::vector<RuleCase> cases = {
      {"matmul", {{3, 4}, {4, 2}}, [](Tape& t, auto v) { return weighted(t, matmul(v[0], v[1]), 1); }},
      {"transpose", {{3, 2}}, [](Tape& t, auto v) { return weighted(t, transpose(v[0]), 2); }},
      {"add", {{2, 3}, {2, 3}}, [](Tape& t, auto v) { return weighted(t, add(v[0], v[1]), 3); }},
      {"sub", {{2, 3}, {2, 3}}, [](Tape& t, auto v) { return weighted(t, sub(v[0], v[1]), 4); }},
      {"mul", {{2, 3}, {2, 3}}, [](Tape& t, auto v) { return weighted(t, mul(v[0], v[1]), 5); }},
      {"add_row", {{3, 4}, {4}}, [](Tape& t, auto v) { return weighted(t, add_row(v[0], v[1]), 6); }},
      {"scale", {{2, 2}}, [](Tape& t, auto v) { return weighted(t, scale(v[0], -1.7), 7); }},
      {"scale_by", {{2, 3}, {1}}, [](Tape& t, auto v) { return weighted(t, scale_by(v[0], v[1]), 8); }},
      {"softmax_rows", {{3, 4}}, [](Tape& t, auto v) { return weighted(t, softmax_rows(v[0]), 9); }},
      {"log_softmax_rows", {{3, 4}}, [](Tape& t, auto v) { return weighted(t, log_softmax_rows(v[0]), 10); }},
      {"layer_norm", {{3, 5}, {5}, {5}},
       [](Tape& t, auto v) { return weighted(t, layer_norm(v[0], v[1], v[2], 1e-5), 11); }},
      {"l2_normalize_rows", {{3, 4}}, [](Tape& t, auto v) { return weighted(t, l2_normalize_rows(v[0]), 12); }},
      {"gelu", {{3, 4}}, [](Tape& t, auto v) { return weighted(t, gelu(v[0]), 13); }},
      {"sum", {{2, 3}}, [](Tape&, auto v) { return sum(mul(v[0], v[0])); }},
      {"mean", {{2, 3}}, [](Tape&, auto v) { return mean(mul(v[0], v[0])); }},
      {"element", {{2, 3}}, [](Tape&, auto v) { return element(mul(v[0], v[0]), 4); }},
      {"stack_rows", {{4}, {1, 4}, {4}},
       [](Tape& t, auto v) { return weighted(t, stack_rows(std::span<const Var>(v.data(), 3)), 14); }},
      {"add_all", {{2, 2}, {2, 2}, {2, 2}},
       [](Tape& t, auto v) { return weighted(t, mul(add_all(v), v[0]), 15); }},
  };
  Rng rng(77);
  for (const auto& c : cases) {
    std::vector<ParamBlock> blocks;
    for (std::size_t i = 0; i < c.shapes.size(); ++i) {
      blocks.push_back({std::string(c.name) + "#" + std::to_string(i), random_tensor(rng, c.shapes[i])});
    }
    const auto report = grad_check(c.fn, blocks, 1e-5, 1e-4);
    EXPECT_TRUE(report.passed) << c.name << " rel err " << report.max_relative_error;
  }
}

}  // namespace
}  // namespace cpl::num
