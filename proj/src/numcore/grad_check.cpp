// SPDX-License-Identifier: Apache-2.0
#include "cpl/numcore/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "cpl/common/error.hpp"

namespace cpl::num {

namespace {

double evaluate(const ScalarFn& fn, std::span<const ParamBlock> params) {
  Tape tape;
  std::vector<Var> leaves;
  leaves.reserve(params.size());
  for (const auto& p : params) leaves.push_back(tape.constant(p.value));
  Var out = fn(tape, leaves);
  require(out.value().numel() == 1, ErrorCode::contract, "grad_check objective must be scalar");
  return out.value()[0];
}

}  // namespace

GradCheckReport grad_check(const ScalarFn& fn, std::span<const ParamBlock> params, double step,
                           double tolerance, double scale_floor) {
  require(step >= 1e-6 && step <= 1e-3, ErrorCode::contract, "grad_check step must lie in [1e-6, 1e-3]");

  Tape tape;
  std::vector<Var> leaves;
  leaves.reserve(params.size());
  for (const auto& p : params) leaves.push_back(tape.leaf(p.value));
  Var out = fn(tape, leaves);
  require(out.value().numel() == 1, ErrorCode::contract, "grad_check objective must be scalar");
  tape.backward(out);

  GradCheckReport report;
  std::vector<ParamBlock> probe(params.begin(), params.end());
  for (std::size_t b = 0; b < params.size(); ++b) {
    const Tensor analytic = leaves[b].has_grad()
                                ? leaves[b].grad()
                                : Tensor(params[b].value.shape());
    Tensor numeric(params[b].value.shape());
    for (std::size_t i = 0; i < numeric.numel(); ++i) {
      const double original = probe[b].value[i];
      probe[b].value[i] = original + step;
      const double up = evaluate(fn, probe);
      probe[b].value[i] = original - step;
      const double down = evaluate(fn, probe);
      probe[b].value[i] = original;
      numeric[i] = (up - down) / (2.0 * step);
    }
    double max_diff = 0.0, max_mag = 0.0;
    for (std::size_t i = 0; i < numeric.numel(); ++i) {
      max_diff = std::max(max_diff, std::abs(analytic[i] - numeric[i]));
      max_mag = std::max({max_mag, std::abs(analytic[i]), std::abs(numeric[i])});
    }
    const double rel = max_diff / std::max(max_mag, scale_floor);
    report.blocks.push_back({params[b].name, rel, max_mag});
    report.max_relative_error = std::max(report.max_relative_error, rel);
  }
  report.passed = report.max_relative_error <= tolerance;
  return report;
}

}  // namespace cpl::num
