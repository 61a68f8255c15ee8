// SPDX-License-Identifier: Apache-2.0
#include "cpl/common/error.hpp"

namespace cpl {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::dimension: return "dimension";
    case ErrorCode::degenerate: return "degenerate";
    case ErrorCode::non_finite: return "non_finite";
    case ErrorCode::contract: return "contract";
    case ErrorCode::format: return "format";
    case ErrorCode::version: return "version";
    case ErrorCode::truncated: return "truncated";
    case ErrorCode::dim_mismatch: return "dim_mismatch";
    case ErrorCode::norm: return "norm";
    case ErrorCode::sampling: return "sampling";
    case ErrorCode::split: return "split";
    case ErrorCode::query: return "query";
    case ErrorCode::build: return "build";
    case ErrorCode::transport: return "transport";
    case ErrorCode::io: return "io";
    case ErrorCode::metric: return "metric";
    case ErrorCode::label: return "label";
  }
  return "unknown";
}

void raise(ErrorCode code, const std::string& message) {
  throw Error(code, std::string(to_string(code)) + " error: " + message);
}

}  // namespace cpl
