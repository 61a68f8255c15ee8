// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace cpl {

enum class ErrorCode {
  dimension,    // shape or extent mismatch
  degenerate,   // zero vector, empty list and similar degenerate inputs
  non_finite,   // NaN or Inf produced or supplied
  contract,     // precondition violated by the caller
  format,       // bad magic bytes or malformed structured text
  version,      // unsupported container version
  truncated,    // file ended early
  dim_mismatch, // header dims disagree with manifest or content
  norm,         // stored vector violates its unit-norm invariant
  sampling,     // not enough records to sample from
  split,        // base/novel split cannot be formed
  query,        // cache query cannot be answered
  build,        // cache cannot be built
  transport,    // remote encoder failure
  io,           // filesystem failure
  metric,       // metric undefined for the given inputs
  label,        // class index out of range
};

std::string_view to_string(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] void raise(ErrorCode code, const std::string& message);

inline void require(bool condition, ErrorCode code, const std::string& message) {
  if (!condition) raise(code, message);
}

}  // namespace cpl
