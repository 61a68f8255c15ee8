// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "cpl/numcore/tensor.hpp"

namespace cpl::enc {

// Frozen text tower. Implementations are callable from several threads.
class TextEncoder {
 public:
  virtual ~TextEncoder() = default;

  virtual std::size_t dim() const = 0;

  // Unit vector for a non-empty string; identical text gives identical output.
  virtual std::vector<double> encode(std::string_view text) const = 0;

  // One row per text.
  num::Tensor encode_rows(std::span<const std::string> texts) const;
};

// Lowercased runs of letters, digits, '-' and '\''.
std::vector<std::string> tokenize(std::string_view text);

// Seeded hash vector per token, position-weighted sum, L2 normalized and
// rounded through single precision.
class ToyTextEncoder final : public TextEncoder {
 public:
  ToyTextEncoder(std::size_t dim, std::uint64_t seed);

  std::size_t dim() const override { return dim_; }
  std::uint64_t seed() const noexcept { return seed_; }
  std::vector<double> encode(std::string_view text) const override;

  // Raw direction of a single token (unit norm, not rounded).
  std::vector<double> token_vector(std::string_view token) const;

  static double position_weight(std::size_t position);

 private:
  std::size_t dim_;
  std::uint64_t seed_;
};

// Caches outputs of another encoder by exact text.
class MemoizingEncoder final : public TextEncoder {
 public:
  explicit MemoizingEncoder(std::shared_ptr<const TextEncoder> inner);

  std::size_t dim() const override { return inner_->dim(); }
  std::vector<double> encode(std::string_view text) const override;

  std::size_t hits() const;
  std::size_t misses() const;

 private:
  std::shared_ptr<const TextEncoder> inner_;
  mutable std::mutex mutex_;
  mutable std::unordered_map<std::string, std::vector<double>> memo_;
  mutable std::size_t hits_ = 0;
  mutable std::size_t misses_ = 0;
};

}  // namespace cpl::enc
