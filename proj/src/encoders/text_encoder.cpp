// SPDX-License-Identifier: Apache-2.0
#include "cpl/encoders/text_encoder.hpp"

#include <cctype>
#include <cmath>

#include "cpl/common/error.hpp"
#include "cpl/common/rng.hpp"

namespace cpl::enc {

num::Tensor TextEncoder::encode_rows(std::span<const std::string> texts) const {
  require(!texts.empty(), ErrorCode::degenerate, "no texts to encode");
  std::vector<double> rows;
  rows.reserve(texts.size() * dim());
  for (const auto& t : texts) {
    auto v = encode(t);
    require(v.size() == dim(), ErrorCode::dimension, "encoder returned a vector of the wrong size");
    rows.insert(rows.end(), v.begin(), v.end());
  }
  return num::Tensor({texts.size(), dim()}, std::move(rows));
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  for (char ch : text) {
    const auto u = static_cast<unsigned char>(ch);
    if (std::isalnum(u) || ch == '-' || ch == '\'' || u >= 0x80) {
      current.push_back(static_cast<char>(std::tolower(u)));
    } else if (!current.empty()) {
      tokens.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

ToyTextEncoder::ToyTextEncoder(std::size_t dim, std::uint64_t seed) : dim_(dim), seed_(seed) {
  require(dim >= 2, ErrorCode::contract, "toy text encoder needs dim >= 2");
}

double ToyTextEncoder::position_weight(std::size_t position) { return 1.0 / (1.0 + 0.05 * position); }

std::vector<double> ToyTextEncoder::token_vector(std::string_view token) const {
  Rng rng(mix_seed(stable_hash(token), seed_));
  std::vector<double> v(dim_);
  double n = 0.0;
  for (double& x : v) {
    x = rng.normal();
    n += x * x;
  }
  n = std::sqrt(n);
  for (double& x : v) x /= n;
  return v;
}

std::vector<double> ToyTextEncoder::encode(std::string_view text) const {
  require(!text.empty(), ErrorCode::contract, "cannot encode an empty string");
  const auto tokens = tokenize(text);
  require(!tokens.empty(), ErrorCode::degenerate, "text '" + std::string(text) + "' has no tokens");
  std::vector<double> sum(dim_, 0.0);
  for (std::size_t p = 0; p < tokens.size(); ++p) {
    const double w = position_weight(p);
    const auto t = token_vector(tokens[p]);
    for (std::size_t i = 0; i < dim_; ++i) sum[i] += w * t[i];
  }
  double n = 0.0;
  for (double x : sum) n += x * x;
  n = std::sqrt(n);
  require(n > 1e-12, ErrorCode::degenerate, "text '" + std::string(text) + "' embeds to a zero vector");
  for (double& x : sum) x = static_cast<double>(static_cast<float>(x / n));
  return sum;
}

MemoizingEncoder::MemoizingEncoder(std::shared_ptr<const TextEncoder> inner) : inner_(std::move(inner)) {
  require(inner_ != nullptr, ErrorCode::contract, "memoizing encoder needs an inner encoder");
}

std::vector<double> MemoizingEncoder::encode(std::string_view text) const {
  const std::string key(text);
  {
    std::lock_guard lock(mutex_);
    if (auto it = memo_.find(key); it != memo_.end()) {
      ++hits_;
      return it->second;
    }
  }
  auto v = inner_->encode(text);
  std::lock_guard lock(mutex_);
  auto [it, inserted] = memo_.emplace(key, std::move(v));
  if (inserted) {
    ++misses_;
  } else {
    ++hits_;
  }
  return it->second;
}

std::size_t MemoizingEncoder::hits() const {
  std::lock_guard lock(mutex_);
  return hits_;
}

std::size_t MemoizingEncoder::misses() const {
  std::lock_guard lock(mutex_);
  return misses_;
}

}  // namespace cpl::enc
