// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cpl/feature_store/records.hpp"
#include "cpl/numcore/tensor.hpp"

namespace cpl::cache {

struct Provenance {
  std::uint32_t concept_index = 0;
  std::string record_id;
  double similarity = 0.0;

  friend bool operator==(const Provenance&, const Provenance&) = default;
};

// Keys are training image features; values[i] is the concept word whose
// text feature selected keys[i].
struct ConceptCache {
  num::Tensor keys;
  std::vector<std::string> values;
  std::vector<Provenance> provenance;

  std::size_t size() const noexcept { return values.size(); }
  std::size_t dim() const noexcept { return keys.cols(); }
  std::size_t distinct_words() const;
  void validate() const;

  friend bool operator==(const ConceptCache&, const ConceptCache&) = default;
};

struct ConceptHit {
  std::string word;
  double similarity = 0.0;
  std::uint32_t concept_index = 0;

  friend bool operator==(const ConceptHit&, const ConceptHit&) = default;
};

using ConceptHits = std::vector<ConceptHit>;

// For each concept, the training feature with the highest dot product
// (lowest record position on ties).
ConceptCache build_cache(const store::ConceptLexicon& lexicon, std::span<const store::FeatureRecord> train);

// Exact scan. Ranked by (cosine desc, concept index asc); each word keeps its
// best key. Raises a query error when k exceeds the distinct word count.
ConceptHits query_topk(const ConceptCache& cache, std::span<const double> query, std::size_t k);

// Placeholders: {class_name}, {w1}..{wN} (N-th hit), {concepts} (all hits
// joined by ", "). Text inside [...] is kept only when there are hits.
inline constexpr std::string_view kDefaultTemplate = "a photo of a {class_name}[, which is {concepts}].";

std::string synthesize_prompt(std::string_view class_name, const ConceptHits& hits,
                              std::string_view template_text = kDefaultTemplate);

// "CPLC" | u32 version=1 | u32 d | u64 count | per entry: u16 word, u32
// concept index, u16 record id, f64 similarity | count x d f64 keys.
inline constexpr std::uint32_t kCacheVersion = 1;

std::vector<std::uint8_t> encode_cache(const ConceptCache& cache);
ConceptCache decode_cache(std::span<const std::uint8_t> bytes);
void write_cache(const ConceptCache& cache, const std::filesystem::path& path);
ConceptCache read_cache(const std::filesystem::path& path);

}  // namespace cpl::cache
