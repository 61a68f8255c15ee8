// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "cpl/numcore/tensor.hpp"

namespace cpl::store {

enum class SplitTag : std::uint8_t { train = 0, test = 1 };

std::string_view to_string(SplitTag tag) noexcept;

// Pooled per-layer features, one row per encoder level in layer order. Rows
// may differ in length (each level has its own channel count).
using LevelSummaries = std::vector<std::vector<double>>;

struct FeatureRecord {
  std::string record_id;
  std::uint32_t class_id = 0;
  std::vector<double> final_feature;  // unit norm
  LevelSummaries level_summaries;
  SplitTag split = SplitTag::train;

  friend bool operator==(const FeatureRecord&, const FeatureRecord&) = default;
};

enum class ConceptCategory : std::uint8_t { color = 0, material, size, shape, texture, other };

std::string_view to_string(ConceptCategory category) noexcept;
ConceptCategory category_from_string(std::string_view name);

struct ConceptEntry {
  std::string word;
  ConceptCategory category = ConceptCategory::other;

  friend bool operator==(const ConceptEntry&, const ConceptEntry&) = default;
};

// Concept words with their prompt embeddings; row i of `embeddings`
// encodes entries[i].
struct ConceptLexicon {
  std::vector<ConceptEntry> entries;
  num::Tensor embeddings;  // I x d_t, unit rows

  std::size_t size() const noexcept { return entries.size(); }
  std::size_t dim() const noexcept { return embeddings.cols(); }

  // Raises when words repeat, rows are not unit norm, or counts disagree.
  void validate() const;

  // Keeps `count` entries, drawing round-robin across categories in their
  // original order so the category set stays fixed while each category
  // shrinks.
  ConceptLexicon subset(std::size_t count) const;
};

struct EncoderSpec {
  std::string kind = "toy";  // "toy" or "remote"
  std::uint64_t seed = 0;
  std::string endpoint;

  friend bool operator==(const EncoderSpec&, const EncoderSpec&) = default;
};

struct DatasetManifest {
  std::string dataset_name;
  std::vector<std::string> class_names;
  std::uint32_t shots_per_class = 1;
  std::uint32_t feature_dim = 0;
  std::uint32_t text_dim = 0;
  std::uint32_t level_count = 0;
  std::vector<std::uint32_t> channel_dims;
  std::string bank_file;     // relative to the manifest's directory
  std::string lexicon_file;  // optional, same convention
  EncoderSpec encoder;
  std::string truncation_policy = "none";

  // Directory used to resolve relative paths; not serialized.
  std::filesystem::path base_dir;

  std::filesystem::path bank_path() const { return base_dir / bank_file; }
  std::filesystem::path lexicon_path() const { return base_dir / lexicon_file; }

  // Checks the structural invariants: at least two classes, N >= 1,
  // Q == channel_dims.size().
  void validate() const;

  friend bool operator==(const DatasetManifest& a, const DatasetManifest& b);
};

std::string manifest_to_json(const DatasetManifest& manifest);
DatasetManifest manifest_from_json(std::string_view text, const std::filesystem::path& base_dir = {});

DatasetManifest load_manifest(const std::filesystem::path& path);
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

struct EvalSplit {
  std::vector<std::uint32_t> base_classes;
  std::vector<std::uint32_t> novel_classes;
  bool disjoint = true;
};

// Checks a record against the manifest's dims and the unit-norm invariant
// (tolerance 1e-5); failures name the record.
void validate_record(const FeatureRecord& record, const DatasetManifest& manifest);

}  // namespace cpl::store
