// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cpl/feature_store/records.hpp"

namespace cpl::store {

// Read access to a dataset, one (class, split) slice at a time. Harnesses go
// through this interface so tests can observe which slices are touched.
class RecordSource {
 public:
  virtual ~RecordSource() = default;
  virtual const DatasetManifest& manifest() const = 0;
  virtual std::span<const FeatureRecord> records(std::uint32_t class_id, SplitTag split) const = 0;
};

// Immutable in-memory bank, indexed by (class, split). Safe for concurrent
// readers.
class FeatureBank final : public RecordSource {
 public:
  FeatureBank(DatasetManifest manifest, std::vector<FeatureRecord> records);

  static FeatureBank load(const std::filesystem::path& path);

  const DatasetManifest& manifest() const override { return manifest_; }
  std::span<const FeatureRecord> records(std::uint32_t class_id, SplitTag split) const override;
  std::span<const FeatureRecord> all() const noexcept { return records_; }

 private:
  DatasetManifest manifest_;
  std::vector<FeatureRecord> records_;  // grouped by (class_id, split)
  std::map<std::pair<std::uint32_t, SplitTag>, std::pair<std::size_t, std::size_t>> slices_;
};

// Draws exactly `shots` train-tagged records per listed class. The draw
// depends only on the record ids present and the seed, not on input order.
std::vector<FeatureRecord> sample_few_shot(const RecordSource& source, std::span<const std::uint32_t> class_ids,
                                           std::uint32_t shots, std::uint64_t seed);

// Same over a flat record list, classes 0..num_classes-1.
std::vector<FeatureRecord> sample_few_shot(std::span<const FeatureRecord> records, std::uint32_t shots,
                                           std::uint32_t num_classes, std::uint64_t seed);

enum class SplitRule { half, alternating };

SplitRule split_rule_from_string(std::string_view name);

// Sorts classes by name; `half` puts the first ceil(D/2) in base,
// `alternating` puts even sorted positions in base. Both lists come back in
// ascending class_id order.
EvalSplit make_base_novel_split(std::span<const std::string> class_names, SplitRule rule = SplitRule::half);

}  // namespace cpl::store
