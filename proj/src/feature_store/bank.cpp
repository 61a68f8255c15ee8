// SPDX-License-Identifier: Apache-2.0
#include "cpl/feature_store/bank.hpp"

#include <algorithm>
#include <numeric>
#include <set>

#include "cpl/common/error.hpp"
#include "cpl/common/rng.hpp"
#include "cpl/feature_store/bank_io.hpp"

namespace cpl::store {

FeatureBank::FeatureBank(DatasetManifest manifest, std::vector<FeatureRecord> records)
    : manifest_(std::move(manifest)), records_(std::move(records)) {
  std::set<std::string_view> ids;
  for (const auto& r : records_) {
    validate_record(r, manifest_);
    require(ids.insert(r.record_id).second, ErrorCode::format, "duplicate record id '" + r.record_id + "'");
  }
  std::stable_sort(records_.begin(), records_.end(), [](const FeatureRecord& a, const FeatureRecord& b) {
    return std::pair(a.class_id, a.split) < std::pair(b.class_id, b.split);
  });
  std::size_t begin = 0;
  for (std::size_t i = 1; i <= records_.size(); ++i) {
    if (i == records_.size() || records_[i].class_id != records_[begin].class_id ||
        records_[i].split != records_[begin].split) {
      slices_[{records_[begin].class_id, records_[begin].split}] = {begin, i - begin};
      begin = i;
    }
  }
}

FeatureBank FeatureBank::load(const std::filesystem::path& path) {
  auto contents = read_bank(path);
  return FeatureBank(std::move(contents.manifest), std::move(contents.records));
}

std::span<const FeatureRecord> FeatureBank::records(std::uint32_t class_id, SplitTag split) const {
  auto it = slices_.find({class_id, split});
  if (it == slices_.end()) return {};
  return std::span<const FeatureRecord>(records_).subspan(it->second.first, it->second.second);
}

namespace {

std::vector<FeatureRecord> draw_class(std::vector<const FeatureRecord*> pool, std::uint32_t class_id,
                                      const std::string& class_name, std::uint32_t shots, std::uint64_t seed) {
  if (pool.size() < shots) {
    raise(ErrorCode::sampling, "class " + std::to_string(class_id) + " ('" + class_name + "') has " +
                                   std::to_string(pool.size()) + " train records, " + std::to_string(shots) +
                                   " shots requested");
  }
  std::sort(pool.begin(), pool.end(),
            [](const FeatureRecord* a, const FeatureRecord* b) { return a->record_id < b->record_id; });
  Rng rng(mix_seed(seed, class_id));
  rng.shuffle(pool);
  std::vector<FeatureRecord> out;
  out.reserve(shots);
  for (std::uint32_t i = 0; i < shots; ++i) out.push_back(*pool[i]);
  return out;
}

}  // namespace

std::vector<FeatureRecord> sample_few_shot(const RecordSource& source, std::span<const std::uint32_t> class_ids,
                                           std::uint32_t shots, std::uint64_t seed) {
  require(shots >= 1, ErrorCode::contract, "few-shot sampling needs shots >= 1");
  std::vector<FeatureRecord> out;
  for (std::uint32_t c : class_ids) {
    std::vector<const FeatureRecord*> pool;
    for (const auto& r : source.records(c, SplitTag::train)) pool.push_back(&r);
    const auto& names = source.manifest().class_names;
    auto drawn = draw_class(std::move(pool), c, c < names.size() ? names[c] : "?", shots, seed);
    out.insert(out.end(), std::make_move_iterator(drawn.begin()), std::make_move_iterator(drawn.end()));
  }
  return out;
}

std::vector<FeatureRecord> sample_few_shot(std::span<const FeatureRecord> records, std::uint32_t shots,
                                           std::uint32_t num_classes, std::uint64_t seed) {
  require(shots >= 1, ErrorCode::contract, "few-shot sampling needs shots >= 1");
  std::vector<FeatureRecord> out;
  for (std::uint32_t c = 0; c < num_classes; ++c) {
    std::vector<const FeatureRecord*> pool;
    for (const auto& r : records) {
      if (r.class_id == c && r.split == SplitTag::train) pool.push_back(&r);
    }
    auto drawn = draw_class(std::move(pool), c, "class " + std::to_string(c), shots, seed);
    out.insert(out.end(), std::make_move_iterator(drawn.begin()), std::make_move_iterator(drawn.end()));
  }
  return out;
}

SplitRule split_rule_from_string(std::string_view name) {
  if (name == "half") return SplitRule::half;
  if (name == "alternating") return SplitRule::alternating;
  raise(ErrorCode::contract, "unknown split rule '" + std::string(name) + "'");
}

EvalSplit make_base_novel_split(std::span<const std::string> class_names, SplitRule rule) {
  require(class_names.size() >= 2, ErrorCode::split,
          "base/novel split needs at least two classes, got " + std::to_string(class_names.size()));
  std::vector<std::uint32_t> order(class_names.size());
  std::iota(order.begin(), order.end(), 0u);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::uint32_t a, std::uint32_t b) { return class_names[a] < class_names[b]; });
  EvalSplit split;
  const std::size_t base_count = (class_names.size() + 1) / 2;
  for (std::size_t pos = 0; pos < order.size(); ++pos) {
    const bool base = rule == SplitRule::half ? pos < base_count : pos % 2 == 0;
    (base ? split.base_classes : split.novel_classes).push_back(order[pos]);
  }
  std::sort(split.base_classes.begin(), split.base_classes.end());
  std::sort(split.novel_classes.begin(), split.novel_classes.end());
  split.disjoint = true;
  return split;
}

}  // namespace cpl::store
