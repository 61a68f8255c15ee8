// SPDX-License-Identifier: Apache-2.0
#include "cpl/feature_store/records.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <set>

#include <json.hpp>

#include "cpl/common/binary_io.hpp"
#include "cpl/common/error.hpp"
#include "cpl/numcore/ops.hpp"

namespace cpl::store {

using nlohmann::json;

std::string_view to_string(SplitTag tag) noexcept { return tag == SplitTag::train ? "train" : "test"; }

namespace {

constexpr std::array<std::string_view, 6> kCategoryNames = {"color", "material", "size",
                                                             "shape", "texture",  "other"};

constexpr double kNormTolerance = 1e-5;

}  // namespace

std::string_view to_string(ConceptCategory category) noexcept {
  return kCategoryNames[static_cast<std::size_t>(category)];
}

ConceptCategory category_from_string(std::string_view name) {
  for (std::size_t i = 0; i < kCategoryNames.size(); ++i) {
    if (kCategoryNames[i] == name) return static_cast<ConceptCategory>(i);
  }
  raise(ErrorCode::format, "unknown concept category '" + std::string(name) + "'");
}

void ConceptLexicon::validate() const {
  require(!entries.empty(), ErrorCode::degenerate, "concept lexicon is empty");
  require(embeddings.rank() == 2 && embeddings.rows() == entries.size(), ErrorCode::dim_mismatch,
          "lexicon has " + std::to_string(entries.size()) + " words but " + std::to_string(embeddings.rows()) +
              " embedding rows");
  std::set<std::string_view> seen;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    require(seen.insert(entries[i].word).second, ErrorCode::format,
            "duplicate concept word '" + entries[i].word + "'");
    const double n = num::norm(embeddings.row(i));
    require(std::abs(n - 1.0) <= kNormTolerance, ErrorCode::norm,
            "concept '" + entries[i].word + "' embedding has norm " + std::to_string(n));
  }
}

ConceptLexicon ConceptLexicon::subset(std::size_t count) const {
  require(count >= 1 && count <= entries.size(), ErrorCode::contract,
          "cannot take " + std::to_string(count) + " concepts from a lexicon of " + std::to_string(entries.size()));
  std::map<ConceptCategory, std::vector<std::size_t>> by_category;
  for (std::size_t i = 0; i < entries.size(); ++i) by_category[entries[i].category].push_back(i);
  std::vector<std::size_t> chosen;
  for (std::size_t round = 0; chosen.size() < count; ++round) {
    for (auto& [cat, idx] : by_category) {
      if (round < idx.size() && chosen.size() < count) chosen.push_back(idx[round]);
    }
  }
  std::sort(chosen.begin(), chosen.end());
  ConceptLexicon out;
  std::vector<double> rows;
  rows.reserve(count * dim());
  for (std::size_t i : chosen) {
    out.entries.push_back(entries[i]);
    auto r = embeddings.row(i);
    rows.insert(rows.end(), r.begin(), r.end());
  }
  out.embeddings = num::Tensor({count, dim()}, std::move(rows));
  return out;
}

void DatasetManifest::validate() const {
  require(class_names.size() >= 2, ErrorCode::contract,
          "manifest '" + dataset_name + "' needs at least two classes");
  require(shots_per_class >= 1, ErrorCode::contract, "manifest shots_per_class must be >= 1");
  require(level_count >= 1 && channel_dims.size() == level_count, ErrorCode::dim_mismatch,
          "manifest declares " + std::to_string(level_count) + " levels but " +
              std::to_string(channel_dims.size()) + " channel dims");
  require(feature_dim >= 1 && text_dim >= 1, ErrorCode::dim_mismatch, "manifest feature dims must be positive");
}

bool operator==(const DatasetManifest& a, const DatasetManifest& b) {
  return a.dataset_name == b.dataset_name && a.class_names == b.class_names &&
         a.shots_per_class == b.shots_per_class && a.feature_dim == b.feature_dim &&
         a.text_dim == b.text_dim && a.level_count == b.level_count && a.channel_dims == b.channel_dims &&
         a.bank_file == b.bank_file && a.lexicon_file == b.lexicon_file && a.encoder == b.encoder &&
         a.truncation_policy == b.truncation_policy;
}

std::string manifest_to_json(const DatasetManifest& m) {
  json j;
  j["dataset_name"] = m.dataset_name;
  j["class_names"] = m.class_names;
  j["shots_per_class"] = m.shots_per_class;
  j["feature_dim"] = m.feature_dim;
  j["text_dim"] = m.text_dim;
  j["level_count"] = m.level_count;
  j["channel_dims"] = m.channel_dims;
  j["bank"] = m.bank_file;
  j["lexicon"] = m.lexicon_file;
  j["encoder"] = {{"kind", m.encoder.kind}, {"seed", m.encoder.seed}, {"endpoint", m.encoder.endpoint}};
  j["truncation_policy"] = m.truncation_policy;
  return j.dump(2) + "\n";
}

DatasetManifest manifest_from_json(std::string_view text, const std::filesystem::path& base_dir) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    raise(ErrorCode::format, std::string("manifest is not valid JSON: ") + e.what());
  }
  DatasetManifest m;
  try {
    m.dataset_name = j.at("dataset_name").get<std::string>();
    m.class_names = j.at("class_names").get<std::vector<std::string>>();
    m.shots_per_class = j.at("shots_per_class").get<std::uint32_t>();
    m.feature_dim = j.at("feature_dim").get<std::uint32_t>();
    m.text_dim = j.at("text_dim").get<std::uint32_t>();
    m.level_count = j.at("level_count").get<std::uint32_t>();
    m.channel_dims = j.at("channel_dims").get<std::vector<std::uint32_t>>();
    m.bank_file = j.value("bank", std::string{});
    m.lexicon_file = j.value("lexicon", std::string{});
    if (j.contains("encoder")) {
      const auto& e = j["encoder"];
      m.encoder.kind = e.value("kind", std::string("toy"));
      m.encoder.seed = e.value("seed", std::uint64_t{0});
      m.encoder.endpoint = e.value("endpoint", std::string{});
    }
    m.truncation_policy = j.value("truncation_policy", std::string("none"));
  } catch (const json::exception& e) {
    raise(ErrorCode::format, std::string("manifest field error: ") + e.what());
  }
  m.base_dir = base_dir;
  m.validate();
  return m;
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
  return manifest_from_json(read_text_file(path), path.parent_path());
}

void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path) {
  write_text_file(path, manifest_to_json(manifest));
}

void validate_record(const FeatureRecord& r, const DatasetManifest& m) {
  const std::string who = "record '" + r.record_id + "'";
  require(r.final_feature.size() == m.feature_dim, ErrorCode::dim_mismatch,
          who + " has " + std::to_string(r.final_feature.size()) + " feature values, expected " +
              std::to_string(m.feature_dim));
  require(r.level_summaries.size() == m.level_count, ErrorCode::dim_mismatch, who + " has wrong level count");
  for (std::size_t q = 0; q < r.level_summaries.size(); ++q) {
    require(r.level_summaries[q].size() == m.channel_dims[q], ErrorCode::dim_mismatch,
            who + " level " + std::to_string(q) + " has wrong channel count");
    for (double v : r.level_summaries[q]) {
      require(std::isfinite(v), ErrorCode::non_finite, who + " has a non-finite level summary");
    }
  }
  for (double v : r.final_feature) require(std::isfinite(v), ErrorCode::non_finite, who + " has a non-finite feature");
  require(r.class_id < m.class_names.size(), ErrorCode::label,
          who + " has class_id " + std::to_string(r.class_id) + " outside the manifest's classes");
  const double n = num::norm(r.final_feature);
  require(std::abs(n - 1.0) <= kNormTolerance, ErrorCode::norm,
          who + " final feature norm " + std::to_string(n) + " violates the unit-norm invariant");
}

}  // namespace cpl::store
