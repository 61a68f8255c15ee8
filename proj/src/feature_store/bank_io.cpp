// SPDX-License-Identifier: Apache-2.0
#include "cpl/feature_store/bank_io.hpp"

#include <numeric>

#include "cpl/common/binary_io.hpp"
#include "cpl/common/error.hpp"

namespace cpl::store {

namespace {

std::uint64_t channel_total(const DatasetManifest& m) {
  return std::accumulate(m.channel_dims.begin(), m.channel_dims.end(), std::uint64_t{0});
}

}  // namespace

std::uint64_t predicted_bank_size(std::span<const FeatureRecord> records, const DatasetManifest& m) {
  std::uint64_t size = 4 + 4 + 4 + 4 + 4 + 4ULL * m.level_count + 8;
  const std::uint64_t per_record_fixed = 2 + 4 + 1 + 4ULL * m.feature_dim + 4ULL * channel_total(m);
  for (const auto& r : records) size += per_record_fixed + r.record_id.size();
  return size;
}

std::vector<std::uint8_t> encode_bank(std::span<const FeatureRecord> records, const DatasetManifest& m) {
  m.validate();
  ByteWriter w;
  w.magic("CPLF");
  w.u32(kBankVersion);
  w.u32(m.feature_dim);
  w.u32(m.text_dim);
  w.u32(m.level_count);
  for (std::uint32_t c : m.channel_dims) w.u32(c);
  w.u64(records.size());
  for (const auto& r : records) {
    validate_record(r, m);
    w.short_string(r.record_id);
    w.u32(r.class_id);
    w.u8(static_cast<std::uint8_t>(r.split));
    for (double v : r.final_feature) w.f32(static_cast<float>(v));
    for (const auto& level : r.level_summaries)
      for (double v : level) w.f32(static_cast<float>(v));
  }
  return w.bytes();
}

std::vector<FeatureRecord> decode_bank(std::span<const std::uint8_t> bytes, const DatasetManifest& m) {
  ByteReader r(bytes, "feature bank");
  r.expect_magic("CPLF");
  const std::uint32_t version = r.u32();
  require(version == kBankVersion, ErrorCode::version, "feature bank version " + std::to_string(version));
  const std::uint32_t d_v = r.u32();
  const std::uint32_t d_t = r.u32();
  const std::uint32_t levels = r.u32();
  std::vector<std::uint32_t> channels(levels);
  for (auto& c : channels) c = r.u32();
  require(d_v == m.feature_dim && d_t == m.text_dim && levels == m.level_count && channels == m.channel_dims,
          ErrorCode::dim_mismatch, "feature bank header dims disagree with manifest '" + m.dataset_name + "'");
  const std::uint64_t count = r.u64();
  std::vector<FeatureRecord> records;
  records.reserve(static_cast<std::size_t>(std::min<std::uint64_t>(count, 1u << 20)));
  for (std::uint64_t i = 0; i < count; ++i) {
    FeatureRecord rec;
    rec.record_id = r.short_string();
    rec.class_id = r.u32();
    const std::uint8_t tag = r.u8();
    require(tag <= 1, ErrorCode::format, "record '" + rec.record_id + "' has split tag " + std::to_string(tag));
    rec.split = static_cast<SplitTag>(tag);
    rec.final_feature.resize(d_v);
    for (double& v : rec.final_feature) v = r.f32();
    rec.level_summaries.resize(levels);
    for (std::uint32_t q = 0; q < levels; ++q) {
      rec.level_summaries[q].resize(channels[q]);
      for (double& v : rec.level_summaries[q]) v = r.f32();
    }
    validate_record(rec, m);
    records.push_back(std::move(rec));
  }
  require(r.at_end(), ErrorCode::format,
          "feature bank has " + std::to_string(r.remaining()) + " trailing bytes after the last record");
  return records;
}

std::filesystem::path sidecar_path(const std::filesystem::path& bank_path) {
  std::filesystem::path p = bank_path;
  p += ".json";
  return p;
}

void write_bank(std::span<const FeatureRecord> records, DatasetManifest manifest,
                const std::filesystem::path& path) {
  manifest.bank_file = path.filename().string();
  const auto bytes = encode_bank(records, manifest);
  write_file_bytes(path, bytes);
  save_manifest(manifest, sidecar_path(path));
}

BankContents read_bank(const std::filesystem::path& path) {
  BankContents out;
  if (path.extension() == ".json") {
    out.manifest = load_manifest(path);
  } else {
    out.manifest = load_manifest(sidecar_path(path));
  }
  require(!out.manifest.bank_file.empty(), ErrorCode::format, "manifest names no bank file");
  const auto bank = out.manifest.bank_path();
  require(std::filesystem::exists(bank), ErrorCode::io, "bank file '" + bank.string() + "' does not exist");
  out.records = decode_bank(read_file_bytes(bank), out.manifest);
  return out;
}

std::vector<std::uint8_t> encode_lexicon(const ConceptLexicon& lexicon) {
  lexicon.validate();
  ByteWriter w;
  w.magic("CPLL");
  w.u32(kLexiconVersion);
  w.u32(static_cast<std::uint32_t>(lexicon.dim()));
  w.u64(lexicon.size());
  for (const auto& e : lexicon.entries) {
    w.short_string(e.word);
    w.u8(static_cast<std::uint8_t>(e.category));
  }
  for (double v : lexicon.embeddings.data()) w.f32(static_cast<float>(v));
  return w.bytes();
}

ConceptLexicon decode_lexicon(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, "concept lexicon");
  r.expect_magic("CPLL");
  const std::uint32_t version = r.u32();
  require(version == kLexiconVersion, ErrorCode::version, "lexicon version " + std::to_string(version));
  const std::uint32_t d_t = r.u32();
  const std::uint64_t count = r.u64();
  require(count >= 1 && d_t >= 1, ErrorCode::format, "lexicon declares no words or zero dims");
  require(count <= r.remaining(), ErrorCode::truncated, "lexicon word count exceeds file size");
  ConceptLexicon lex;
  lex.entries.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    ConceptEntry e;
    e.word = r.short_string();
    const std::uint8_t cat = r.u8();
    require(cat <= static_cast<std::uint8_t>(ConceptCategory::other), ErrorCode::format,
            "word '" + e.word + "' has unknown category " + std::to_string(cat));
    e.category = static_cast<ConceptCategory>(cat);
    lex.entries.push_back(std::move(e));
  }
  std::vector<double> rows(count * d_t);
  for (double& v : rows) v = r.f32();
  require(r.at_end(), ErrorCode::format, "lexicon has trailing bytes");
  lex.embeddings = num::Tensor({count, d_t}, std::move(rows));
  lex.validate();
  return lex;
}

void write_lexicon(const ConceptLexicon& lexicon, const std::filesystem::path& path) {
  write_file_bytes(path, encode_lexicon(lexicon));
}

ConceptLexicon read_lexicon(const std::filesystem::path& path) { return decode_lexicon(read_file_bytes(path)); }

}  // namespace cpl::store
