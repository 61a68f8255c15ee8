// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cstdio>

#include "cpl/common/binary_io.hpp"
#include "cpl/common/error.hpp"
#include "cpl/feature_store/bank_io.hpp"
#include "support/fixtures.hpp"

namespace cpl::store {
namespace {

DatasetManifest small_manifest(std::uint32_t d_v, std::vector<std::uint32_t> channels, std::size_t classes = 2) {
  DatasetManifest m;
  m.dataset_name = "unit";
  for (std::size_t c = 0; c < classes; ++c) m.class_names.push_back("class" + std::to_string(c));
  m.shots_per_class = 1;
  m.feature_dim = d_v;
  m.text_dim = d_v;
  m.level_count = static_cast<std::uint32_t>(channels.size());
  m.channel_dims = std::move(channels);
  return m;
}

FeatureRecord random_record(Rng& rng, const DatasetManifest& m, std::string id) {
  FeatureRecord r;
  r.record_id = std::move(id);
  r.class_id = static_cast<std::uint32_t>(rng.index(m.class_names.size()));
  r.split = rng.index(2) ? SplitTag::train : SplitTag::test;
  r.final_feature = cpl::testing::random_unit_stored(rng, m.feature_dim);
  for (std::uint32_t c : m.channel_dims) {
    std::vector<double> level(c);
    for (double& v : level) v = static_cast<float>(rng.normal());
    r.level_summaries.push_back(std::move(level));
  }
  return r;
}

ErrorCode decode_error(std::span<const std::uint8_t> bytes, const DatasetManifest& m) {
  try {
    decode_bank(bytes, m);
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "decode unexpectedly succeeded";
  return ErrorCode::contract;
}

TEST(BankIo, SingleRecordRoundTrips) {
  Rng rng(1);
  const auto m = small_manifest(4, {3});
  const std::vector<FeatureRecord> records = {random_record(rng, m, "only")};
  const auto dir = cpl::testing::scratch_dir();
  write_bank(records, m, dir / "one.bank");
  const auto loaded = read_bank(dir / "one.bank");
  EXPECT_EQ(loaded.records, records);
  EXPECT_EQ(loaded.manifest.bank_file, "one.bank");
  EXPECT_EQ(loaded.manifest.class_names, m.class_names);
  // The sidecar alone is enough to find the bank.
  EXPECT_EQ(read_bank(sidecar_path(dir / "one.bank")).records, records);
}

TEST(BankIo, ByteSizeMatchesHeaderArithmetic) {
  Rng rng(2);
  const auto m = small_manifest(32, {32, 32, 32, 32});
  std::vector<FeatureRecord> records;
  for (int i = 0; i < 1000; ++i) {
    char id[16];
    std::snprintf(id, sizeof id, "rec-%04d", i);
    records.push_back(random_record(rng, m, id));
  }
  // Header: magic 4 + version 4 + d_v 4 + d_t 4 + Q 4 + 4 dims * 4 + count 8 = 44.
  // Record: id len 2 + id 8 + class 4 + tag 1 + 32 * 4 + 4 * 32 * 4 = 655.
  const std::uint64_t expected = 44 + 1000ULL * 655;
  EXPECT_EQ(expected, 655044u);
  EXPECT_EQ(encode_bank(records, m).size(), expected);
  EXPECT_EQ(predicted_bank_size(records, m), expected);
}

TEST(BankIo, CorruptMagicIsFormatError) {
  Rng rng(3);
  const auto m = small_manifest(4, {2});
  auto bytes = encode_bank(std::vector{random_record(rng, m, "a")}, m);
  bytes[0] = 'X';
  EXPECT_EQ(decode_error(bytes, m), ErrorCode::format);
}

TEST(BankIo, DistinctCodesForVersionTruncationAndDims) {
  Rng rng(4);
  const auto m = small_manifest(4, {2, 3});
  const auto good = encode_bank(std::vector{random_record(rng, m, "a"), random_record(rng, m, "b")}, m);

  auto bad_version = good;
  bad_version[4] = 9;
  EXPECT_EQ(decode_error(bad_version, m), ErrorCode::version);

  auto truncated = good;
  truncated.resize(good.size() - 5);
  EXPECT_EQ(decode_error(truncated, m), ErrorCode::truncated);

  auto other = small_manifest(5, {2, 3});
  EXPECT_EQ(decode_error(good, other), ErrorCode::dim_mismatch);

  auto extra = good;
  extra.push_back(0);
  EXPECT_EQ(decode_error(extra, m), ErrorCode::format);
}

TEST(BankIo, NormViolationNamesTheRecord) {
  Rng rng(5);
  const auto m = small_manifest(4, {2});
  auto rec = random_record(rng, m, "bad-norm-7");
  ByteWriter w;
  // Hand-assemble a bank whose only record is scaled by 2.
  w.magic("CPLF");
  w.u32(1);
  w.u32(4);
  w.u32(4);
  w.u32(1);
  w.u32(2);
  w.u64(1);
  w.short_string(rec.record_id);
  w.u32(rec.class_id);
  w.u8(0);
  for (double v : rec.final_feature) w.f32(static_cast<float>(2 * v));
  for (double v : rec.level_summaries[0]) w.f32(static_cast<float>(v));
  try {
    decode_bank(w.bytes(), m);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::norm);
    EXPECT_NE(std::string(e.what()).find("bad-norm-7"), std::string::npos);
  }
}

TEST(BankIo, ArbitraryWellFormedBanksRoundTrip) {
  Rng rng(6);
  for (int trial = 0; trial < 40; ++trial) {
    std::vector<std::uint32_t> channels(1 + rng.index(5));
    for (auto& c : channels) c = static_cast<std::uint32_t>(1 + rng.index(9));
    const auto m = small_manifest(static_cast<std::uint32_t>(1 + rng.index(16)), channels, 2 + rng.index(6));
    std::vector<FeatureRecord> records;
    const std::size_t n = rng.index(30);
    for (std::size_t i = 0; i < n; ++i) {
      std::string id = "r" + std::to_string(trial) + "_" + std::to_string(i) + std::string(rng.index(4), 'x');
      records.push_back(random_record(rng, m, id));
    }
    const auto bytes = encode_bank(records, m);
    ASSERT_EQ(bytes.size(), predicted_bank_size(records, m));
    EXPECT_EQ(decode_bank(bytes, m), records) << "trial " << trial;
  }
}

TEST(LexiconIo, RoundTripsAndRejectsDuplicates) {
  Rng rng(7);
  ConceptLexicon lex;
  lex.entries = {{"red", ConceptCategory::color}, {"wooden", ConceptCategory::material}};
  std::vector<double> rows;
  for (int i = 0; i < 2; ++i) {
    auto v = cpl::testing::random_unit_stored(rng, 6);
    rows.insert(rows.end(), v.begin(), v.end());
  }
  lex.embeddings = num::Tensor({2, 6}, rows);
  const auto back = decode_lexicon(encode_lexicon(lex));
  EXPECT_EQ(back.entries, lex.entries);
  EXPECT_EQ(back.embeddings, lex.embeddings);

  lex.entries[1].word = "red";
  EXPECT_THROW(encode_lexicon(lex), Error);
}

TEST(LexiconIo, SubsetKeepsEveryCategory) {
  Rng rng(8);
  ConceptLexicon lex;
  std::vector<double> rows;
  for (int i = 0; i < 30; ++i) {
    lex.entries.push_back({"w" + std::to_string(i), static_cast<ConceptCategory>(i % 3)});
    auto v = cpl::testing::random_unit_stored(rng, 4);
    rows.insert(rows.end(), v.begin(), v.end());
  }
  lex.embeddings = num::Tensor({30, 4}, rows);
  const auto sub = lex.subset(9);
  ASSERT_EQ(sub.size(), 9u);
  int per_category[3] = {0, 0, 0};
  for (const auto& e : sub.entries) ++per_category[static_cast<int>(e.category)];
  EXPECT_EQ(per_category[0], 3);
  EXPECT_EQ(per_category[1], 3);
  EXPECT_EQ(per_category[2], 3);
  EXPECT_THROW(lex.subset(31), Error);
}

TEST(Manifest, JsonRoundTripAndValidation) {
  auto m = small_manifest(8, {4, 4});
  m.encoder = {"remote", 0, "tcp://127.0.0.1:7000"};
  m.truncation_policy = "clip-77-tokens";
  EXPECT_EQ(manifest_from_json(manifest_to_json(m)), m);

  auto one_class = m;
  one_class.class_names.resize(1);
  EXPECT_THROW(manifest_from_json(manifest_to_json(one_class)), Error);
  EXPECT_THROW(manifest_from_json("{not json"), Error);
}

}  // namespace
}  // namespace cpl::store
