// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "cpl/feature_store/records.hpp"

namespace cpl::store {

// Feature bank container, little-endian:
//   "CPLF" | u32 version=1 | u32 d_v | u32 d_t | u32 Q | Q x u32 C_q | u64 count
//   then per record: u16 id_len, id bytes, u32 class_id, u8 split_tag,
//   d_v x f32 final feature, sum(C_q) x f32 level summaries in level order.
inline constexpr std::uint32_t kBankVersion = 1;

// Lexicon container:
//   "CPLL" | u32 version=1 | u32 d_t | u64 I
//   then per word: u16 len, bytes, u8 category; then I x d_t f32 row-major.
inline constexpr std::uint32_t kLexiconVersion = 1;

struct BankContents {
  std::vector<FeatureRecord> records;
  DatasetManifest manifest;
};

std::vector<std::uint8_t> encode_bank(std::span<const FeatureRecord> records, const DatasetManifest& manifest);

// Parses a bank and checks it against the manifest; every record must pass
// validate_record.
std::vector<FeatureRecord> decode_bank(std::span<const std::uint8_t> bytes, const DatasetManifest& manifest);

// Exact byte count the container takes for these records.
std::uint64_t predicted_bank_size(std::span<const FeatureRecord> records, const DatasetManifest& manifest);

// Writes the bank at `path` and the manifest sidecar next to it
// (sidecar_path). manifest.bank_file is set to the bank's file name.
void write_bank(std::span<const FeatureRecord> records, DatasetManifest manifest,
                const std::filesystem::path& path);

// Accepts either the bank file or its sidecar manifest.
BankContents read_bank(const std::filesystem::path& path);

std::filesystem::path sidecar_path(const std::filesystem::path& bank_path);

std::vector<std::uint8_t> encode_lexicon(const ConceptLexicon& lexicon);
ConceptLexicon decode_lexicon(std::span<const std::uint8_t> bytes);
void write_lexicon(const ConceptLexicon& lexicon, const std::filesystem::path& path);
ConceptLexicon read_lexicon(const std::filesystem::path& path);

}  // namespace cpl::store
