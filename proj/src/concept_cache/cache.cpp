// SPDX-License-Identifier: Apache-2.0
#include "cpl/concept_cache/cache.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <unordered_set>

#include "cpl/common/binary_io.hpp"
#include "cpl/common/error.hpp"
#include "cpl/numcore/ops.hpp"

namespace cpl::cache {

std::size_t ConceptCache::distinct_words() const {
  return std::unordered_set<std::string_view>(values.begin(), values.end()).size();
}

void ConceptCache::validate() const {
  require(!values.empty(), ErrorCode::build, "concept cache is empty");
  require(keys.rank() == 2 && keys.rows() == values.size() && provenance.size() == values.size(),
          ErrorCode::dim_mismatch, "concept cache keys, values and provenance disagree in length");
  for (std::size_t i = 0; i < keys.rows(); ++i) {
    const double n = num::norm(keys.row(i));
    if (std::abs(n - 1.0) > 1e-5) {
      raise(ErrorCode::norm, "cache key " + std::to_string(i) + " ('" + values[i] + "') has norm " + std::to_string(n));
    }
  }
}

ConceptCache build_cache(const store::ConceptLexicon& lexicon, std::span<const store::FeatureRecord> train) {
  require(train.size() >= 1, ErrorCode::build, "cannot build a concept cache without training features");
  lexicon.validate();
  const std::size_t d = lexicon.dim();
  for (const auto& r : train) {
    require(r.final_feature.size() == d, ErrorCode::dim_mismatch,
            "record '" + r.record_id + "' has d_v=" + std::to_string(r.final_feature.size()) +
                " but concepts have d_t=" + std::to_string(d));
  }
  ConceptCache cache;
  std::vector<double> keys;
  keys.reserve(lexicon.size() * d);
  for (std::size_t i = 0; i < lexicon.size(); ++i) {
    const auto c = lexicon.embeddings.row(i);
    std::size_t best = 0;
    double best_sim = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < train.size(); ++j) {
      const double s = num::dot(c, train[j].final_feature);
      if (s > best_sim) {
        best_sim = s;
        best = j;
      }
    }
    keys.insert(keys.end(), train[best].final_feature.begin(), train[best].final_feature.end());
    cache.values.push_back(lexicon.entries[i].word);
    cache.provenance.push_back({static_cast<std::uint32_t>(i), train[best].record_id, best_sim});
  }
  cache.keys = num::Tensor({lexicon.size(), d}, std::move(keys));
  return cache;
}

ConceptHits query_topk(const ConceptCache& cache, std::span<const double> query, std::size_t k) {
  require(query.size() == cache.dim(), ErrorCode::dimension,
          "query has " + std::to_string(query.size()) + " dims, cache keys have " + std::to_string(cache.dim()));
  const double qn = num::norm(query);
  require(qn > 0.0 && std::isfinite(qn), ErrorCode::degenerate, "cache query vector is zero or non-finite");
  const auto too_many = [&] {
    raise(ErrorCode::query, "requested " + std::to_string(k) + " concepts but the cache holds " +
                                std::to_string(cache.distinct_words()) + " distinct words");
  };
  if (k < 1 || k > cache.size()) too_many();
  const std::size_t n = cache.size();
  std::vector<double> sims(n);
  for (std::size_t i = 0; i < n; ++i) sims[i] = num::dot(cache.keys.row(i), query);
  std::vector<std::uint32_t> order(n);
  std::iota(order.begin(), order.end(), 0u);
  const auto before = [&](std::uint32_t a, std::uint32_t b) {
    if (sims[a] != sims[b]) return sims[a] > sims[b];
    return cache.provenance[a].concept_index < cache.provenance[b].concept_index;
  };
  ConceptHits hits;
  hits.reserve(k);
  std::unordered_set<std::string_view> seen;
  // Most calls finish inside a small prefix; widen it only when duplicates
  // push the k-th distinct word further down.
  std::size_t sorted = 0;
  for (std::size_t pos = 0; hits.size() < k; ++pos) {
    if (pos == n) too_many();
    if (pos == sorted) {
      const std::size_t next = std::min(n, std::max<std::size_t>(2 * sorted, k + 16));
      std::partial_sort(order.begin() + static_cast<std::ptrdiff_t>(sorted),
                        order.begin() + static_cast<std::ptrdiff_t>(next), order.end(), before);
      sorted = next;
    }
    const std::uint32_t i = order[pos];
    if (seen.insert(cache.values[i]).second) {
      hits.push_back({cache.values[i], sims[i] / qn, cache.provenance[i].concept_index});
    }
  }
  return hits;
}

std::string synthesize_prompt(std::string_view class_name, const ConceptHits& hits, std::string_view tmpl) {
  require(!class_name.empty(), ErrorCode::contract, "prompt needs a class name");
  std::string joined;
  for (std::size_t i = 0; i < hits.size(); ++i) {
    if (i) joined += ", ";
    joined += hits[i].word;
  }
  std::string out;
  bool in_optional = false;
  for (std::size_t i = 0; i < tmpl.size();) {
    const char ch = tmpl[i];
    if (ch == '[' && !in_optional) {
      in_optional = true;
      ++i;
      continue;
    }
    if (ch == ']' && in_optional) {
      in_optional = false;
      ++i;
      continue;
    }
    const bool keep = !in_optional || !hits.empty();
    if (ch == '{') {
      const auto close = tmpl.find('}', i);
      require(close != std::string_view::npos, ErrorCode::contract, "unclosed placeholder in prompt template");
      const std::string_view name = tmpl.substr(i + 1, close - i - 1);
      std::string value;
      if (name == "class_name") {
        value = class_name;
      } else if (name == "concepts") {
        value = joined;
      } else if (name.size() >= 2 && name[0] == 'w' &&
                 std::all_of(name.begin() + 1, name.end(), [](char c) { return c >= '0' && c <= '9'; })) {
        const std::size_t index = std::stoul(std::string(name.substr(1)));
        if (keep) {
          require(index >= 1 && index <= hits.size(), ErrorCode::contract,
                  "template asks for {" + std::string(name) + "} but only " + std::to_string(hits.size()) +
                      " concepts were retrieved");
          value = hits[index - 1].word;
        }
      } else {
        raise(ErrorCode::contract, "unknown template placeholder {" + std::string(name) + "}");
      }
      if (keep) out += value;
      i = close + 1;
      continue;
    }
    if (keep) out.push_back(ch);
    ++i;
  }
  require(!in_optional, ErrorCode::contract, "unclosed [ in prompt template");
  return out;
}

std::vector<std::uint8_t> encode_cache(const ConceptCache& cache) {
  cache.validate();
  ByteWriter w;
  w.magic("CPLC");
  w.u32(kCacheVersion);
  w.u32(static_cast<std::uint32_t>(cache.dim()));
  w.u64(cache.size());
  for (std::size_t i = 0; i < cache.size(); ++i) {
    w.short_string(cache.values[i]);
    w.u32(cache.provenance[i].concept_index);
    w.short_string(cache.provenance[i].record_id);
    w.f64(cache.provenance[i].similarity);
  }
  for (double v : cache.keys.data()) w.f64(v);
  return w.bytes();
}

ConceptCache decode_cache(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, "concept cache");
  r.expect_magic("CPLC");
  const std::uint32_t version = r.u32();
  require(version == kCacheVersion, ErrorCode::version, "concept cache version " + std::to_string(version));
  const std::uint32_t d = r.u32();
  const std::uint64_t count = r.u64();
  require(count >= 1 && d >= 1, ErrorCode::format, "concept cache declares no entries or zero dims");
  require(count <= r.remaining(), ErrorCode::truncated, "concept cache entry count exceeds file size");
  ConceptCache cache;
  for (std::uint64_t i = 0; i < count; ++i) {
    cache.values.push_back(r.short_string());
    Provenance p;
    p.concept_index = r.u32();
    p.record_id = r.short_string();
    p.similarity = r.f64();
    cache.provenance.push_back(std::move(p));
  }
  std::vector<double> keys(count * d);
  for (double& v : keys) v = r.f64();
  require(r.at_end(), ErrorCode::format, "concept cache has trailing bytes");
  cache.keys = num::Tensor({count, d}, std::move(keys));
  cache.validate();
  return cache;
}

void write_cache(const ConceptCache& cache, const std::filesystem::path& path) {
  write_file_bytes(path, encode_cache(cache));
}

ConceptCache read_cache(const std::filesystem::path& path) { return decode_cache(read_file_bytes(path)); }

}  // namespace cpl::cache
