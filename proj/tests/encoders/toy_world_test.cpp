// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <set>

#include "cpl/common/error.hpp"
#include "cpl/encoders/toy_world.hpp"
#include "cpl/feature_store/bank_io.hpp"
#include "cpl/numcore/ops.hpp"

namespace cpl::enc {
namespace {

ToyWorldConfig small_config() {
  ToyWorldConfig c;
  c.lexicon_size = 300;
  c.train_per_class = 16;
  c.test_per_class = 4;
  return c;
}

std::size_t nearest_class(const ToyWorld& world, std::span<const double> f) {
  std::size_t best = 0;
  double best_sim = -2.0;
  for (std::uint32_t k = 0; k < world.config().num_classes; ++k) {
    const double s = num::dot(world.class_direction(k), f);
    if (s > best_sim) {
      best_sim = s;
      best = k;
    }
  }
  return best;
}

TEST(ToyLexicon, WordsAreDistinctAndCategoriesBalanced) {
  const auto words = toy_lexicon_words(3000);
  ASSERT_EQ(words.size(), 3000u);
  std::set<std::string> seen;
  std::map<store::ConceptCategory, int> per_category;
  for (const auto& w : words) {
    EXPECT_TRUE(seen.insert(w.word).second) << w.word;
    ++per_category[w.category];
  }
  EXPECT_EQ(per_category.size(), 6u);
  for (const auto& [cat, n] : per_category) EXPECT_EQ(n, 500);
  EXPECT_EQ(words[0].word, "red");
}

TEST(ToyLexicon, RowsAreConceptPromptEmbeddings) {
  const ToyTextEncoder enc(16, 2);
  const auto lex = make_lexicon(enc, toy_lexicon_words(20));
  EXPECT_EQ(lex.size(), 20u);
  for (std::size_t i = 0; i < lex.size(); ++i) {
    const auto expected = enc.encode("The photo is " + lex.entries[i].word);
    EXPECT_TRUE(std::equal(expected.begin(), expected.end(), lex.embeddings.row(i).begin()));
  }
}

TEST(ToyImageEncode, SingleAttributeWithoutNoiseIsItsWordEmbedding) {
  ToyWorldConfig c;
  c.class_weight = 0.0;
  c.class_offset = 0.0;
  c.distortion = 0.0;
  const ToyWorld world(c);
  ImageDescriptor d{"probe", 0, {"red"}, store::SplitTag::train, 0, 0.0};
  const auto rec = world.toy_image_encode(d);
  const auto red = world.text_encoder()->encode("red");
  ASSERT_EQ(red.size(), rec.final_feature.size());
  for (std::size_t i = 0; i < red.size(); ++i) EXPECT_NEAR(rec.final_feature[i], red[i], 1e-6) << i;

  // the concept prompt for the word beats a prompt for an unrelated word
  const auto& enc = *world.text_encoder();
  EXPECT_GT(num::dot(enc.encode("The photo is red"), rec.final_feature),
            num::dot(enc.encode("The photo is striped"), rec.final_feature));
}

TEST(ToyImageEncode, SeedChangesVectorButNotNearestClass) {
  const ToyWorld world(small_config());
  for (std::uint32_t k = 0; k < world.config().num_classes; ++k) {
    ImageDescriptor a{"img", k, world.class_attributes(k), store::SplitTag::train, 1, 0.1};
    ImageDescriptor b = a;
    b.seed = 2;
    const auto ra = world.toy_image_encode(a);
    const auto rb = world.toy_image_encode(b);
    EXPECT_NE(ra.final_feature, rb.final_feature);
    EXPECT_EQ(nearest_class(world, ra.final_feature), nearest_class(world, rb.final_feature));
  }
}

TEST(ToyImageEncode, EmitsDeclaredLevelsAndUnitFeatures) {
  const ToyWorld world(small_config());
  const auto rec = world.toy_image_encode({"x", 3, {"round", "wooden"}, store::SplitTag::test, 0, 0.1});
  ASSERT_EQ(rec.level_summaries.size(), 4u);
  for (const auto& level : rec.level_summaries) EXPECT_EQ(level.size(), 32u);
  EXPECT_NEAR(num::norm(rec.final_feature), 1.0, 1e-6);
  EXPECT_NO_THROW(store::validate_record(rec, world.manifest()));
}

TEST(ToyImageEncode, EmptyAttributeListIsDegenerate) {
  const ToyWorld world(small_config());
  try {
    world.toy_image_encode({"x", 0, {}, store::SplitTag::train, 0, 0.1});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::degenerate);
  }
}

TEST(ToyWorld, GenerationIsDeterministicAndRoundTripsThroughABank) {
  const ToyWorld world(small_config());
  const auto records = world.generate();
  EXPECT_EQ(records.size(), 10u * (16 + 4));
  EXPECT_EQ(records, ToyWorld(small_config()).generate());
  const auto m = world.manifest();
  EXPECT_EQ(store::decode_bank(store::encode_bank(records, m), m), records);
}

TEST(ToyWorld, ClassAttributesComeFromThePool) {
  const ToyWorld world(small_config());
  const std::set<std::string> pool(world.attribute_pool().begin(), world.attribute_pool().end());
  EXPECT_EQ(pool.size(), world.config().attribute_pool);
  for (std::uint32_t k = 0; k < world.config().num_classes; ++k) {
    for (const auto& a : world.class_attributes(k)) EXPECT_TRUE(pool.count(a)) << a;
  }
  for (const auto& d : world.descriptors()) {
    EXPECT_GE(d.attributes.size(), 1u + world.config().nuisance_per_image);
  }
}

TEST(ToyWorld, SharedEncoderSeedKeepsTextSpaceAcrossDatasets) {
  auto a = small_config();
  auto b = small_config();
  b.dataset_name = "other";
  b.seed = 5;
  b.class_name_offset = 10;
  const ToyWorld wa(a);
  const ToyWorld wb(b);
  EXPECT_EQ(wa.text_encoder()->encode("a photo of a cat."), wb.text_encoder()->encode("a photo of a cat."));
  EXPECT_NE(wa.class_names(), wb.class_names());
}

}  // namespace
}  // namespace cpl::enc
