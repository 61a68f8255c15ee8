// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cpl/encoders/text_encoder.hpp"
#include "cpl/feature_store/records.hpp"
#include "cpl/numcore/tensor.hpp"

namespace cpl::enc {

// Text used to embed a lexicon word.
std::string concept_prompt(std::string_view word);

// Curated attribute words per category followed by numbered variants
// ("red-2", ...), `size` words in total.
std::vector<store::ConceptEntry> toy_lexicon_words(std::size_t size);

// Lexicon whose rows are encoder embeddings of concept_prompt(word).
store::ConceptLexicon make_lexicon(const TextEncoder& encoder, std::vector<store::ConceptEntry> words);

// Synthetic attribute-correlated dataset. The "vision encoder" (modality
// distortion and per-level mixing) and the text encoder both derive from
// encoder_seed, so worlds that share it are comparable; everything else
// derives from seed.
struct ToyWorldConfig {
  std::string dataset_name = "toy";
  std::uint32_t num_classes = 10;
  std::uint32_t class_name_offset = 0;
  std::uint32_t dim = 32;
  std::uint32_t levels = 4;
  std::uint32_t channels = 32;
  std::uint32_t map_size = 2;
  std::uint32_t train_per_class = 20;
  std::uint32_t test_per_class = 50;
  std::uint32_t shots = 16;
  std::uint32_t lexicon_size = 3000;
  std::uint32_t attribute_pool = 60;
  std::uint32_t attributes_per_class = 4;
  std::uint32_t nuisance_per_image = 2;
  double attribute_probability = 0.8;
  double class_weight = 1.0;
  double attribute_weight = 0.5;
  double class_offset = 0.3;
  double distortion = 0.3;
  double modality_gap = 0.0;  // norm of a constant offset shared by every image
  double noise = 0.1;
  std::uint64_t seed = 0;
  std::uint64_t encoder_seed = 0;
};

struct ImageDescriptor {
  std::string record_id;
  std::uint32_t class_id = 0;
  std::vector<std::string> attributes;
  store::SplitTag split = store::SplitTag::train;
  std::uint64_t seed = 0;
  double noise = 0.0;
};

class ToyWorld {
 public:
  explicit ToyWorld(ToyWorldConfig config);

  const ToyWorldConfig& config() const noexcept { return config_; }
  std::shared_ptr<const ToyTextEncoder> text_encoder() const { return encoder_; }
  const std::vector<std::string>& class_names() const noexcept { return class_names_; }
  const store::ConceptLexicon& lexicon() const noexcept { return lexicon_; }
  const std::vector<std::string>& attribute_pool() const noexcept { return pool_; }
  const std::vector<std::string>& class_attributes(std::uint32_t class_id) const;

  // Text-space direction of the class ("a photo of a <name>.").
  std::vector<double> class_direction(std::uint32_t class_id) const;

  store::DatasetManifest manifest() const;

  // Normalized mixture of the class direction and the attribute word embeddings,
  // passed through the modality distortion, plus a class-specific offset and
  // seeded noise. Level summaries pool small per-level maps in which low
  // levels carry more attribute signal and high levels more class signal.
  store::FeatureRecord toy_image_encode(const ImageDescriptor& descriptor) const;

  // Every train and test descriptor of the dataset.
  std::vector<ImageDescriptor> descriptors() const;
  std::vector<store::FeatureRecord> generate() const;

 private:
  std::vector<double> attribute_direction(const std::string& word) const;

  ToyWorldConfig config_;
  std::shared_ptr<const ToyTextEncoder> encoder_;
  std::vector<std::string> class_names_;
  store::ConceptLexicon lexicon_;
  std::vector<std::string> pool_;
  std::vector<std::vector<std::string>> class_attributes_;
  std::vector<std::vector<double>> class_text_;
  std::vector<std::vector<double>> class_offsets_;
  std::vector<double> gap_;
  num::Tensor distortion_;
  std::vector<num::Tensor> level_mixers_;
};

}  // namespace cpl::enc
