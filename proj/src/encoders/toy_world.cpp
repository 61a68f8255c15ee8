// SPDX-License-Identifier: Apache-2.0
#include "cpl/encoders/toy_world.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <set>

#include "cpl/common/error.hpp"
#include "cpl/common/rng.hpp"
#include "cpl/encoders/summary.hpp"

namespace cpl::enc {

namespace {

using store::ConceptCategory;

struct CategoryWords {
  ConceptCategory category;
  std::array<const char*, 16> words;
};

constexpr std::array<CategoryWords, 6> kCurated = {{
    {ConceptCategory::color,
     {"red", "blue", "green", "yellow", "black", "white", "brown", "orange", "purple", "pink", "gray", "golden",
      "silver", "beige", "teal", "crimson"}},
    {ConceptCategory::material,
     {"wooden", "metal", "plastic", "glass", "stone", "fabric", "leather", "paper", "ceramic", "rubber", "concrete",
      "woolen", "steel", "cotton", "marble", "bamboo"}},
    {ConceptCategory::size,
     {"large", "small", "tiny", "huge", "tall", "short", "long", "wide", "narrow", "thick", "thin", "giant",
      "miniature", "compact", "massive", "slender"}},
    {ConceptCategory::shape,
     {"round", "square", "oval", "rectangular", "triangular", "curved", "flat", "pointed", "cylindrical", "spherical",
      "spiral", "angular", "conical", "hexagonal", "wavy", "straight"}},
    {ConceptCategory::texture,
     {"smooth", "rough", "furry", "fluffy", "shiny", "matte", "glossy", "bumpy", "soft", "hard", "wrinkled",
      "striped", "spotted", "scaly", "feathered", "grainy"}},
    {ConceptCategory::other,
     {"wet", "dry", "old", "new", "bright", "dark", "clean", "dirty", "broken", "transparent", "colorful", "plain",
      "wild", "frozen", "floating", "rusty"}},
}};

constexpr std::array<const char*, 40> kNouns = {
    "cat",    "dog",     "car",   "chair",  "bird",    "tree",   "boat",  "lamp",    "horse", "cup",
    "house",  "shoe",    "clock", "bottle", "flower",  "truck",  "guitar", "apple",  "bicycle", "camera",
    "kite",   "hat",     "book",  "fish",   "train",   "bridge", "violin", "teapot", "rabbit", "owl",
    "tractor", "umbrella", "vase", "whale",  "zebra",   "piano",  "rocket", "candle", "ladder", "turtle"};

constexpr std::array<const char*, 31> kModifiers = {
    "pale", "deep", "very", "slightly", "mostly", "partly", "faintly", "richly", "lightly", "heavily", "oddly",
    "barely", "fully", "nearly", "darkly", "warmly", "coolly", "softly", "boldly", "dimly", "vividly", "thickly",
    "finely", "loosely", "densely", "roughly", "evenly", "unevenly", "partially", "deeply", "strongly"};

std::vector<double> unit_normal(Rng& rng, std::size_t d) {
  std::vector<double> v(d);
  double n = 0.0;
  for (double& x : v) {
    x = rng.normal();
    n += x * x;
  }
  n = std::sqrt(n);
  for (double& x : v) x /= n;
  return v;
}

void axpy(double a, std::span<const double> x, std::vector<double>& y) {
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += a * x[i];
}

std::vector<double> mat_vec(const num::Tensor& m, std::span<const double> x) {
  std::vector<double> y(m.rows(), 0.0);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < m.cols(); ++c) s += m.at(r, c) * x[c];
    y[r] = s;
  }
  return y;
}

std::string class_name_for(std::size_t index) {
  const std::string base = kNouns[index % kNouns.size()];
  const std::size_t round = index / kNouns.size();
  return round == 0 ? base : base + "-" + std::to_string(round + 1);
}

}  // namespace

std::string concept_prompt(std::string_view word) { return "The photo is " + std::string(word); }

std::vector<store::ConceptEntry> toy_lexicon_words(std::size_t size) {
  require(size >= 1, ErrorCode::contract, "lexicon size must be positive");
  std::vector<store::ConceptEntry> out;
  out.reserve(size);
  for (std::size_t variant = 1; out.size() < size; ++variant) {
    for (std::size_t w = 0; w < 16 && out.size() < size; ++w) {
      for (const auto& cat : kCurated) {
        if (out.size() == size) break;
        std::string word = cat.words[w];
        if (variant > 1) {
          const std::size_t m = variant - 2;
          word = std::string(kModifiers[m % kModifiers.size()]) + " " + word;
          if (m >= kModifiers.size()) word += "-" + std::to_string(m / kModifiers.size() + 1);
        }
        out.push_back({std::move(word), cat.category});
      }
    }
  }
  return out;
}

store::ConceptLexicon make_lexicon(const TextEncoder& encoder, std::vector<store::ConceptEntry> words) {
  store::ConceptLexicon lex;
  std::vector<std::string> prompts;
  prompts.reserve(words.size());
  for (const auto& e : words) prompts.push_back(concept_prompt(e.word));
  lex.entries = std::move(words);
  lex.embeddings = encoder.encode_rows(prompts);
  lex.validate();
  return lex;
}

ToyWorld::ToyWorld(ToyWorldConfig config) : config_(std::move(config)) {
  const auto& c = config_;
  require(c.num_classes >= 2, ErrorCode::contract, "toy world needs at least two classes");
  require(c.dim >= 2 && c.levels >= 1 && c.channels >= 1 && c.map_size >= 1, ErrorCode::contract,
          "toy world dims must be positive");
  require(c.attribute_pool >= c.attributes_per_class && c.attribute_pool <= c.lexicon_size, ErrorCode::contract,
          "attribute pool must fit between attributes_per_class and lexicon_size");
  require(c.attributes_per_class >= 1, ErrorCode::contract, "each class needs at least one attribute");
  require(c.attribute_pool >= c.attributes_per_class + c.nuisance_per_image, ErrorCode::contract,
          "attribute pool too small for the nuisance count");
  require(c.train_per_class >= c.shots, ErrorCode::contract, "train_per_class must cover the shot count");

  encoder_ = std::make_shared<ToyTextEncoder>(c.dim, c.encoder_seed);
  lexicon_ = make_lexicon(*encoder_, toy_lexicon_words(c.lexicon_size));
  for (const auto& e : lexicon_.subset(c.attribute_pool).entries) pool_.push_back(e.word);

  Rng vision(mix_seed(c.encoder_seed, stable_hash("vision")));
  distortion_ = num::Tensor::identity(c.dim);
  const double scale = c.distortion / std::sqrt(static_cast<double>(c.dim));
  for (double& v : distortion_.data()) v += scale * vision.normal();
  for (std::uint32_t q = 0; q < c.levels; ++q) {
    num::Tensor m({c.channels, c.dim});
    for (double& v : m.data()) v = vision.normal() / std::sqrt(static_cast<double>(c.dim));
    level_mixers_.push_back(std::move(m));
  }
  gap_ = unit_normal(vision, c.dim);

  Rng content(mix_seed(c.seed, stable_hash(c.dataset_name)));
  for (std::uint32_t k = 0; k < c.num_classes; ++k) {
    class_names_.push_back(class_name_for(c.class_name_offset + k));
    class_text_.push_back(encoder_->encode(class_names_.back()));
    class_offsets_.push_back(unit_normal(content, c.dim));
    std::vector<std::string> picked = pool_;
    content.shuffle(picked);
    picked.resize(c.attributes_per_class);
    class_attributes_.push_back(std::move(picked));
  }
}

const std::vector<std::string>& ToyWorld::class_attributes(std::uint32_t class_id) const {
  require(class_id < class_attributes_.size(), ErrorCode::label, "class id out of range");
  return class_attributes_[class_id];
}

std::vector<double> ToyWorld::class_direction(std::uint32_t class_id) const {
  require(class_id < class_text_.size(), ErrorCode::label, "class id out of range");
  return class_text_[class_id];
}

std::vector<double> ToyWorld::attribute_direction(const std::string& word) const {
  return encoder_->encode(word);
}

store::DatasetManifest ToyWorld::manifest() const {
  store::DatasetManifest m;
  m.dataset_name = config_.dataset_name;
  m.class_names = class_names_;
  m.shots_per_class = config_.shots;
  m.feature_dim = config_.dim;
  m.text_dim = config_.dim;
  m.level_count = config_.levels;
  m.channel_dims.assign(config_.levels, config_.channels);
  m.encoder = {"toy", config_.encoder_seed, ""};
  m.truncation_policy = "none";
  return m;
}

store::FeatureRecord ToyWorld::toy_image_encode(const ImageDescriptor& d) const {
  require(!d.attributes.empty(), ErrorCode::degenerate, "image descriptor '" + d.record_id + "' has no attributes");
  require(d.class_id < config_.num_classes, ErrorCode::label, "image descriptor class id out of range");
  require(d.noise >= 0.0, ErrorCode::contract, "noise scale must be non-negative");
  const std::size_t dim = config_.dim;
  Rng rng(mix_seed(d.seed, stable_hash(d.record_id)));

  std::vector<double> attrs(dim, 0.0);
  for (const auto& a : d.attributes) axpy(1.0, attribute_direction(a), attrs);
  const auto& text = class_text_[d.class_id];

  std::vector<double> mixed(dim, 0.0);
  axpy(config_.class_weight, text, mixed);
  axpy(config_.attribute_weight, attrs, mixed);
  std::vector<double> raw = mat_vec(distortion_, mixed);
  axpy(config_.class_offset, class_offsets_[d.class_id], raw);
  axpy(config_.modality_gap, gap_, raw);
  const double noise_scale = d.noise / std::sqrt(static_cast<double>(dim));
  for (double& v : raw) v += noise_scale * rng.normal();
  double n = 0.0;
  for (double v : raw) n += v * v;
  n = std::sqrt(n);
  require(n > 1e-12, ErrorCode::degenerate, "image descriptor '" + d.record_id + "' encodes to zero");

  store::FeatureRecord r;
  r.record_id = d.record_id;
  r.class_id = d.class_id;
  r.split = d.split;
  r.final_feature.resize(dim);
  for (std::size_t i = 0; i < dim; ++i) r.final_feature[i] = static_cast<float>(raw[i] / n);

  std::vector<double> class_part = text;
  axpy(config_.class_offset, class_offsets_[d.class_id], class_part);
  std::vector<FeatureMap> maps;
  for (std::uint32_t q = 0; q < config_.levels; ++q) {
    const double lambda = config_.levels == 1 ? 0.5 : 0.8 - 0.6 * q / (config_.levels - 1);
    FeatureMap m{config_.map_size, config_.map_size, config_.channels, {}};
    m.values.reserve(m.width * m.height * m.channels);
    for (std::size_t cell = 0; cell < m.width * m.height; ++cell) {
      std::vector<double> signal(dim);
      for (std::size_t i = 0; i < dim; ++i) {
        signal[i] = lambda * attrs[i] + (1.0 - lambda) * class_part[i] + noise_scale * rng.normal();
      }
      const auto projected = mat_vec(level_mixers_[q], signal);
      m.values.insert(m.values.end(), projected.begin(), projected.end());
    }
    maps.push_back(std::move(m));
  }
  r.level_summaries = multi_level_summary(maps);
  for (auto& level : r.level_summaries) {
    for (double& v : level) v = static_cast<float>(v);
  }
  return r;
}

std::vector<ImageDescriptor> ToyWorld::descriptors() const {
  std::vector<ImageDescriptor> out;
  Rng rng(mix_seed(config_.seed, stable_hash("descriptors")));
  for (std::uint32_t k = 0; k < config_.num_classes; ++k) {
    for (int s = 0; s < 2; ++s) {
      const auto split = s == 0 ? store::SplitTag::train : store::SplitTag::test;
      const std::uint32_t count = s == 0 ? config_.train_per_class : config_.test_per_class;
      for (std::uint32_t i = 0; i < count; ++i) {
        ImageDescriptor d;
        char id[96];
        std::snprintf(id, sizeof id, "%s-%03u-%s-%03u", config_.dataset_name.c_str(), k,
                      s == 0 ? "train" : "test", i);
        d.record_id = id;
        d.class_id = k;
        d.split = split;
        d.seed = config_.seed;
        d.noise = config_.noise;
        std::set<std::string> present;
        for (const auto& a : class_attributes_[k]) {
          if (rng.uniform() < config_.attribute_probability) {
            present.insert(a);
            d.attributes.push_back(a);
          }
        }
        if (d.attributes.empty()) {
          const auto& a = class_attributes_[k][rng.index(class_attributes_[k].size())];
          present.insert(a);
          d.attributes.push_back(a);
        }
        for (std::uint32_t extra = 0; extra < config_.nuisance_per_image;) {
          const auto& a = pool_[rng.index(pool_.size())];
          if (present.insert(a).second) {
            d.attributes.push_back(a);
            ++extra;
          }
        }
        out.push_back(std::move(d));
      }
    }
  }
  return out;
}

std::vector<store::FeatureRecord> ToyWorld::generate() const {
  std::vector<store::FeatureRecord> out;
  for (const auto& d : descriptors()) out.push_back(toy_image_encode(d));
  return out;
}

}  // namespace cpl::enc
