// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cpl/concept_cache/cache.hpp"
#include "cpl/encoders/text_encoder.hpp"
#include "cpl/numcore/tensor.hpp"

namespace cpl::cache {

enum class PromptMode {
  baseline,      // no concepts: "a photo of a {class_name}."
  image,         // concepts retrieved with the image feature, shared by all classes
  class_static,  // concepts retrieved once per class with its baseline text feature
};

std::string_view to_string(PromptMode mode) noexcept;
PromptMode prompt_mode_from_string(std::string_view name);

struct PromptConfig {
  PromptMode mode = PromptMode::image;
  std::size_t k = 10;
  std::string template_text{kDefaultTemplate};

  friend bool operator==(const PromptConfig&, const PromptConfig&) = default;
};

// Produces the per-class text features f_t for one image.
class PromptBuilder {
 public:
  PromptBuilder(std::vector<std::string> class_names, PromptConfig config, std::shared_ptr<const ConceptCache> cache,
                std::shared_ptr<const enc::TextEncoder> encoder);

  const PromptConfig& config() const noexcept { return config_; }
  const std::vector<std::string>& class_names() const noexcept { return class_names_; }
  std::size_t num_classes() const noexcept { return class_names_.size(); }
  std::size_t text_dim() const { return encoder_->dim(); }

  std::vector<std::string> prompts(std::span<const double> image_feature) const;

  // D x d_t, row i encodes prompts(image_feature)[i].
  num::Tensor text_features(std::span<const double> image_feature) const;

 private:
  std::vector<std::string> class_names_;
  PromptConfig config_;
  std::shared_ptr<const ConceptCache> cache_;
  std::shared_ptr<const enc::TextEncoder> encoder_;
  std::vector<std::string> fixed_prompts_;
  num::Tensor fixed_features_;
};

}  // namespace cpl::cache
