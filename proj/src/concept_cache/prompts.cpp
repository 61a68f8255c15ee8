// SPDX-License-Identifier: Apache-2.0
#include "cpl/concept_cache/prompts.hpp"

#include "cpl/common/error.hpp"

namespace cpl::cache {

std::string_view to_string(PromptMode mode) noexcept {
  switch (mode) {
    case PromptMode::baseline:
      return "baseline";
    case PromptMode::image:
      return "image";
    case PromptMode::class_static:
      return "class";
  }
  return "?";
}

PromptMode prompt_mode_from_string(std::string_view name) {
  if (name == "baseline") return PromptMode::baseline;
  if (name == "image") return PromptMode::image;
  if (name == "class") return PromptMode::class_static;
  raise(ErrorCode::contract, "unknown prompt mode '" + std::string(name) + "' (expected baseline, image or class)");
}

PromptBuilder::PromptBuilder(std::vector<std::string> class_names, PromptConfig config,
                             std::shared_ptr<const ConceptCache> cache, std::shared_ptr<const enc::TextEncoder> encoder)
    : class_names_(std::move(class_names)),
      config_(std::move(config)),
      cache_(std::move(cache)),
      encoder_(std::move(encoder)) {
  require(!class_names_.empty(), ErrorCode::contract, "prompt builder needs class names");
  require(encoder_ != nullptr, ErrorCode::contract, "prompt builder needs a text encoder");
  if (config_.mode == PromptMode::baseline || config_.k == 0) {
    config_.mode = PromptMode::baseline;
    config_.k = 0;
    for (const auto& name : class_names_) fixed_prompts_.push_back(synthesize_prompt(name, {}, config_.template_text));
  } else {
    require(cache_ != nullptr, ErrorCode::contract, "concept prompts need a concept cache");
    require(cache_->dim() == encoder_->dim(), ErrorCode::dim_mismatch,
            "concept cache keys and text encoder disagree in dimension");
    if (config_.mode == PromptMode::class_static) {
      for (const auto& name : class_names_) {
        const auto query = encoder_->encode(synthesize_prompt(name, {}, config_.template_text));
        fixed_prompts_.push_back(synthesize_prompt(name, query_topk(*cache_, query, config_.k), config_.template_text));
      }
    }
  }
  if (!fixed_prompts_.empty()) fixed_features_ = encoder_->encode_rows(fixed_prompts_);
}

std::vector<std::string> PromptBuilder::prompts(std::span<const double> image_feature) const {
  if (!fixed_prompts_.empty()) return fixed_prompts_;
  const auto hits = query_topk(*cache_, image_feature, config_.k);
  std::vector<std::string> out;
  out.reserve(class_names_.size());
  for (const auto& name : class_names_) out.push_back(synthesize_prompt(name, hits, config_.template_text));
  return out;
}

num::Tensor PromptBuilder::text_features(std::span<const double> image_feature) const {
  if (!fixed_prompts_.empty()) return fixed_features_;
  return encoder_->encode_rows(prompts(image_feature));
}

}  // namespace cpl::cache
