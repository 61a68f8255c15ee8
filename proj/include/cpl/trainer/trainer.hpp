// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cpl/concept_cache/cache.hpp"
#include "cpl/concept_cache/prompts.hpp"
#include "cpl/encoders/text_encoder.hpp"
#include "cpl/feature_store/records.hpp"
#include "cpl/model/model.hpp"

namespace cpl::train {

struct TrainConfig {
  std::uint32_t epochs = 50;
  std::uint32_t batch_size = 256;
  double learning_rate = 1e-3;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  bool cosine_schedule = true;
  std::uint64_t seed = 0;
  std::size_t concepts = 2000;  // I, lexicon entries used to build the cache
  cache::PromptConfig prompts;  // K lives here
  std::uint32_t heads = 4;
  double temperature = 0.01;
  // Component switches. A disabled projector or adapter keeps its residual
  // scale at zero and is not optimized.
  bool use_projector = true;
  bool use_adapter = true;
  bool train_alpha_beta = true;

  void validate() const;
};

// Flat JSON object, one key per field ("k", "prompt_mode" and "template"
// for the prompt settings).
std::string to_json(const TrainConfig& config);

// `base` with the keys present in `json` replaced. Unknown keys and wrong
// value types raise a contract error.
TrainConfig overlay_json(const TrainConfig& base, std::string_view json);

// 70 for ImageNet-style dataset names, 50 otherwise.
std::uint32_t default_epochs(std::string_view dataset_name);

double cosine_lr(std::uint64_t step, std::uint64_t total_steps, double lr0);

// Mean of -log p(y) over the batch, from logits via log-sum-exp.
double cross_entropy(std::span<const double> logits, std::uint32_t label);
double cross_entropy_from_probabilities(std::span<const double> probabilities, std::uint32_t label);
num::Var cross_entropy(num::Var logits, std::uint32_t label);

struct OptimizerState {
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
  std::uint64_t step = 0;

  friend bool operator==(const OptimizerState&, const OptimizerState&) = default;
};

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

// One decoupled-weight-decay Adam update over parallel parameter and
// gradient spans. Moments are created on the first call.
void adamw_update(std::span<const std::span<double>> params, std::span<const std::span<const double>> grads,
                  OptimizerState& state, const AdamWConfig& config, double lr);

// One training example: the image, its prompt features (D x d_t) and its
// label in [0, D).
struct Example {
  const store::FeatureRecord* record = nullptr;
  num::Tensor text_features;
  std::uint32_t label = 0;
};

struct StepMetrics {
  double loss = 0.0;
  std::size_t correct = 0;
  std::size_t count = 0;
};

struct TrainState {
  model::CplModel model;
  OptimizerState optimizer;
  model::Trainable trainable;
};

// Forward over the batch, mean cross-entropy, backward, one AdamW update.
StepMetrics train_step(TrainState& state, std::span<const Example> batch, const AdamWConfig& adam, double lr);

// Loss and accuracy without updating anything.
StepMetrics evaluate_examples(const model::CplModel& model, std::span<const Example> examples);

struct EpochLog {
  std::uint32_t epoch = 0;  // 0 is the untrained model
  std::uint64_t step = 0;
  double lr = 0.0;
  double loss = 0.0;
  double train_accuracy = 0.0;  // percent

  std::string to_json_line() const;
};

// Training images with labels: a record's label is the position of its
// class_id in class_ids.
struct TrainingSet {
  std::vector<std::string> class_names;
  std::vector<std::uint32_t> class_ids;
  std::vector<store::FeatureRecord> records;

  std::uint32_t label_of(const store::FeatureRecord& record) const;
};

struct FitResult {
  model::CplModel model;
  std::shared_ptr<const cache::ConceptCache> cache;  // null without concepts
  std::vector<EpochLog> log;
};

// Builds the cache once from the training images, memoizes every image's
// prompt features, then runs epochs x batches of train_step. Each log line
// is also written to `log_stream` as it is produced.
FitResult fit(const TrainingSet& data, const store::ConceptLexicon& lexicon,
              std::shared_ptr<const enc::TextEncoder> encoder, const TrainConfig& config,
              std::ostream* log_stream = nullptr);

// Concept cache needed by a prompt config, or null when prompts carry no
// concepts.
std::shared_ptr<const cache::ConceptCache> cache_for(const cache::PromptConfig& prompts,
                                                     const store::ConceptLexicon& lexicon, std::size_t concepts,
                                                     std::span<const store::FeatureRecord> train);

// The model fit() starts from.
model::CplModel initial_model(const TrainingSet& data, std::size_t text_dim, const TrainConfig& config);

}  // namespace cpl::train
