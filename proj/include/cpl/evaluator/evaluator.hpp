// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cpl/concept_cache/cache.hpp"
#include "cpl/concept_cache/prompts.hpp"
#include "cpl/encoders/text_encoder.hpp"
#include "cpl/feature_store/bank.hpp"
#include "cpl/feature_store/records.hpp"
#include "cpl/model/model.hpp"
#include "cpl/trainer/trainer.hpp"

namespace cpl::eval {

// Index of the largest value, lowest index on ties.
std::size_t argmax(std::span<const double> values);

// 2ab/(a+b); raises a metric error unless both are positive.
double harmonic_mean(double a, double b);

// Scores records against a fixed class list with a trained model.
class Predictor {
 public:
  Predictor(std::shared_ptr<const model::CplModel> model, std::vector<std::string> class_names,
            std::shared_ptr<const cache::ConceptCache> cache, std::shared_ptr<const enc::TextEncoder> encoder);

  const std::vector<std::string>& class_names() const noexcept { return class_names_; }
  std::vector<double> probabilities(const store::FeatureRecord& record) const;
  std::uint32_t predict(const store::FeatureRecord& record) const;

 private:
  std::shared_ptr<const model::CplModel> model_;
  std::vector<std::string> class_names_;
  cache::PromptBuilder prompts_;
};

std::uint32_t predict(const store::FeatureRecord& record, const model::CplModel& model,
                      std::shared_ptr<const cache::ConceptCache> cache, std::shared_ptr<const enc::TextEncoder> encoder,
                      std::span<const std::string> class_names);

struct ClassScore {
  std::string name;
  std::uint32_t class_id = 0;
  std::string split;  // "base", "novel" or "all"
  std::size_t correct = 0;
  std::size_t total = 0;

  double accuracy() const;  // percent
  friend bool operator==(const ClassScore&, const ClassScore&) = default;
};

// Accuracy over records whose class_id is in class_ids; label i of the
// predictor corresponds to class_ids[i]. `threads` 0 picks the hardware
// count; results do not depend on it.
std::vector<ClassScore> score_records(const Predictor& predictor, std::span<const std::uint32_t> class_ids,
                                      std::span<const store::FeatureRecord> records, std::string_view split,
                                      unsigned threads = 0);
double overall_accuracy(std::span<const ClassScore> scores);

struct EvalReport {
  std::string dataset;
  std::uint64_t seed = 0;
  std::vector<ClassScore> per_class;
  double overall = 0.0;
  std::optional<double> base;
  std::optional<double> novel;
  std::optional<double> harmonic;
  double seconds = 0.0;
  std::string config_json;  // effective configuration
  std::vector<std::string> warnings;

  std::string to_json() const;
  static EvalReport from_json(std::string_view text);
  // Rows of "dataset,split,metric,value,seed" without the header.
  std::vector<std::string> csv_rows() const;
  std::string text_table() const;

  friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

inline constexpr std::string_view kCsvHeader = "dataset,split,metric,value,seed";

struct BaseToNovelConfig {
  train::TrainConfig train;
  std::uint32_t shots = 16;
  store::SplitRule split_rule = store::SplitRule::half;
  unsigned threads = 0;
};

// Trains on few-shot images of the base classes (cache built from those
// images only), then scores base and novel test images.
EvalReport run_base_to_novel(const store::RecordSource& source, const store::ConceptLexicon& lexicon,
                             std::shared_ptr<const enc::TextEncoder> encoder, const BaseToNovelConfig& config);

// Scores a trained model on the base and novel test images of a dataset.
EvalReport evaluate_base_novel(const model::CplModel& model, std::shared_ptr<const cache::ConceptCache> cache,
                               std::shared_ptr<const enc::TextEncoder> encoder, const store::RecordSource& source,
                               store::SplitRule rule = store::SplitRule::half, unsigned threads = 0);

// Fits on few-shot images of the base classes only.
train::FitResult fit_base_classes(const store::RecordSource& source, const store::ConceptLexicon& lexicon,
                                  std::shared_ptr<const enc::TextEncoder> encoder, const train::TrainConfig& config,
                                  std::uint32_t shots, store::SplitRule rule = store::SplitRule::half,
                                  std::ostream* log_stream = nullptr);

// Fits on few-shot images of every class of a dataset.
train::FitResult fit_all_classes(const store::RecordSource& source, const store::ConceptLexicon& lexicon,
                                 std::shared_ptr<const enc::TextEncoder> encoder, const train::TrainConfig& config,
                                 std::uint32_t shots, std::ostream* log_stream = nullptr);

struct TransferTarget {
  std::string name;
  double accuracy = 0.0;
};

struct TransferReport {
  std::vector<TransferTarget> targets;
  double average = 0.0;
  std::vector<EvalReport> reports;

  std::vector<std::string> csv_rows(std::uint64_t seed) const;
  std::string text_table() const;
};

// Test accuracy of a trained model over every class of one dataset.
EvalReport evaluate_dataset(const model::CplModel& model, std::shared_ptr<const cache::ConceptCache> cache,
                            std::shared_ptr<const enc::TextEncoder> encoder, const store::RecordSource& target,
                            unsigned threads = 0);

// No training on the targets; class prompts use each target's class names
// and untrained classes get zero adapter rows.
TransferReport run_transfer(const model::CplModel& model, std::shared_ptr<const cache::ConceptCache> cache,
                            std::shared_ptr<const enc::TextEncoder> encoder,
                            std::span<const store::RecordSource* const> targets, unsigned threads = 0);

enum class AblationAxis { k, concepts, components, shots };
std::string_view to_string(AblationAxis axis) noexcept;
AblationAxis ablation_axis_from_string(std::string_view name);

// Component rows in stacking order.
inline constexpr std::string_view kComponentRows[] = {"baseline", "+CGP", "+CGP+P", "+CGP+P+TA"};

struct AblationCell {
  std::string label;
  double base = 0.0;  // means over seeds
  double novel = 0.0;
  double harmonic = 0.0;
  std::vector<EvalReport> runs;  // one per seed
};

struct AblationGrid {
  AblationAxis axis = AblationAxis::k;
  std::vector<AblationCell> cells;

  std::string csv() const;  // header "axis,value,base,novel,hm"
  std::string text_table() const;
};

// Applies one component row to a base config.
void apply_component(std::string_view row, BaseToNovelConfig& config);

// One full base-to-novel run per (value, seed); the seed list is shared by
// every cell. `values` are numbers for K, I and shots and row labels for the
// component axis (all four rows when empty).
AblationGrid run_ablation(AblationAxis axis, std::span<const std::string> values, const BaseToNovelConfig& base,
                          std::span<const std::uint64_t> seeds, const store::RecordSource& source,
                          const store::ConceptLexicon& lexicon, std::shared_ptr<const enc::TextEncoder> encoder);

}  // namespace cpl::eval
