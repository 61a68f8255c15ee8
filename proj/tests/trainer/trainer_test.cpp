// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <chrono>
#include <cmath>
#include <numbers>
#include <sstream>

#include <json.hpp>

#include "cpl/common/error.hpp"
#include "cpl/encoders/toy_world.hpp"
#include "cpl/feature_store/bank.hpp"
#include "cpl/numcore/grad_check.hpp"
#include "cpl/trainer/trainer.hpp"
#include "support/fixtures.hpp"

namespace cpl::train {
namespace {

using num::Tensor;

TEST(Loss, Examples) {
  const std::vector<double> uniform(10, 0.1);
  EXPECT_NEAR(cross_entropy_from_probabilities(uniform, 3), 2.302585092994046, 1e-12);
  EXPECT_NEAR(cross_entropy(std::vector<double>(10, 1.7), 3), std::log(10.0), 1e-12);
  EXPECT_EQ(cross_entropy_from_probabilities(std::vector<double>{0, 1, 0}, 1), 0.0);
  EXPECT_NEAR(cross_entropy_from_probabilities(std::vector<double>{0.9, 0.1}, 0), 0.1053605156578263, 1e-12);
  EXPECT_NEAR(cross_entropy(std::vector<double>{std::log(0.9), std::log(0.1)}, 0), 0.1053605156578263, 1e-12);
  EXPECT_THROW(cross_entropy(std::vector<double>{0, 0}, 2), Error);
}

TEST(Loss, LogitsAndProbabilitiesAgree) {
  Rng rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t d = 2 + rng.index(20);
    std::vector<double> logits(d);
    for (double& l : logits) l = 30.0 * rng.normal();
    const auto label = static_cast<std::uint32_t>(rng.index(d));
    const double mx = *std::max_element(logits.begin(), logits.end());
    long double z = 0;
    for (double l : logits) z += std::exp(static_cast<long double>(l - mx));
    std::vector<double> p(d);
    for (std::size_t i = 0; i < d; ++i) p[i] = static_cast<double>(std::exp(static_cast<long double>(logits[i] - mx)) / z);
    if (p[label] < 1e-300) continue;
    EXPECT_NEAR(cross_entropy(logits, label), cross_entropy_from_probabilities(p, label), 1e-9);
    num::Tape tape;
    const auto v = cross_entropy(tape.constant(Tensor::matrix(1, d, logits)), label);
    EXPECT_NEAR(v.value()[0], cross_entropy(logits, label), 1e-9);
  }
}

TEST(CosineLr, Examples) {
  EXPECT_EQ(cosine_lr(0, 100, 1e-3), 1e-3);
  EXPECT_EQ(cosine_lr(100, 100, 1e-3), 0.0);
  EXPECT_NEAR(cosine_lr(50, 100, 1e-3), 5e-4, 1e-18);
  EXPECT_NEAR(cosine_lr(25, 100, 1.0), 0.5 * (1 + std::cos(std::numbers::pi / 4)), 1e-15);
  double previous = 2.0;
  for (std::uint64_t s = 0; s <= 37; ++s) {
    const double lr = cosine_lr(s, 37, 1.0);
    EXPECT_LE(lr, previous);
    previous = lr;
  }
  EXPECT_THROW(cosine_lr(101, 100, 1.0), Error);
}

TEST(DefaultEpochs, ImageNetStyleNamesGetSeventy) {
  EXPECT_EQ(default_epochs("imagenet"), 70u);
  EXPECT_EQ(default_epochs("ImageNet-Sketch"), 70u);
  EXPECT_EQ(default_epochs("caltech101"), 50u);
  EXPECT_EQ(default_epochs("toy"), 50u);
  const TrainConfig defaults;
  EXPECT_EQ(defaults.learning_rate, 1e-3);
  EXPECT_EQ(defaults.batch_size, 256u);
  EXPECT_EQ(defaults.prompts.k, 10u);
  EXPECT_EQ(defaults.concepts, 2000u);
}

TEST(AdamW, SignScaledTraceWithoutMomentum) {
  double p = 1.0;
  OptimizerState state;
  const AdamWConfig cfg{0.0, 0.0, 1e-8, 0.0};
  const std::span<double> params[] = {std::span<double>(&p, 1)};
  double g = 0.5;
  std::span<const double> grads[] = {std::span<const double>(&g, 1)};
  adamw_update(params, grads, state, cfg, 0.1);
  EXPECT_DOUBLE_EQ(p, 1.0 - 0.1 * 0.5 / (0.5 + 1e-8));
  g = -2.0;
  grads[0] = std::span<const double>(&g, 1);
  adamw_update(params, grads, state, cfg, 0.1);
  EXPECT_DOUBLE_EQ(p, 1.0 - 0.1 * 0.5 / (0.5 + 1e-8) + 0.1 * 2.0 / (2.0 + 1e-8));
  EXPECT_EQ(state.step, 2u);
}

TEST(AdamW, MomentsAndDecoupledDecayTrace) {
  double p = 2.0;
  OptimizerState state;
  const AdamWConfig cfg{0.9, 0.999, 1e-8, 0.01};
  const double lr = 0.05;
  const std::span<double> params[] = {std::span<double>(&p, 1)};
  const double g1 = 0.3, g2 = 0.1;
  // Hand expansion of the two updates.
  double expect = 2.0;
  double m = 0.1 * g1, v = 0.001 * g1 * g1;
  expect -= lr * 0.01 * expect;
  expect -= lr * (m / 0.1) / (std::sqrt(v / 0.001) + 1e-8);
  const double after_first = expect;
  m = 0.9 * m + 0.1 * g2;
  v = 0.999 * v + 0.001 * g2 * g2;
  expect -= lr * 0.01 * expect;
  expect -= lr * (m / (1 - 0.81)) / (std::sqrt(v / (1 - 0.998001)) + 1e-8);

  std::span<const double> grads[] = {std::span<const double>(&g1, 1)};
  adamw_update(params, grads, state, cfg, lr);
  EXPECT_NEAR(p, after_first, 1e-15);
  grads[0] = std::span<const double>(&g2, 1);
  adamw_update(params, grads, state, cfg, lr);
  EXPECT_NEAR(p, expect, 1e-15);
}

enc::ToyWorldConfig small_world(std::uint32_t classes, std::uint32_t shots) {
  enc::ToyWorldConfig c;
  c.num_classes = classes;
  c.shots = shots;
  c.train_per_class = shots;
  c.test_per_class = 2;
  c.lexicon_size = 300;
  return c;
}

TrainingSet training_set(const enc::ToyWorld& world) {
  TrainingSet set;
  set.class_names = world.class_names();
  for (std::uint32_t c = 0; c < world.class_names().size(); ++c) set.class_ids.push_back(c);
  for (auto& r : world.generate()) {
    if (r.split == store::SplitTag::train) set.records.push_back(std::move(r));
  }
  return set;
}

TrainConfig quick_config() {
  TrainConfig c;
  c.epochs = 5;
  c.batch_size = 8;
  c.concepts = 200;
  c.prompts.k = 3;
  return c;
}

TEST(Fit, SmallToyRunFinishesQuicklyAndDoesNotRegress) {
  const enc::ToyWorld world(small_world(4, 4));
  const auto data = training_set(world);
  ASSERT_EQ(data.records.size(), 16u);
  std::ostringstream log;
  const auto start = std::chrono::steady_clock::now();
  const auto result = fit(data, world.lexicon(), world.text_encoder(), quick_config(), &log);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  EXPECT_LT(seconds, 10.0);
  ASSERT_EQ(result.log.size(), 6u);
  EXPECT_GE(result.log.back().train_accuracy, result.log.front().train_accuracy);
  EXPECT_EQ(result.log.back().step, 10u);
  ASSERT_NE(result.cache, nullptr);
  EXPECT_EQ(result.cache->size(), 200u);

  std::istringstream lines(log.str());
  std::string line;
  std::size_t count = 0;
  while (std::getline(lines, line)) {
    const auto j = nlohmann::json::parse(line);
    for (const char* key : {"epoch", "step", "lr", "loss", "train_acc"}) EXPECT_TRUE(j.contains(key)) << key;
    EXPECT_EQ(j["epoch"].get<std::uint32_t>(), count);
    ++count;
  }
  EXPECT_EQ(count, 6u);
}

TEST(Fit, SameSeedGivesIdenticalCheckpoints) {
  const enc::ToyWorld world(small_world(3, 4));
  const auto data = training_set(world);
  const auto a = fit(data, world.lexicon(), world.text_encoder(), quick_config());
  const auto b = fit(data, world.lexicon(), world.text_encoder(), quick_config());
  EXPECT_EQ(model::encode_checkpoint(a.model), model::encode_checkpoint(b.model));
  auto other = quick_config();
  other.seed = 1;
  const auto c = fit(data, world.lexicon(), world.text_encoder(), other);
  EXPECT_NE(model::encode_checkpoint(a.model), model::encode_checkpoint(c.model));
}

TEST(Fit, ZeroConceptsIsBaselinePromptTuning) {
  const enc::ToyWorld world(small_world(3, 2));
  const auto data = training_set(world);
  auto cfg = quick_config();
  cfg.prompts.k = 0;
  const auto result = fit(data, world.lexicon(), world.text_encoder(), cfg);
  EXPECT_EQ(result.cache, nullptr);
  EXPECT_NE(result.model.fusion.alpha, model::kResidualInit);
}

TEST(Fit, FreezingAlphaBetaKeepsTheirInitialValues) {
  const enc::ToyWorld world(small_world(3, 2));
  const auto data = training_set(world);
  auto cfg = quick_config();
  cfg.train_alpha_beta = false;
  const auto result = fit(data, world.lexicon(), world.text_encoder(), cfg);
  EXPECT_EQ(result.model.fusion.alpha, model::kResidualInit);
  EXPECT_EQ(result.model.fusion.beta, model::kResidualInit);
  const auto init = initial_model(data, 32, cfg);
  EXPECT_FALSE(result.model.projector == init.projector);
}

TEST(Fit, DisabledComponentsStayAtZero) {
  const enc::ToyWorld world(small_world(3, 2));
  const auto data = training_set(world);
  auto cfg = quick_config();
  cfg.use_adapter = false;
  const auto p_only = fit(data, world.lexicon(), world.text_encoder(), cfg);
  EXPECT_EQ(p_only.model.fusion.beta, 0.0);
  for (double v : p_only.model.fusion.adapter.data()) EXPECT_EQ(v, 0.0);
  cfg.use_projector = false;
  const auto none = fit(data, world.lexicon(), world.text_encoder(), cfg);
  EXPECT_EQ(none.model.fusion.alpha, 0.0);
  EXPECT_EQ(none.log.size(), 1u);
  EXPECT_TRUE(none.model.projector == initial_model(data, 32, cfg).projector);
}

TEST(Fit, EncoderOutputsAreUnchangedByTraining) {
  const enc::ToyWorld world(small_world(3, 2));
  const auto data = training_set(world);
  const auto encoder = world.text_encoder();
  const auto before = encoder->encode("a photo of a cat, which is red.");
  const auto lexicon_before = world.lexicon().embeddings;
  fit(data, world.lexicon(), encoder, quick_config());
  EXPECT_EQ(encoder->encode("a photo of a cat, which is red."), before);
  EXPECT_EQ(world.lexicon().embeddings, lexicon_before);
}

std::vector<Example> examples_for(const TrainingSet& data, const model::CplModel& m) {
  std::vector<Example> out;
  Rng rng(5);
  for (const auto& r : data.records) {
    out.push_back({&r, cpl::testing::random_tensor(rng, {data.class_names.size(), m.projector.config.text_dim}),
                   data.label_of(r)});
  }
  return out;
}

TEST(TrainStep, ZeroLearningRateLeavesParametersBitIdentical) {
  const enc::ToyWorld world(small_world(3, 2));
  const auto data = training_set(world);
  TrainState state;
  state.model = initial_model(data, 32, quick_config());
  const auto before = state.model;
  const auto examples = examples_for(data, state.model);
  for (int i = 0; i < 3; ++i) train_step(state, examples, AdamWConfig{}, 0.0);
  EXPECT_EQ(model::encode_checkpoint(state.model), model::encode_checkpoint(before));
  EXPECT_EQ(state.optimizer.step, 3u);
}

TEST(TrainStep, OneStepOnSeparableDataLowersTheLoss) {
  // Two classes whose images sit near opposite ends of one axis.
  Rng rng(6);
  std::vector<store::FeatureRecord> records;
  for (std::uint32_t i = 0; i < 8; ++i) {
    store::FeatureRecord r;
    r.record_id = "r" + std::to_string(i);
    r.class_id = i % 2;
    std::vector<double> f(8, 0.0);
    f[0] = r.class_id == 0 ? 1.0 : -1.0;
    for (std::size_t j = 1; j < 8; ++j) f[j] = 0.3 * rng.normal();
    double n = 0;
    for (double v : f) n += v * v;
    for (double& v : f) v /= std::sqrt(n);
    r.final_feature = f;
    r.level_summaries = {cpl::testing::random_tensor(rng, {4}).to_vector(), f};
    records.push_back(r);
  }
  TrainingSet data{{"left", "right"}, {0, 1}, records};
  TrainConfig cfg;
  cfg.heads = 2;
  TrainState state;
  state.model = initial_model(data, 8, cfg);
  state.model.fusion.alpha = 0.5;
  state.model.fusion.beta = 0.5;
  std::vector<Example> examples;
  const Tensor ft = Tensor::from_rows({{0.2, 1, 0, 0, 0, 0, 0, 0}, {0.1, 0, 1, 0, 0, 0, 0, 0}});
  for (const auto& r : data.records) examples.push_back({&r, ft, data.label_of(r)});
  const double before = evaluate_examples(state.model, examples).loss;
  train_step(state, examples, AdamWConfig{}, 1e-3);
  EXPECT_LT(evaluate_examples(state.model, examples).loss, before);
}

TEST(TrainStep, BatchLossGradientsMatchFiniteDifferences) {
  auto wc = small_world(3, 2);
  wc.dim = 8;
  wc.channels = 4;
  wc.levels = 2;
  wc.attribute_pool = 20;
  const enc::ToyWorld world(wc);
  const auto data = training_set(world);
  TrainConfig cfg;
  cfg.heads = 2;
  cfg.temperature = 0.5;
  auto m = initial_model(data, 8, cfg);
  m.fusion.alpha = 0.8;
  m.fusion.beta = 0.6;
  Rng rng(7);
  m.fusion.adapter = cpl::testing::random_tensor(rng, m.fusion.adapter.shape(), 0.2);
  const auto examples = examples_for(data, m);

  std::vector<num::ParamBlock> blocks;
  m.projector.visit([&](const std::string& name, const Tensor& t) { blocks.push_back({name, t}); });
  blocks.push_back({"adapter", m.fusion.adapter});
  blocks.push_back({"alpha", Tensor::scalar(m.fusion.alpha)});
  blocks.push_back({"beta", Tensor::scalar(m.fusion.beta)});
  const auto report = num::grad_check(
      [&](num::Tape& tape, std::span<const num::Var> leaves) {
        model::ModelVars vars;
        vars.projector.in_proj.resize(m.projector.in_proj.size());
        for (auto* v : {&vars.projector.w_q, &vars.projector.w_k, &vars.projector.w_v, &vars.projector.w_o}) {
          v->resize(m.projector.w_q.size());
        }
        std::size_t i = 0;
        vars.projector.visit([&](const std::string&, num::Var& v) { v = leaves[i++]; });
        vars.adapter = leaves[i++];
        vars.alpha = leaves[i++];
        vars.beta = leaves[i++];
        std::vector<num::Var> losses;
        for (const auto& ex : examples) losses.push_back(cross_entropy(model::image_logits(vars, m, ex.text_features, *ex.record), ex.label));
        (void)tape;
        return scale(add_all(losses), 1.0 / static_cast<double>(losses.size()));
      },
      blocks, 1e-5, 1e-4);
  for (const auto& b : report.blocks) EXPECT_LE(b.max_relative_error, 1e-4) << b.name;
  EXPECT_TRUE(report.passed);
}

TEST(TrainStep, NonFiniteForwardAborts) {
  const enc::ToyWorld world(small_world(2, 2));
  const auto data = training_set(world);
  TrainState state;
  state.model = initial_model(data, 32, quick_config());
  state.model.fusion.beta = 10.0;
  for (double& v : state.model.fusion.adapter.data()) v = 1e308;
  const auto examples = examples_for(data, state.model);
  try {
    train_step(state, examples, AdamWConfig{}, 1e-3);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::non_finite);
  }
}

TEST(TrainingSet, UnknownClassIsALabelError) {
  TrainingSet set{{"a"}, {4}, {}};
  store::FeatureRecord r;
  r.record_id = "x";
  r.class_id = 5;
  try {
    set.label_of(r);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::label);
  }
}

}  // namespace
}  // namespace cpl::train
