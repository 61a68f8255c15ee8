// SPDX-License-Identifier: Apache-2.0
#include "cpl/trainer/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <ostream>

#include <json.hpp>

#include "cpl/common/error.hpp"
#include "cpl/common/rng.hpp"
#include "cpl/numcore/ops.hpp"

namespace cpl::train {

using num::Tape;
using num::Tensor;
using num::Var;

void TrainConfig::validate() const {
  require(epochs >= 1, ErrorCode::contract, "epochs must be at least 1");
  require(batch_size >= 1, ErrorCode::contract, "batch size must be at least 1");
  require(learning_rate > 0.0 && std::isfinite(learning_rate), ErrorCode::contract, "learning rate must be positive");
  require(weight_decay >= 0.0 && beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0 && adam_eps > 0.0,
          ErrorCode::contract, "invalid AdamW hyperparameters");
  require(temperature > 0.0, ErrorCode::contract, "temperature must be positive");
  require(concepts >= 1, ErrorCode::contract, "concept count I must be at least 1");
}

std::string to_json(const TrainConfig& t) {
  nlohmann::ordered_json j;
  j["epochs"] = t.epochs;
  j["batch_size"] = t.batch_size;
  j["learning_rate"] = t.learning_rate;
  j["weight_decay"] = t.weight_decay;
  j["beta1"] = t.beta1;
  j["beta2"] = t.beta2;
  j["adam_eps"] = t.adam_eps;
  j["cosine_schedule"] = t.cosine_schedule;
  j["seed"] = t.seed;
  j["concepts"] = t.concepts;
  j["k"] = t.prompts.k;
  j["prompt_mode"] = std::string(cache::to_string(t.prompts.mode));
  j["template"] = t.prompts.template_text;
  j["heads"] = t.heads;
  j["temperature"] = t.temperature;
  j["use_projector"] = t.use_projector;
  j["use_adapter"] = t.use_adapter;
  j["train_alpha_beta"] = t.train_alpha_beta;
  return j.dump();
}

TrainConfig overlay_json(const TrainConfig& base, std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    raise(ErrorCode::contract, std::string("config is not valid JSON: ") + e.what());
  }
  require(j.is_object(), ErrorCode::contract, "config must be a JSON object");
  TrainConfig t = base;
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "epochs") t.epochs = value.get<std::uint32_t>();
      else if (key == "batch_size") t.batch_size = value.get<std::uint32_t>();
      else if (key == "learning_rate") t.learning_rate = value.get<double>();
      else if (key == "weight_decay") t.weight_decay = value.get<double>();
      else if (key == "beta1") t.beta1 = value.get<double>();
      else if (key == "beta2") t.beta2 = value.get<double>();
      else if (key == "adam_eps") t.adam_eps = value.get<double>();
      else if (key == "cosine_schedule") t.cosine_schedule = value.get<bool>();
      else if (key == "seed") t.seed = value.get<std::uint64_t>();
      else if (key == "concepts") t.concepts = value.get<std::size_t>();
      else if (key == "k") t.prompts.k = value.get<std::size_t>();
      else if (key == "prompt_mode") t.prompts.mode = cache::prompt_mode_from_string(value.get<std::string>());
      else if (key == "template") t.prompts.template_text = value.get<std::string>();
      else if (key == "heads") t.heads = value.get<std::uint32_t>();
      else if (key == "temperature") t.temperature = value.get<double>();
      else if (key == "use_projector") t.use_projector = value.get<bool>();
      else if (key == "use_adapter") t.use_adapter = value.get<bool>();
      else if (key == "train_alpha_beta") t.train_alpha_beta = value.get<bool>();
      else raise(ErrorCode::contract, "unknown config key '" + key + "'");
    } catch (const nlohmann::json::exception&) {
      raise(ErrorCode::contract, "config key '" + key + "' has the wrong type");
    }
  }
  return t;
}

std::uint32_t default_epochs(std::string_view dataset_name) {
  std::string lower(dataset_name);
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  return lower.find("imagenet") != std::string::npos ? 70 : 50;
}

double cosine_lr(std::uint64_t step, std::uint64_t total_steps, double lr0) {
  require(total_steps >= 1 && step <= total_steps, ErrorCode::contract,
          "cosine_lr: step " + std::to_string(step) + " outside [0, " + std::to_string(total_steps) + "]");
  if (step == total_steps) return 0.0;
  return lr0 * 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) / static_cast<double>(total_steps)));
}

double cross_entropy(std::span<const double> logits, std::uint32_t label) {
  require(label < logits.size(), ErrorCode::label,
          "label " + std::to_string(label) + " outside " + std::to_string(logits.size()) + " classes");
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double l : logits) z += std::exp(l - mx);
  return mx + std::log(z) - logits[label];
}

double cross_entropy_from_probabilities(std::span<const double> probabilities, std::uint32_t label) {
  require(label < probabilities.size(), ErrorCode::label,
          "label " + std::to_string(label) + " outside " + std::to_string(probabilities.size()) + " classes");
  return -std::log(probabilities[label]);
}

Var cross_entropy(Var logits, std::uint32_t label) {
  if (label >= logits.value().numel()) {
    raise(ErrorCode::label,
          "label " + std::to_string(label) + " outside " + std::to_string(logits.value().numel()) + " classes");
  }
  return scale(element(log_softmax_rows(logits), label), -1.0);
}

void adamw_update(std::span<const std::span<double>> params, std::span<const std::span<const double>> grads,
                  OptimizerState& state, const AdamWConfig& config, double lr) {
  require(params.size() == grads.size(), ErrorCode::contract, "adamw: parameter and gradient counts differ");
  if (state.first_moment.empty()) {
    for (const auto& p : params) {
      state.first_moment.emplace_back(p.size(), 0.0);
      state.second_moment.emplace_back(p.size(), 0.0);
    }
  }
  require(state.first_moment.size() == params.size(), ErrorCode::contract, "adamw: optimizer state shape changed");
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(config.beta1, t);
  const double c2 = 1.0 - std::pow(config.beta2, t);
  for (std::size_t b = 0; b < params.size(); ++b) {
    auto p = params[b];
    auto g = grads[b];
    auto& m = state.first_moment[b];
    auto& v = state.second_moment[b];
    require(p.size() == g.size() && p.size() == m.size(), ErrorCode::dimension, "adamw: block size changed");
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g[i];
      v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g[i] * g[i];
      const double m_hat = m[i] / c1;
      const double v_hat = v[i] / c2;
      p[i] -= lr * config.weight_decay * p[i];
      p[i] -= lr * m_hat / (std::sqrt(v_hat) + config.eps);
    }
  }
}

namespace {

std::size_t argmax(const Tensor& logits) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < logits.numel(); ++i) {
    if (logits[i] > logits[best]) best = i;
  }
  return best;
}

bool any_trainable(const model::Trainable& t) { return t.projector || t.adapter || t.alpha || t.beta; }

}  // namespace

StepMetrics train_step(TrainState& state, std::span<const Example> batch, const AdamWConfig& adam, double lr) {
  require(!batch.empty(), ErrorCode::contract, "train_step needs a non-empty batch");
  if (!any_trainable(state.trainable)) return evaluate_examples(state.model, batch);
  Tape tape;
  const auto vars = model::bind(tape, state.model, state.trainable);
  StepMetrics metrics;
  std::vector<Var> losses;
  losses.reserve(batch.size());
  for (const auto& ex : batch) {
    const Var logits = model::image_logits(vars, state.model, ex.text_features, *ex.record);
    losses.push_back(cross_entropy(logits, ex.label));
    if (argmax(logits.value()) == ex.label) ++metrics.correct;
  }
  const Var loss = scale(add_all(losses), 1.0 / static_cast<double>(batch.size()));
  metrics.loss = loss.value()[0];
  metrics.count = batch.size();
  if (!std::isfinite(metrics.loss)) {
    raise(ErrorCode::non_finite, "training loss is not finite at optimizer step " +
                                     std::to_string(state.optimizer.step + 1) + " (alpha=" +
                                     std::to_string(state.model.fusion.alpha) + ", beta=" +
                                     std::to_string(state.model.fusion.beta) + ")");
  }
  tape.backward(loss);

  std::vector<std::span<double>> params;
  std::vector<Tensor> zero_grads;
  std::vector<std::span<const double>> grads;
  auto& m = state.model;
  const auto push = [&](std::span<double> p, const Var& v) {
    params.push_back(p);
    if (v.has_grad()) {
      grads.push_back(v.grad().data());
    } else {
      zero_grads.emplace_back(v.value().shape(), 0.0);
      grads.push_back({});
    }
  };
  if (state.trainable.projector) {
    std::vector<Var> pv;
    vars.projector.visit([&](const std::string&, const Var& v) { pv.push_back(v); });
    std::size_t i = 0;
    m.projector.visit([&](const std::string&, Tensor& t) { push(t.data(), pv[i++]); });
  }
  if (state.trainable.adapter) push(m.fusion.adapter.data(), vars.adapter);
  if (state.trainable.alpha) push(std::span<double>(&m.fusion.alpha, 1), vars.alpha);
  if (state.trainable.beta) push(std::span<double>(&m.fusion.beta, 1), vars.beta);
  // Point the untouched blocks at their zero tensors now that the vector is stable.
  std::size_t z = 0;
  for (auto& g : grads) {
    if (g.data() == nullptr) g = zero_grads[z++].data();
  }
  adamw_update(params, grads, state.optimizer, adam, lr);
  return metrics;
}

StepMetrics evaluate_examples(const model::CplModel& model, std::span<const Example> examples) {
  StepMetrics metrics;
  double total = 0.0;
  for (const auto& ex : examples) {
    Tape tape;
    const auto vars = model::bind(tape, model, model::Trainable{false, false, false, false});
    const Var logits = model::image_logits(vars, model, ex.text_features, *ex.record);
    total += cross_entropy(logits.value().data(), ex.label);
    if (argmax(logits.value()) == ex.label) ++metrics.correct;
  }
  metrics.count = examples.size();
  metrics.loss = examples.empty() ? 0.0 : total / static_cast<double>(examples.size());
  return metrics;
}

std::string EpochLog::to_json_line() const {
  nlohmann::ordered_json j;
  j["epoch"] = epoch;
  j["step"] = step;
  j["lr"] = lr;
  j["loss"] = loss;
  j["train_acc"] = train_accuracy;
  return j.dump();
}

std::uint32_t TrainingSet::label_of(const store::FeatureRecord& record) const {
  const auto it = std::find(class_ids.begin(), class_ids.end(), record.class_id);
  if (it == class_ids.end()) {
    raise(ErrorCode::label, "record '" + record.record_id + "' has class " + std::to_string(record.class_id) +
                                " which is not in the training class set");
  }
  return static_cast<std::uint32_t>(it - class_ids.begin());
}

std::shared_ptr<const cache::ConceptCache> cache_for(const cache::PromptConfig& prompts,
                                                     const store::ConceptLexicon& lexicon, std::size_t concepts,
                                                     std::span<const store::FeatureRecord> train) {
  if (prompts.mode == cache::PromptMode::baseline || prompts.k == 0) return nullptr;
  require(concepts <= lexicon.size(), ErrorCode::contract,
          "requested I=" + std::to_string(concepts) + " concepts but the lexicon holds " +
              std::to_string(lexicon.size()));
  return std::make_shared<const cache::ConceptCache>(cache::build_cache(lexicon.subset(concepts), train));
}

model::CplModel initial_model(const TrainingSet& data, std::size_t text_dim, const TrainConfig& config) {
  require(!data.records.empty(), ErrorCode::contract, "training set is empty");
  model::ProjectorConfig pc;
  pc.text_dim = static_cast<std::uint32_t>(text_dim);
  pc.heads = config.heads;
  for (const auto& level : data.records.front().level_summaries) {
    pc.channel_dims.push_back(static_cast<std::uint32_t>(level.size()));
  }
  model::CplModel m;
  m.projector = model::ProjectorParams::initialize(pc, config.seed);
  m.fusion = model::FusionState::initialize(data.class_names, text_dim);
  if (!config.use_projector) m.fusion.alpha = 0.0;
  if (!config.use_adapter) m.fusion.beta = 0.0;
  m.classifier.temperature = config.temperature;
  m.prompts = config.prompts;
  return m;
}

FitResult fit(const TrainingSet& data, const store::ConceptLexicon& lexicon,
              std::shared_ptr<const enc::TextEncoder> encoder, const TrainConfig& config, std::ostream* log_stream) {
  config.validate();
  require(encoder != nullptr, ErrorCode::contract, "fit needs a text encoder");
  require(data.class_names.size() == data.class_ids.size() && data.class_names.size() >= 1, ErrorCode::contract,
          "training class names and ids disagree");
  require(!data.records.empty(), ErrorCode::contract, "training set is empty");

  FitResult result;
  result.cache = cache_for(config.prompts, lexicon, config.concepts, data.records);
  const cache::PromptBuilder builder(data.class_names, config.prompts, result.cache, encoder);

  std::vector<Example> examples;
  examples.reserve(data.records.size());
  for (const auto& r : data.records) {
    examples.push_back({&r, builder.text_features(r.final_feature), data.label_of(r)});
  }

  TrainState state;
  state.model = initial_model(data, encoder->dim(), config);
  state.trainable.projector = config.use_projector;
  state.trainable.adapter = config.use_adapter;
  state.trainable.alpha = config.use_projector && config.train_alpha_beta;
  state.trainable.beta = config.use_adapter && config.train_alpha_beta;
  const AdamWConfig adam{config.beta1, config.beta2, config.adam_eps, config.weight_decay};

  const auto emit = [&](const EpochLog& line) {
    result.log.push_back(line);
    if (log_stream) *log_stream << line.to_json_line() << '\n' << std::flush;
  };
  {
    const auto m0 = evaluate_examples(state.model, examples);
    emit({0, 0, 0.0, m0.loss, 100.0 * static_cast<double>(m0.correct) / static_cast<double>(m0.count)});
  }
  if (!any_trainable(state.trainable)) {
    result.model = std::move(state.model);
    return result;
  }

  const std::size_t n = examples.size();
  const std::size_t per_epoch = (n + config.batch_size - 1) / config.batch_size;
  const std::uint64_t total = static_cast<std::uint64_t>(per_epoch) * config.epochs;
  Rng rng(mix_seed(config.seed, stable_hash("batches")));
  std::vector<std::size_t> order(n);
  std::vector<Example> batch;
  std::uint64_t step = 0;
  for (std::uint32_t epoch = 1; epoch <= config.epochs; ++epoch) {
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    rng.shuffle(order);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    double lr = 0.0;
    for (std::size_t start = 0; start < n; start += config.batch_size) {
      batch.clear();
      for (std::size_t i = start; i < std::min(n, start + config.batch_size); ++i) batch.push_back(examples[order[i]]);
      lr = config.cosine_schedule ? cosine_lr(step, total, config.learning_rate) : config.learning_rate;
      const auto metrics = train_step(state, batch, adam, lr);
      loss_sum += metrics.loss * static_cast<double>(metrics.count);
      correct += metrics.correct;
      ++step;
    }
    emit({epoch, step, lr, loss_sum / static_cast<double>(n),
          100.0 * static_cast<double>(correct) / static_cast<double>(n)});
  }
  result.model = std::move(state.model);
  return result;
}

}  // namespace cpl::train
