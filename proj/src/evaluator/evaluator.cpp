// SPDX-License-Identifier: Apache-2.0
#include "cpl/evaluator/evaluator.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "cpl/common/error.hpp"

namespace cpl::eval {

using nlohmann::ordered_json;

namespace {

std::string fixed2(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string csv_field(std::string_view s) {
  if (s.find_first_of(",\"\n") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string pad(std::string s, std::size_t width) {
  if (s.size() < width) s.append(width - s.size(), ' ');
  return s;
}

double percent(std::size_t correct, std::size_t total) {
  return total == 0 ? 0.0 : 100.0 * static_cast<double>(correct) / static_cast<double>(total);
}

std::vector<std::string> names_of(const store::DatasetManifest& manifest, std::span<const std::uint32_t> ids) {
  std::vector<std::string> out;
  for (auto id : ids) {
    require(id < manifest.class_names.size(), ErrorCode::label, "class id " + std::to_string(id) + " out of range");
    out.push_back(manifest.class_names[id]);
  }
  return out;
}

std::vector<store::FeatureRecord> test_records(const store::RecordSource& source, std::span<const std::uint32_t> ids) {
  std::vector<store::FeatureRecord> out;
  for (auto id : ids) {
    const auto slice = source.records(id, store::SplitTag::test);
    out.insert(out.end(), slice.begin(), slice.end());
  }
  return out;
}

ordered_json config_snapshot(const BaseToNovelConfig& c) {
  auto j = ordered_json::parse(train::to_json(c.train));
  j["shots"] = c.shots;
  j["split_rule"] = c.split_rule == store::SplitRule::half ? "half" : "alternating";
  return j;
}

}  // namespace

std::size_t argmax(std::span<const double> values) {
  require(!values.empty(), ErrorCode::contract, "argmax of an empty list");
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

double harmonic_mean(double a, double b) {
  require(a > 0.0 && b > 0.0 && std::isfinite(a) && std::isfinite(b), ErrorCode::metric,
          "harmonic mean is undefined for " + std::to_string(a) + " and " + std::to_string(b));
  return 2.0 * a * b / (a + b);
}

Predictor::Predictor(std::shared_ptr<const model::CplModel> model, std::vector<std::string> class_names,
                     std::shared_ptr<const cache::ConceptCache> cache, std::shared_ptr<const enc::TextEncoder> encoder)
    : model_(std::move(model)),
      class_names_(class_names),
      prompts_(std::move(class_names), model_ ? model_->prompts : cache::PromptConfig{}, std::move(cache),
               std::move(encoder)) {
  require(model_ != nullptr, ErrorCode::contract, "predictor needs a model");
  require(!class_names_.empty(), ErrorCode::contract, "predictor needs at least one class");
  require(prompts_.text_dim() == model_->projector.config.text_dim, ErrorCode::dim_mismatch,
          "encoder d_t=" + std::to_string(prompts_.text_dim()) + " but the checkpoint expects " +
              std::to_string(model_->projector.config.text_dim));
}

std::vector<double> Predictor::probabilities(const store::FeatureRecord& record) const {
  return model::image_probabilities(*model_, class_names_, prompts_.text_features(record.final_feature), record);
}

std::uint32_t Predictor::predict(const store::FeatureRecord& record) const {
  return static_cast<std::uint32_t>(argmax(probabilities(record)));
}

std::uint32_t predict(const store::FeatureRecord& record, const model::CplModel& model,
                      std::shared_ptr<const cache::ConceptCache> cache, std::shared_ptr<const enc::TextEncoder> encoder,
                      std::span<const std::string> class_names) {
  const Predictor p(std::make_shared<const model::CplModel>(model),
                    std::vector<std::string>(class_names.begin(), class_names.end()), std::move(cache),
                    std::move(encoder));
  return p.predict(record);
}

double ClassScore::accuracy() const { return percent(correct, total); }

std::vector<ClassScore> score_records(const Predictor& predictor, std::span<const std::uint32_t> class_ids,
                                      std::span<const store::FeatureRecord> records, std::string_view split,
                                      unsigned threads) {
  require(class_ids.size() == predictor.class_names().size(), ErrorCode::contract,
          "score_records: class ids and predictor classes differ in count");
  std::vector<std::uint32_t> labels(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto it = std::find(class_ids.begin(), class_ids.end(), records[i].class_id);
    require(it != class_ids.end(), ErrorCode::label,
            "record '" + records[i].record_id + "' belongs to a class outside the evaluated set");
    labels[i] = static_cast<std::uint32_t>(it - class_ids.begin());
  }
  std::vector<std::uint32_t> predicted(records.size());
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, std::max<std::size_t>(1, records.size())));
  if (threads <= 1) {
    for (std::size_t i = 0; i < records.size(); ++i) predicted[i] = predictor.predict(records[i]);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(threads);
    for (unsigned t = 0; t < threads; ++t) {
      pool.emplace_back([&, t] {
        try {
          for (std::size_t i = t; i < records.size(); i += threads) predicted[i] = predictor.predict(records[i]);
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }
  std::vector<ClassScore> scores;
  for (std::size_t c = 0; c < class_ids.size(); ++c) {
    scores.push_back({predictor.class_names()[c], class_ids[c], std::string(split), 0, 0});
  }
  for (std::size_t i = 0; i < records.size(); ++i) {
    auto& s = scores[labels[i]];
    ++s.total;
    if (predicted[i] == labels[i]) ++s.correct;
  }
  return scores;
}

double overall_accuracy(std::span<const ClassScore> scores) {
  std::size_t correct = 0, total = 0;
  for (const auto& s : scores) {
    correct += s.correct;
    total += s.total;
  }
  return percent(correct, total);
}

std::string EvalReport::to_json() const {
  ordered_json j;
  j["dataset"] = dataset;
  j["seed"] = seed;
  j["overall"] = overall;
  const auto opt = [](const std::optional<double>& v) { return v ? ordered_json(*v) : ordered_json(nullptr); };
  j["base"] = opt(base);
  j["novel"] = opt(novel);
  j["hm"] = opt(harmonic);
  j["seconds"] = seconds;
  ordered_json classes = ordered_json::array();
  for (const auto& c : per_class) {
    classes.push_back({{"name", c.name}, {"class_id", c.class_id}, {"split", c.split}, {"correct", c.correct},
                       {"total", c.total}, {"accuracy", c.accuracy()}});
  }
  j["per_class"] = std::move(classes);
  j["config"] = config_json.empty() ? ordered_json(nullptr) : ordered_json::parse(config_json);
  j["warnings"] = warnings;
  return j.dump(2);
}

EvalReport EvalReport::from_json(std::string_view text) {
  ordered_json j;
  try {
    j = ordered_json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    raise(ErrorCode::format, std::string("report is not valid JSON: ") + e.what());
  }
  EvalReport r;
  try {
    r.dataset = j.at("dataset").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.overall = j.at("overall").get<double>();
    const auto opt = [&](const char* key) -> std::optional<double> {
      if (j.at(key).is_null()) return std::nullopt;
      return j.at(key).get<double>();
    };
    r.base = opt("base");
    r.novel = opt("novel");
    r.harmonic = opt("hm");
    r.seconds = j.at("seconds").get<double>();
    for (const auto& c : j.at("per_class")) {
      r.per_class.push_back({c.at("name").get<std::string>(), c.at("class_id").get<std::uint32_t>(),
                             c.at("split").get<std::string>(), c.at("correct").get<std::size_t>(),
                             c.at("total").get<std::size_t>()});
    }
    if (!j.at("config").is_null()) r.config_json = j.at("config").dump();
    r.warnings = j.at("warnings").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    raise(ErrorCode::format, std::string("report is missing a field: ") + e.what());
  }
  return r;
}

std::vector<std::string> EvalReport::csv_rows() const {
  std::vector<std::string> rows;
  const std::string prefix = csv_field(dataset) + ",";
  const std::string suffix = "," + std::to_string(seed);
  if (base) rows.push_back(prefix + "base,accuracy," + fixed2(*base) + suffix);
  if (novel) rows.push_back(prefix + "novel,accuracy," + fixed2(*novel) + suffix);
  if (harmonic) rows.push_back(prefix + "base-novel,hm," + fixed2(*harmonic) + suffix);
  rows.push_back(prefix + "all,accuracy," + fixed2(overall) + suffix);
  for (const auto& c : per_class) {
    rows.push_back(prefix + csv_field(c.split) + "," + csv_field("class:" + c.name) + "," + fixed2(c.accuracy()) +
                   suffix);
  }
  return rows;
}

std::string EvalReport::text_table() const {
  std::ostringstream out;
  out << "dataset " << dataset << "  seed " << seed << "\n";
  if (base) out << "  Base     " << fixed2(*base) << "\n";
  if (novel) out << "  Novel    " << fixed2(*novel) << "\n";
  if (harmonic) out << "  HM       " << fixed2(*harmonic) << "\n";
  out << "  Overall  " << fixed2(overall) << "\n";
  std::size_t width = 5;
  for (const auto& c : per_class) width = std::max(width, c.name.size());
  out << "  " << pad("class", width) << "  split  accuracy\n";
  for (const auto& c : per_class) {
    out << "  " << pad(c.name, width) << "  " << pad(c.split, 5) << "  " << fixed2(c.accuracy()) << " (" << c.correct
        << "/" << c.total << ")\n";
  }
  for (const auto& w : warnings) out << "  warning: " << w << "\n";
  return out.str();
}

train::FitResult fit_all_classes(const store::RecordSource& source, const store::ConceptLexicon& lexicon,
                                 std::shared_ptr<const enc::TextEncoder> encoder, const train::TrainConfig& config,
                                 std::uint32_t shots, std::ostream* log_stream) {
  const auto& manifest = source.manifest();
  train::TrainingSet data;
  data.class_names = manifest.class_names;
  for (std::uint32_t c = 0; c < manifest.class_names.size(); ++c) data.class_ids.push_back(c);
  data.records = store::sample_few_shot(source, data.class_ids, shots, config.seed);
  return train::fit(data, lexicon, std::move(encoder), config, log_stream);
}

EvalReport evaluate_base_novel(const model::CplModel& model, std::shared_ptr<const cache::ConceptCache> cache,
                               std::shared_ptr<const enc::TextEncoder> encoder, const store::RecordSource& source,
                               store::SplitRule rule, unsigned threads) {
  const auto start = std::chrono::steady_clock::now();
  const auto& manifest = source.manifest();
  const auto split = store::make_base_novel_split(manifest.class_names, rule);
  const auto shared = std::make_shared<const model::CplModel>(model);

  EvalReport report;
  report.dataset = manifest.dataset_name;

  const Predictor base_pred(shared, names_of(manifest, split.base_classes), cache, encoder);
  const auto base_test = test_records(source, split.base_classes);
  report.per_class = score_records(base_pred, split.base_classes, base_test, "base", threads);
  if (base_test.empty()) {
    report.warnings.push_back("base classes have no test records");
  } else {
    report.base = overall_accuracy(report.per_class);
  }

  const auto novel_test = test_records(source, split.novel_classes);
  if (novel_test.empty()) {
    report.warnings.push_back("novel split is empty; HM not reported");
  } else {
    const Predictor novel_pred(shared, names_of(manifest, split.novel_classes), cache, encoder);
    const auto novel_scores = score_records(novel_pred, split.novel_classes, novel_test, "novel", threads);
    report.per_class.insert(report.per_class.end(), novel_scores.begin(), novel_scores.end());
    report.novel = overall_accuracy(novel_scores);
  }
  if (report.base && report.novel) {
    if (*report.base > 0.0 && *report.novel > 0.0) {
      report.harmonic = harmonic_mean(*report.base, *report.novel);
    } else {
      report.warnings.push_back("an accuracy is zero; HM is undefined");
    }
  }
  report.overall = overall_accuracy(report.per_class);
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

train::FitResult fit_base_classes(const store::RecordSource& source, const store::ConceptLexicon& lexicon,
                                  std::shared_ptr<const enc::TextEncoder> encoder, const train::TrainConfig& config,
                                  std::uint32_t shots, store::SplitRule rule, std::ostream* log_stream) {
  const auto& manifest = source.manifest();
  const auto split = store::make_base_novel_split(manifest.class_names, rule);
  train::TrainingSet data;
  data.class_ids = split.base_classes;
  data.class_names = names_of(manifest, split.base_classes);
  data.records = store::sample_few_shot(source, split.base_classes, shots, config.seed);
  return train::fit(data, lexicon, std::move(encoder), config, log_stream);
}

EvalReport run_base_to_novel(const store::RecordSource& source, const store::ConceptLexicon& lexicon,
                             std::shared_ptr<const enc::TextEncoder> encoder, const BaseToNovelConfig& config) {
  const auto start = std::chrono::steady_clock::now();
  const auto fitted = fit_base_classes(source, lexicon, encoder, config.train, config.shots, config.split_rule);
  auto report = evaluate_base_novel(fitted.model, fitted.cache, encoder, source, config.split_rule, config.threads);
  report.seed = config.train.seed;
  report.config_json = config_snapshot(config).dump();
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

EvalReport evaluate_dataset(const model::CplModel& model, std::shared_ptr<const cache::ConceptCache> cache,
                            std::shared_ptr<const enc::TextEncoder> encoder, const store::RecordSource& target,
                            unsigned threads) {
  const auto start = std::chrono::steady_clock::now();
  const auto& manifest = target.manifest();
  require(manifest.text_dim == model.projector.config.text_dim, ErrorCode::dim_mismatch,
          "target '" + manifest.dataset_name + "' has d_t=" + std::to_string(manifest.text_dim) +
              " but the checkpoint expects " + std::to_string(model.projector.config.text_dim));
  require(manifest.channel_dims == model.projector.config.channel_dims, ErrorCode::dim_mismatch,
          "target '" + manifest.dataset_name + "' has different level channel counts than the checkpoint");
  std::vector<std::uint32_t> ids(manifest.class_names.size());
  for (std::uint32_t c = 0; c < ids.size(); ++c) ids[c] = c;
  const Predictor predictor(std::make_shared<const model::CplModel>(model), manifest.class_names, std::move(cache),
                            std::move(encoder));
  EvalReport report;
  report.dataset = manifest.dataset_name;
  report.per_class = score_records(predictor, ids, test_records(target, ids), "all", threads);
  report.overall = overall_accuracy(report.per_class);
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

TransferReport run_transfer(const model::CplModel& model, std::shared_ptr<const cache::ConceptCache> cache,
                            std::shared_ptr<const enc::TextEncoder> encoder,
                            std::span<const store::RecordSource* const> targets, unsigned threads) {
  require(!targets.empty(), ErrorCode::contract, "transfer needs at least one target");
  TransferReport out;
  double sum = 0.0;
  for (const auto* target : targets) {
    auto r = evaluate_dataset(model, cache, encoder, *target, threads);
    out.targets.push_back({r.dataset, r.overall});
    sum += r.overall;
    out.reports.push_back(std::move(r));
  }
  out.average = sum / static_cast<double>(targets.size());
  return out;
}

std::vector<std::string> TransferReport::csv_rows(std::uint64_t seed) const {
  std::vector<std::string> rows;
  for (const auto& t : targets) {
    rows.push_back(csv_field(t.name) + ",test,accuracy," + fixed2(t.accuracy) + "," + std::to_string(seed));
  }
  rows.push_back("average,test,accuracy," + fixed2(average) + "," + std::to_string(seed));
  return rows;
}

std::string TransferReport::text_table() const {
  std::size_t width = 7;
  for (const auto& t : targets) width = std::max(width, t.name.size());
  std::ostringstream out;
  out << pad("target", width) << "  accuracy\n";
  for (const auto& t : targets) out << pad(t.name, width) << "  " << fixed2(t.accuracy) << "\n";
  out << pad("Average", width) << "  " << fixed2(average) << "\n";
  return out.str();
}

std::string_view to_string(AblationAxis axis) noexcept {
  switch (axis) {
    case AblationAxis::k: return "K";
    case AblationAxis::concepts: return "I";
    case AblationAxis::components: return "components";
    case AblationAxis::shots: return "shots";
  }
  return "?";
}

AblationAxis ablation_axis_from_string(std::string_view name) {
  if (name == "K" || name == "k") return AblationAxis::k;
  if (name == "I" || name == "i" || name == "concepts") return AblationAxis::concepts;
  if (name == "components") return AblationAxis::components;
  if (name == "shots") return AblationAxis::shots;
  raise(ErrorCode::contract, "unknown ablation axis '" + std::string(name) + "' (expected K, I, components or shots)");
}

void apply_component(std::string_view row, BaseToNovelConfig& config) {
  auto& t = config.train;
  if (row == "baseline") {
    t.prompts.mode = cache::PromptMode::baseline;
    t.prompts.k = 0;
    t.use_projector = false;
    t.use_adapter = false;
  } else if (row == "+CGP") {
    t.use_projector = false;
    t.use_adapter = false;
  } else if (row == "+CGP+P") {
    t.use_projector = true;
    t.use_adapter = false;
  } else if (row == "+CGP+P+TA") {
    t.use_projector = true;
    t.use_adapter = true;
  } else {
    raise(ErrorCode::contract, "unknown component row '" + std::string(row) + "'");
  }
}

namespace {

std::uint64_t parse_count(const std::string& s, AblationAxis axis) {
  std::size_t used = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  require(used == s.size() && !s.empty(), ErrorCode::contract,
          "ablation value '" + s + "' for axis " + std::string(to_string(axis)) + " is not a whole number");
  return v;
}

}  // namespace

AblationGrid run_ablation(AblationAxis axis, std::span<const std::string> values, const BaseToNovelConfig& base,
                          std::span<const std::uint64_t> seeds, const store::RecordSource& source,
                          const store::ConceptLexicon& lexicon, std::shared_ptr<const enc::TextEncoder> encoder) {
  std::vector<std::string> cells(values.begin(), values.end());
  if (cells.empty() && axis == AblationAxis::components) cells.assign(std::begin(kComponentRows), std::end(kComponentRows));
  require(!cells.empty(), ErrorCode::contract, "ablation needs at least one value");
  require(!seeds.empty(), ErrorCode::contract, "ablation needs at least one seed");
  AblationGrid grid;
  grid.axis = axis;
  for (const auto& value : cells) {
    BaseToNovelConfig cfg = base;
    switch (axis) {
      case AblationAxis::k: cfg.train.prompts.k = parse_count(value, axis); break;
      case AblationAxis::concepts: cfg.train.concepts = parse_count(value, axis); break;
      case AblationAxis::shots: cfg.shots = static_cast<std::uint32_t>(parse_count(value, axis)); break;
      case AblationAxis::components: apply_component(value, cfg); break;
    }
    AblationCell cell;
    cell.label = value;
    for (auto seed : seeds) {
      cfg.train.seed = seed;
      auto r = run_base_to_novel(source, lexicon, encoder, cfg);
      cell.base += r.base.value_or(0.0);
      cell.novel += r.novel.value_or(0.0);
      cell.harmonic += r.harmonic.value_or(0.0);
      cell.runs.push_back(std::move(r));
    }
    const double n = static_cast<double>(seeds.size());
    cell.base /= n;
    cell.novel /= n;
    cell.harmonic /= n;
    grid.cells.push_back(std::move(cell));
  }
  return grid;
}

std::string AblationGrid::csv() const {
  std::string out = "axis,value,base,novel,hm\n";
  for (const auto& c : cells) {
    out += std::string(to_string(axis)) + "," + csv_field(c.label) + "," + fixed2(c.base) + "," + fixed2(c.novel) +
           "," + fixed2(c.harmonic) + "\n";
  }
  return out;
}

std::string AblationGrid::text_table() const {
  std::size_t width = std::max<std::size_t>(10, to_string(axis).size());
  for (const auto& c : cells) width = std::max(width, c.label.size());
  std::ostringstream out;
  out << pad(std::string(to_string(axis)), width) << "  Base    Novel   HM\n";
  for (const auto& c : cells) {
    out << pad(c.label, width) << "  " << pad(fixed2(c.base), 6) << "  " << pad(fixed2(c.novel), 6) << "  "
        << fixed2(c.harmonic) << "\n";
  }
  return out.str();
}

}  // namespace cpl::eval
