// SPDX-License-Identifier: Apache-2.0
#include "cli.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "cpl/common/error.hpp"
#include "cpl/concept_cache/cache.hpp"
#include "cpl/encoders/factory.hpp"
#include "cpl/encoders/toy_world.hpp"
#include "cpl/evaluator/evaluator.hpp"
#include "cpl/feature_store/bank.hpp"
#include "cpl/feature_store/bank_io.hpp"
#include "cpl/model/model.hpp"
#include "cpl/trainer/trainer.hpp"

namespace cpl::cli {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

fs::path cache_path_for(const fs::path& checkpoint) {
  fs::path p = checkpoint;
  p += ".cache";
  return p;
}

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void require_path(const std::string& path, const std::string& flag) {
  if (path.empty()) throw UsageError("--" + flag + " is required");
  if (!fs::exists(path)) throw UsageError("--" + flag + ": no such file: " + path);
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    const auto b = item.find_first_not_of(" \t");
    const auto e = item.find_last_not_of(" \t");
    if (b != std::string::npos) out.push_back(item.substr(b, e - b + 1));
  }
  return out;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::io, "cannot open " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void make_parent(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
}

void write_text(const fs::path& path, const std::string& text) {
  make_parent(path);
  std::ofstream out(path, std::ios::binary);
  out << text;
  require(static_cast<bool>(out), ErrorCode::io, "cannot write " + path.string());
}

struct EncoderFlags {
  std::string mode;  // empty: as the manifest says
  std::string endpoint;

  void add(CLI::App* cmd) {
    cmd->add_option("--encoder", mode, "Text encoder: toy or remote (default from the manifest)")
        ->check(CLI::IsMember({"toy", "remote"}));
    cmd->add_option("--encoder-endpoint", endpoint, "Remote encoder endpoint (else CPL_ENCODER_ENDPOINT)");
  }

  std::shared_ptr<const enc::TextEncoder> make(const store::DatasetManifest& manifest) const {
    auto spec = manifest.encoder;
    if (!mode.empty()) spec.kind = mode;
    return enc::make_text_encoder(spec, manifest.text_dim, endpoint);
  }

  ordered_json json() const {
    return {{"encoder", mode.empty() ? "manifest" : mode}, {"endpoint", endpoint}};
  }
};

// Training flags. Only flags given on the command line override the config
// file, which overrides the defaults.
struct TrainFlags {
  std::string config_path;
  std::uint32_t epochs = 0, batch_size = 0, heads = 0, shots = 0;
  double learning_rate = 0, weight_decay = 0, temperature = 0;
  std::size_t k = 0, concepts = 0;
  std::uint64_t seed = 0;
  std::string template_text, prompt_mode, split_rule;
  bool freeze_alpha_beta = false, no_projector = false, no_adapter = false;
  std::map<std::string, CLI::Option*> options;

  void add(CLI::App* cmd) {
    cmd->add_option("--config", config_path, "JSON config file (flags override it)");
    options["epochs"] = cmd->add_option("--epochs", epochs, "Epochs (default 50, 70 for ImageNet)");
    options["batch_size"] = cmd->add_option("--batch-size", batch_size, "Batch size (default 256)");
    options["learning_rate"] = cmd->add_option("--lr", learning_rate, "Initial learning rate (default 1e-3)");
    options["weight_decay"] = cmd->add_option("--weight-decay", weight_decay, "AdamW weight decay (default 0.01)");
    options["k"] = cmd->add_option("-K,--k", k, "Concepts per prompt (default 10)");
    options["concepts"] = cmd->add_option("--concepts", concepts, "Lexicon entries I used for the cache (default 2000)");
    options["heads"] = cmd->add_option("--heads", heads, "Projector attention heads (default 4)");
    options["temperature"] = cmd->add_option("--temperature", temperature, "Softmax temperature (default 0.01)");
    options["template"] = cmd->add_option("--template", template_text, "Prompt template");
    options["prompt_mode"] = cmd->add_option("--prompt-mode", prompt_mode, "baseline, image or class")
                                 ->check(CLI::IsMember({"baseline", "image", "class"}));
    options["seed"] = cmd->add_option("--seed", seed, "Seed for sampling, init and batching (default 0)");
    options["shots"] = cmd->add_option("--shots", shots, "Shots per class (default from the manifest)");
    options["split_rule"] = cmd->add_option("--split-rule", split_rule, "Base/novel split rule: half or alternating")
                                ->check(CLI::IsMember({"half", "alternating"}));
    options["freeze_alpha_beta"] = cmd->add_flag("--freeze-alpha-beta", freeze_alpha_beta, "Keep alpha and beta fixed");
    options["no_projector"] = cmd->add_flag("--no-projector", no_projector, "Disable the projector");
    options["no_adapter"] = cmd->add_flag("--no-adapter", no_adapter, "Disable the task adapter");
  }

  bool given(const char* name) const { return options.at(name)->count() > 0; }
};

struct RunSettings {
  train::TrainConfig train;
  std::uint32_t shots = 0;
  store::SplitRule split_rule = store::SplitRule::half;

  ordered_json json() const {
    auto j = ordered_json::parse(train::to_json(train));
    j["shots"] = shots;
    j["split_rule"] = split_rule == store::SplitRule::half ? "half" : "alternating";
    return j;
  }
};

RunSettings resolve(const TrainFlags& f, const store::DatasetManifest& manifest) {
  RunSettings s;
  s.train.epochs = train::default_epochs(manifest.dataset_name);
  s.shots = manifest.shots_per_class;
  ordered_json file = ordered_json::object();
  if (!f.config_path.empty()) {
    require_path(f.config_path, "config");
    try {
      file = ordered_json::parse(read_text(f.config_path));
    } catch (const nlohmann::json::exception& e) {
      throw UsageError("config " + f.config_path + " is not valid JSON: " + e.what());
    }
    if (!file.is_object()) throw UsageError("config " + f.config_path + " must be a JSON object");
  }
  // Run-level keys are handled here, the rest belongs to TrainConfig.
  try {
    if (file.contains("shots")) s.shots = file["shots"].get<std::uint32_t>();
    if (file.contains("split_rule")) s.split_rule = store::split_rule_from_string(file["split_rule"].get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("config has a value of the wrong type: ") + e.what());
  }
  file.erase("shots");
  file.erase("split_rule");
  s.train = train::overlay_json(s.train, file.dump());

  ordered_json flags = ordered_json::object();
  if (f.given("epochs")) flags["epochs"] = f.epochs;
  if (f.given("batch_size")) flags["batch_size"] = f.batch_size;
  if (f.given("learning_rate")) flags["learning_rate"] = f.learning_rate;
  if (f.given("weight_decay")) flags["weight_decay"] = f.weight_decay;
  if (f.given("k")) flags["k"] = f.k;
  if (f.given("concepts")) flags["concepts"] = f.concepts;
  if (f.given("heads")) flags["heads"] = f.heads;
  if (f.given("temperature")) flags["temperature"] = f.temperature;
  if (f.given("template")) flags["template"] = f.template_text;
  if (f.given("prompt_mode")) flags["prompt_mode"] = f.prompt_mode;
  if (f.given("seed")) flags["seed"] = f.seed;
  if (f.freeze_alpha_beta) flags["train_alpha_beta"] = false;
  if (f.no_projector) flags["use_projector"] = false;
  if (f.no_adapter) flags["use_adapter"] = false;
  s.train = train::overlay_json(s.train, flags.dump());
  if (f.given("shots")) s.shots = f.shots;
  if (f.given("split_rule")) s.split_rule = store::split_rule_from_string(f.split_rule);
  s.train.validate();
  if (s.shots == 0) throw UsageError("shots must be at least 1");
  return s;
}

store::ConceptLexicon load_lexicon(const std::string& flag_value, const store::DatasetManifest& manifest) {
  std::string path = flag_value;
  if (path.empty() && !manifest.lexicon_file.empty()) path = manifest.lexicon_path().string();
  if (path.empty()) throw UsageError("--lexicon is required (the manifest names no lexicon)");
  require_path(path, "lexicon");
  auto lexicon = store::read_lexicon(path);
  require(lexicon.dim() == manifest.text_dim, ErrorCode::dim_mismatch,
          "lexicon d_t=" + std::to_string(lexicon.dim()) + " but the manifest says " +
              std::to_string(manifest.text_dim));
  return lexicon;
}

store::FeatureBank load_bank(const std::string& path, const std::string& flag) {
  require_path(path, flag);
  auto contents = store::read_bank(path);
  return store::FeatureBank(std::move(contents.manifest), std::move(contents.records));
}

std::shared_ptr<const cache::ConceptCache> load_cache(const std::string& flag_value, const fs::path& checkpoint,
                                                      const model::CplModel& model) {
  fs::path path = flag_value;
  if (path.empty()) path = cache_path_for(checkpoint);
  const bool needed = model.prompts.mode != cache::PromptMode::baseline && model.prompts.k > 0;
  if (!fs::exists(path)) {
    if (!flag_value.empty()) throw UsageError("--cache: no such file: " + flag_value);
    if (needed) throw UsageError("checkpoint uses concepts but no cache was found at " + path.string());
    return nullptr;
  }
  if (!needed) return nullptr;
  return std::make_shared<const cache::ConceptCache>(cache::read_cache(path));
}

void write_report_files(const std::string& json_path, const std::string& csv_path, const std::string& json,
                        const std::vector<std::string>& rows) {
  if (!json_path.empty()) write_text(json_path, json + "\n");
  if (!csv_path.empty()) {
    std::string csv = std::string(eval::kCsvHeader) + "\n";
    for (const auto& r : rows) csv += r + "\n";
    write_text(csv_path, csv);
  }
}

int cmd_make_toy(const enc::ToyWorldConfig& config, const std::string& out_dir, std::ostream& out) {
  if (out_dir.empty()) throw UsageError("--out is required");
  const enc::ToyWorld world(config);
  const fs::path dir(out_dir);
  fs::create_directories(dir);
  const fs::path bank = dir / (config.dataset_name + ".bank");
  const fs::path lexicon = dir / (config.dataset_name + ".lexicon");
  store::write_lexicon(world.lexicon(), lexicon);
  auto manifest = world.manifest();
  manifest.lexicon_file = lexicon.filename().string();
  const auto records = world.generate();
  store::write_bank(records, manifest, bank);
  out << "wrote " << records.size() << " records to " << bank.string() << "\n";
  out << "wrote manifest " << store::sidecar_path(bank).string() << "\n";
  out << "wrote lexicon of " << world.lexicon().size() << " concepts to " << lexicon.string() << "\n";
  return 0;
}

void print_provenance(const cache::ConceptCache& c, std::size_t concepts, std::ostream& out) {
  std::map<std::string, std::size_t> per_image;
  double total = 0.0;
  for (const auto& p : c.provenance) {
    ++per_image[p.record_id];
    total += p.similarity;
  }
  std::vector<std::pair<std::string, std::size_t>> ranked(per_image.begin(), per_image.end());
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  out << "cache: " << c.size() << " entries from " << concepts << " concepts, " << c.distinct_words()
      << " distinct words, " << per_image.size() << " source images\n";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4f", c.size() ? total / static_cast<double>(c.size()) : 0.0);
  out << "mean key similarity " << buf << "\n";
  out << "top source images:\n";
  for (std::size_t i = 0; i < std::min<std::size_t>(5, ranked.size()); ++i) {
    out << "  " << ranked[i].first << "  " << ranked[i].second << "\n";
  }
}

train::TrainingSet training_set(const store::RecordSource& source, const std::string& classes, std::uint32_t shots,
                                std::uint64_t seed, store::SplitRule rule) {
  const auto& manifest = source.manifest();
  train::TrainingSet data;
  if (classes == "base") {
    data.class_ids = store::make_base_novel_split(manifest.class_names, rule).base_classes;
  } else {
    for (std::uint32_t c = 0; c < manifest.class_names.size(); ++c) data.class_ids.push_back(c);
  }
  for (auto id : data.class_ids) data.class_names.push_back(manifest.class_names[id]);
  data.records = store::sample_few_shot(source, data.class_ids, shots, seed);
  return data;
}

ordered_json model_json(const model::CplModel& m) {
  return {{"k", m.prompts.k},
          {"prompt_mode", std::string(cache::to_string(m.prompts.mode))},
          {"template", m.prompts.template_text},
          {"temperature", m.classifier.temperature},
          {"alpha", m.fusion.alpha},
          {"beta", m.fusion.beta},
          {"trained_classes", m.fusion.adapter_classes}};
}

}  // namespace

int run(int argc, const char* const argv[], std::ostream& out, std::ostream& err) {
  CLI::App app{"Concept-guided prompt learning on precomputed CLIP features"};
  app.name("cpl");
  app.require_subcommand(1);

  // make-toy
  auto* make_toy = app.add_subcommand("make-toy", "Write a synthetic attribute-correlated bank and lexicon");
  enc::ToyWorldConfig toy;
  std::string toy_out;
  make_toy->add_option("--out", toy_out, "Output directory")->required();
  make_toy->add_option("--name", toy.dataset_name, "Dataset name")->capture_default_str();
  make_toy->add_option("--classes", toy.num_classes, "Number of classes")->capture_default_str();
  make_toy->add_option("--shots", toy.shots, "Shots per class recorded in the manifest")->capture_default_str();
  make_toy->add_option("--train-per-class", toy.train_per_class, "Train images per class")->capture_default_str();
  make_toy->add_option("--test-per-class", toy.test_per_class, "Test images per class")->capture_default_str();
  make_toy->add_option("--dim", toy.dim, "Feature dimension")->capture_default_str();
  make_toy->add_option("--lexicon-size", toy.lexicon_size, "Lexicon entries")->capture_default_str();
  make_toy->add_option("--noise", toy.noise, "Image noise scale")->capture_default_str();
  make_toy->add_option("--class-name-offset", toy.class_name_offset, "First class name index")->capture_default_str();
  make_toy->add_option("--seed", toy.seed, "Content seed")->capture_default_str();
  make_toy->add_option("--encoder-seed", toy.encoder_seed, "Encoder seed")->capture_default_str();

  // build-cache
  auto* build = app.add_subcommand("build-cache", "Build the visual concept cache from few-shot training images");
  std::string bc_manifest, bc_lexicon, bc_out, bc_classes = "all";
  std::size_t bc_concepts = 2000;
  std::uint32_t bc_shots = 0;
  std::uint64_t bc_seed = 0;
  std::string bc_rule = "half";
  build->add_option("--manifest", bc_manifest, "Bank or manifest path")->required();
  build->add_option("--lexicon", bc_lexicon, "Lexicon path (default from the manifest)");
  build->add_option("--out", bc_out, "Cache output path")->required();
  build->add_option("--concepts", bc_concepts, "Lexicon entries I to use")->capture_default_str();
  build->add_option("--shots", bc_shots, "Shots per class (default from the manifest)");
  build->add_option("--seed", bc_seed, "Few-shot sampling seed")->capture_default_str();
  build->add_option("--classes", bc_classes, "Classes whose images are used: all or base")
      ->check(CLI::IsMember({"all", "base"}))
      ->capture_default_str();
  build->add_option("--split-rule", bc_rule, "Base/novel split rule")->check(CLI::IsMember({"half", "alternating"}));

  // train
  auto* train_cmd = app.add_subcommand("train", "Train a checkpoint on few-shot images");
  std::string tr_manifest, tr_lexicon, tr_out, tr_log, tr_classes = "all";
  bool tr_print_config = false;
  TrainFlags tr_flags;
  EncoderFlags tr_encoder;
  train_cmd->add_option("--manifest", tr_manifest, "Bank or manifest path")->required();
  train_cmd->add_option("--lexicon", tr_lexicon, "Lexicon path (default from the manifest)");
  train_cmd->add_option("--out", tr_out, "Checkpoint output path");
  train_cmd->add_option("--log", tr_log, "Write the JSON-lines training log here instead of stdout");
  train_cmd->add_option("--classes", tr_classes, "Train on all classes or only the base split")
      ->check(CLI::IsMember({"all", "base"}))
      ->capture_default_str();
  train_cmd->add_flag("--print-config", tr_print_config, "Print the effective config and exit");
  tr_flags.add(train_cmd);
  tr_encoder.add(train_cmd);

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "Score a checkpoint on a bank's test images");
  std::string ev_ckpt, ev_manifest, ev_cache, ev_split = "base-novel", ev_rule = "half", ev_json, ev_csv;
  std::uint64_t ev_seed = 0;
  unsigned ev_threads = 0;
  EncoderFlags ev_encoder;
  eval_cmd->add_option("--checkpoint", ev_ckpt, "Checkpoint path")->required();
  eval_cmd->add_option("--manifest", ev_manifest, "Bank or manifest path")->required();
  eval_cmd->add_option("--cache", ev_cache, "Concept cache (default <checkpoint>.cache)");
  eval_cmd->add_option("--split", ev_split, "base-novel or all")
      ->check(CLI::IsMember({"base-novel", "all"}))
      ->capture_default_str();
  eval_cmd->add_option("--split-rule", ev_rule, "Base/novel split rule")
      ->check(CLI::IsMember({"half", "alternating"}));
  eval_cmd->add_option("--seed", ev_seed, "Seed recorded in the report");
  eval_cmd->add_option("--threads", ev_threads, "Scoring threads (0 = hardware)");
  eval_cmd->add_option("--out", ev_json, "JSON report path");
  eval_cmd->add_option("--csv", ev_csv, "CSV report path");
  ev_encoder.add(eval_cmd);

  // transfer
  auto* transfer_cmd = app.add_subcommand("transfer", "Evaluate a checkpoint on other datasets without training");
  std::string tf_ckpt, tf_cache, tf_targets, tf_json, tf_csv;
  std::uint64_t tf_seed = 0;
  unsigned tf_threads = 0;
  EncoderFlags tf_encoder;
  transfer_cmd->add_option("--checkpoint", tf_ckpt, "Checkpoint path")->required();
  transfer_cmd->add_option("--cache", tf_cache, "Concept cache (default <checkpoint>.cache)");
  transfer_cmd->add_option("--targets", tf_targets, "Comma-separated bank or manifest paths")->required();
  transfer_cmd->add_option("--seed", tf_seed, "Seed recorded in the report");
  transfer_cmd->add_option("--threads", tf_threads, "Scoring threads (0 = hardware)");
  transfer_cmd->add_option("--out", tf_json, "JSON report path");
  transfer_cmd->add_option("--csv", tf_csv, "CSV report path");
  tf_encoder.add(transfer_cmd);

  // ablate
  auto* ablate_cmd = app.add_subcommand("ablate", "Run a base-to-novel ablation grid");
  std::string ab_manifest, ab_lexicon, ab_axis, ab_values, ab_seeds = "0,1,2,3,4", ab_csv, ab_json;
  unsigned ab_threads = 0;
  TrainFlags ab_flags;
  EncoderFlags ab_encoder;
  ablate_cmd->add_option("--manifest", ab_manifest, "Bank or manifest path")->required();
  ablate_cmd->add_option("--lexicon", ab_lexicon, "Lexicon path (default from the manifest)");
  ablate_cmd->add_option("--axis", ab_axis, "K, I, components or shots")->required();
  ablate_cmd->add_option("--values", ab_values, "Comma-separated cell values (component rows when empty)");
  ablate_cmd->add_option("--seeds", ab_seeds, "Comma-separated seeds shared by every cell")->capture_default_str();
  ablate_cmd->add_option("--threads", ab_threads, "Scoring threads (0 = hardware)");
  ablate_cmd->add_option("--csv", ab_csv, "Grid CSV path");
  ablate_cmd->add_option("--out", ab_json, "JSON path with every run's report");
  ab_flags.add(ablate_cmd);
  ab_encoder.add(ablate_cmd);

  // inspect
  auto* inspect = app.add_subcommand("inspect", "Validate a bank and print its header");
  std::string in_manifest, in_dump;
  inspect->add_option("--manifest", in_manifest, "Bank or manifest path")->required();
  inspect->add_option("--dump", in_dump, "Write every loaded record as JSON lines");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (make_toy->parsed()) return cmd_make_toy(toy, toy_out, out);

    if (build->parsed()) {
      const auto bank = load_bank(bc_manifest, "manifest");
      const auto lexicon = load_lexicon(bc_lexicon, bank.manifest());
      if (bc_concepts == 0 || bc_concepts > lexicon.size()) {
        throw UsageError("--concepts must be between 1 and the lexicon size " + std::to_string(lexicon.size()));
      }
      const auto rule = store::split_rule_from_string(bc_rule);
      const auto data = training_set(bank, bc_classes, bc_shots ? bc_shots : bank.manifest().shots_per_class,
                                     bc_seed, rule);
      const auto c = cache::build_cache(lexicon.subset(bc_concepts), data.records);
      make_parent(bc_out);
      cache::write_cache(c, bc_out);
      print_provenance(c, bc_concepts, out);
      out << "wrote " << bc_out << "\n";
      return 0;
    }

    if (train_cmd->parsed()) {
      const auto bank = load_bank(tr_manifest, "manifest");
      const auto settings = resolve(tr_flags, bank.manifest());
      auto effective = settings.json();
      effective["classes"] = tr_classes;
      if (tr_print_config) {
        out << effective.dump(2) << "\n";
        return 0;
      }
      if (tr_out.empty()) throw UsageError("--out is required");
      const auto lexicon = load_lexicon(tr_lexicon, bank.manifest());
      const auto encoder = tr_encoder.make(bank.manifest());
      const auto data = training_set(bank, tr_classes, settings.shots, settings.train.seed, settings.split_rule);
      std::ofstream log_file;
      std::ostream* log = &out;
      if (!tr_log.empty()) {
        make_parent(tr_log);
        log_file.open(tr_log, std::ios::binary);
        require(static_cast<bool>(log_file), ErrorCode::io, "cannot write " + tr_log);
        log = &log_file;
      }
      out << "config " << effective.dump() << "\n";
      const auto fitted = train::fit(data, lexicon, encoder, settings.train, log);
      make_parent(tr_out);
      model::write_checkpoint(fitted.model, tr_out);
      const auto cache_file = cache_path_for(tr_out);
      if (fitted.cache) {
        cache::write_cache(*fitted.cache, cache_file);
      } else if (fs::exists(cache_file)) {
        fs::remove(cache_file);
      }
      out << "wrote " << tr_out << (fitted.cache ? " and " + cache_file.string() : std::string()) << "\n";
      return 0;
    }

    if (eval_cmd->parsed()) {
      require_path(ev_ckpt, "checkpoint");
      const auto bank = load_bank(ev_manifest, "manifest");
      const auto m = model::read_checkpoint(ev_ckpt);
      const auto c = load_cache(ev_cache, ev_ckpt, m);
      const auto encoder = ev_encoder.make(bank.manifest());
      const auto rule = store::split_rule_from_string(ev_rule);
      auto report = ev_split == "base-novel" ? eval::evaluate_base_novel(m, c, encoder, bank, rule, ev_threads)
                                             : eval::evaluate_dataset(m, c, encoder, bank, ev_threads);
      report.seed = ev_seed;
      ordered_json config{{"command", "eval"},    {"checkpoint", ev_ckpt}, {"manifest", ev_manifest},
                          {"split", ev_split},    {"split_rule", ev_rule}, {"model", model_json(m)},
                          {"encoder", ev_encoder.json()}};
      report.config_json = config.dump();
      out << report.text_table();
      write_report_files(ev_json, ev_csv, report.to_json(), report.csv_rows());
      return 0;
    }

    if (transfer_cmd->parsed()) {
      require_path(tf_ckpt, "checkpoint");
      const auto m = model::read_checkpoint(tf_ckpt);
      const auto c = load_cache(tf_cache, tf_ckpt, m);
      const auto paths = split_list(tf_targets);
      if (paths.empty()) throw UsageError("--targets lists no paths");
      std::vector<store::FeatureBank> banks;
      banks.reserve(paths.size());
      for (const auto& p : paths) banks.push_back(load_bank(p, "targets"));
      std::vector<const store::RecordSource*> targets;
      for (const auto& b : banks) targets.push_back(&b);
      // Every target must share the text encoder of the first.
      const auto encoder = tf_encoder.make(banks.front().manifest());
      for (const auto& b : banks) {
        require(b.manifest().encoder == banks.front().manifest().encoder, ErrorCode::contract,
                "target '" + b.manifest().dataset_name + "' uses a different text encoder");
      }
      auto t = eval::run_transfer(m, c, encoder, targets, tf_threads);
      ordered_json config{{"command", "transfer"}, {"checkpoint", tf_ckpt}, {"targets", paths},
                          {"model", model_json(m)}, {"encoder", tf_encoder.json()}};
      ordered_json reports = ordered_json::array();
      for (auto& r : t.reports) {
        r.seed = tf_seed;
        r.config_json = config.dump();
        reports.push_back(ordered_json::parse(r.to_json()));
      }
      out << t.text_table();
      ordered_json j{{"config", config}, {"average", t.average}, {"reports", reports}};
      write_report_files(tf_json, tf_csv, j.dump(2), t.csv_rows(tf_seed));
      return 0;
    }

    if (inspect->parsed()) {
      require_path(in_manifest, "manifest");
      const auto contents = store::read_bank(in_manifest);
      const auto& m = contents.manifest;
      std::size_t train = 0;
      for (const auto& r : contents.records) train += r.split == store::SplitTag::train;
      out << "dataset " << m.dataset_name << ": " << m.class_names.size() << " classes, " << train << " train and "
          << contents.records.size() - train << " test records\n";
      out << "d_v " << m.feature_dim << ", d_t " << m.text_dim << ", " << m.level_count << " levels, encoder "
          << m.encoder.kind << ", truncation " << m.truncation_policy << "\n";
      if (!in_dump.empty()) {
        std::ostringstream lines;
        for (const auto& r : contents.records) {
          ordered_json j{{"id", r.record_id},
                         {"class_id", r.class_id},
                         {"split", std::string(store::to_string(r.split))},
                         {"final", r.final_feature},
                         {"levels", r.level_summaries}};
          lines << j.dump() << "\n";
        }
        write_text(in_dump, lines.str());
      }
      return 0;
    }

    if (ablate_cmd->parsed()) {
      const auto bank = load_bank(ab_manifest, "manifest");
      const auto lexicon = load_lexicon(ab_lexicon, bank.manifest());
      const auto settings = resolve(ab_flags, bank.manifest());
      const auto axis = eval::ablation_axis_from_string(ab_axis);
      const auto values = split_list(ab_values);
      std::vector<std::uint64_t> seeds;
      for (const auto& s : split_list(ab_seeds)) {
        try {
          std::size_t used = 0;
          seeds.push_back(std::stoull(s, &used));
          if (used != s.size()) throw std::invalid_argument(s);
        } catch (const std::exception&) {
          throw UsageError("--seeds: '" + s + "' is not a whole number");
        }
      }
      if (seeds.empty()) throw UsageError("--seeds lists no seeds");
      eval::BaseToNovelConfig base;
      base.train = settings.train;
      base.shots = settings.shots;
      base.split_rule = settings.split_rule;
      base.threads = ab_threads;
      const auto encoder = ab_encoder.make(bank.manifest());
      const auto grid = eval::run_ablation(axis, values, base, seeds, bank, lexicon, encoder);
      out << grid.text_table();
      if (!ab_csv.empty()) write_text(ab_csv, grid.csv());
      if (!ab_json.empty()) {
        ordered_json cells = ordered_json::array();
        for (const auto& cell : grid.cells) {
          ordered_json runs = ordered_json::array();
          for (const auto& r : cell.runs) runs.push_back(ordered_json::parse(r.to_json()));
          cells.push_back({{"value", cell.label},
                           {"base", cell.base},
                           {"novel", cell.novel},
                           {"hm", cell.harmonic},
                           {"runs", runs}});
        }
        ordered_json j{{"axis", std::string(eval::to_string(axis))}, {"config", settings.json()}, {"cells", cells}};
        write_text(ab_json, j.dump(2) + "\n");
      }
      return 0;
    }
  } catch (const UsageError& e) {
    err << "cpl: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    err << "cpl: " << e.what() << "\n";
    return e.code() == ErrorCode::contract ? 2 : 1;
  } catch (const std::exception& e) {
    err << "cpl: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace cpl::cli
