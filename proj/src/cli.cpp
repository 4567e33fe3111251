#include "memeclf/cli.hpp"

#include <fmt/format.h>
#include <fmt/ranges.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <CLI11.hpp>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <optional>

#include "memeclf/checkpoint.hpp"
#include "memeclf/corpus.hpp"
#include "memeclf/errors.hpp"
#include "memeclf/io.hpp"
#include "memeclf/model_check.hpp"
#include "memeclf/report.hpp"
#include "memeclf/synthetic.hpp"

namespace memeclf {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

Index to_index(const std::string& key, const std::string& value) {
  Index out = 0;
  const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc() || ptr != value.data() + value.size()) {
    throw ConfigError(fmt::format("{}: expected an integer, got '{}'", key, value));
  }
  return out;
}

std::uint64_t to_u64(const std::string& key, const std::string& value) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc() || ptr != value.data() + value.size()) {
    throw ConfigError(fmt::format("{}: expected a non-negative integer, got '{}'", key, value));
  }
  return out;
}

double to_double(const std::string& key, const std::string& value) {
  char* end = nullptr;
  const double out = std::strtod(value.c_str(), &end);
  if (value.empty() || end != value.c_str() + value.size() || !std::isfinite(out)) {
    throw ConfigError(fmt::format("{}: expected a finite number, got '{}'", key, value));
  }
  return out;
}

bool to_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "on" || value == "yes" || value == "1") return true;
  if (value == "false" || value == "off" || value == "no" || value == "0") return false;
  throw ConfigError(fmt::format("{}: expected true or false, got '{}'", key, value));
}

struct KeySpec {
  std::function<void(RunConfig&, const std::string& key, const std::string& value)> set;
  std::function<json(const RunConfig&)> get;
};

template <typename Member>
KeySpec index_key(Member member) {
  return {[member](RunConfig& c, const std::string& k, const std::string& v) { member(c) = to_index(k, v); },
          [member](const RunConfig& c) { return json(member(const_cast<RunConfig&>(c))); }};
}

template <typename Member>
KeySpec double_key(Member member) {
  return {[member](RunConfig& c, const std::string& k, const std::string& v) { member(c) = to_double(k, v); },
          [member](const RunConfig& c) { return json(member(const_cast<RunConfig&>(c))); }};
}

template <typename Member>
KeySpec bool_key(Member member) {
  return {[member](RunConfig& c, const std::string& k, const std::string& v) { member(c) = to_bool(k, v); },
          [member](const RunConfig& c) { return json(member(const_cast<RunConfig&>(c))); }};
}

template <typename Member>
KeySpec string_key(Member member) {
  return {[member](RunConfig& c, const std::string&, const std::string& v) { member(c) = v; },
          [member](const RunConfig& c) { return json(member(const_cast<RunConfig&>(c))); }};
}

template <typename Member, typename Parse>
KeySpec enum_key(Member member, Parse parse) {
  return {[member, parse](RunConfig& c, const std::string&, const std::string& v) { member(c) = parse(v); },
          [member](const RunConfig& c) { return json(to_string(member(const_cast<RunConfig&>(c)))); }};
}

#define MEMBER(path) [](RunConfig& c) -> auto& { return c.path; }

const std::map<std::string, KeySpec>& key_table() {
  static const std::map<std::string, KeySpec> table = {
      {"profile",
       {[](RunConfig& c, const std::string&, const std::string& v) {
          const ViltConfig base = ViltConfig::for_profile(v, c.model.vocab_size);
          c.profile = v;
          c.model = base;
        },
        [](const RunConfig& c) { return json(c.profile); }}},
      {"model.hidden_dim", index_key(MEMBER(model.hidden_dim))},
      {"model.num_layers", index_key(MEMBER(model.num_layers))},
      {"model.num_heads", index_key(MEMBER(model.num_heads))},
      {"model.mlp_ratio", index_key(MEMBER(model.mlp_ratio))},
      {"model.patch_size", index_key(MEMBER(model.patch_size))},
      {"model.image_height", index_key(MEMBER(model.image_height))},
      {"model.image_width", index_key(MEMBER(model.image_width))},
      {"model.max_text_len", index_key(MEMBER(model.max_text_len))},
      {"model.dropout_head", double_key(MEMBER(model.dropout_head))},
      {"model.dropout_encoder", double_key(MEMBER(model.dropout_encoder))},
      {"model.eps", double_key(MEMBER(model.eps))},
      {"model.pooling", enum_key(MEMBER(model.pooling), parse_pooling)},
      {"model.ablation", enum_key(MEMBER(model.ablation), parse_ablation)},
      {"train.learning_rate", double_key(MEMBER(train.learning_rate))},
      {"train.beta1", double_key(MEMBER(train.beta1))},
      {"train.beta2", double_key(MEMBER(train.beta2))},
      {"train.adam_eps", double_key(MEMBER(train.adam_eps))},
      {"train.epochs", index_key(MEMBER(train.epochs))},
      {"train.train_batch", index_key(MEMBER(train.train_batch))},
      {"train.eval_batch", index_key(MEMBER(train.eval_batch))},
      {"train.early_stopping", bool_key(MEMBER(train.early_stopping))},
      {"train.patience", index_key(MEMBER(train.patience))},
      {"train.min_delta", double_key(MEMBER(train.min_delta))},
      {"train.weight_decay", double_key(MEMBER(train.weight_decay))},
      {"train.precision_average", enum_key(MEMBER(train.precision_average), parse_average)},
      {"data.manifest", string_key(MEMBER(data.manifest))},
      {"data.val_manifest", string_key(MEMBER(data.val_manifest))},
      {"data.test_manifest", string_key(MEMBER(data.test_manifest))},
      {"data.ocr", enum_key(MEMBER(data.ocr.adapter), parse_ocr_adapter)},
      {"data.ocr_command", string_key(MEMBER(data.ocr.command))},
      {"data.min_freq",
       {[](RunConfig& c, const std::string& k, const std::string& v) {
          const Index n = to_index(k, v);
          if (n < 1) throw ConfigError("data.min_freq must be at least 1");
          c.data.min_freq = static_cast<std::size_t>(n);
        },
        [](const RunConfig& c) { return json(c.data.min_freq); }}},
      {"data.augmentation", enum_key(MEMBER(train.augmentation), parse_augmentation)},
      {"data.max_rotation", double_key(MEMBER(train.max_rotation))},
      {"eval.protocol",
       {[](RunConfig& c, const std::string&, const std::string& v) {
          if (v != "split" && v != "kfold") throw ConfigError("eval.protocol must be split or kfold, got '" + v + "'");
          c.eval.protocol = v;
        },
        [](const RunConfig& c) { return json(c.eval.protocol); }}},
      {"eval.k", index_key(MEMBER(eval.k))},
      {"eval.holdout_ratio", double_key(MEMBER(eval.holdout_ratio))},
      {"eval.train_ratio", double_key(MEMBER(eval.ratios.train))},
      {"eval.val_ratio", double_key(MEMBER(eval.ratios.val))},
      {"eval.test_ratio", double_key(MEMBER(eval.ratios.test))},
      {"eval.runs", index_key(MEMBER(eval.runs))},
      {"eval.base_seed",
       {[](RunConfig& c, const std::string& k, const std::string& v) { c.eval.base_seed = to_u64(k, v); },
        [](const RunConfig& c) { return json(c.eval.base_seed); }}},
      {"eval.stratified", bool_key(MEMBER(eval.stratified))},
      {"eval.aggregate", enum_key(MEMBER(eval.rule), parse_aggregate_rule)},
      {"output.dir", string_key(MEMBER(output_dir))},
  };
  return table;
}

#undef MEMBER

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
  const auto& table = key_table();
  const auto it = table.find(key);
  if (it == table.end()) throw ConfigError("unknown config key '" + key + "'");
  it->second.set(*this, key, value);
}

json RunConfig::to_json() const {
  json out = json::object();
  for (const auto& [key, spec] : key_table()) out[key] = spec.get(*this);
  return out;
}

std::vector<std::string> RunConfig::keys() {
  std::vector<std::string> out;
  for (const auto& [key, spec] : key_table()) out.push_back(key);
  return out;
}

void RunConfig::validate() const {
  model.validate();
  train.validate();
  eval.ratios.validate();
  if (eval.k < 2) throw ConfigError("eval.k must be at least 2");
  if (!(eval.holdout_ratio > 0.0 && eval.holdout_ratio < 1.0)) throw ConfigError("eval.holdout_ratio must lie in (0, 1)");
  if (eval.runs < 1) throw ConfigError("eval.runs must be at least 1");
  if (data.val_manifest.empty() != data.test_manifest.empty()) {
    throw ConfigError("data.val_manifest and data.test_manifest must be given together");
  }
  if (data.ocr.adapter == OcrAdapter::Command && data.ocr.command.empty()) {
    throw ConfigError("data.ocr = command needs data.ocr_command");
  }
}

ConfigEntries parse_config_text(const std::string& text, const std::string& source) {
  ConfigEntries out;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t end = std::min(text.find('\n', pos), text.size());
    std::string line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(fmt::format("{}:{}: expected 'key = value'", source, line_no));
    }
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError(fmt::format("{}:{}: empty key", source, line_no));
    out.emplace_back(key, trim(line.substr(eq + 1)));
  }
  return out;
}

RunConfig resolve_config(const ConfigEntries& entries) {
  RunConfig c;
  for (const auto& [k, v] : entries) {
    if (k == "profile") c.set(k, v);
  }
  for (const auto& [k, v] : entries) {
    if (k != "profile") c.set(k, v);
  }
  if (c.output_dir.empty()) {
    const char* env = std::getenv("MEMECLF_OUTPUT_DIR");
    c.output_dir = (env != nullptr && *env != '\0') ? env : "memeclf_out";
  }
  c.validate();
  return c;
}

namespace {

// Invalid input and usage problems exit with 1; anything else with 2.
int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const ValidationError*>(&e) ||
      dynamic_cast<const VocabularyError*>(&e) || dynamic_cast<const ParameterError*>(&e)) {
    return 1;
  }
  return 2;
}

void setup_logging(const std::string& level) {
  auto logger = spdlog::get("memeclf");
  if (!logger) logger = spdlog::stderr_color_mt("memeclf");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("[%H:%M:%S.%e] [%l] %v");
  const auto parsed = spdlog::level::from_str(level);
  if (parsed == spdlog::level::off && level != "off") throw ConfigError("unknown log level '" + level + "'");
  spdlog::set_level(parsed);
}

// Options every subcommand understands.
struct Common {
  std::string config_file;
  std::vector<std::string> sets;
  std::string out;
  std::string log_level = "info";
  ConfigEntries flags;  // filled by subcommand-specific flags

  void attach(CLI::App* sub) {
    sub->add_option("--config", config_file, "flat key = value config file");
    sub->add_option("--set", sets, "override one config key (key=value), repeatable");
    sub->add_option("--out", out, "output directory (default $MEMECLF_OUTPUT_DIR or memeclf_out)");
    sub->add_option("--log-level", log_level, "trace|debug|info|warn|error|off");
  }

  RunConfig resolve() const {
    ConfigEntries entries;
    if (!config_file.empty()) entries = parse_config_text(read_file(config_file), config_file);
    entries.insert(entries.end(), flags.begin(), flags.end());
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
      entries.emplace_back(trim(s.substr(0, eq)), trim(s.substr(eq + 1)));
    }
    if (!out.empty()) entries.emplace_back("output.dir", out);
    return resolve_config(entries);
  }
};

// Binds a flag whose value, when given, becomes a config entry.
template <typename T>
void flag_to_key(CLI::App* sub, const std::string& flag, const std::string& key, std::optional<T>& slot,
                 const std::string& help) {
  sub->add_option(flag, slot, help + " (" + key + ")");
}

template <typename T>
void push_flag(ConfigEntries& entries, const std::string& key, const std::optional<T>& slot) {
  if (!slot) return;
  if constexpr (std::is_same_v<T, std::string>) {
    entries.emplace_back(key, *slot);
  } else {
    entries.emplace_back(key, fmt::format("{}", *slot));
  }
}

Corpus load_labeled(const RunConfig& config, const std::string& path) {
  if (path.empty()) throw ConfigError("no manifest given (--manifest or data.manifest)");
  Corpus corpus = load_manifest(path);
  resolve_texts(corpus, config.data.ocr);
  corpus.labels();
  return corpus;
}

std::string sizes_string(const std::vector<std::vector<std::size_t>>& folds) {
  std::vector<std::size_t> sizes;
  for (const auto& f : folds) sizes.push_back(f.size());
  return fmt::format("{{{}}}", fmt::join(sizes, ","));
}

json ids_json(const Corpus& corpus, const std::vector<std::size_t>& indices) {
  json out = json::array();
  for (std::size_t i : indices) out.push_back(corpus.records[i].id);
  return out;
}

void save_runs(const ProtocolResult& result, const std::string& out_dir) {
  for (const auto& run : result.runs) {
    save_checkpoint((fs::path(out_dir) / run.name / "checkpoint").string(), run.params, run.model, &run.vocab);
  }
}

std::vector<RunRecord> records_of(const ProtocolResult& result) {
  std::vector<RunRecord> out;
  for (const auto& run : result.runs) out.push_back({run.name, run.seed, run.test, &run.history});
  return out;
}

std::string table_row(const std::string& name, const MetricsReport& m) {
  return fmt::format("{},{:.6f},{:.6f},{:.6f},{:.6f},{:.6f},{:.6f}\n", name, m.loss, m.precision, m.recall, m.f1_micro,
                     m.f1_macro, m.f1_weighted);
}

ProtocolOptions options_of(const RunConfig& config) {
  ProtocolOptions o;
  o.train = config.train;
  o.model = config.model;
  o.min_freq = config.data.min_freq;
  o.rule = config.eval.rule;
  return o;
}

// ---------------------------------------------------------------------------

int cmd_stats(const RunConfig& config) {
  if (config.data.manifest.empty()) throw ConfigError("stats needs --manifest");
  const Corpus corpus = load_manifest(config.data.manifest);
  const CorpusStats stats = corpus_stats(corpus);
  write_stats(stats, config.output_dir);
  std::cout << fmt::format("{{0:{}, 1:{}}} n={} unlabeled={}", stats.counts[0], stats.counts[1], stats.n,
                           stats.unlabeled)
            << std::endl;
  return 0;
}

int cmd_consensus(const RunConfig& config, double threshold, std::string output) {
  if (config.data.manifest.empty()) throw ConfigError("consensus needs --manifest");
  Corpus corpus = load_manifest(config.data.manifest);
  std::vector<std::string> unresolved;
  Index resolved = 0;
  for (auto& r : corpus.records) {
    if (!r.annotator_labels) continue;
    const Consensus c = consensus_label(*r.annotator_labels, threshold);
    if (r.label && c.label && *r.label != *c.label) {
      spdlog::warn("record '{}': label {} replaced by consensus {}", r.id, *r.label, *c.label);
    }
    r.label = c.label;
    if (c.label) {
      ++resolved;
    } else {
      unresolved.push_back(r.id);
    }
  }
  ensure_directory(config.output_dir);
  if (output.empty()) output = (fs::path(config.output_dir) / "consensus_manifest.jsonl").string();
  save_manifest(corpus, output);
  std::string listing;
  for (const auto& id : unresolved) listing += id + "\n";
  write_file_atomic((fs::path(config.output_dir) / "unresolved.txt").string(), listing);
  for (const auto& id : unresolved) spdlog::info("unresolved: {}", id);
  std::cout << fmt::format("resolved {}, unresolved {}; manifest {}", resolved, unresolved.size(), output)
            << std::endl;
  return 0;
}

int cmd_synth(const RunConfig& config, Index n, const std::string& mode, std::uint64_t seed) {
  const Corpus corpus = generate_synthetic(n, parse_synth_mode(mode), seed, config.output_dir);
  std::cout << fmt::format("wrote {} {} memes (seed {}) to {}", corpus.size(), mode, seed, config.output_dir)
            << std::endl;
  return 0;
}

ProtocolResult train_once(const RunConfig& config, const PreparedCorpus& data, const PreparedCorpus* val,
                          const PreparedCorpus* test, const SplitPlan& plan) {
  const ProtocolOptions options = options_of(config);
  if (val != nullptr) {
    std::vector<std::size_t> all(data.corpus.size()), val_all(val->corpus.size()), test_all(test->corpus.size());
    std::iota(all.begin(), all.end(), 0);
    std::iota(val_all.begin(), val_all.end(), 0);
    std::iota(test_all.begin(), test_all.end(), 0);
    return run_split(Part{&data, all}, Part{val, val_all}, Part{test, test_all}, options, config.eval.runs,
                     config.eval.base_seed);
  }
  return run_split(data, plan, options, config.eval.runs, config.eval.base_seed);
}

json split_json(const RunConfig& config, const PreparedCorpus& data, const SplitPlan& plan, bool fixed_parts) {
  json j;
  j["protocol"] = "split";
  if (fixed_parts) {
    j["parts"] = {{"train", config.data.manifest}, {"val", config.data.val_manifest}, {"test", config.data.test_manifest}};
    return j;
  }
  j["split_seed"] = config.eval.base_seed;
  j["sizes"] = {{"train", plan.train.size()}, {"val", plan.val.size()}, {"test", plan.test.size()}};
  j["test_ids"] = ids_json(data.corpus, plan.test);
  return j;
}

int cmd_kfold(const RunConfig& config, bool plan_only);

int cmd_train(RunConfig config, bool compare_augmentation) {
  if (config.eval.protocol == "kfold") {
    if (compare_augmentation) throw ConfigError("--compare-augmentation needs eval.protocol = split");
    return cmd_kfold(config, false);
  }
  const Corpus corpus = load_labeled(config, config.data.manifest);
  const PreparedCorpus data = prepare_corpus(corpus, config.model.image_height, config.model.image_width);
  std::optional<PreparedCorpus> val, test;
  SplitPlan plan;
  const bool fixed_parts = !config.data.val_manifest.empty();
  if (fixed_parts) {
    val = prepare_corpus(load_labeled(config, config.data.val_manifest), config.model.image_height,
                         config.model.image_width);
    test = prepare_corpus(load_labeled(config, config.data.test_manifest), config.model.image_height,
                          config.model.image_width);
  } else {
    plan = split_train_val_test(data.corpus.labels(), config.eval.ratios, config.eval.base_seed,
                                config.eval.stratified);
    spdlog::info("split: train {}, val {}, test {}", plan.train.size(), plan.val.size(), plan.test.size());
  }
  const PreparedCorpus* val_ptr = val ? &*val : nullptr;
  const PreparedCorpus* test_ptr = test ? &*test : nullptr;

  auto run_variant = [&](const RunConfig& variant, const std::string& out_dir) {
    ProtocolResult result = train_once(variant, data, val_ptr, test_ptr, plan);
    save_runs(result, out_dir);
    ReportInput report;
    report.command = "train";
    report.profile = variant.profile;
    report.config = variant.to_json();
    report.runs = records_of(result);
    report.aggregate = result.aggregate;
    report.extra = split_json(variant, data, plan, fixed_parts);
    report.aggregate_label = to_string(variant.eval.rule);
    emit_report(report, out_dir);
    return result;
  };

  if (!compare_augmentation) {
    const ProtocolResult result = run_variant(config, config.output_dir);
    std::cout << fmt::format("train: {} run(s), {} f1_weighted={:.6f} loss={:.6f}; report {}", result.runs.size(),
                             to_string(config.eval.rule), result.aggregate.f1_weighted, result.aggregate.loss,
                             (fs::path(config.output_dir) / "report.json").string())
              << std::endl;
    return 0;
  }

  // Same seeds, same split; only the augmentation mode differs.
  RunConfig plain = config;
  plain.train.augmentation = Augmentation::Off;
  RunConfig augmented = config;
  if (augmented.train.augmentation == Augmentation::Off) augmented.train.augmentation = Augmentation::Online;
  const std::string aug_name = "augmentation_" + to_string(augmented.train.augmentation);
  const ProtocolResult off = run_variant(plain, (fs::path(config.output_dir) / "augmentation_off").string());
  const ProtocolResult on = run_variant(augmented, (fs::path(config.output_dir) / aug_name).string());
  std::string table = "augmentation,loss,precision,recall,f1_micro,f1_macro,f1_weighted\n";
  table += table_row("off", off.aggregate);
  table += table_row(to_string(augmented.train.augmentation), on.aggregate);
  ensure_directory(config.output_dir);
  write_file_atomic((fs::path(config.output_dir) / "augmentation_table.csv").string(), table);
  std::cout << fmt::format("train: augmentation off f1_weighted={:.6f}, {} f1_weighted={:.6f}; table {}",
                           off.aggregate.f1_weighted, to_string(augmented.train.augmentation),
                           on.aggregate.f1_weighted,
                           (fs::path(config.output_dir) / "augmentation_table.csv").string())
            << std::endl;
  return 0;
}

Dataset dataset_for_checkpoint(const RunConfig& config, const Checkpoint& ckpt, bool need_labels) {
  if (!ckpt.vocab) throw ValidationError("checkpoint has no vocabulary");
  if (config.data.manifest.empty()) throw ConfigError("no manifest given (--manifest or data.manifest)");
  Corpus corpus = load_manifest(config.data.manifest);
  resolve_texts(corpus, config.data.ocr);
  if (need_labels) corpus.labels();
  return build_dataset(corpus, *ckpt.vocab, ckpt.config);
}

int cmd_eval(const RunConfig& config, const std::string& checkpoint_dir) {
  const Checkpoint ckpt = load_checkpoint(checkpoint_dir);
  const Dataset data = dataset_for_checkpoint(config, ckpt, true);
  const Evaluation ev = evaluate(ckpt.params, ckpt.config, data, config.train.eval_batch,
                                 config.train.precision_average);
  ReportInput report;
  report.command = "eval";
  report.profile = ckpt.config.profile;
  report.config = config.to_json();
  report.runs = {{"eval", 0, ev.metrics, nullptr}};
  report.aggregate = ev.metrics;
  report.aggregate_label = "single";
  report.extra["checkpoint"] = checkpoint_dir;
  report.extra["model"] = json::parse(config_to_json(ckpt.config));
  emit_report(report, config.output_dir);
  std::cout << fmt::format("eval: n={} loss={:.6f} f1_weighted={:.6f}; report {}", ev.metrics.n, ev.metrics.loss,
                           ev.metrics.f1_weighted, (fs::path(config.output_dir) / "report.json").string())
            << std::endl;
  return 0;
}

int cmd_predict(const RunConfig& config, const std::string& checkpoint_dir) {
  const Checkpoint ckpt = load_checkpoint(checkpoint_dir);
  const Dataset data = dataset_for_checkpoint(config, ckpt, false);
  const std::vector<double> probs = predict(ckpt.params, ckpt.config, data, config.train.eval_batch);
  std::string csv = "id,probability,label\n";
  Index positive = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    positive += decide(probs[i]);
    csv += fmt::format("{},{:.6f},{}\n", data.ids[i], probs[i], decide(probs[i]));
  }
  ensure_directory(config.output_dir);
  const std::string path = (fs::path(config.output_dir) / "predictions.csv").string();
  write_file_atomic(path, csv);
  std::cout << fmt::format("predict: {} memes, {} labelled 1; {}", probs.size(), positive, path) << std::endl;
  return 0;
}

int cmd_kfold(const RunConfig& config, bool plan_only) {
  const Corpus corpus = load_labeled(config, config.data.manifest);
  const FoldPlan plan = kfold_plan(corpus.labels(), config.eval.k, config.eval.holdout_ratio, config.eval.base_seed,
                                   config.eval.stratified);
  const std::string plan_text =
      fmt::format("holdout {}, folds {}", plan.holdout.size(), sizes_string(plan.folds));
  spdlog::info("k-fold plan: K={}, {}", plan.k, plan_text);
  json plan_json;
  plan_json["k"] = plan.k;
  plan_json["seed"] = plan.seed;
  plan_json["holdout"] = ids_json(corpus, plan.holdout);
  plan_json["folds"] = json::array();
  for (const auto& f : plan.folds) plan_json["folds"].push_back(ids_json(corpus, f));
  ensure_directory(config.output_dir);
  write_file_atomic((fs::path(config.output_dir) / "plan.json").string(), plan_json.dump(2) + "\n");
  if (plan_only) {
    std::cout << fmt::format("kfold plan K={}: {}", plan.k, plan_text) << std::endl;
    return 0;
  }
  const PreparedCorpus data = prepare_corpus(corpus, config.model.image_height, config.model.image_width);
  const ProtocolResult result = run_kfold(data, plan, options_of(config), config.eval.base_seed);
  save_runs(result, config.output_dir);
  ReportInput report;
  report.command = "kfold";
  report.profile = config.profile;
  report.config = config.to_json();
  report.runs = records_of(result);
  report.aggregate = result.aggregate;
  report.extra["protocol"] = "kfold";
  report.extra["plan"] = {{"k", plan.k},
                          {"seed", plan.seed},
                          {"holdout", plan.holdout.size()},
                          {"folds", [&] {
                             json sizes = json::array();
                             for (const auto& f : plan.folds) sizes.push_back(f.size());
                             return sizes;
                           }()}};
  report.aggregate_label = to_string(config.eval.rule);
  emit_report(report, config.output_dir);
  std::cout << fmt::format("kfold K={}: {}; {} holdout f1_weighted={:.6f}; report {}", plan.k, plan_text,
                           to_string(config.eval.rule), result.aggregate.f1_weighted,
                           (fs::path(config.output_dir) / "report.json").string())
            << std::endl;
  return 0;
}

int cmd_gradcheck(const RunConfig& config, std::uint64_t seed, Index batch, const GradCheckOptions& options) {
  const GradCheckReport r = check_model_gradient(config.model, batch, seed, options);
  json j;
  j["pass"] = r.pass;
  j["max_relative_error"] = r.max_relative_error;
  j["step"] = r.step;
  j["tolerance"] = r.tolerance;
  j["seed"] = seed;
  j["batch"] = batch;
  j["params"] = json::array();
  for (const auto& p : r.params) {
    j["params"].push_back({{"name", p.name},
                           {"coords_checked", p.coords_checked},
                           {"max_relative_error", p.max_relative_error},
                           {"worst_coord", p.worst_coord},
                           {"analytic", p.analytic_at_worst},
                           {"numeric", p.numeric_at_worst},
                           {"pass", p.pass}});
    if (!p.pass) spdlog::error("{}: relative error {:.3e} at coordinate {}", p.name, p.max_relative_error, p.worst_coord);
  }
  ensure_directory(config.output_dir);
  write_file_atomic((fs::path(config.output_dir) / "gradcheck.json").string(), j.dump(2) + "\n");
  std::cout << fmt::format("gradcheck: {} max relative error {:.3e} over {} tensors (tolerance {:.0e})",
                           r.pass ? "PASS" : "FAIL", r.max_relative_error, r.params.size(), r.tolerance)
            << std::endl;
  return r.pass ? 0 : 2;
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"Multimodal meme classifier: data tools, training and evaluation protocols", "memeclf"};
  app.require_subcommand(1);

  Common common;
  std::optional<std::string> manifest, profile, augmentation, ocr;
  std::optional<std::uint64_t> seed;
  std::optional<Index> runs, k, epochs;
  std::optional<double> lr;

  auto* stats = app.add_subcommand("stats", "class counts and text-length histogram of a manifest");
  auto* consensus = app.add_subcommand("consensus", "resolve annotator votes into labels");
  auto* synth = app.add_subcommand("synth", "generate a synthetic corpus");
  auto* train = app.add_subcommand("train", "train with the train/val/test split protocol");
  auto* eval = app.add_subcommand("eval", "score a checkpoint on a labelled manifest");
  auto* kfold = app.add_subcommand("kfold", "k-fold cross-validation with a fixed holdout");
  auto* predict_cmd = app.add_subcommand("predict", "probabilities and labels for a manifest");
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of the model gradient");

  for (auto* sub : {stats, consensus, synth, train, eval, kfold, predict_cmd, gradcheck}) common.attach(sub);
  for (auto* sub : {stats, consensus, train, eval, kfold, predict_cmd}) {
    flag_to_key(sub, "--manifest", "data.manifest", manifest, "JSONL manifest");
  }
  for (auto* sub : {train, eval, kfold, predict_cmd}) flag_to_key(sub, "--ocr", "data.ocr", ocr, "none|sidecar|command");
  for (auto* sub : {train, kfold, gradcheck}) flag_to_key(sub, "--profile", "profile", profile, "desk|paper");
  for (auto* sub : {train, kfold}) {
    flag_to_key(sub, "--seed", "eval.base_seed", seed, "base seed");
    flag_to_key(sub, "--epochs", "train.epochs", epochs, "epoch budget");
    flag_to_key(sub, "--lr", "train.learning_rate", lr, "learning rate");
    flag_to_key(sub, "--augmentation", "data.augmentation", augmentation, "off|online|offline");
  }
  flag_to_key(train, "--runs", "eval.runs", runs, "independent runs");
  flag_to_key(kfold, "--k", "eval.k", k, "number of folds");

  bool compare_augmentation = false;
  train->add_flag("--compare-augmentation", compare_augmentation,
                  "train with and without augmentation on identical seeds and write augmentation_table.csv");
  bool plan_only = false;
  kfold->add_flag("--plan-only", plan_only, "write and print the fold plan without training");

  double threshold = 0.8;
  std::string consensus_output;
  consensus->add_option("--threshold", threshold, "agreement needed to accept a label")->check(CLI::Range(0.5, 1.0));
  consensus->add_option("--output", consensus_output, "resolved manifest path (default <out>/consensus_manifest.jsonl)");

  Index synth_n = 100;
  std::string synth_mode = "xor";
  std::uint64_t synth_seed = 0;
  synth->add_option("--n", synth_n, "number of memes (even, >= 4)");
  synth->add_option("--mode", synth_mode, "xor|easy");
  synth->add_option("--seed", synth_seed, "generator seed");

  std::string checkpoint_dir;
  for (auto* sub : {eval, predict_cmd}) sub->add_option("--checkpoint", checkpoint_dir, "checkpoint directory")->required();

  std::uint64_t gc_seed = 0;
  Index gc_batch = 2;
  GradCheckOptions gc;
  gc.max_coords_per_tensor = 24;
  gradcheck->add_option("--seed", gc_seed, "parameter and batch seed");
  gradcheck->add_option("--batch", gc_batch, "batch size");
  gradcheck->add_option("--step", gc.step, "finite-difference step");
  gradcheck->add_option("--tolerance", gc.tolerance, "maximum relative error");
  gradcheck->add_option("--coords", gc.max_coords_per_tensor, "coordinates per tensor, 0 for all");

  std::vector<std::string> argv_storage = args;
  std::vector<char*> argv;
  argv.push_back(const_cast<char*>("memeclf"));
  for (auto& a : argv_storage) argv.push_back(a.data());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    setup_logging(common.log_level);
    push_flag(common.flags, "profile", profile);
    push_flag(common.flags, "data.manifest", manifest);
    push_flag(common.flags, "data.ocr", ocr);
    push_flag(common.flags, "data.augmentation", augmentation);
    push_flag(common.flags, "eval.base_seed", seed);
    push_flag(common.flags, "eval.runs", runs);
    push_flag(common.flags, "eval.k", k);
    push_flag(common.flags, "train.epochs", epochs);
    if (lr) common.flags.emplace_back("train.learning_rate", fmt::format("{:.17g}", *lr));
    const RunConfig config = common.resolve();

    if (stats->parsed()) return cmd_stats(config);
    if (consensus->parsed()) return cmd_consensus(config, threshold, consensus_output);
    if (synth->parsed()) return cmd_synth(config, synth_n, synth_mode, synth_seed);
    if (train->parsed()) return cmd_train(config, compare_augmentation);
    if (eval->parsed()) return cmd_eval(config, checkpoint_dir);
    if (kfold->parsed()) return cmd_kfold(config, plan_only);
    if (predict_cmd->parsed()) return cmd_predict(config, checkpoint_dir);
    if (gradcheck->parsed()) return cmd_gradcheck(config, gc_seed, gc_batch, gc);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return exit_code_for(e);
  }
  return 1;
}

}  // namespace memeclf
