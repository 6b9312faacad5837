#pragma once

// The `mmt` command line. Everything lives here so tests can drive the
// commands in-process; tools/mmt.cpp only forwards argv.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>

#include "mmt/harness/compare.hpp"

namespace mmt::cli {

namespace fs = std::filesystem;

/// Exit codes.
inline constexpr int kOk = 0;
inline constexpr int kRuntimeError = 1;
inline constexpr int kUsageError = 2;

inline std::string file_hash(const std::string& path) { return hex64(fnv1a64(harness::read_text(path))); }

/// Written next to the outputs of every command. Contains no timestamps, so
/// identical invocations give identical manifests.
struct RunManifest {
  std::string command;
  std::string config_file;
  KeyValues config;
  uint64_t seed = 13;
  std::map<std::string, std::string> inputs;     // path -> hash
  std::map<std::string, std::string> artifacts;  // file name -> hash

  void add_input(const std::string& path) { inputs[path] = file_hash(path); }

  nlohmann::json to_json() const {
    return {{"command", command},     {"config_file", config_file}, {"config", config.values()},
            {"seed", std::to_string(seed)}, {"inputs", inputs},   {"artifacts", artifacts}};
  }

  /// Hashes `files` (relative to `dir`) and writes dir/manifest.json.
  void write(const fs::path& dir, const std::vector<std::string>& files, const std::string& name = "manifest.json") {
    for (const auto& f : files) artifacts[f] = file_hash((dir / f).string());
    harness::write_text_atomic((dir / name).string(), to_json().dump(2) + "\n");
  }
};

namespace detail {

inline void make_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrorKind::io, "cannot create " + dir + ": " + ec.message());
}

inline corpus::Format format_for(const std::string& path, const std::string& flag) {
  if (!flag.empty()) return corpus::parse_format(flag);
  return fs::path(path).extension() == ".jsonl" ? corpus::Format::jsonl : corpus::Format::tsv2;
}

/// "key=value" with a non-empty value.
inline std::pair<std::string, std::string> split_assignment(const std::string& s, const char* what) {
  const auto eq = s.find('=');
  if (eq == std::string::npos || eq == 0 || eq + 1 == s.size()) {
    fail(ErrorKind::config, std::string(what) + " expects key=value, got '" + s + "'");
  }
  return {s.substr(0, eq), s.substr(eq + 1)};
}

/// Non-empty trimmed items of a comma-separated list.
inline std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream is(s);
  std::string item;
  while (std::getline(is, item, ',')) {
    if (auto t = text::trim(item); !t.empty()) out.emplace_back(t);
  }
  return out;
}

inline std::vector<LangTag> store_languages(const corpus::ParallelStore& p, const corpus::MonoStore* m = nullptr) {
  std::set<LangTag> langs;
  for (const auto& d : p.directions()) {
    langs.insert(d.src);
    langs.insert(d.tgt);
  }
  if (m) {
    for (const auto& l : m->languages()) langs.insert(l);
  }
  return {langs.begin(), langs.end()};
}

struct Data {
  corpus::ParallelStore parallel;
  corpus::MonoStore mono;
  std::optional<harness::GroundTruth> truth;
  std::vector<std::string> files;
};

/// A data directory holds parallel.jsonl and optionally mono.jsonl and
/// truth.kv (synthetic data only).
inline Data load_data_dir(const std::string& dir) {
  Data d;
  const fs::path root(dir);
  const auto par = (root / "parallel.jsonl").string();
  if (!fs::exists(par)) fail(ErrorKind::config, "no parallel.jsonl in " + dir);
  d.parallel = corpus::read_store(par);
  d.files.push_back(par);
  if (const auto mono = (root / "mono.jsonl").string(); fs::exists(mono)) {
    d.mono = corpus::read_mono_store(mono);
    d.files.push_back(mono);
  }
  if (const auto truth = (root / "truth.kv").string(); fs::exists(truth)) {
    d.truth = harness::GroundTruth::from_kv(KeyValues::load(truth));
    d.files.push_back(truth);
  }
  return d;
}

struct LoadedModel {
  model::Transformer<float> model;
  tokenizer::SubwordModel tok;
  std::vector<std::string> files;
};

/// `path` is a train output directory (model.bin + tokenizer.txt) or a
/// model file, in which case `tokenizer` must be given.
inline LoadedModel load_model_arg(const std::string& path, const std::string& tokenizer) {
  std::string model_file = path, tok_file = tokenizer;
  if (fs::is_directory(path)) {
    model_file = (fs::path(path) / "model.bin").string();
    if (tok_file.empty()) tok_file = (fs::path(path) / "tokenizer.txt").string();
  }
  if (tok_file.empty()) fail(ErrorKind::config, "--tokenizer is required when --model is a file");
  for (const auto& f : {model_file, tok_file}) {
    if (!fs::exists(f)) fail(ErrorKind::config, "missing file " + f);
  }
  LoadedModel m{model::load_model<float>(model_file), tokenizer::SubwordModel::load(tok_file), {model_file, tok_file}};
  if (m.model.config().vocab_size != m.tok.vocab_size()) {
    fail(ErrorKind::config, "model vocabulary (" + std::to_string(m.model.config().vocab_size) +
                                ") does not match the tokenizer (" + std::to_string(m.tok.vocab_size()) + ")");
  }
  return m;
}

/// Experiment flags shared by `train` and `compare`. Only flags given on the
/// command line are applied, so they win over the file without masking it.
struct ConfigFlags {
  std::string config_file;
  std::string preset;
  std::vector<std::string> sets;
  std::map<std::string, std::string> values;
  std::map<std::string, CLI::Option*> options;

  void add(CLI::App* app, bool with_setting) {
    app->add_option("--config", config_file, "Key-value config file")->check(CLI::ExistingFile);
    app->add_option("--preset", preset, "Named preset applied before the config file")
        ->check(CLI::IsMember(harness::preset_names()));
    app->add_option("--set", sets, "Override any config key (key=value), repeatable");
    auto opt = [&](const std::string& flag, const std::string& key, const std::string& help) {
      options[key] = app->add_option(flag, values[key], help);
    };
    if (with_setting) opt("--setting", "setting", "base | bt | btrec");
    opt("--langs", "languages", "Comma-separated language codes");
    opt("--exclude", "exclusions", "Excluded pairs: none | a-b,c-d");
    opt("--epochs", "epochs", "Training epochs");
    opt("--lr", "optim.lr", "Peak learning rate");
    opt("--warmup", "schedule.warmup_steps", "Warmup steps");
    opt("--batch-size", "train.batch_size", "Sentences per micro-batch");
    opt("--accumulation", "train.accumulation", "Micro-batches per optimizer step");
    opt("--patience", "train.patience_evals", "Evaluations without improvement before stopping");
    opt("--eval-every", "train.eval_every_steps", "Optimizer steps between dev evaluations");
    opt("--num-bt", "bt.num_bt", "Sentences per language per backtranslation round");
    opt("--bt-decay", "bt.decay", "Per-round num_bt list, last entry repeats");
    opt("--bt-start-epoch", "bt.start_epoch", "First epoch (1-based) with a backtranslation round");
    opt("--bt-temperature", "bt.temperature", "Sampling temperature for backtranslation");
    opt("--num-rec", "rec.num_rec", "Sentences per language per reconstruction round");
    opt("--seed", "seed", "Seed for all randomness (default 13)");
    opt("--workers", "workers", "Generation and evaluation threads");
  }

  /// defaults -> preset -> file -> flags.
  harness::ExperimentConfig resolve() const {
    harness::ExperimentConfig cfg;
    KeyValues file;
    if (!config_file.empty()) file = KeyValues::load(config_file);
    std::string preset_name = preset.empty() ? file.get("preset", "") : preset;
    if (!preset_name.empty()) harness::apply_preset(cfg, preset_name);
    const auto known = cfg.to_kv();
    KeyValues from_file;
    for (const auto& [k, v] : file.values()) {
      if (k == "preset") continue;
      if (!known.has(k)) fail(ErrorKind::config, config_file + ": unknown key '" + k + "'");
      from_file.set(k, v);
    }
    cfg.read(from_file);
    KeyValues flags;
    for (const auto& [key, o] : options) {
      if (o->count()) flags.set(key, values.at(key));
    }
    for (const auto& s : sets) {
      auto [k, v] = split_assignment(s, "--set");
      if (!known.has(k)) fail(ErrorKind::config, "--set: unknown key '" + k + "'");
      flags.set(k, v);
    }
    cfg.read(flags);
    return cfg;
  }
};

/// Fills what only the data can tell: languages and vocabulary size.
inline void complete_config(harness::ExperimentConfig& cfg, const Data& data, const tokenizer::SubwordModel& tok) {
  if (cfg.languages.empty()) cfg.languages = store_languages(data.parallel);
  if (cfg.model.vocab_size == 0) cfg.model.vocab_size = tok.vocab_size();
  cfg.validate();
  cfg.model.validate();
}

inline std::string resolve_tokenizer(const std::string& flag, const std::string& data_dir) {
  if (!flag.empty()) return flag;
  const auto p = (fs::path(data_dir) / "tokenizer.txt").string();
  if (!fs::exists(p)) fail(ErrorKind::config, "--tokenizer not given and " + p + " does not exist");
  return p;
}

inline std::string one_line(std::string s) {
  for (auto& c : s) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  while (!s.empty() && s.back() == ' ') s.pop_back();
  return s;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Commands

struct DataPrepareArgs {
  std::vector<std::string> parallel, mono;
  std::string format, out;
  size_t max_len = 50, min_len = 2, dev = 0, test = 0, mono_dev = 0;
  bool no_dedup = false, no_stratify = false;
  uint64_t seed = 13;
};

inline int cmd_data_prepare(const DataPrepareArgs& a, std::ostream& out) {
  corpus::ParallelStore raw;
  RunManifest m;
  m.command = "data prepare";
  m.seed = a.seed;
  size_t malformed = 0;
  for (const auto& spec : a.parallel) {
    auto [dir, path] = detail::split_assignment(spec, "--parallel");
    if (!fs::exists(path)) fail(ErrorKind::config, "missing file " + path);
    auto r = corpus::load_parallel(path, Direction::parse(dir), detail::format_for(path, a.format),
                                   fs::path(path).stem().string());
    out << path << ": " << r.store.size() << " pairs, " << r.malformed << " malformed\n";
    malformed += r.malformed;
    for (const auto& d : r.store.directions()) {
      for (const auto& p : r.store.pairs(d)) raw.add(p);
    }
    m.add_input(path);
  }
  corpus::MonoStore mono_raw;
  for (const auto& spec : a.mono) {
    auto [lang, path] = detail::split_assignment(spec, "--mono");
    if (!fs::exists(path)) fail(ErrorKind::config, "missing file " + path);
    size_t bad = 0;
    auto s = corpus::load_mono(path, LangTag(lang), &bad);
    out << path << ": " << s.size() << " sentences, " << bad << " malformed\n";
    for (const auto& t : s.sentences(LangTag(lang))) mono_raw.add(LangTag(lang), t);
    m.add_input(path);
  }
  if (raw.empty()) fail(ErrorKind::config, "data prepare needs at least one --parallel file");

  corpus::CleaningConfig cc;
  cc.max_len = a.max_len;
  cc.min_len = a.min_len;
  cc.dedup = !a.no_dedup;
  cc.validate();
  auto cleaned = corpus::clean(raw, cc);
  corpus::SplitSpec ss{a.dev, a.test, a.seed, !a.no_stratify};
  const auto store = corpus::split(cleaned.store, ss);
  const auto mono = corpus::split_mono(corpus::clean_mono(mono_raw, cc), a.mono_dev, a.seed);

  detail::make_dir(a.out);
  const fs::path dir(a.out);
  corpus::save_store(store, (dir / "parallel.jsonl").string());
  std::vector<std::string> files = {"parallel.jsonl", "clean_report.csv", "stats.txt", "stats.csv"};
  if (mono.size()) {
    corpus::save_mono_store(mono, (dir / "mono.jsonl").string());
    files.push_back("mono.jsonl");
  }
  harness::write_text_atomic((dir / "clean_report.csv").string(), cleaned.report.to_csv());
  const auto table = corpus::stats(store, corpus::Split::train);
  harness::write_text_atomic((dir / "stats.txt").string(), table.to_text());
  harness::write_text_atomic((dir / "stats.csv").string(), table.to_csv());

  m.config.set("max_len", a.max_len);
  m.config.set("min_len", a.min_len);
  m.config.set("dedup", cc.dedup);
  m.config.set("dev", a.dev);
  m.config.set("test", a.test);
  m.config.set("mono_dev", a.mono_dev);
  m.config.set("stratify", !a.no_stratify);
  m.config.set("opus_confidence_threshold", cc.opus_confidence_threshold);
  m.write(dir, files);
  out << cleaned.report.to_text() << "malformed lines " << malformed << "\n" << table.to_text();
  return kOk;
}

struct DataStatsArgs {
  std::string store, split, out;
  bool csv = false;
};

inline int cmd_data_stats(const DataStatsArgs& a, std::ostream& out) {
  const auto store = corpus::read_store(a.store);
  std::optional<corpus::Split> split;
  if (!a.split.empty() && a.split != "all") split = corpus::parse_split(a.split);
  const auto table = corpus::stats(store, split);
  out << (a.csv ? table.to_csv() : table.to_text());
  if (!a.out.empty()) {
    detail::make_dir(a.out);
    harness::write_text_atomic((fs::path(a.out) / "stats.txt").string(), table.to_text());
    harness::write_text_atomic((fs::path(a.out) / "stats.csv").string(), table.to_csv());
    RunManifest m;
    m.command = "data stats";
    m.add_input(a.store);
    m.config.set("split", a.split.empty() ? std::string("all") : a.split);
    m.write(a.out, {"stats.txt", "stats.csv"});
  }
  return kOk;
}

struct DataSplitArgs {
  std::string store, out;
  size_t dev = 0, test = 0;
  bool no_stratify = false;
  uint64_t seed = 13;
};

inline int cmd_data_split(const DataSplitArgs& a, std::ostream& out) {
  const auto store = corpus::split(corpus::read_store(a.store), {a.dev, a.test, a.seed, !a.no_stratify});
  detail::make_dir(a.out);
  corpus::save_store(store, (fs::path(a.out) / "parallel.jsonl").string());
  RunManifest m;
  m.command = "data split";
  m.seed = a.seed;
  m.add_input(a.store);
  m.config.set("dev", a.dev);
  m.config.set("test", a.test);
  m.config.set("stratify", !a.no_stratify);
  m.write(a.out, {"parallel.jsonl"});
  out << "train " << store.count(corpus::Split::train) << ", dev " << store.count(corpus::Split::dev) << ", test "
      << store.count(corpus::Split::test) << "\n";
  return kOk;
}

struct TokenizerTrainArgs {
  std::string data, langs, out;
  size_t vocab = 8000;
};

inline int cmd_tokenizer_train(const TokenizerTrainArgs& a, std::ostream& out) {
  const auto data = detail::load_data_dir(a.data);
  // Training splits only, so dev and test text never shapes the vocabulary.
  std::vector<std::string> corpus;
  for (const auto& d : data.parallel.directions()) {
    for (const auto& p : data.parallel.pairs(d, corpus::Split::train)) corpus.push_back(p.src_text);
  }
  for (const auto& l : data.mono.languages()) {
    for (const auto& s : data.mono.sentences(l, corpus::Split::train)) corpus.push_back(s);
  }
  const auto langs = a.langs.empty() ? detail::store_languages(data.parallel, &data.mono) : parse_lang_list(a.langs);
  const auto tok = tokenizer::SubwordModel::train(corpus, a.vocab, langs);
  detail::make_dir(a.out);
  tok.save((fs::path(a.out) / "tokenizer.txt").string());
  RunManifest m;
  m.command = "tokenizer train";
  for (const auto& f : data.files) m.add_input(f);
  m.config.set("vocab", a.vocab);
  std::string codes;
  for (const auto& l : langs) codes += (codes.empty() ? "" : ",") + l.code();
  m.config.set("languages", codes);
  m.write(a.out, {"tokenizer.txt"});
  out << "vocabulary " << tok.vocab_size() << " pieces from " << corpus.size() << " sentences\n";
  return kOk;
}

struct TrainArgs {
  detail::ConfigFlags flags;
  std::string data, tokenizer, out;
  bool resume = false, print_config = false, quiet = false;
  size_t checkpoint_every = 0;
};

inline int cmd_train(const TrainArgs& a, std::ostream& out, std::ostream& err) {
  auto cfg = a.flags.resolve();
  if (a.print_config) {
    out << cfg.to_kv().to_text();
    out << "# effective_batch = " << cfg.batch_size * cfg.accumulation << "\n";
    out << "# bt:rec = " << cfg.bt.num_bt << ":" << cfg.rec.num_rec << "\n";
    if (cfg.languages.empty()) {
      out << "# directions = (languages taken from --data)\n";
    } else {
      out << "# directions = " << cfg.directions().size() << "\n";
    }
    return kOk;
  }
  if (a.data.empty() || a.out.empty()) fail(ErrorKind::config, "train needs --data and --out");
  const auto data = detail::load_data_dir(a.data);
  const auto tok_path = detail::resolve_tokenizer(a.tokenizer, a.data);
  const auto tok = tokenizer::SubwordModel::load(tok_path);
  if (a.checkpoint_every) cfg.checkpoint_every_steps = a.checkpoint_every;
  detail::complete_config(cfg, data, tok);

  detail::make_dir(a.out);
  const fs::path dir(a.out);
  const auto log_path = (dir / "runlog.jsonl").string();
  if (!a.resume) std::filesystem::remove(log_path);
  harness::RunOptions ro;
  ro.checkpoint_dir = (dir / "checkpoint").string();
  ro.resume = a.resume;
  ro.log_path = log_path;
  ro.audit_path = (dir / "audit.jsonl").string();
  if (!a.resume) std::filesystem::remove(ro.audit_path);
  if (!a.quiet) ro.progress = &err;
  auto result = harness::run_experiment(cfg, data.parallel, data.mono, tok, ro);

  KeyValues extra;
  extra.set("tokenizer_hash", tok.hash());
  extra.set("config_hash", cfg.hash());
  model::save_model(result.best, (dir / "model.bin").string(), extra);
  model::save_model(result.last, (dir / "last.bin").string(), extra);
  tok.save((dir / "tokenizer.txt").string());
  cfg.to_kv().save((dir / "config.kv").string());

  RunManifest m;
  m.command = "train";
  m.config_file = a.flags.config_file;
  m.config = cfg.to_kv();
  m.seed = cfg.seed;
  for (const auto& f : data.files) m.add_input(f);
  m.add_input(tok_path);
  m.write(dir, {"model.bin", "last.bin", "tokenizer.txt", "config.kv"});
  out << "steps " << result.steps << ", best dev loss " << result.best_dev_loss
      << (result.early_stopped ? ", stopped early" : "") << "\n";
  for (const auto& w : result.warnings) err << "warning: " << w << "\n";
  return kOk;
}

struct TranslateArgs {
  std::string model, tokenizer, input = "-", output = "-", tgt, mode = "greedy";
  size_t max_new = 0, beam = 4, workers = 1;
  double temperature = 1.0;
  uint64_t seed = 13;
};

inline int cmd_translate(const TranslateArgs& a, std::istream& in, std::ostream& out) {
  const auto m = detail::load_model_arg(a.model, a.tokenizer);
  decode::DecodeConfig dc;
  dc.mode = decode::parse_mode(a.mode);
  dc.temperature = a.temperature;
  dc.beam_size = a.beam;
  dc.max_new_tokens = a.max_new ? a.max_new : m.model.config().max_positions;
  dc.validate();
  std::string prefix;
  if (!a.tgt.empty()) {
    const LangTag tgt(a.tgt);
    if (m.tok.tag_id(tgt) < 0) fail(ErrorKind::config, "the tokenizer has no tag for " + tgt.code());
    prefix = tgt.token() + " ";
  }
  std::vector<std::string> inputs;
  auto read_lines = [&](std::istream& s) {
    std::string line;
    while (std::getline(s, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      inputs.push_back(prefix + line);
    }
  };
  if (a.input == "-") {
    read_lines(in);
  } else {
    std::ifstream f(a.input, std::ios::binary);
    if (!f) fail(ErrorKind::io, "cannot read " + a.input);
    read_lines(f);
  }
  const auto gens = decode::generate_batch(m.model, m.tok, inputs, dc, a.seed, a.workers);
  std::string text;
  for (size_t i = 0; i < gens.size(); ++i) {
    if (!gens[i].error.empty()) fail(ErrorKind::runtime, "line " + std::to_string(i + 1) + ": " + gens[i].error);
    text += gens[i].text + "\n";
  }
  if (a.output == "-") {
    out << text;
    return kOk;
  }
  harness::write_text_atomic(a.output, text);
  RunManifest man;
  man.command = "translate";
  man.seed = a.seed;
  for (const auto& f : m.files) man.add_input(f);
  if (a.input != "-") man.add_input(a.input);
  man.config.set("target", a.tgt);
  man.config.set("mode", decode::mode_name(dc.mode));
  man.config.set("temperature", dc.temperature);
  man.config.set("beam_size", dc.beam_size);
  man.config.set("max_new_tokens", dc.max_new_tokens);
  const fs::path outp(a.output);
  man.write(outp.parent_path().empty() ? fs::path(".") : outp.parent_path(), {outp.filename().string()},
            outp.filename().string() + ".manifest.json");
  return kOk;
}

struct EvaluateArgs {
  std::string model, tokenizer, test, direction, format, store, split = "test", directions, truth, out;
  size_t limit = 0, workers = 1;
};

inline int cmd_evaluate(const EvaluateArgs& a, std::ostream& out) {
  const auto m = detail::load_model_arg(a.model, a.tokenizer);
  corpus::ParallelStore store;
  std::vector<Direction> dirs;
  RunManifest man;
  man.command = "evaluate";
  corpus::Split split = corpus::Split::test;
  if (!a.test.empty()) {
    if (a.direction.empty()) fail(ErrorKind::config, "--test needs --direction");
    const auto d = Direction::parse(a.direction);
    for (const auto& p : corpus::load_parallel(a.test, d, detail::format_for(a.test, a.format)).store.pairs(d)) {
      store.add(p, corpus::Split::test);
    }
    dirs.push_back(d);
    man.add_input(a.test);
  } else if (!a.store.empty()) {
    store = corpus::read_store(a.store);
    split = corpus::parse_split(a.split);
    if (!a.directions.empty()) {
      for (const auto& s : detail::split_csv(a.directions)) dirs.push_back(Direction::parse(s));
    } else {
      dirs = store.directions();
    }
    man.add_input(a.store);
  } else {
    fail(ErrorKind::config, "evaluate needs --test or --store");
  }
  std::optional<harness::GroundTruth> truth;
  if (!a.truth.empty()) {
    truth = harness::GroundTruth::from_kv(KeyValues::load(a.truth));
    man.add_input(a.truth);
  }
  for (const auto& f : m.files) man.add_input(f);

  std::vector<metrics::EvalReport> reports;
  std::string hyps;
  const auto translate = metrics::greedy_translator(m.model, m.tok, a.workers, m.model.config().max_positions);
  for (const auto& d : dirs) {
    auto pairs = store.pairs(d, split);
    if (pairs.empty()) continue;
    if (a.limit && pairs.size() > a.limit) pairs.resize(a.limit);
    auto ev = metrics::evaluate_direction(translate, pairs, m.tok);
    if (truth) ev.report.off_target = harness::off_target_rate(ev.hypotheses, d.tgt, *truth);
    for (const auto& h : ev.hypotheses) hyps += d.str() + "\t" + h + "\n";
    reports.push_back(std::move(ev.report));
  }
  if (reports.empty()) fail(ErrorKind::insufficient_data, "no pairs to evaluate");

  const std::string dir = a.out.empty() ? (fs::is_directory(a.model) ? a.model : ".") : a.out;
  detail::make_dir(dir);
  const fs::path root(dir);
  harness::write_text_atomic((root / "report.jsonl").string(), metrics::reports_to_jsonl(reports));
  harness::write_text_atomic((root / "report.csv").string(), metrics::reports_to_csv(reports));
  harness::write_text_atomic((root / "report.txt").string(), metrics::reports_to_text(reports));
  harness::write_text_atomic((root / "hypotheses.tsv").string(), hyps);
  man.config.set("split", corpus::split_name(split));
  man.config.set("limit", a.limit);
  man.write(root, {"report.jsonl", "report.csv", "report.txt", "hypotheses.tsv"}, "eval_manifest.json");
  out << metrics::reports_to_text(reports);
  return kOk;
}

struct SynthArgs {
  std::string langs, low_resource, out;
  harness::SyntheticOptions opt;
  size_t concepts = 200;
};

inline int cmd_synth_generate(const SynthArgs& a, std::ostream& out) {
  auto opt = a.opt;
  if (!a.low_resource.empty()) opt.low_resource = parse_lang_list(a.low_resource);
  const auto langs = parse_lang_list(a.langs);
  const auto data = harness::gen_synthetic(harness::default_specs(langs, a.concepts, opt.seed), opt);
  detail::make_dir(a.out);
  const fs::path dir(a.out);
  corpus::save_store(data.parallel, (dir / "parallel.jsonl").string());
  corpus::save_mono_store(data.mono, (dir / "mono.jsonl").string());
  data.truth.to_kv().save((dir / "truth.kv").string());
  RunManifest m;
  m.command = "synth generate";
  m.seed = opt.seed;
  m.config.set("languages", a.langs);
  m.config.set("low_resource", a.low_resource);
  m.config.set("concepts", a.concepts);
  m.config.set("n_parallel", opt.n_parallel_per_direction);
  m.config.set("n_mono", opt.n_mono_per_lang);
  m.config.set("dev", opt.dev_per_direction);
  m.config.set("test", opt.test_per_direction);
  m.config.set("min_len", opt.min_len);
  m.config.set("max_len", opt.max_len);
  m.config.set("zipf", opt.zipf);
  m.config.set("low_resource_divisor", opt.low_resource_divisor);
  m.write(dir, {"parallel.jsonl", "mono.jsonl", "truth.kv"});
  out << corpus::stats(data.parallel, corpus::Split::train).to_text();
  return kOk;
}

struct CompareArgs {
  detail::ConfigFlags flags;
  std::string data, tokenizer, truth, out, settings = "base,bt,btrec", seeds, baseline = "base";
  size_t test_limit = 0;
  bool quiet = false;
};

inline const std::vector<std::string>& metric_names() {
  static const std::vector<std::string> names = {"spBLEU", "spCHRF", "spTER", "off_target"};
  return names;
}

/// One line per (setting, seed, direction) report.
inline std::string results_to_jsonl(const harness::Comparison& cmp) {
  std::string s;
  for (const auto& r : cmp.runs) {
    for (const auto& rep : r.reports) {
      nlohmann::json j = {{"setting", objectives::setting_name(r.setting)},
                          {"seed", std::to_string(r.seed)},
                          {"report", rep.to_json()}};
      s += j.dump() + "\n";
    }
  }
  return s;
}

inline int cmd_compare(const CompareArgs& a, std::ostream& out, std::ostream& err) {
  auto base = a.flags.resolve();
  const auto data = detail::load_data_dir(a.data);
  const auto tok_path = detail::resolve_tokenizer(a.tokenizer, a.data);
  const auto tok = tokenizer::SubwordModel::load(tok_path);
  detail::complete_config(base, data, tok);
  std::vector<harness::ExperimentConfig> cfgs;
  for (const auto& s : detail::split_csv(a.settings)) {
    auto c = base;
    c.setting = objectives::parse_setting(s);
    c.validate();
    cfgs.push_back(c);
  }
  harness::CompareOptions co;
  co.seeds.clear();
  if (a.seeds.empty()) {
    co.seeds.push_back(base.seed);
  } else {
    for (const auto& s : detail::split_csv(a.seeds)) {
      KeyValues kv;
      kv.set("seed", s);
      harness::ExperimentConfig tmp;
      tmp.read(kv);
      co.seeds.push_back(tmp.seed);
    }
  }
  co.test_limit = a.test_limit;
  if (!a.quiet) co.progress = &err;
  std::optional<harness::GroundTruth> truth = data.truth;
  if (!a.truth.empty()) truth = harness::GroundTruth::from_kv(KeyValues::load(a.truth));
  const auto cmp = harness::compare_settings(cfgs, data.parallel, data.mono, tok, truth ? &*truth : nullptr, co);

  detail::make_dir(a.out);
  const fs::path dir(a.out);
  std::vector<std::string> files = {"results.jsonl"};
  harness::write_text_atomic((dir / "results.jsonl").string(), results_to_jsonl(cmp));
  for (const auto& metric : metric_names()) {
    if (metric == "off_target" && !truth) continue;
    const auto t = cmp.table_for(metric);
    harness::write_text_atomic((dir / ("table." + metric + ".txt")).string(), t.to_text(a.baseline));
    harness::write_text_atomic((dir / ("table." + metric + ".csv")).string(), t.to_csv());
    files.push_back("table." + metric + ".txt");
    files.push_back("table." + metric + ".csv");
  }
  for (const auto& r : cmp.runs) {
    const auto name = std::string("runlog.") + objectives::setting_name(r.setting) + "." + std::to_string(r.seed) + ".jsonl";
    harness::write_text_atomic((dir / name).string(), r.run.log.to_jsonl());
  }
  RunManifest m;
  m.command = "compare";
  m.config_file = a.flags.config_file;
  m.config = base.to_kv();
  m.config.set("setting", a.settings);
  std::string seeds;
  for (auto s : co.seeds) seeds += (seeds.empty() ? "" : ",") + std::to_string(s);
  m.config.set("seeds", seeds);
  m.config.set("test_limit", a.test_limit);
  m.seed = base.seed;
  for (const auto& f : data.files) m.add_input(f);
  m.add_input(tok_path);
  m.write(dir, files);
  out << cmp.table.to_text(a.baseline);
  return kOk;
}

struct ReportArgs {
  std::string input, metric = "spBLEU", baseline, out, title;
};

/// Reads compare results or evaluate reports; never recomputes a metric.
inline int cmd_report(const ReportArgs& a, std::ostream& out) {
  std::string path = a.input;
  if (fs::is_directory(path)) {
    for (const char* name : {"results.jsonl", "report.jsonl"}) {
      if (fs::exists(fs::path(path) / name)) {
        path = (fs::path(path) / name).string();
        break;
      }
    }
    if (fs::is_directory(path)) fail(ErrorKind::config, "no results.jsonl or report.jsonl in " + a.input);
  }
  std::map<std::string, std::vector<metrics::EvalReport>> columns;
  std::istringstream is(harness::read_text(path));
  std::string line;
  while (std::getline(is, line)) {
    if (text::trim(line).empty()) continue;
    auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) fail(ErrorKind::format, path + ": bad json line");
    if (j.contains("report")) {
      columns[j.value("setting", std::string("model"))].push_back(metrics::EvalReport::from_json(j["report"]));
    } else {
      columns["model"].push_back(metrics::EvalReport::from_json(j));
    }
  }
  if (columns.empty()) fail(ErrorKind::insufficient_data, path + " holds no reports");
  std::vector<std::pair<std::string, std::vector<metrics::EvalReport>>> runs;
  // Settings in their usual order, anything else after.
  for (const char* s : {"base", "bt", "btrec"}) {
    if (auto it = columns.find(s); it != columns.end()) {
      runs.emplace_back(it->first, it->second);
      columns.erase(it);
    }
  }
  for (auto& [k, v] : columns) runs.emplace_back(k, v);
  const auto table = harness::table_from_reports(runs, a.metric);
  const std::string title = a.title.empty() ? a.metric + " per direction" : a.title;
  const std::string dir = a.out.empty() ? fs::path(path).parent_path().string() : a.out;
  detail::make_dir(dir.empty() ? "." : dir);
  const fs::path root(dir.empty() ? "." : dir);
  const auto stem = "report." + a.metric;
  harness::write_text_atomic((root / (stem + ".txt")).string(), table.to_text(a.baseline));
  harness::write_text_atomic((root / (stem + ".csv")).string(), table.to_csv());
  harness::write_text_atomic((root / (stem + ".svg")).string(), table.to_svg(title));
  RunManifest m;
  m.command = "report";
  m.add_input(path);
  m.config.set("metric", a.metric);
  m.config.set("baseline", a.baseline);
  m.write(root, {stem + ".txt", stem + ".csv", stem + ".svg"}, stem + ".manifest.json");
  out << table.to_text(a.baseline);
  return kOk;
}

// ---------------------------------------------------------------------------

/// Parses argv and runs one command. Returns the process exit code; errors
/// print a single "error: <class>: message" line to `err`.
inline int run(int argc, const char* const* argv, std::istream& in, std::ostream& out, std::ostream& err) {
  CLI::App app("Multilingual translation training and evaluation", "mmt");
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every command");

  auto* data = app.add_subcommand("data", "Ingest, clean, split and count corpora")->require_subcommand(1);
  DataPrepareArgs prep;
  auto* prepare = data->add_subcommand("prepare", "Load, clean and split raw files into a data directory");
  prepare->add_option("--parallel", prep.parallel, "src-tgt=path (tsv2 or jsonl), repeatable")->required();
  prepare->add_option("--mono", prep.mono, "lang=path, one sentence per line, repeatable");
  prepare->add_option("--format", prep.format, "tsv2 | jsonl (default: by extension)");
  prepare->add_option("--max-len", prep.max_len, "Maximum whitespace tokens per side")->capture_default_str();
  prepare->add_option("--min-len", prep.min_len, "Minimum whitespace tokens per side")->capture_default_str();
  prepare->add_flag("--no-dedup", prep.no_dedup, "Keep exact duplicates");
  prepare->add_option("--dev", prep.dev, "Dev pairs per direction")->capture_default_str();
  prepare->add_option("--test", prep.test, "Test pairs per direction")->capture_default_str();
  prepare->add_option("--mono-dev", prep.mono_dev, "Dev sentences per language")->capture_default_str();
  prepare->add_flag("--no-stratify", prep.no_stratify, "Draw dev/test without balancing domains");
  prepare->add_option("--seed", prep.seed, "Split seed")->capture_default_str();
  prepare->add_option("--out", prep.out, "Output directory")->required();

  DataStatsArgs st;
  auto* stats = data->add_subcommand("stats", "Per-direction pair counts");
  stats->add_option("--store", st.store, "parallel.jsonl")->required()->check(CLI::ExistingFile);
  stats->add_option("--split", st.split, "train | dev | test | all");
  stats->add_flag("--csv", st.csv, "Print CSV instead of the aligned table");
  stats->add_option("--out", st.out, "Also write stats files here");

  DataSplitArgs sp;
  auto* split = data->add_subcommand("split", "Reassign dev/test/train labels");
  split->add_option("--store", sp.store, "parallel.jsonl")->required()->check(CLI::ExistingFile);
  split->add_option("--dev", sp.dev, "Dev pairs per direction");
  split->add_option("--test", sp.test, "Test pairs per direction");
  split->add_flag("--no-stratify", sp.no_stratify, "Draw without balancing domains");
  split->add_option("--seed", sp.seed, "Split seed")->capture_default_str();
  split->add_option("--out", sp.out, "Output directory")->required();

  auto* tokenizer = app.add_subcommand("tokenizer", "Subword tokenizer")->require_subcommand(1);
  TokenizerTrainArgs tt;
  auto* tok_train = tokenizer->add_subcommand("train", "Learn BPE merges from the training split");
  tok_train->add_option("--data", tt.data, "Data directory")->required()->check(CLI::ExistingDirectory);
  tok_train->add_option("--vocab", tt.vocab, "Target vocabulary size")->capture_default_str();
  tok_train->add_option("--langs", tt.langs, "Language tags to reserve (default: all in the data)");
  tok_train->add_option("--out", tt.out, "Output directory")->required();

  TrainArgs tr;
  auto* train = app.add_subcommand("train", "Train one model");
  tr.flags.add(train, true);
  train->add_option("--data", tr.data, "Data directory")->check(CLI::ExistingDirectory);
  train->add_option("--tokenizer", tr.tokenizer, "tokenizer.txt (default: <data>/tokenizer.txt)")->check(CLI::ExistingFile);
  train->add_option("--out", tr.out, "Output directory");
  train->add_option("--checkpoint-every", tr.checkpoint_every, "Also checkpoint every N optimizer steps");
  train->add_flag("--resume", tr.resume, "Continue from <out>/checkpoint");
  train->add_flag("--print-config", tr.print_config, "Print the resolved config and exit");
  train->add_flag("--quiet", tr.quiet, "No progress output");

  TranslateArgs tl;
  auto* translate = app.add_subcommand("translate", "Translate lines from a file or stdin");
  translate->add_option("--model", tl.model, "Train output directory or model file")->required()->check(CLI::ExistingPath);
  translate->add_option("--tokenizer", tl.tokenizer, "tokenizer.txt when --model is a file")->check(CLI::ExistingFile);
  translate->add_option("--input", tl.input, "Input file, - for stdin")->capture_default_str();
  translate->add_option("--output", tl.output, "Output file, - for stdout")->capture_default_str();
  translate->add_option("--tgt", tl.tgt, "Target language (omit if lines already carry a tag)");
  translate->add_option("--mode", tl.mode, "greedy | sample | beam")->capture_default_str();
  translate->add_option("--temperature", tl.temperature, "Sampling temperature");
  translate->add_option("--beam", tl.beam, "Beam size");
  translate->add_option("--max-new", tl.max_new, "Token budget (default: model max_positions)");
  translate->add_option("--seed", tl.seed, "Sampling seed")->capture_default_str();
  translate->add_option("--workers", tl.workers, "Threads")->capture_default_str();

  EvaluateArgs ev;
  auto* evaluate = app.add_subcommand("evaluate", "Score a model on test pairs");
  evaluate->add_option("--model", ev.model, "Train output directory or model file")->required()->check(CLI::ExistingPath);
  evaluate->add_option("--tokenizer", ev.tokenizer, "tokenizer.txt when --model is a file")->check(CLI::ExistingFile);
  evaluate->add_option("--test", ev.test, "tsv2/jsonl test file")->check(CLI::ExistingFile);
  evaluate->add_option("--direction", ev.direction, "Direction of --test, e.g. sy1-sy2");
  evaluate->add_option("--format", ev.format, "tsv2 | jsonl (default: by extension)");
  evaluate->add_option("--store", ev.store, "parallel.jsonl to evaluate by split")->check(CLI::ExistingFile);
  evaluate->add_option("--split", ev.split, "Split of --store")->capture_default_str();
  evaluate->add_option("--directions", ev.directions, "Subset of --store directions, comma-separated");
  evaluate->add_option("--truth", ev.truth, "truth.kv of synthetic data, enables off-target rates")->check(CLI::ExistingFile);
  evaluate->add_option("--limit", ev.limit, "At most N pairs per direction");
  evaluate->add_option("--workers", ev.workers, "Threads")->capture_default_str();
  evaluate->add_option("--out", ev.out, "Output directory (default: the model directory)");

  auto* synth = app.add_subcommand("synth", "Synthetic languages")->require_subcommand(1);
  SynthArgs sy;
  auto* generate = synth->add_subcommand("generate", "Write synthetic stores and their ground truth");
  generate->add_option("--langs", sy.langs, "Codes, e.g. sy1,sy2,sy3,sy4")->required();
  generate->add_option("--low-resource", sy.low_resource, "Languages with reduced parallel data");
  generate->add_option("--low-resource-divisor", sy.opt.low_resource_divisor, "Parallel data divisor")->capture_default_str();
  generate->add_option("--concepts", sy.concepts, "Concept vocabulary size")->capture_default_str();
  generate->add_option("--n-parallel", sy.opt.n_parallel_per_direction, "Training pairs per direction")->capture_default_str();
  generate->add_option("--n-mono", sy.opt.n_mono_per_lang, "Monolingual sentences per language")->capture_default_str();
  generate->add_option("--dev", sy.opt.dev_per_direction, "Dev pairs per direction")->capture_default_str();
  generate->add_option("--test", sy.opt.test_per_direction, "Test pairs per direction")->capture_default_str();
  generate->add_option("--min-len", sy.opt.min_len, "Shortest sentence in concepts")->capture_default_str();
  generate->add_option("--max-len", sy.opt.max_len, "Longest sentence in concepts")->capture_default_str();
  generate->add_option("--zipf", sy.opt.zipf, "Concept frequency exponent, 0 = uniform")->capture_default_str();
  generate->add_option("--seed", sy.opt.seed, "Seed")->capture_default_str();
  generate->add_option("--out", sy.out, "Output directory")->required();

  CompareArgs cm;
  auto* compare = app.add_subcommand("compare", "Train and score several settings over seeds");
  cm.flags.add(compare, false);
  compare->add_option("--data", cm.data, "Data directory")->required()->check(CLI::ExistingDirectory);
  compare->add_option("--tokenizer", cm.tokenizer, "tokenizer.txt (default: <data>/tokenizer.txt)")->check(CLI::ExistingFile);
  compare->add_option("--settings", cm.settings, "Comma-separated settings")->capture_default_str();
  compare->add_option("--seeds", cm.seeds, "Comma-separated seeds (default: --seed)");
  compare->add_option("--truth", cm.truth, "truth.kv (default: <data>/truth.kv if present)")->check(CLI::ExistingFile);
  compare->add_option("--test-limit", cm.test_limit, "At most N test pairs per direction");
  compare->add_option("--baseline", cm.baseline, "Column shown in parentheses")->capture_default_str();
  compare->add_option("--out", cm.out, "Output directory")->required();
  compare->add_flag("--quiet", cm.quiet, "No progress output");

  ReportArgs rp;
  auto* report = app.add_subcommand("report", "Tables and an SVG chart from saved results");
  report->add_option("--input", rp.input, "results.jsonl, report.jsonl or a directory holding one")
      ->required()
      ->check(CLI::ExistingPath);
  report->add_option("--metric", rp.metric, "spBLEU | spCHRF | spTER | off_target")
      ->capture_default_str()
      ->check(CLI::IsMember(metric_names()));
  report->add_option("--baseline", rp.baseline, "Column shown in parentheses");
  report->add_option("--title", rp.title, "Chart title");
  report->add_option("--out", rp.out, "Output directory (default: next to the input)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return kOk;
    }
    err << "error: usage_error: " << detail::one_line(e.what()) << "\n";
    return kUsageError;
  }

  try {
    if (*prepare) return cmd_data_prepare(prep, out);
    if (*stats) return cmd_data_stats(st, out);
    if (*split) return cmd_data_split(sp, out);
    if (*tok_train) return cmd_tokenizer_train(tt, out);
    if (*train) return cmd_train(tr, out, err);
    if (*translate) return cmd_translate(tl, in, out);
    if (*evaluate) return cmd_evaluate(ev, out);
    if (*generate) return cmd_synth_generate(sy, out);
    if (*compare) return cmd_compare(cm, out, err);
    if (*report) return cmd_report(rp, out);
  } catch (const Error& e) {
    err << "error: " << e.kind_name() << ": " << detail::one_line(e.what()) << "\n";
    return e.kind() == ErrorKind::config ? kUsageError : kRuntimeError;
  } catch (const std::exception& e) {
    err << "error: runtime_error: " << detail::one_line(e.what()) << "\n";
    return kRuntimeError;
  }
  err << "error: usage_error: no command\n";
  return kUsageError;
}

}  // namespace mmt::cli
