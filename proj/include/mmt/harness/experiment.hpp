#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mmt/core/error.hpp"
#include "mmt/core/hash.hpp"
#include "mmt/core/kv.hpp"
#include "mmt/core/lang.hpp"
#include "mmt/core/parallel.hpp"
#include "mmt/core/rng.hpp"
#include "mmt/corpus/corpus.hpp"
#include "mmt/model/transformer.hpp"
#include "mmt/objectives/objectives.hpp"
#include "mmt/optim/adamw.hpp"
#include "mmt/tokenizer/bpe.hpp"

namespace mmt::harness {

using objectives::Exclusion;
using objectives::Setting;

// ---------------------------------------------------------------------------
// Configuration

inline std::string exclusions_str(const std::vector<Exclusion>& ex) {
  if (ex.empty()) return "none";
  std::string out;
  for (const auto& [a, b] : ex) out += (out.empty() ? "" : ",") + a.code() + "-" + b.code();
  return out;
}

inline std::vector<Exclusion> parse_exclusions(const std::string& s) {
  std::vector<Exclusion> out;
  if (s == "none" || s.empty()) return out;
  std::istringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    auto t = std::string(text::trim(item));
    if (t.empty()) continue;
    const auto d = Direction::parse(t);
    out.emplace_back(d.src, d.tgt);
  }
  return out;
}

struct ExperimentConfig {
  std::vector<LangTag> languages;
  std::optional<std::vector<Exclusion>> exclusions;  // unset: eng-fra when both are present
  Setting setting = Setting::base;
  size_t epochs = 3;
  objectives::BTConfig bt;
  objectives::RECConfig rec;
  optim::AdamWConfig optimizer;
  optim::ScheduleConfig schedule{200, 0};  // total_steps 0: derived from the data
  size_t batch_size = 32;
  size_t accumulation = 1;
  size_t eval_every_steps = 50;
  size_t patience_evals = 100;
  size_t dev_limit = 0;  // dev pairs per direction used for the dev loss; 0 = all
  size_t checkpoint_every_steps = 0;  // 0: checkpoint at epoch ends only
  uint64_t seed = 13;
  size_t workers = 1;
  model::ModelConfig model;

  std::vector<Exclusion> resolved_exclusions() const {
    if (exclusions) return *exclusions;
    const LangTag eng("eng"), fra("fra");
    auto has = [&](const LangTag& l) { return std::find(languages.begin(), languages.end(), l) != languages.end(); };
    if (has(eng) && has(fra)) return {{eng, fra}};
    return {};
  }

  std::vector<Direction> directions() const { return objectives::build_directions(languages, resolved_exclusions()); }

  /// Checks everything that does not need the data; model.vocab_size may
  /// still be 0 here.
  void validate() const {
    auto bad = [](const std::string& m) { fail(ErrorKind::config, m); };
    std::vector<LangTag> sorted = languages;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) bad("languages contain duplicates");
    if (languages.size() < 2) bad("need at least two languages");
    for (const auto& [a, b] : resolved_exclusions()) {
      if (std::find(languages.begin(), languages.end(), a) == languages.end() ||
          std::find(languages.begin(), languages.end(), b) == languages.end()) {
        bad("exclusion " + a.code() + "-" + b.code() + " names a language that is not in the experiment");
      }
    }
    if (epochs < 1) bad("epochs must be >= 1");
    if (batch_size < 1) bad("batch_size must be >= 1");
    if (accumulation < 1) bad("accumulation must be >= 1");
    if (eval_every_steps < 1) bad("eval_every_steps must be >= 1");
    if (patience_evals < 1) bad("patience_evals must be >= 1");
    bt.validate();
    rec.validate();
    optimizer.validate();
    if (schedule.total_steps != 0) schedule.validate();
    if (objectives::uses_bt(setting) && bt.start_epoch > epochs) {
      bad("bt.start_epoch " + std::to_string(bt.start_epoch) + " is after the last epoch " + std::to_string(epochs) +
          "; setting " + objectives::setting_name(setting) + " would never backtranslate");
    }
  }

  void write(KeyValues& kv) const {
    std::string langs;
    for (const auto& l : languages) langs += (langs.empty() ? "" : ",") + l.code();
    kv.set("languages", langs);
    kv.set("exclusions", exclusions ? exclusions_str(*exclusions) : std::string("default"));
    kv.set("setting", objectives::setting_name(setting));
    kv.set("epochs", epochs);
    kv.set("bt.num_bt", bt.num_bt);
    std::string decay;
    for (size_t d : bt.decay) decay += (decay.empty() ? "" : ",") + std::to_string(d);
    kv.set("bt.decay", decay);
    kv.set("bt.num_sample", bt.num_sample);
    kv.set("bt.start_epoch", bt.start_epoch);
    kv.set("bt.temperature", bt.temperature);
    kv.set("rec.num_rec", rec.num_rec);
    kv.set("rec.n_swaps", rec.n_swaps);
    kv.set("rec.p_del", rec.p_del);
    kv.set("optim.lr", optimizer.lr);
    kv.set("optim.beta1", optimizer.beta1);
    kv.set("optim.beta2", optimizer.beta2);
    kv.set("optim.eps", optimizer.eps);
    kv.set("optim.weight_decay", optimizer.weight_decay);
    kv.set("optim.clip_norm", optimizer.clip_norm);
    kv.set("schedule.warmup_steps", schedule.warmup_steps);
    kv.set("schedule.total_steps", schedule.total_steps);
    kv.set("train.batch_size", batch_size);
    kv.set("train.accumulation", accumulation);
    kv.set("train.eval_every_steps", eval_every_steps);
    kv.set("train.patience_evals", patience_evals);
    kv.set("train.dev_limit", dev_limit);
    kv.set("train.checkpoint_every_steps", checkpoint_every_steps);
    kv.set("seed", std::to_string(seed));
    kv.set("workers", workers);
    model.write(kv);
  }

  KeyValues to_kv() const {
    KeyValues kv;
    write(kv);
    return kv;
  }

  /// Keys absent from `kv` keep their current values.
  void read(const KeyValues& kv) {
    auto sz = [&](const std::string& key, size_t cur) {
      const long long v = kv.get_int(key, static_cast<long long>(cur));
      if (v < 0) fail(ErrorKind::config, key + " must be non-negative");
      return static_cast<size_t>(v);
    };
    if (kv.has("languages")) languages = parse_lang_list(kv.require("languages"));
    if (kv.has("exclusions")) {
      const auto v = kv.require("exclusions");
      if (v == "default") {
        exclusions.reset();
      } else {
        exclusions = parse_exclusions(v);
      }
    }
    if (kv.has("setting")) setting = objectives::parse_setting(kv.require("setting"));
    epochs = sz("epochs", epochs);
    bt.num_bt = sz("bt.num_bt", bt.num_bt);
    if (kv.has("bt.decay")) {
      bt.decay.clear();
      for (long long d : kv.get_int_list("bt.decay", {})) {
        if (d < 1) fail(ErrorKind::config, "bt.decay entries must be >= 1");
        bt.decay.push_back(static_cast<size_t>(d));
      }
    }
    bt.num_sample = sz("bt.num_sample", bt.num_sample);
    bt.start_epoch = sz("bt.start_epoch", bt.start_epoch);
    bt.temperature = kv.get_double("bt.temperature", bt.temperature);
    rec.num_rec = sz("rec.num_rec", rec.num_rec);
    rec.n_swaps = sz("rec.n_swaps", rec.n_swaps);
    rec.p_del = kv.get_double("rec.p_del", rec.p_del);
    optimizer.lr = kv.get_double("optim.lr", optimizer.lr);
    optimizer.beta1 = kv.get_double("optim.beta1", optimizer.beta1);
    optimizer.beta2 = kv.get_double("optim.beta2", optimizer.beta2);
    optimizer.eps = kv.get_double("optim.eps", optimizer.eps);
    optimizer.weight_decay = kv.get_double("optim.weight_decay", optimizer.weight_decay);
    optimizer.clip_norm = kv.get_double("optim.clip_norm", optimizer.clip_norm);
    schedule.warmup_steps = sz("schedule.warmup_steps", schedule.warmup_steps);
    schedule.total_steps = sz("schedule.total_steps", schedule.total_steps);
    batch_size = sz("train.batch_size", batch_size);
    accumulation = sz("train.accumulation", accumulation);
    eval_every_steps = sz("train.eval_every_steps", eval_every_steps);
    patience_evals = sz("train.patience_evals", patience_evals);
    dev_limit = sz("train.dev_limit", dev_limit);
    checkpoint_every_steps = sz("train.checkpoint_every_steps", checkpoint_every_steps);
    if (kv.has("seed")) {
      const auto v = kv.require("seed");
      try {
        size_t used = 0;
        seed = std::stoull(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
      } catch (const std::exception&) {
        fail(ErrorKind::config, "seed expects a non-negative integer, got '" + v + "'");
      }
    }
    workers = sz("workers", workers);
    model.read(kv);
  }

  /// Fingerprint of everything that influences results (workers excluded).
  std::string hash() const {
    KeyValues kv = to_kv();
    kv.set("workers", "");
    kv.set("train.checkpoint_every_steps", "");
    return hex64(fnv1a64(kv.to_text()));
  }
};

inline const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names = {"desk", "paper-baseline", "paper-final"};
  return names;
}

/// Overwrites the fields a preset defines. "desk" is the from-scratch
/// default; the other two carry the published finetuning values.
inline void apply_preset(ExperimentConfig& c, const std::string& name) {
  if (name == "desk") {
    c.epochs = 3;
    c.optimizer.lr = 3e-4;
    c.schedule.warmup_steps = 200;
    c.batch_size = 32;
    c.accumulation = 1;
    c.patience_evals = 100;
    c.bt.num_bt = 500;
    c.bt.decay.clear();
    c.bt.num_sample = 2;
    c.bt.start_epoch = 2;
    c.rec.num_rec = 50;
  } else if (name == "paper-baseline") {
    c.languages = parse_lang_list("eng,fra,ibo,fon");
    c.exclusions.reset();
    c.epochs = 3;
    c.optimizer.lr = 5e-4;
    c.schedule.warmup_steps = 0;
    c.batch_size = 32;
    c.accumulation = 8;
    c.patience_evals = 100;
    c.bt.num_bt = 500;
    c.bt.decay.clear();
    c.bt.num_sample = 2;
    c.bt.start_epoch = 2;
    c.rec.num_rec = 50;
  } else if (name == "paper-final") {
    c.languages = parse_lang_list("eng,fra,ibo,fon,swa,kin,xho,yor");
    c.exclusions.reset();
    c.setting = Setting::bt_rec;
    c.epochs = 6;
    c.optimizer.lr = 3e-6;
    c.schedule.warmup_steps = 0;
    c.batch_size = 64;
    c.accumulation = 64;
    c.patience_evals = 100;
    c.bt.num_bt = 100;
    c.bt.decay = {100, 50, 10};
    c.bt.num_sample = 2;
    c.bt.start_epoch = 4;
    c.rec.num_rec = 50;
  } else {
    fail(ErrorKind::config, "unknown preset '" + name + "' (desk|paper-baseline|paper-final)");
  }
}

// ---------------------------------------------------------------------------
// Run log

/// Append-only event list, one json object per event. With a sink path every
/// event is also appended to that file as it happens.
class RunLog {
 public:
  void set_sink(const std::string& path) {
    sink_path_ = path;
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::io, "cannot write " + path);
    for (const auto& e : events_) out << e.dump() << '\n';
  }

  void add(nlohmann::json event) {
    events_.push_back(std::move(event));
    if (!sink_path_.empty()) {
      std::ofstream out(sink_path_, std::ios::binary | std::ios::app);
      if (!out) fail(ErrorKind::io, "cannot append to " + sink_path_);
      out << events_.back().dump() << '\n';
    }
  }

  const std::vector<nlohmann::json>& events() const { return events_; }

  std::vector<nlohmann::json> of(const std::string& kind) const {
    std::vector<nlohmann::json> out;
    for (const auto& e : events_) {
      if (e.value("event", "") == kind) out.push_back(e);
    }
    return out;
  }

  std::vector<double> loss_trace() const { return field("step", "loss"); }
  std::vector<double> lr_trace() const { return field("step", "lr"); }
  std::vector<double> dev_trace() const { return field("eval", "dev_loss"); }

  std::string to_jsonl() const {
    std::string out;
    for (const auto& e : events_) out += e.dump() + "\n";
    return out;
  }

  static RunLog from_jsonl(const std::string& content) {
    RunLog log;
    std::istringstream in(content);
    std::string line;
    size_t n = 0;
    while (std::getline(in, line)) {
      ++n;
      if (text::trim(line).empty()) continue;
      auto j = nlohmann::json::parse(line, nullptr, false);
      if (j.is_discarded() || !j.is_object() || !j.contains("event")) {
        fail(ErrorKind::format, "run log line " + std::to_string(n) + " is not an event");
      }
      log.events_.push_back(std::move(j));
    }
    return log;
  }

 private:
  std::vector<double> field(const std::string& kind, const std::string& key) const {
    std::vector<double> out;
    for (const auto& e : events_) {
      if (e.value("event", "") == kind) out.push_back(e.at(key).get<double>());
    }
    return out;
  }

  std::vector<nlohmann::json> events_;
  std::string sink_path_;
};

// ---------------------------------------------------------------------------
// File helpers

inline void write_text_atomic(const std::string& path, const std::string& content) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::io, "cannot write " + tmp);
    out << content;
    if (!out) fail(ErrorKind::io, "write failed: " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) fail(ErrorKind::io, "cannot rename " + tmp + ": " + ec.message());
}

inline std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io, "cannot read " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::string examples_to_jsonl(const std::vector<objectives::TaggedExample>& xs) {
  std::string out;
  for (const auto& e : xs) {
    nlohmann::json j = {{"input", e.input}, {"target", e.target}, {"kind", objectives::kind_name(e.kind)}};
    if (!e.pivot.empty()) j["pivot"] = e.pivot;
    out += j.dump() + "\n";
  }
  return out;
}

inline std::vector<objectives::TaggedExample> examples_from_jsonl(const std::string& content) {
  std::vector<objectives::TaggedExample> out;
  std::istringstream in(content);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) fail(ErrorKind::format, "bad example line in checkpoint stream");
    objectives::TaggedExample e;
    e.input = j.at("input").get<std::string>();
    e.target = j.at("target").get<std::string>();
    const auto kind = j.at("kind").get<std::string>();
    e.kind = kind == "bt" ? objectives::ExampleKind::bt
             : kind == "rec" ? objectives::ExampleKind::rec
                             : objectives::ExampleKind::translation;
    e.pivot = j.value("pivot", std::string());
    out.push_back(std::move(e));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training run

struct RunOptions {
  std::string checkpoint_dir;  // empty: no checkpoints
  bool resume = false;         // continue from checkpoint_dir/checkpoint
  size_t halt_after_steps = 0;  // stop (as if interrupted) after this many optimizer steps; 0 = never
  std::string audit_path;       // BT/REC examples appended as jsonl
  std::string log_path;         // live copy of the run log
  std::ostream* progress = nullptr;
  std::function<void(size_t epoch, const model::Transformer<float>&)> on_epoch_end;
};

struct RunResult {
  model::Transformer<float> best;
  model::Transformer<float> last;
  RunLog log;
  size_t steps = 0;
  double best_dev_loss = 0.0;
  bool early_stopped = false;
  bool halted = false;
  std::vector<std::string> warnings;
};

/// Position of a run between optimizer steps; everything else is derived
/// from the seed.
struct RunState {
  size_t epoch = 1;
  size_t position = 0;  // examples of the current epoch already consumed
  size_t micro = 0;     // micro-batches so far (dropout stream id)
  size_t step = 0;
  size_t bt_rounds = 0;
  size_t rec_rounds = 0;
  size_t evals = 0;
  size_t bad_evals = 0;
  size_t last_eval_step = 0;
  double best_dev_loss = 0.0;
  bool has_best = false;
  bool in_epoch = false;  // the stream of `epoch` has been built
  double elapsed = 0.0;

  KeyValues to_kv() const {
    KeyValues kv;
    kv.set("epoch", epoch);
    kv.set("position", position);
    kv.set("micro", micro);
    kv.set("step", step);
    kv.set("bt_rounds", bt_rounds);
    kv.set("rec_rounds", rec_rounds);
    kv.set("evals", evals);
    kv.set("bad_evals", bad_evals);
    kv.set("last_eval_step", last_eval_step);
    kv.set("best_dev_loss", best_dev_loss);
    kv.set("has_best", has_best);
    kv.set("in_epoch", in_epoch);
    kv.set("elapsed", elapsed);
    return kv;
  }

  static RunState from_kv(const KeyValues& kv) {
    RunState s;
    auto sz = [&](const char* k) { return static_cast<size_t>(kv.get_int(k, 0)); };
    s.epoch = sz("epoch");
    s.position = sz("position");
    s.micro = sz("micro");
    s.step = sz("step");
    s.bt_rounds = sz("bt_rounds");
    s.rec_rounds = sz("rec_rounds");
    s.evals = sz("evals");
    s.bad_evals = sz("bad_evals");
    s.last_eval_step = sz("last_eval_step");
    s.best_dev_loss = kv.get_double("best_dev_loss", 0.0);
    s.has_best = kv.get_bool("has_best", false);
    s.in_epoch = kv.get_bool("in_epoch", false);
    s.elapsed = kv.get_double("elapsed", 0.0);
    return s;
  }
};

namespace detail {

struct Encoded {
  std::vector<int> src;
  std::vector<int> tgt;
};

inline Encoded encode_example(const tokenizer::SubwordModel& tok, const std::string& input, const std::string& target,
                              size_t max_len) {
  return {model::truncate_ids(tok.encode(input), max_len), model::truncate_ids(tok.encode(target), max_len)};
}

inline model::Batch make_batch(const std::vector<Encoded>& xs, size_t begin, size_t end) {
  std::vector<std::vector<int>> src, tgt;
  for (size_t i = begin; i < end; ++i) {
    src.push_back(xs[i].src);
    tgt.push_back(xs[i].tgt);
  }
  return model::Batch::make(src, tgt);
}

/// Token-weighted mean teacher-forced loss, no dropout. Batches are
/// independent, so the result does not depend on `workers`.
inline double dev_loss(const model::Transformer<float>& mdl, const std::vector<Encoded>& dev, size_t batch_size,
                       size_t workers) {
  const size_t nb = (dev.size() + batch_size - 1) / batch_size;
  std::vector<double> sums(nb, 0.0);
  std::vector<size_t> toks(nb, 0);
  parallel_for(nb, workers, [&](size_t b) {
    const auto batch = make_batch(dev, b * batch_size, std::min(dev.size(), (b + 1) * batch_size));
    toks[b] = batch.target_tokens();
    sums[b] = static_cast<double>(model::loss_teacher_forcing(mdl, batch)) * static_cast<double>(toks[b]);
  });
  double s = 0.0;
  size_t n = 0;
  for (size_t b = 0; b < nb; ++b) {
    s += sums[b];
    n += toks[b];
  }
  return n ? s / static_cast<double>(n) : 0.0;
}

inline uint64_t stream_seed(uint64_t seed, const char* what, size_t epoch) {
  return mix_seed(mix_seed(seed, fnv1a64(what)), epoch);
}

}  // namespace detail

/// Examples one epoch adds per language with monolingual data.
inline size_t round_examples(const ExperimentConfig& cfg, size_t epoch, size_t bt_round, size_t mono_langs) {
  size_t n = 0;
  if (objectives::uses_bt(cfg.setting) && epoch >= cfg.bt.start_epoch) n += cfg.bt.num_bt_for_round(bt_round);
  if (objectives::uses_rec(cfg.setting) && epoch >= cfg.bt.start_epoch) n += cfg.rec.num_rec;
  return n * mono_langs;
}

/// Optimizer steps of a full run (no early stop): every epoch ends with a
/// step on whatever is left in the accumulator.
inline size_t planned_steps(const ExperimentConfig& cfg, size_t translation_examples, size_t mono_langs) {
  size_t total = 0, round = 0;
  for (size_t e = 1; e <= cfg.epochs; ++e) {
    const bool bt = objectives::uses_bt(cfg.setting) && e >= cfg.bt.start_epoch;
    const size_t n = translation_examples + round_examples(cfg, e, round, mono_langs);
    round += bt;
    const size_t micro = (n + cfg.batch_size - 1) / cfg.batch_size;
    total += (micro + cfg.accumulation - 1) / cfg.accumulation;
  }
  return total;
}

class ExperimentRunner {
 public:
  ExperimentRunner(ExperimentConfig cfg, const corpus::ParallelStore& parallel, const corpus::MonoStore& mono,
                   const tokenizer::SubwordModel& tok, RunOptions opt)
      : cfg_(std::move(cfg)), parallel_(parallel), mono_(mono), tok_(tok), opt_(std::move(opt)) {
    prepare();
  }

  const ExperimentConfig& config() const { return cfg_; }

  RunResult run() {
    start_ = std::chrono::steady_clock::now();
    if (opt_.resume) {
      load_checkpoint();
    } else {
      fresh_start();
    }
    if (!opt_.log_path.empty()) result_.log.set_sink(opt_.log_path);
    if (opt_.resume) event({{"event", "resume"}, {"step", state_.step}, {"epoch", state_.epoch}});

    bool stop = false;
    while (!stop && state_.epoch <= cfg_.epochs) {
      if (!state_.in_epoch) begin_epoch();
      stop = train_epoch();
      if (stop) break;
      end_epoch();
      if (state_.step >= cfg_.schedule.total_steps && state_.epoch <= cfg_.epochs) {
        event({{"event", "schedule_end"}, {"step", state_.step}});
        break;
      }
    }
    if (!result_.halted) finish();
    result_.last = mdl_;
    result_.best = model::Transformer<float>::from_params(cfg_.model, best_);
    result_.steps = state_.step;
    result_.best_dev_loss = state_.best_dev_loss;
    return std::move(result_);
  }

 private:
  void prepare() {
    cfg_.validate();
    if (cfg_.model.vocab_size == 0) cfg_.model.vocab_size = tok_.vocab_size();
    if (cfg_.model.vocab_size != tok_.vocab_size()) {
      fail(ErrorKind::config, "model.vocab_size " + std::to_string(cfg_.model.vocab_size) +
                                  " does not match the tokenizer (" + std::to_string(tok_.vocab_size()) + ")");
    }
    cfg_.model.validate();
    for (const auto& l : cfg_.languages) {
      if (tok_.tag_id(l) < 0) fail(ErrorKind::config, "tokenizer has no tag for language " + l.code());
    }
    directions_ = cfg_.directions();
    for (const auto& d : directions_) {
      const auto pairs = parallel_.pairs(d, corpus::Split::train);
      if (pairs.empty()) result_.warnings.push_back("no training pairs for " + d.str());
      for (const auto& p : pairs) translation_.push_back(objectives::format_translation(p));
      const auto dev = parallel_.pairs(d, corpus::Split::dev);
      const size_t n = cfg_.dev_limit ? std::min(cfg_.dev_limit, dev.size()) : dev.size();
      for (size_t i = 0; i < n; ++i) {
        const auto ex = objectives::format_translation(dev[i]);
        dev_.push_back(detail::encode_example(tok_, ex.input, ex.target, cfg_.model.max_positions));
      }
    }
    if (translation_.empty()) fail(ErrorKind::insufficient_data, "no training pairs for any direction");
    if (dev_.empty()) fail(ErrorKind::insufficient_data, "no dev pairs; early stopping needs a dev split");
    for (const auto& l : cfg_.languages) mono_langs_ += !objectives::train_sentences(mono_, l).empty();
    if (objectives::uses_bt(cfg_.setting) && mono_langs_ == 0) {
      fail(ErrorKind::insufficient_data, std::string("setting ") + objectives::setting_name(cfg_.setting) +
                                             " needs monolingual data");
    }
    if (cfg_.schedule.total_steps == 0) {
      cfg_.schedule.total_steps = planned_steps(cfg_, translation_.size(), mono_langs_);
      if (cfg_.schedule.warmup_steps > cfg_.schedule.total_steps / 2) {
        cfg_.schedule.warmup_steps = cfg_.schedule.total_steps / 2;
      }
    }
    cfg_.schedule.validate();
  }

  void fresh_start() {
    mdl_ = model::Transformer<float>::init(cfg_.model, mix_seed(cfg_.seed, 0x30de1));
    best_ = mdl_.params();
    adam_ = optim::make_state(mdl_.params());
    state_ = RunState{};
    event({{"event", "start"},
           {"seed", std::to_string(cfg_.seed)},
           {"config_hash", cfg_.hash()},
           {"setting", objectives::setting_name(cfg_.setting)},
           {"directions", directions_.size()},
           {"translation_examples", translation_.size()},
           {"dev_examples", dev_.size()},
           {"total_steps", cfg_.schedule.total_steps},
           {"warmup_steps", cfg_.schedule.warmup_steps},
           {"params", mdl_.params().count_scalars()}});
    for (const auto& w : result_.warnings) event({{"event", "warning"}, {"message", w}});
  }

  void begin_epoch() {
    const size_t e = state_.epoch;
    stream_ = translation_;
    const bool active = e >= cfg_.bt.start_epoch;
    if (objectives::uses_bt(cfg_.setting) && active) {
      const size_t num_bt = cfg_.bt.num_bt_for_round(state_.bt_rounds);
      Rng rng(detail::stream_seed(cfg_.seed, "bt", e));
      std::vector<std::string> warnings;
      const auto translate = objectives::model_translator(mdl_, tok_, cfg_.bt.temperature, cfg_.model.max_positions);
      const auto t0 = std::chrono::steady_clock::now();
      auto bt = objectives::make_bt_examples(translate, mono_, cfg_.languages, cfg_.resolved_exclusions(), cfg_.bt,
                                             num_bt, rng, cfg_.workers, &warnings);
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      audit(bt, state_.bt_rounds);
      event({{"event", "bt_round"},
             {"epoch", e},
             {"round", state_.bt_rounds},
             {"num_bt", num_bt},
             {"examples", bt.size()},
             {"warnings", warnings},
             {"seconds", secs}});
      stream_.insert(stream_.end(), bt.begin(), bt.end());
      ++state_.bt_rounds;
    }
    if (objectives::uses_rec(cfg_.setting) && active) {
      Rng rng(detail::stream_seed(cfg_.seed, "rec", e));
      std::vector<std::string> warnings;
      auto rec = objectives::make_rec_examples(mono_, cfg_.languages, cfg_.rec, rng, &warnings);
      audit(rec, state_.rec_rounds);
      event({{"event", "rec_round"},
             {"epoch", e},
             {"round", state_.rec_rounds},
             {"num_rec", cfg_.rec.num_rec},
             {"examples", rec.size()},
             {"warnings", warnings}});
      stream_.insert(stream_.end(), rec.begin(), rec.end());
      ++state_.rec_rounds;
    }
    Rng shuffle(detail::stream_seed(cfg_.seed, "shuffle", e));
    shuffle.shuffle(std::span<objectives::TaggedExample>(stream_));
    state_.position = 0;
    state_.in_epoch = true;
    event({{"event", "epoch_start"}, {"epoch", e}, {"examples", stream_.size()}});
  }

  /// Returns true when the run stops inside this epoch.
  bool train_epoch() {
    optim::GradAccumulator<float> acc(cfg_.accumulation);
    double loss_sum = 0.0;
    size_t loss_tokens = 0;
    while (state_.position < stream_.size()) {
      const size_t end = std::min(stream_.size(), state_.position + cfg_.batch_size);
      std::vector<detail::Encoded> enc;
      for (size_t i = state_.position; i < end; ++i) {
        enc.push_back(detail::encode_example(tok_, stream_[i].input, stream_[i].target, cfg_.model.max_positions));
      }
      const auto batch = detail::make_batch(enc, 0, enc.size());
      Rng drop = rng_fork(mix_seed(cfg_.seed, 0xd209), state_.micro);
      num::Tape<float> tape(&mdl_.params());
      auto loss = mdl_.loss(tape, batch, &drop);
      const size_t toks = batch.target_tokens();
      acc.accumulate(tape.backward(loss), toks);
      loss_sum += static_cast<double>(loss.value().item()) * static_cast<double>(toks);
      loss_tokens += toks;
      state_.position = end;
      ++state_.micro;
      if (!acc.ready() && state_.position < stream_.size()) continue;

      const double lr = optim::lr_at(cfg_.schedule, cfg_.optimizer.lr, state_.step);
      optim::adamw_step(mdl_.params(), acc.flush(), adam_, cfg_.optimizer, lr);
      ++state_.step;
      event({{"event", "step"},
             {"step", state_.step},
             {"epoch", state_.epoch},
             {"loss", loss_sum / static_cast<double>(loss_tokens)},
             {"lr", lr},
             {"tokens", loss_tokens}});
      loss_sum = 0.0;
      loss_tokens = 0;
      if (state_.step % cfg_.eval_every_steps == 0 && evaluate()) return true;
      if (state_.step >= cfg_.schedule.total_steps && state_.position < stream_.size()) {
        event({{"event", "schedule_end"}, {"step", state_.step}});
        return true;
      }
      if (state_.position < stream_.size() && cfg_.checkpoint_every_steps &&
          state_.step % cfg_.checkpoint_every_steps == 0) {
        save_checkpoint();
      }
      if (opt_.halt_after_steps && state_.step >= opt_.halt_after_steps) {
        if (state_.position >= stream_.size()) {
          end_epoch();
        } else if (!cfg_.checkpoint_every_steps || state_.step % cfg_.checkpoint_every_steps != 0) {
          save_checkpoint();
        }
        result_.halted = true;
        event({{"event", "halt"}, {"step", state_.step}});
        return true;
      }
    }
    return false;
  }

  /// Dev-loss evaluation; returns true when patience is exhausted.
  bool evaluate() {
    const double dl = detail::dev_loss(mdl_, dev_, cfg_.batch_size, cfg_.workers);
    ++state_.evals;
    state_.last_eval_step = state_.step;
    const bool improved = !state_.has_best || dl < state_.best_dev_loss;
    if (improved) {
      state_.best_dev_loss = dl;
      state_.has_best = true;
      state_.bad_evals = 0;
      best_ = mdl_.params();
    } else {
      ++state_.bad_evals;
    }
    event({{"event", "eval"},
           {"step", state_.step},
           {"epoch", state_.epoch},
           {"dev_loss", dl},
           {"best_dev_loss", state_.best_dev_loss},
           {"improved", improved},
           {"bad_evals", state_.bad_evals}});
    if (opt_.progress) {
      *opt_.progress << "step " << state_.step << " epoch " << state_.epoch << " dev_loss " << dl
                     << (improved ? " *" : "") << std::endl;
    }
    if (state_.bad_evals >= cfg_.patience_evals) {
      event({{"event", "early_stop"}, {"step", state_.step}, {"best_dev_loss", state_.best_dev_loss}});
      result_.early_stopped = true;
      return true;
    }
    return false;
  }

  void end_epoch() {
    event({{"event", "epoch_end"}, {"epoch", state_.epoch}, {"step", state_.step}});
    if (opt_.on_epoch_end) opt_.on_epoch_end(state_.epoch, mdl_);
    ++state_.epoch;
    state_.in_epoch = false;
    state_.position = 0;
    stream_.clear();
    if (!opt_.checkpoint_dir.empty()) save_checkpoint();
  }

  void finish() {
    if (state_.last_eval_step != state_.step || !state_.has_best) evaluate();
    event({{"event", "end"},
           {"step", state_.step},
           {"best_dev_loss", state_.best_dev_loss},
           {"early_stopped", result_.early_stopped}});
  }

  void event(nlohmann::json e) {
    e["wall_s"] = state_.elapsed + std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    result_.log.add(std::move(e));
  }

  void audit(const std::vector<objectives::TaggedExample>& xs, size_t round) {
    if (opt_.audit_path.empty()) return;
    std::ofstream out(opt_.audit_path, std::ios::binary | std::ios::app);
    if (!out) fail(ErrorKind::io, "cannot append to " + opt_.audit_path);
    objectives::write_audit(out, xs, round);
  }

  // Checkpoint directory: <dir>/checkpoint holds config.kv, tokenizer.txt,
  // params.bin, best.bin, optimizer.bin, state.kv, stream.jsonl and
  // runlog.jsonl. A new checkpoint is assembled in checkpoint.next and
  // swapped in with renames.
  void save_checkpoint() {
    if (opt_.checkpoint_dir.empty()) return;
    namespace fs = std::filesystem;
    const fs::path root(opt_.checkpoint_dir);
    const fs::path next = root / "checkpoint.next", cur = root / "checkpoint", old = root / "checkpoint.old";
    fs::create_directories(root);
    fs::remove_all(next);
    fs::create_directories(next);
    RunState st = state_;
    st.elapsed += std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    write_text_atomic((next / "config.kv").string(), cfg_.to_kv().to_text());
    write_text_atomic((next / "tokenizer.txt").string(), tok_.serialize());
    model::save_model(mdl_, (next / "params.bin").string());
    num::save_params(best_, (next / "best.bin").string());
    optim::save_state(adam_, mdl_.params(), (next / "optimizer.bin").string());
    write_text_atomic((next / "stream.jsonl").string(), examples_to_jsonl(stream_));
    write_text_atomic((next / "runlog.jsonl").string(), result_.log.to_jsonl());
    write_text_atomic((next / "state.kv").string(), st.to_kv().to_text());
    fs::remove_all(old);
    if (fs::exists(cur)) fs::rename(cur, old);
    fs::rename(next, cur);
    fs::remove_all(old);
  }

  void load_checkpoint() {
    namespace fs = std::filesystem;
    const fs::path root(opt_.checkpoint_dir);
    fs::path dir = root / "checkpoint";
    if (!fs::exists(dir / "state.kv")) dir = root / "checkpoint.old";
    if (!fs::exists(dir / "state.kv")) fail(ErrorKind::io, "no checkpoint in " + opt_.checkpoint_dir);
    ExperimentConfig saved;
    saved.read(KeyValues::load((dir / "config.kv").string()));
    if (saved.hash() != cfg_.hash()) {
      fail(ErrorKind::config, "checkpoint config " + saved.hash() + " differs from the requested config " + cfg_.hash());
    }
    if (tokenizer::SubwordModel::load((dir / "tokenizer.txt").string()).hash() != tok_.hash()) {
      fail(ErrorKind::config, "checkpoint was trained with a different tokenizer");
    }
    mdl_ = model::load_model<float>((dir / "params.bin").string());
    best_ = mdl_.params();
    num::load_params_into(best_, (dir / "best.bin").string());
    adam_ = optim::load_state(mdl_.params(), (dir / "optimizer.bin").string());
    stream_ = examples_from_jsonl(read_text((dir / "stream.jsonl").string()));
    result_.log = RunLog::from_jsonl(read_text((dir / "runlog.jsonl").string()));
    state_ = RunState::from_kv(KeyValues::load((dir / "state.kv").string()));
    if (state_.in_epoch && state_.position > stream_.size()) fail(ErrorKind::format, "checkpoint stream is truncated");
  }

  ExperimentConfig cfg_;
  const corpus::ParallelStore& parallel_;
  const corpus::MonoStore& mono_;
  const tokenizer::SubwordModel& tok_;
  RunOptions opt_;

  std::vector<Direction> directions_;
  std::vector<objectives::TaggedExample> translation_;
  std::vector<detail::Encoded> dev_;
  size_t mono_langs_ = 0;

  model::Transformer<float> mdl_;
  num::ParamSet<float> best_;
  optim::AdamState<float> adam_;
  RunState state_;
  std::vector<objectives::TaggedExample> stream_;
  RunResult result_;
  std::chrono::steady_clock::time_point start_;
};

inline RunResult run_experiment(const ExperimentConfig& cfg, const corpus::ParallelStore& parallel,
                                const corpus::MonoStore& mono, const tokenizer::SubwordModel& tok,
                                RunOptions opt = {}) {
  return ExperimentRunner(cfg, parallel, mono, tok, std::move(opt)).run();
}

}  // namespace mmt::harness
