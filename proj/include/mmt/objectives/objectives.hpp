#pragma once

#include <algorithm>
#include <functional>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mmt/core/error.hpp"
#include "mmt/core/lang.hpp"
#include "mmt/core/parallel.hpp"
#include "mmt/core/rng.hpp"
#include "mmt/core/text.hpp"
#include "mmt/corpus/corpus.hpp"
#include "mmt/decode/generate.hpp"

namespace mmt::objectives {

enum class Setting { base, bt, bt_rec };

inline const char* setting_name(Setting s) {
  switch (s) {
    case Setting::base: return "base";
    case Setting::bt: return "bt";
    case Setting::bt_rec: return "btrec";
  }
  return "?";
}

inline Setting parse_setting(const std::string& s) {
  if (s == "base") return Setting::base;
  if (s == "bt") return Setting::bt;
  if (s == "btrec" || s == "bt_rec") return Setting::bt_rec;
  fail(ErrorKind::config, "unknown setting '" + s + "' (base|bt|btrec)");
}

inline bool uses_bt(Setting s) { return s != Setting::base; }
inline bool uses_rec(Setting s) { return s == Setting::bt_rec; }

struct BTConfig {
  size_t num_bt = 500;
  std::vector<size_t> decay;  // num_bt per successive round; empty = constant num_bt
  size_t num_sample = 2;
  size_t start_epoch = 2;  // 1-based epoch of the first round
  double temperature = 1.0;

  void validate() const {
    if (num_bt < 1) fail(ErrorKind::config, "bt.num_bt must be >= 1");
    for (size_t n : decay) {
      if (n < 1) fail(ErrorKind::config, "bt.decay entries must be >= 1");
    }
    if (num_sample < 1) fail(ErrorKind::config, "bt.num_sample must be >= 1");
    if (start_epoch < 1) fail(ErrorKind::config, "bt.start_epoch is 1-based");
    if (!(temperature > 0.0)) fail(ErrorKind::config, "bt.temperature must be > 0");
  }

  /// Sentences per language in the round with 0-based index `round`; the
  /// last decay entry repeats once the list is exhausted.
  size_t num_bt_for_round(size_t round) const {
    if (decay.empty()) return num_bt;
    return decay[std::min(round, decay.size() - 1)];
  }
};

struct RECConfig {
  size_t num_rec = 50;
  size_t n_swaps = 2;
  double p_del = 0.2;

  void validate() const {
    if (p_del < 0.0 || p_del >= 1.0) fail(ErrorKind::config, "rec.p_del must be in [0, 1)");
  }
};

enum class ExampleKind { translation, bt, rec };

inline const char* kind_name(ExampleKind k) {
  switch (k) {
    case ExampleKind::translation: return "translation";
    case ExampleKind::bt: return "bt";
    case ExampleKind::rec: return "rec";
  }
  return "?";
}

struct TaggedExample {
  std::string input;   // "<tag> payload"
  std::string target;
  ExampleKind kind = ExampleKind::translation;
  std::string pivot;  // BT only: language the synthetic source was generated in
};

/// Unordered language pair whose two directions are left out.
using Exclusion = std::pair<LangTag, LangTag>;

inline bool excluded(const LangTag& a, const LangTag& b, const std::vector<Exclusion>& exclusions) {
  for (const auto& [x, y] : exclusions) {
    if ((x == a && y == b) || (x == b && y == a)) return true;
  }
  return false;
}

/// All ordered pairs of distinct languages minus excluded pairs, sorted by
/// (src, tgt) code.
inline std::vector<Direction> build_directions(std::vector<LangTag> langs, const std::vector<Exclusion>& exclusions) {
  std::sort(langs.begin(), langs.end());
  langs.erase(std::unique(langs.begin(), langs.end()), langs.end());
  if (langs.size() < 2) fail(ErrorKind::config, "need at least two distinct languages");
  std::vector<Direction> out;
  for (const auto& a : langs) {
    for (const auto& b : langs) {
      if (a != b && !excluded(a, b, exclusions)) out.emplace_back(a, b);
    }
  }
  return out;
}

inline TaggedExample format_translation(const corpus::ParallelPair& pair) {
  return {pair.direction.tgt.token() + " " + pair.src_text, pair.tgt_text, ExampleKind::translation, {}};
}

/// True when `input` opens with "<code> " for a code in `langs`.
inline bool has_tag_prefix(std::string_view input, const std::vector<LangTag>& langs) {
  for (const auto& l : langs) {
    const auto tok = l.token();
    if (input.size() > tok.size() && input.compare(0, tok.size(), tok) == 0 && input[tok.size()] == ' ') return true;
  }
  return false;
}

/// Word-level noising: n_swaps random transpositions of two distinct
/// positions, then independent deletion with probability p_del. At least one
/// token always survives.
inline std::string noise(std::string_view sentence, size_t n_swaps, double p_del, Rng& rng) {
  auto view = text::split_ws(sentence);
  std::vector<std::string_view> toks(view.begin(), view.end());
  if (toks.empty()) fail(ErrorKind::value, "cannot noise an empty sentence");
  const size_t n = toks.size();
  if (n >= 2) {
    for (size_t s = 0; s < n_swaps; ++s) {
      const size_t i = rng.below(n);
      size_t j = rng.below(n - 1);
      if (j >= i) ++j;
      std::swap(toks[i], toks[j]);
    }
  }
  std::vector<uint8_t> keep(n, 1);
  size_t kept = n;
  if (p_del > 0.0) {
    for (size_t i = 0; i < n; ++i) {
      if (rng.bernoulli(p_del)) {
        keep[i] = 0;
        --kept;
      }
    }
    if (kept == 0) keep[rng.below(n)] = 1;
  }
  std::string out;
  for (size_t i = 0; i < n; ++i) {
    if (!keep[i]) continue;
    if (!out.empty()) out.push_back(' ');
    out += toks[i];
  }
  return out;
}

/// Training-split monolingual sentences of `lang`.
inline std::vector<std::string> train_sentences(const corpus::MonoStore& mono, const LangTag& lang) {
  return mono.sentences(lang, corpus::Split::train);
}

/// num_rec noised sentences per language, drawn with replacement. Languages
/// without monolingual data are skipped and named in `warnings`.
inline std::vector<TaggedExample> make_rec_examples(const corpus::MonoStore& mono, const std::vector<LangTag>& langs,
                                                    const RECConfig& cfg, Rng& rng,
                                                    std::vector<std::string>* warnings = nullptr) {
  cfg.validate();
  std::vector<TaggedExample> out;
  for (const auto& lang : langs) {
    const auto sents = train_sentences(mono, lang);
    if (sents.empty()) {
      if (warnings) warnings->push_back("rec: no monolingual data for " + lang.code() + ", skipped");
      continue;
    }
    for (size_t k = 0; k < cfg.num_rec; ++k) {
      const auto& y = sents[rng.below(sents.size())];
      out.push_back({lang.token() + " " + noise(y, cfg.n_swaps, cfg.p_del, rng), y, ExampleKind::rec, {}});
    }
  }
  return out;
}

/// Produces one sampled translation of a tagged input.
using TranslateFn = std::function<std::string(const std::string& input, Rng& rng)>;

/// Sampling translator over a frozen model. The model and tokenizer must
/// outlive the returned function.
template <class T>
TranslateFn model_translator(const model::Transformer<T>& mdl, const tokenizer::SubwordModel& tok,
                             double temperature = 1.0, size_t max_new_tokens = 50) {
  decode::DecodeConfig cfg;
  cfg.mode = decode::Mode::sample;
  cfg.temperature = temperature;
  cfg.max_new_tokens = max_new_tokens;
  return [&mdl, &tok, cfg](const std::string& input, Rng& rng) {
    return decode::generate(mdl, tok, input, cfg, &rng).text;
  };
}

/// One backtranslation round. For each language with monolingual data,
/// `num_bt` sentences are drawn with replacement; each gets a pivot language
/// (uniform over non-excluded partners), num_sample candidate translations
/// into the pivot, and one candidate picked uniformly as the synthetic
/// source. Sentence k uses rng_fork(base, k) with base drawn from `rng`, so
/// the result does not depend on `workers`.
inline std::vector<TaggedExample> make_bt_examples(const TranslateFn& translate, const corpus::MonoStore& mono,
                                                   const std::vector<LangTag>& langs,
                                                   const std::vector<Exclusion>& exclusions, const BTConfig& cfg,
                                                   size_t num_bt, Rng& rng, size_t workers = 1,
                                                   std::vector<std::string>* warnings = nullptr) {
  cfg.validate();
  struct Job {
    LangTag lang;
    const std::string* sentence;
    std::vector<LangTag> pivots;
  };
  std::vector<std::vector<std::string>> pools;
  pools.reserve(langs.size());
  std::vector<Job> jobs;
  for (const auto& m : langs) {
    pools.push_back(train_sentences(mono, m));
    const auto& sents = pools.back();
    if (sents.empty()) {
      if (warnings) warnings->push_back("bt: no monolingual data for " + m.code() + ", skipped");
      continue;
    }
    std::vector<LangTag> pivots;
    for (const auto& s : langs) {
      if (s != m && !excluded(s, m, exclusions)) pivots.push_back(s);
    }
    if (pivots.empty()) fail(ErrorKind::config, "bt: no eligible pivot language for " + m.code());
    for (size_t k = 0; k < num_bt; ++k) jobs.push_back({m, &sents[rng.below(sents.size())], pivots});
  }
  const uint64_t base = rng.next();
  std::vector<TaggedExample> out(jobs.size());
  parallel_for(jobs.size(), workers, [&](size_t k) {
    const auto& job = jobs[k];
    Rng r = rng_fork(base, k);
    const LangTag& pivot = job.pivots[r.below(job.pivots.size())];
    const std::string input = pivot.token() + " " + *job.sentence;
    std::vector<std::string> cands;
    cands.reserve(cfg.num_sample);
    for (size_t c = 0; c < cfg.num_sample; ++c) cands.push_back(translate(input, r));
    const std::string& pick = cands[cfg.num_sample == 1 ? 0 : r.below(cfg.num_sample)];
    out[k] = {job.lang.token() + " " + pick, *job.sentence, ExampleKind::bt, pivot.code()};
  });
  return out;
}

/// Appends one jsonl line per example.
inline void write_audit(std::ostream& os, const std::vector<TaggedExample>& examples, size_t round) {
  for (const auto& e : examples) {
    nlohmann::json j = {{"input", e.input}, {"target", e.target}, {"kind", kind_name(e.kind)}, {"round", round}};
    j["pivot"] = e.pivot.empty() ? nlohmann::json(nullptr) : nlohmann::json(e.pivot);
    os << j.dump() << '\n';
  }
}

}  // namespace mmt::objectives
