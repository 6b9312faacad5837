#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "mmt/core/error.hpp"
#include "mmt/core/kv.hpp"
#include "mmt/core/lang.hpp"
#include "mmt/core/rng.hpp"
#include "mmt/core/text.hpp"
#include "mmt/corpus/corpus.hpp"

// Synthetic languages: every sentence is a sequence of concept ids rendered
// through a per-language lexicon and a word-order rule. Vocabularies are
// disjoint (distinct prefixes), so translation quality and output language
// can be checked exactly.

namespace mmt::harness {

enum class ReorderKind { identity, swap_adjacent_pairs, reverse_windows };

struct ReorderRule {
  ReorderKind kind = ReorderKind::identity;
  size_t window = 2;  // reverse_windows only

  std::string str() const {
    switch (kind) {
      case ReorderKind::identity: return "identity";
      case ReorderKind::swap_adjacent_pairs: return "swap_adjacent_pairs";
      case ReorderKind::reverse_windows: return "reverse_windows:" + std::to_string(window);
    }
    return "?";
  }

  static ReorderRule parse(const std::string& s) {
    if (s == "identity") return {};
    if (s == "swap_adjacent_pairs") return {ReorderKind::swap_adjacent_pairs, 2};
    const std::string head = "reverse_windows:";
    if (s.rfind(head, 0) == 0) {
      size_t k = 0;
      try {
        k = std::stoul(s.substr(head.size()));
      } catch (const std::exception&) {
      }
      if (k < 2) fail(ErrorKind::config, "reverse_windows needs a window >= 2: " + s);
      return {ReorderKind::reverse_windows, k};
    }
    fail(ErrorKind::config, "unknown reorder rule '" + s + "' (identity|swap_adjacent_pairs|reverse_windows:k)");
  }
};

/// All three rules are involutions, so the same function reorders and
/// restores.
template <class V>
std::vector<V> apply_reorder(const ReorderRule& rule, std::vector<V> xs) {
  switch (rule.kind) {
    case ReorderKind::identity:
      break;
    case ReorderKind::swap_adjacent_pairs:
      for (size_t i = 0; i + 1 < xs.size(); i += 2) std::swap(xs[i], xs[i + 1]);
      break;
    case ReorderKind::reverse_windows:
      for (size_t i = 0; i < xs.size(); i += rule.window) {
        const size_t end = std::min(xs.size(), i + rule.window);
        std::reverse(xs.begin() + static_cast<long>(i), xs.begin() + static_cast<long>(end));
      }
      break;
  }
  return xs;
}

inline std::string base36(size_t v) {
  static constexpr char kDigits[] = "0123456789abcdefghijklmnopqrstuvwxyz";
  std::string s;
  do {
    s.insert(s.begin(), kDigits[v % 36]);
    v /= 36;
  } while (v);
  return s;
}

struct SyntheticLangSpec {
  LangTag code;
  uint64_t lexicon_seed = 0;
  std::string surface_prefix;
  ReorderRule reorder;
  size_t concept_vocab_size = 200;
};

/// Lexicon and order rule of one language.
class SyntheticLanguage {
 public:
  explicit SyntheticLanguage(SyntheticLangSpec spec) : spec_(std::move(spec)) {
    if (spec_.surface_prefix.empty()) fail(ErrorKind::config, spec_.code.code() + ": empty surface prefix");
    for (char c : spec_.surface_prefix) {
      if (c < 'a' || c > 'z') fail(ErrorKind::config, spec_.code.code() + ": prefix must be lowercase letters");
    }
    if (spec_.concept_vocab_size == 0) fail(ErrorKind::config, spec_.code.code() + ": concept_vocab_size is 0");
    perm_.resize(spec_.concept_vocab_size);
    std::iota(perm_.begin(), perm_.end(), size_t{0});
    Rng rng(mix_seed(spec_.lexicon_seed, 0x1e71c0));
    rng.shuffle(std::span<size_t>(perm_));
    for (size_t c = 0; c < perm_.size(); ++c) index_[word(c)] = c;
  }

  const SyntheticLangSpec& spec() const { return spec_; }
  std::string word(size_t concept_id) const { return spec_.surface_prefix + base36(perm_.at(concept_id)); }

  std::string render(const std::vector<size_t>& concepts) const {
    std::string out;
    for (size_t c : apply_reorder(spec_.reorder, concepts)) {
      if (!out.empty()) out += ' ';
      out += word(c);
    }
    return out;
  }

  /// Concept sequence of a sentence, or nullopt if any word is not in the
  /// lexicon.
  std::optional<std::vector<size_t>> parse(std::string_view sentence) const {
    std::vector<size_t> words;
    for (const auto& w : text::split_ws(sentence)) {
      auto it = index_.find(w);
      if (it == index_.end()) return std::nullopt;
      words.push_back(it->second);
    }
    return apply_reorder(spec_.reorder, std::move(words));
  }

  bool has_prefix(std::string_view token) const {
    return token.size() > spec_.surface_prefix.size() && token.substr(0, spec_.surface_prefix.size()) == spec_.surface_prefix;
  }

 private:
  SyntheticLangSpec spec_;
  std::vector<size_t> perm_;
  std::map<std::string, size_t, std::less<>> index_;
};

/// Exact translation between any two generated languages.
class GroundTruth {
 public:
  GroundTruth() = default;
  explicit GroundTruth(const std::vector<SyntheticLangSpec>& specs) {
    for (size_t i = 0; i < specs.size(); ++i) {
      for (size_t j = 0; j < specs.size(); ++j) {
        if (i == j) continue;
        if (specs[i].code == specs[j].code) fail(ErrorKind::config, "duplicate language " + specs[i].code.code());
        const auto& a = specs[i].surface_prefix;
        const auto& b = specs[j].surface_prefix;
        if (a == b) fail(ErrorKind::config, "duplicate surface prefix '" + a + "'");
        if (b.rfind(a, 0) == 0) {
          fail(ErrorKind::config, "surface prefix '" + a + "' is a prefix of '" + b + "'");
        }
      }
      if (i && specs[i].concept_vocab_size != specs[0].concept_vocab_size) {
        fail(ErrorKind::config, "all synthetic languages need the same concept_vocab_size");
      }
    }
    for (const auto& s : specs) langs_.emplace_back(s);
  }

  const std::vector<SyntheticLanguage>& languages() const { return langs_; }

  std::vector<SyntheticLangSpec> specs() const {
    std::vector<SyntheticLangSpec> out;
    for (const auto& l : langs_) out.push_back(l.spec());
    return out;
  }

  const SyntheticLanguage& language(const LangTag& code) const {
    for (const auto& l : langs_) {
      if (l.spec().code == code) return l;
    }
    fail(ErrorKind::value, "unknown synthetic language " + code.code());
  }

  /// Throws if the sentence is not well formed in `from`.
  std::string translate(std::string_view sentence, const LangTag& from, const LangTag& to) const {
    auto concepts = language(from).parse(sentence);
    if (!concepts) fail(ErrorKind::value, "not a " + from.code() + " sentence: " + std::string(sentence));
    return language(to).render(*concepts);
  }

  /// Language whose prefix the token carries, or nullptr.
  const SyntheticLanguage* owner(std::string_view token) const {
    for (const auto& l : langs_) {
      if (l.has_prefix(token)) return &l;
    }
    return nullptr;
  }

  /// Specs as "lang.<code>.<field>" keys.
  KeyValues to_kv() const {
    KeyValues kv;
    std::string codes;
    for (const auto& l : langs_) {
      const auto& s = l.spec();
      codes += (codes.empty() ? "" : ",") + s.code.code();
      const std::string p = "lang." + s.code.code() + ".";
      kv.set(p + "lexicon_seed", std::to_string(s.lexicon_seed));
      kv.set(p + "prefix", s.surface_prefix);
      kv.set(p + "reorder", s.reorder.str());
      kv.set(p + "concepts", s.concept_vocab_size);
    }
    kv.set("languages", codes);
    return kv;
  }

  static GroundTruth from_kv(const KeyValues& kv) {
    std::vector<SyntheticLangSpec> specs;
    for (const auto& code : parse_lang_list(kv.require("languages"))) {
      const std::string p = "lang." + code.code() + ".";
      SyntheticLangSpec s;
      s.code = code;
      try {
        s.lexicon_seed = std::stoull(kv.require(p + "lexicon_seed"));
      } catch (const std::invalid_argument&) {
        fail(ErrorKind::config, p + "lexicon_seed is not an integer");
      }
      s.surface_prefix = kv.require(p + "prefix");
      s.reorder = ReorderRule::parse(kv.get(p + "reorder", "identity"));
      s.concept_vocab_size = static_cast<size_t>(kv.get_int(p + "concepts", 200));
      specs.push_back(std::move(s));
    }
    return GroundTruth(specs);
  }

 private:
  std::vector<SyntheticLanguage> langs_;
};

/// Default specs for `langs`: prefixes "ka", "lo", "mi", ... and rules
/// cycling through identity, swap_adjacent_pairs, reverse_windows:3.
inline std::vector<SyntheticLangSpec> default_specs(const std::vector<LangTag>& langs, size_t concepts = 200,
                                                    uint64_t seed = 13) {
  static const std::vector<std::string> kPrefixes = {"ka", "lo", "mi", "ne", "pu", "ri", "so", "tu", "ve", "wa",
                                                     "xe", "yo", "zu", "ba", "de", "fi"};
  static const std::vector<ReorderRule> kRules = {
      {ReorderKind::identity, 2}, {ReorderKind::swap_adjacent_pairs, 2}, {ReorderKind::reverse_windows, 3}};
  if (langs.size() > kPrefixes.size()) fail(ErrorKind::config, "too many synthetic languages");
  std::vector<SyntheticLangSpec> out;
  for (size_t i = 0; i < langs.size(); ++i) {
    out.push_back({langs[i], mix_seed(seed, i + 1), kPrefixes[i], kRules[i % kRules.size()], concepts});
  }
  return out;
}

struct SyntheticOptions {
  size_t n_parallel_per_direction = 2000;
  size_t n_mono_per_lang = 2000;
  size_t min_len = 3;
  size_t max_len = 8;
  size_t dev_per_direction = 100;
  size_t test_per_direction = 100;
  std::vector<LangTag> low_resource;
  size_t low_resource_divisor = 20;
  // Concept c is drawn with weight 1 / (c + 1)^zipf; 0 gives uniform draws.
  // Uniform draws leave models on a long loss plateau before they start
  // using the source.
  double zipf = 1.0;
  uint64_t seed = 13;

  void validate() const {
    if (min_len == 0 || min_len > max_len) fail(ErrorKind::config, "synthetic sentence length range is empty");
    if (low_resource_divisor == 0) fail(ErrorKind::config, "low_resource_divisor must be >= 1");
    if (zipf < 0.0) fail(ErrorKind::config, "zipf exponent must be >= 0");
  }
};

struct SyntheticData {
  corpus::ParallelStore parallel;
  corpus::MonoStore mono;
  GroundTruth truth;
};

namespace detail {

class ConceptSampler {
 public:
  ConceptSampler(size_t vocab, double zipf) {
    cdf_.resize(vocab);
    double acc = 0.0;
    for (size_t c = 0; c < vocab; ++c) {
      acc += zipf == 0.0 ? 1.0 : 1.0 / std::pow(static_cast<double>(c + 1), zipf);
      cdf_[c] = acc;
    }
  }

  size_t draw(Rng& rng) const {
    const double u = rng.uniform() * cdf_.back();
    return static_cast<size_t>(std::upper_bound(cdf_.begin(), cdf_.end(), u) - cdf_.begin());
  }

  std::vector<size_t> sentence(Rng& rng, size_t min_len, size_t max_len) const {
    const size_t n = min_len + rng.below(max_len - min_len + 1);
    std::vector<size_t> s(n);
    for (auto& c : s) c = draw(rng);
    return s;
  }

 private:
  std::vector<double> cdf_;
};

}  // namespace detail

/// Parallel data for every ordered pair of languages (each unordered pair
/// shares one set of concept sequences, used in both directions), plus
/// monolingual train data per language. Pairs touching a low-resource
/// language keep 1/divisor of the train data but full dev and test sets.
inline SyntheticData gen_synthetic(const std::vector<SyntheticLangSpec>& specs, const SyntheticOptions& opt) {
  opt.validate();
  if (specs.size() < 2) fail(ErrorKind::config, "need at least two synthetic languages");
  SyntheticData data;
  data.truth = GroundTruth(specs);
  const auto& langs = data.truth.languages();
  for (const auto& l : opt.low_resource) data.truth.language(l);
  auto is_low = [&](const LangTag& l) {
    return std::find(opt.low_resource.begin(), opt.low_resource.end(), l) != opt.low_resource.end();
  };
  const detail::ConceptSampler sampler(specs.front().concept_vocab_size, opt.zipf);

  for (size_t i = 0; i < langs.size(); ++i) {
    for (size_t j = i + 1; j < langs.size(); ++j) {
      const auto& a = langs[i];
      const auto& b = langs[j];
      const LangTag& ca = a.spec().code;
      const LangTag& cb = b.spec().code;
      Rng rng = rng_fork(opt.seed, fnv1a64("parallel:" + ca.code() + "-" + cb.code()));
      const size_t n_train = is_low(ca) || is_low(cb) ? opt.n_parallel_per_direction / opt.low_resource_divisor
                                                      : opt.n_parallel_per_direction;
      auto emit = [&](size_t n, corpus::Split split) {
        for (size_t k = 0; k < n; ++k) {
          const auto concepts = sampler.sentence(rng, opt.min_len, opt.max_len);
          const auto sa = a.render(concepts);
          const auto sb = b.render(concepts);
          data.parallel.add({Direction(ca, cb), sa, sb, "synthetic"}, split);
          data.parallel.add({Direction(cb, ca), sb, sa, "synthetic"}, split);
        }
      };
      emit(opt.dev_per_direction, corpus::Split::dev);
      emit(opt.test_per_direction, corpus::Split::test);
      emit(n_train, corpus::Split::train);
    }
  }
  for (const auto& l : langs) {
    Rng rng = rng_fork(opt.seed, fnv1a64("mono:" + l.spec().code.code()));
    for (size_t k = 0; k < opt.n_mono_per_lang; ++k) {
      data.mono.add(l.spec().code, l.render(sampler.sentence(rng, opt.min_len, opt.max_len)), corpus::Split::train,
                    "synthetic");
    }
  }
  return data;
}

/// True if more than half of the sentence's tokens carry the prefix of
/// `expected`. Empty output is off-target.
inline bool on_target(std::string_view sentence, const LangTag& expected, const GroundTruth& truth) {
  const auto& lang = truth.language(expected);
  const auto toks = text::split_ws(sentence);
  size_t hits = 0;
  for (const auto& t : toks) hits += truth.owner(t) == &lang;
  return 2 * hits > toks.size();
}

/// Fraction of outputs that are not on-target.
inline double off_target_rate(const std::vector<std::string>& outputs, const LangTag& expected,
                              const GroundTruth& truth) {
  if (outputs.empty()) fail(ErrorKind::value, "off_target_rate of an empty output list");
  size_t off = 0;
  for (const auto& o : outputs) off += !on_target(o, expected, truth);
  return static_cast<double>(off) / static_cast<double>(outputs.size());
}

}  // namespace mmt::harness
