#pragma once

#include <algorithm>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mmt/core/error.hpp"
#include "mmt/core/hash.hpp"
#include "mmt/core/lang.hpp"
#include "mmt/core/rng.hpp"
#include "mmt/core/text.hpp"

namespace mmt::corpus {

enum class Split { train, dev, test };

inline const char* split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::dev: return "dev";
    case Split::test: return "test";
  }
  return "train";
}

inline Split parse_split(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "dev") return Split::dev;
  if (s == "test") return Split::test;
  fail(ErrorKind::format, "unknown split label '" + std::string(s) + "'");
}

struct ParallelPair {
  Direction direction;
  std::string src_text;
  std::string tgt_text;
  std::string domain_label;
};

struct ParallelRecord {
  ParallelPair pair;
  Split split = Split::train;
};

struct MonoRecord {
  LangTag lang;
  std::string text;
  std::string domain_label;
  Split split = Split::train;
};

/// Sentence pairs grouped by direction, each carrying a split label.
class ParallelStore {
 public:
  void add(ParallelPair pair, Split split = Split::train) {
    if (text::trim(pair.src_text).empty() || text::trim(pair.tgt_text).empty()) {
      fail(ErrorKind::value, "parallel pair with empty side in " + pair.direction.str());
    }
    auto dir = pair.direction;
    groups_[dir].push_back({std::move(pair), split});
  }

  void add_record(ParallelRecord rec) { add(std::move(rec.pair), rec.split); }

  size_t size() const {
    size_t n = 0;
    for (const auto& [_, v] : groups_) n += v.size();
    return n;
  }

  bool empty() const { return size() == 0; }

  std::vector<Direction> directions() const {
    std::vector<Direction> out;
    for (const auto& [d, v] : groups_) {
      if (!v.empty()) out.push_back(d);
    }
    return out;
  }

  const std::vector<ParallelRecord>& records(const Direction& d) const {
    static const std::vector<ParallelRecord> kEmpty;
    auto it = groups_.find(d);
    return it == groups_.end() ? kEmpty : it->second;
  }

  std::vector<ParallelRecord>& mutable_records(const Direction& d) { return groups_[d]; }

  const std::map<Direction, std::vector<ParallelRecord>>& groups() const { return groups_; }

  /// Pairs of one direction (all of them, or those in `split`).
  std::vector<ParallelPair> pairs(const Direction& d, std::optional<Split> split = {}) const {
    std::vector<ParallelPair> out;
    for (const auto& r : records(d)) {
      if (!split || r.split == *split) out.push_back(r.pair);
    }
    return out;
  }

  size_t count(std::optional<Split> split = {}) const {
    size_t n = 0;
    for (const auto& [_, v] : groups_) {
      for (const auto& r : v) n += (!split || r.split == *split);
    }
    return n;
  }

  void merge(const ParallelStore& other) {
    for (const auto& [d, v] : other.groups_) {
      auto& dst = groups_[d];
      dst.insert(dst.end(), v.begin(), v.end());
    }
  }

  friend bool operator==(const ParallelStore& a, const ParallelStore& b) {
    if (a.groups_.size() != b.groups_.size()) return false;
    for (const auto& [d, v] : a.groups_) {
      const auto& w = b.records(d);
      if (v.size() != w.size()) return false;
      for (size_t i = 0; i < v.size(); ++i) {
        const auto& x = v[i];
        const auto& y = w[i];
        if (x.split != y.split || x.pair.src_text != y.pair.src_text ||
            x.pair.tgt_text != y.pair.tgt_text || x.pair.domain_label != y.pair.domain_label) {
          return false;
        }
      }
    }
    return true;
  }

 private:
  std::map<Direction, std::vector<ParallelRecord>> groups_;
};

/// Monolingual sentences grouped by language.
class MonoStore {
 public:
  void add(const LangTag& lang, std::string sentence, Split split = Split::train,
           std::string domain = {}) {
    if (text::trim(sentence).empty()) fail(ErrorKind::value, "empty monolingual sentence");
    groups_[lang].push_back({lang, std::move(sentence), std::move(domain), split});
  }

  std::vector<LangTag> languages() const {
    std::vector<LangTag> out;
    for (const auto& [l, v] : groups_) {
      if (!v.empty()) out.push_back(l);
    }
    return out;
  }

  const std::vector<MonoRecord>& records(const LangTag& lang) const {
    static const std::vector<MonoRecord> kEmpty;
    auto it = groups_.find(lang);
    return it == groups_.end() ? kEmpty : it->second;
  }

  std::vector<std::string> sentences(const LangTag& lang, std::optional<Split> split = {}) const {
    std::vector<std::string> out;
    for (const auto& r : records(lang)) {
      if (!split || r.split == *split) out.push_back(r.text);
    }
    return out;
  }

  size_t size() const {
    size_t n = 0;
    for (const auto& [_, v] : groups_) n += v.size();
    return n;
  }

  const std::map<LangTag, std::vector<MonoRecord>>& groups() const { return groups_; }

 private:
  std::map<LangTag, std::vector<MonoRecord>> groups_;
};

// ---------------------------------------------------------------------------
// Loading

enum class Format { tsv2, jsonl };

inline Format parse_format(std::string_view s) {
  if (s == "tsv2" || s == "tsv") return Format::tsv2;
  if (s == "jsonl") return Format::jsonl;
  fail(ErrorKind::config, "unknown corpus format '" + std::string(s) + "' (tsv2|jsonl)");
}

struct LoadResult {
  ParallelStore store;
  size_t lines = 0;
  size_t malformed = 0;
};

namespace detail {

inline bool parse_tsv2_line(std::string_view line, std::string& src, std::string& tgt) {
  const auto tab = line.find('\t');
  if (tab == std::string_view::npos || line.find('\t', tab + 1) != std::string_view::npos) {
    return false;
  }
  src = std::string(text::trim(line.substr(0, tab)));
  tgt = std::string(text::trim(line.substr(tab + 1)));
  return !src.empty() && !tgt.empty();
}

inline bool parse_jsonl_line(std::string_view line, std::string& src, std::string& tgt,
                             std::string& domain) {
  auto j = nlohmann::json::parse(line, nullptr, false);
  if (j.is_discarded() || !j.is_object()) return false;
  auto src_it = j.find("src");
  auto tgt_it = j.find("tgt");
  if (src_it == j.end() || tgt_it == j.end() || !src_it->is_string() || !tgt_it->is_string()) {
    return false;
  }
  src = std::string(text::trim(src_it->get<std::string>()));
  tgt = std::string(text::trim(tgt_it->get<std::string>()));
  if (auto d = j.find("domain"); d != j.end() && d->is_string()) domain = d->get<std::string>();
  return !src.empty() && !tgt.empty();
}

inline std::ifstream open_input(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io, "cannot read " + path);
  return in;
}

}  // namespace detail

/// One pair per well-formed line. Malformed lines (wrong field count,
/// missing keys, empty sides, invalid UTF-8) are counted, not fatal.
inline LoadResult load_parallel(const std::string& path, const Direction& direction, Format format,
                                const std::string& default_domain = "default") {
  auto in = detail::open_input(path);
  LoadResult result;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (text::trim(line).empty()) continue;
    ++result.lines;
    std::string src, tgt, domain = default_domain;
    bool ok = text::is_valid_utf8(line);
    if (ok) {
      ok = format == Format::tsv2 ? detail::parse_tsv2_line(line, src, tgt)
                                  : detail::parse_jsonl_line(line, src, tgt, domain);
    }
    if (!ok) {
      ++result.malformed;
      continue;
    }
    result.store.add({direction, std::move(src), std::move(tgt), std::move(domain)});
  }
  if (result.store.empty()) fail(ErrorKind::empty_corpus, "no well-formed lines in " + path);
  return result;
}

/// One sentence per line.
inline MonoStore load_mono(const std::string& path, const LangTag& lang, size_t* malformed = nullptr) {
  auto in = detail::open_input(path);
  MonoStore store;
  size_t bad = 0;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    auto t = text::trim(line);
    if (t.empty()) continue;
    if (!text::is_valid_utf8(t)) {
      ++bad;
      continue;
    }
    store.add(lang, std::string(t));
  }
  if (malformed) *malformed = bad;
  if (store.size() == 0) fail(ErrorKind::empty_corpus, "no sentences in " + path);
  return store;
}

// ---------------------------------------------------------------------------
// Cleaning

struct CleaningConfig {
  size_t max_len = 50;
  size_t min_len = 2;
  bool dedup = true;
  double opus_confidence_threshold = 1.5;  // recorded only

  void validate() const {
    if (min_len < 1 || min_len > max_len) {
      fail(ErrorKind::config, "cleaning bounds must satisfy 1 <= min_len <= max_len");
    }
  }
};

struct CleanCounts {
  size_t input = 0;
  size_t too_long = 0;
  size_t too_short = 0;
  size_t duplicate = 0;
  size_t kept = 0;
};

struct CleanReport {
  std::map<Direction, CleanCounts> by_direction;
  CleaningConfig config;

  CleanCounts totals() const {
    CleanCounts t;
    for (const auto& [_, c] : by_direction) {
      t.input += c.input;
      t.too_long += c.too_long;
      t.too_short += c.too_short;
      t.duplicate += c.duplicate;
      t.kept += c.kept;
    }
    return t;
  }

  std::string to_csv() const {
    std::ostringstream os;
    os << "direction,input,too_long,too_short,duplicate,kept\n";
    auto row = [&](const std::string& name, const CleanCounts& c) {
      os << name << ',' << c.input << ',' << c.too_long << ',' << c.too_short << ','
         << c.duplicate << ',' << c.kept << '\n';
    };
    for (const auto& [d, c] : by_direction) row(d.str(), c);
    row("total", totals());
    return os.str();
  }

  std::string to_text() const {
    std::ostringstream os;
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-12s %10s %10s %10s %10s %10s\n", "direction", "input",
                  "too_long", "too_short", "duplicate", "kept");
    os << buf;
    auto row = [&](const std::string& name, const CleanCounts& c) {
      std::snprintf(buf, sizeof buf, "%-12s %10zu %10zu %10zu %10zu %10zu\n", name.c_str(),
                    c.input, c.too_long, c.too_short, c.duplicate, c.kept);
      os << buf;
    };
    for (const auto& [d, c] : by_direction) row(d.str(), c);
    row("total", totals());
    std::snprintf(buf, sizeof buf, "bounds: min_len=%zu max_len=%zu dedup=%s opus_t=%.2f (not applied)\n",
                  config.min_len, config.max_len, config.dedup ? "true" : "false",
                  config.opus_confidence_threshold);
    os << buf;
    return os.str();
  }
};

struct CleanResult {
  ParallelStore store;
  CleanReport report;
};

/// Normalizes (NFC, trim, whitespace collapse), applies whitespace-token
/// length bounds to both sides and collapses exact duplicates per direction.
/// Split labels are carried through.
inline CleanResult clean(const ParallelStore& store, const CleaningConfig& config) {
  config.validate();
  CleanResult result;
  result.report.config = config;
  for (const auto& [dir, records] : store.groups()) {
    auto& counts = result.report.by_direction[dir];
    std::set<std::pair<std::string, std::string>> seen;
    for (const auto& rec : records) {
      ++counts.input;
      std::string src = text::normalize_sentence(rec.pair.src_text);
      std::string tgt = text::normalize_sentence(rec.pair.tgt_text);
      const size_t ns = text::count_tokens(src);
      const size_t nt = text::count_tokens(tgt);
      if (ns > config.max_len || nt > config.max_len) {
        ++counts.too_long;
        continue;
      }
      if (ns < config.min_len || nt < config.min_len) {
        ++counts.too_short;
        continue;
      }
      if (config.dedup && !seen.emplace(src, tgt).second) {
        ++counts.duplicate;
        continue;
      }
      ++counts.kept;
      result.store.add({dir, std::move(src), std::move(tgt), rec.pair.domain_label}, rec.split);
    }
  }
  return result;
}

/// Same normalization, bounds and dedup for monolingual text.
inline MonoStore clean_mono(const MonoStore& store, const CleaningConfig& config) {
  config.validate();
  MonoStore out;
  for (const auto& [lang, records] : store.groups()) {
    std::set<std::string> seen;
    for (const auto& r : records) {
      std::string s = text::normalize_sentence(r.text);
      const size_t n = text::count_tokens(s);
      if (n < config.min_len || n > config.max_len) continue;
      if (config.dedup && !seen.insert(s).second) continue;
      out.add(lang, std::move(s), r.split, r.domain_label);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Splitting

struct SplitSpec {
  size_t dev_per_direction = 0;
  size_t test_per_direction = 0;
  uint64_t seed = 13;
  bool stratify_by_domain = true;
};

namespace detail {

// Takes `k` items from per-domain shuffled queues, equal (+-1) across domains
// where capacity allows. `cursor[d]` tracks consumed items of domain d.
inline std::vector<size_t> draw_balanced(const std::vector<std::vector<size_t>>& domains,
                                         std::vector<size_t>& cursor, size_t k, size_t rotate) {
  std::vector<size_t> out;
  const size_t nd = domains.size();
  while (out.size() < k) {
    size_t progressed = 0;
    for (size_t r = 0; r < nd && out.size() < k; ++r) {
      const size_t d = (r + rotate) % nd;
      if (cursor[d] < domains[d].size()) {
        out.push_back(domains[d][cursor[d]++]);
        ++progressed;
      }
    }
    if (progressed == 0) break;
  }
  return out;
}

}  // namespace detail

/// Labels dev/test records per direction; everything else becomes train.
/// Deterministic in (store, spec.seed).
inline ParallelStore split(const ParallelStore& store, const SplitSpec& spec) {
  ParallelStore out;
  for (const auto& [dir, records] : store.groups()) {
    const size_t need = spec.dev_per_direction + spec.test_per_direction;
    if (need >= records.size()) {
      fail(ErrorKind::insufficient_data,
           "direction " + dir.str() + " has " + std::to_string(records.size()) +
               " pairs, need more than dev+test=" + std::to_string(need));
    }
    Rng rng = rng_fork(spec.seed, fnv1a64(dir.str()));
    std::vector<std::vector<size_t>> domains;
    if (spec.stratify_by_domain) {
      std::map<std::string, std::vector<size_t>> by_domain;
      for (size_t i = 0; i < records.size(); ++i) by_domain[records[i].pair.domain_label].push_back(i);
      for (auto& [_, idx] : by_domain) domains.push_back(std::move(idx));
    } else {
      domains.emplace_back(records.size());
      for (size_t i = 0; i < records.size(); ++i) domains[0][i] = i;
    }
    for (auto& idx : domains) rng.shuffle(std::span<size_t>(idx));
    std::vector<size_t> cursor(domains.size(), 0);
    const size_t rotate = rng.below(domains.size());
    const auto dev = detail::draw_balanced(domains, cursor, spec.dev_per_direction, rotate);
    const auto test = detail::draw_balanced(domains, cursor, spec.test_per_direction,
                                            (rotate + spec.dev_per_direction) % domains.size());
    std::vector<Split> labels(records.size(), Split::train);
    for (size_t i : dev) labels[i] = Split::dev;
    for (size_t i : test) labels[i] = Split::test;
    for (size_t i = 0; i < records.size(); ++i) out.add(records[i].pair, labels[i]);
  }
  return out;
}

/// Mono split: holds out `dev` sentences per language.
inline MonoStore split_mono(const MonoStore& store, size_t dev_per_lang, uint64_t seed) {
  MonoStore out;
  for (const auto& [lang, records] : store.groups()) {
    std::vector<size_t> idx(records.size());
    for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    Rng rng = rng_fork(seed, fnv1a64("mono:" + lang.code()));
    rng.shuffle(std::span<size_t>(idx));
    std::vector<Split> labels(records.size(), Split::train);
    for (size_t i = 0; i < std::min(dev_per_lang, idx.size()); ++i) labels[idx[i]] = Split::dev;
    for (size_t i = 0; i < records.size(); ++i) {
      out.add(lang, records[i].text, labels[i], records[i].domain_label);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Statistics

/// Square source x target count table, rows/cols sorted by language code.
class DirectionCountTable {
 public:
  DirectionCountTable() = default;
  explicit DirectionCountTable(std::vector<LangTag> langs)
      : langs_(std::move(langs)), counts_(langs_.size() * langs_.size(), 0) {
    std::sort(langs_.begin(), langs_.end());
  }

  const std::vector<LangTag>& languages() const { return langs_; }

  size_t at(const LangTag& src, const LangTag& tgt) const {
    const auto i = index(src), j = index(tgt);
    if (i < 0 || j < 0) return 0;
    return counts_[static_cast<size_t>(i) * langs_.size() + static_cast<size_t>(j)];
  }

  void add(const LangTag& src, const LangTag& tgt, size_t n) {
    const auto i = index(src), j = index(tgt);
    if (i < 0 || j < 0) fail(ErrorKind::value, "language not in table");
    counts_[static_cast<size_t>(i) * langs_.size() + static_cast<size_t>(j)] += n;
  }

  size_t total() const {
    size_t t = 0;
    for (auto c : counts_) t += c;
    return t;
  }

  std::string to_csv() const {
    std::ostringstream os;
    os << "src";
    for (const auto& l : langs_) os << ',' << l.code();
    os << '\n';
    for (const auto& s : langs_) {
      os << s.code();
      for (const auto& t : langs_) os << ',' << at(s, t);
      os << '\n';
    }
    return os.str();
  }

  std::string to_text() const {
    size_t width = 5;
    for (auto c : counts_) width = std::max(width, std::to_string(c).size() + 2);
    std::ostringstream os;
    auto pad = [&](const std::string& s) {
      os << std::string(width > s.size() ? width - s.size() : 1, ' ') << s;
    };
    os << "src\\tgt";
    for (const auto& l : langs_) pad(l.code());
    os << '\n';
    for (const auto& s : langs_) {
      os << s.code() << "    ";
      for (const auto& t : langs_) pad(s == t ? std::string("-") : std::to_string(at(s, t)));
      os << '\n';
    }
    os << "total " << total() << '\n';
    return os.str();
  }

 private:
  long index(const LangTag& l) const {
    auto it = std::lower_bound(langs_.begin(), langs_.end(), l);
    if (it == langs_.end() || *it != l) return -1;
    return it - langs_.begin();
  }

  std::vector<LangTag> langs_;
  std::vector<size_t> counts_;
};

inline DirectionCountTable stats(const ParallelStore& store, std::optional<Split> split = {}) {
  std::set<LangTag> langs;
  for (const auto& [d, v] : store.groups()) {
    langs.insert(d.src);
    langs.insert(d.tgt);
  }
  DirectionCountTable table(std::vector<LangTag>(langs.begin(), langs.end()));
  for (const auto& [d, v] : store.groups()) {
    size_t n = 0;
    for (const auto& r : v) n += (!split || r.split == *split);
    table.add(d.src, d.tgt, n);
  }
  return table;
}

// ---------------------------------------------------------------------------
// Store serialization (jsonl, one record per line, split label included)

inline void save_store(const ParallelStore& store, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::io, "cannot write " + path);
  for (const auto& [d, v] : store.groups()) {
    for (const auto& r : v) {
      nlohmann::json j{{"src_lang", d.src.code()}, {"tgt_lang", d.tgt.code()},
                       {"src", r.pair.src_text},   {"tgt", r.pair.tgt_text},
                       {"domain", r.pair.domain_label}, {"split", split_name(r.split)}};
      out << j.dump() << '\n';
    }
  }
}

inline ParallelStore read_store(const std::string& path) {
  auto in = detail::open_input(path);
  ParallelStore store;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (text::trim(line).empty()) continue;
    auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) fail(ErrorKind::format, path + ":" + std::to_string(lineno) + ": bad json");
    try {
      Direction d(LangTag(j.at("src_lang").get<std::string>()),
                  LangTag(j.at("tgt_lang").get<std::string>()));
      store.add({d, j.at("src").get<std::string>(), j.at("tgt").get<std::string>(),
                 j.value("domain", std::string("default"))},
                parse_split(j.value("split", std::string("train"))));
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::format, path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return store;
}

inline void save_mono_store(const MonoStore& store, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::io, "cannot write " + path);
  for (const auto& [l, v] : store.groups()) {
    for (const auto& r : v) {
      nlohmann::json j{{"lang", l.code()}, {"text", r.text}, {"split", split_name(r.split)}};
      if (!r.domain_label.empty()) j["domain"] = r.domain_label;
      out << j.dump() << '\n';
    }
  }
}

inline MonoStore read_mono_store(const std::string& path) {
  auto in = detail::open_input(path);
  MonoStore store;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (text::trim(line).empty()) continue;
    auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) fail(ErrorKind::format, path + ":" + std::to_string(lineno) + ": bad json");
    try {
      store.add(LangTag(j.at("lang").get<std::string>()), j.at("text").get<std::string>(),
                parse_split(j.value("split", std::string("train"))), j.value("domain", std::string()));
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::format, path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return store;
}

}  // namespace mmt::corpus
