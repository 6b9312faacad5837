#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <queue>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "mmt/core/error.hpp"
#include "mmt/core/hash.hpp"
#include "mmt/core/lang.hpp"
#include "mmt/core/text.hpp"

namespace mmt::tokenizer {

/// Visible rendering of the word-boundary space inside pieces.
inline constexpr std::string_view kBoundaryMarker = "\xE2\x96\x81";  // U+2581
/// decode() output for the unknown-token id.
inline constexpr std::string_view kUnknownMarker = "\xE2\x81\x87";  // U+2047

/// NFC, U+2581 mapped to a plain space, whitespace collapsed and trimmed.
inline std::string normalize(std::string_view s) {
  std::string n = text::nfc(s);
  std::string out;
  out.reserve(n.size());
  for (size_t i = 0; i < n.size(); ++i) {
    if (n.compare(i, kBoundaryMarker.size(), kBoundaryMarker) == 0) {
      out.push_back(' ');
      i += kBoundaryMarker.size() - 1;
    } else {
      out.push_back(n[i]);
    }
  }
  return text::collapse_whitespace(out);
}

/// Byte-level BPE vocabulary.
///
/// Id layout: special tokens first (pad=0, eos=1, unk=2, then one "<code>"
/// per language), then the 256 byte values, then one id per merge in merge
/// order. Every word except the first of a line is encoded with its leading
/// space, so a space can only open a piece and merges never span two words.
/// No piece produced by a merge contains a special-token surface.
class SubwordModel {
 public:
  static constexpr int kPad = 0;
  static constexpr int kEos = 1;
  static constexpr int kUnk = 2;
  static constexpr int kByteCount = 256;

  SubwordModel() : SubwordModel(std::vector<LangTag>{}) {}

  explicit SubwordModel(const std::vector<LangTag>& langs) {
    specials_ = {"<pad>", "</s>", "<unk>"};
    for (const auto& l : langs) {
      const auto tok = l.token();
      if (std::find(specials_.begin(), specials_.end(), tok) != specials_.end()) {
        fail(ErrorKind::value, "duplicate language tag " + tok);
      }
      specials_.push_back(tok);
    }
    rebuild_tables();
  }

  size_t vocab_size() const { return pieces_.size(); }
  size_t special_count() const { return specials_.size(); }
  const std::vector<std::string>& special_tokens() const { return specials_; }
  const std::vector<std::pair<int, int>>& merges() const { return merges_; }
  const std::vector<std::string>& pieces() const { return pieces_; }
  int byte_id(uint8_t b) const { return static_cast<int>(specials_.size()) + b; }
  int space_id() const { return byte_id(' '); }

  bool is_special(int id) const { return id >= 0 && static_cast<size_t>(id) < specials_.size(); }
  bool is_language_tag(int id) const { return id >= 3 && static_cast<size_t>(id) < specials_.size(); }

  /// Id of a registered language tag surface ("<eng>"), or -1.
  int tag_id(std::string_view surface) const {
    auto it = tag_ids_.find(std::string(surface));
    return it == tag_ids_.end() ? -1 : it->second;
  }
  int tag_id(const LangTag& lang) const { return tag_id(lang.token()); }

  std::vector<int> language_tag_ids() const {
    std::vector<int> out;
    for (size_t i = 3; i < specials_.size(); ++i) out.push_back(static_cast<int>(i));
    return out;
  }

  const std::string& piece(int id) const {
    check_id(id);
    return pieces_[static_cast<size_t>(id)];
  }

  /// Token ids of `text` followed by eos. Leading registered language tags
  /// (each followed by a space or end of text) map to their single id.
  std::vector<int> encode(std::string_view text) const {
    std::vector<int> ids;
    encode_into(normalize(text), ids);
    ids.push_back(kEos);
    return ids;
  }

  /// Piece strings of `text` without eos; a leading space renders as U+2581.
  std::vector<std::string> encode_pieces(std::string_view text) const {
    std::vector<int> ids;
    encode_into(normalize(text), ids);
    std::vector<std::string> out;
    out.reserve(ids.size());
    for (int id : ids) out.push_back(display_piece(id));
    return out;
  }

  std::string display_piece(int id) const {
    const auto& p = piece(id);
    if (!is_special(id) && !p.empty() && p[0] == ' ') return std::string(kBoundaryMarker) + p.substr(1);
    return p;
  }

  /// Inverse of encode up to the first eos. pad is dropped, unk renders as
  /// U+2047, language tags render as "<code>". Output is valid UTF-8.
  std::string decode(std::span<const int> ids) const {
    std::string out;
    bool after_tag = false;
    for (int id : ids) {
      check_id(id);
      if (id == kEos) break;
      if (id == kPad) continue;
      if (is_language_tag(id)) {
        if (!out.empty()) out.push_back(' ');
        out += pieces_[static_cast<size_t>(id)];
        after_tag = true;
        continue;
      }
      const std::string& p = pieces_[static_cast<size_t>(id)];
      const bool opens_word = !p.empty() && p[0] == ' ' && !is_special(id);
      if (after_tag) {
        if (!opens_word) out.push_back(' ');
        after_tag = false;
      }
      if (id == kUnk) {
        out += kUnknownMarker;
      } else if (out.empty() && opens_word) {
        out += p.substr(1);  // generated text may open with a boundary
      } else {
        out += p;
      }
    }
    return text::sanitize_utf8(out);
  }

  std::string decode(const std::vector<int>& ids) const { return decode(std::span<const int>(ids)); }

  /// Single text file: header, merges in order, pieces in id order (hex).
  std::string serialize() const {
    std::ostringstream os;
    os << "mmt-bpe v1\n";
    os << "vocab_size " << pieces_.size() << '\n';
    os << "specials " << specials_.size() << '\n';
    for (const auto& s : specials_) os << s << '\n';
    os << "merges " << merges_.size() << '\n';
    for (const auto& [a, b] : merges_) os << a << ' ' << b << '\n';
    os << "pieces " << pieces_.size() << '\n';
    static const char* digits = "0123456789abcdef";
    for (size_t i = 0; i < pieces_.size(); ++i) {
      os << i << ' ';
      for (unsigned char c : pieces_[i]) os << digits[c >> 4] << digits[c & 15];
      os << '\n';
    }
    return os.str();
  }

  static SubwordModel parse(std::string_view data) {
    std::istringstream is{std::string(data)};
    std::string line, word;
    auto expect = [&](const std::string& key) -> size_t {
      if (!std::getline(is, line)) fail(ErrorKind::format, "tokenizer file truncated before " + key);
      std::istringstream ls(line);
      size_t n = 0;
      if (!(ls >> word >> n) || word != key) fail(ErrorKind::format, "tokenizer file: expected " + key);
      return n;
    };
    if (!std::getline(is, line) || line != "mmt-bpe v1") fail(ErrorKind::format, "not a tokenizer file");
    const size_t vocab = expect("vocab_size");
    const size_t nspecial = expect("specials");
    SubwordModel m;
    m.specials_.clear();
    for (size_t i = 0; i < nspecial; ++i) {
      if (!std::getline(is, line)) fail(ErrorKind::format, "tokenizer file: truncated specials");
      m.specials_.push_back(line);
    }
    if (m.specials_.size() < 3 || m.specials_[0] != "<pad>" || m.specials_[1] != "</s>" ||
        m.specials_[2] != "<unk>") {
      fail(ErrorKind::format, "tokenizer file: bad special tokens");
    }
    m.rebuild_tables();
    const size_t nmerges = expect("merges");
    for (size_t i = 0; i < nmerges; ++i) {
      if (!std::getline(is, line)) fail(ErrorKind::format, "tokenizer file: truncated merges");
      std::istringstream ls(line);
      int a = -1, b = -1;
      ls >> a >> b;
      if (a < 0 || b < 0 || static_cast<size_t>(a) >= m.pieces_.size() ||
          static_cast<size_t>(b) >= m.pieces_.size()) {
        fail(ErrorKind::format, "tokenizer file: bad merge line " + std::to_string(i));
      }
      m.add_merge(a, b);
    }
    const size_t npieces = expect("pieces");
    if (npieces != vocab || m.pieces_.size() != vocab) {
      fail(ErrorKind::format, "tokenizer file: vocab size mismatch");
    }
    for (size_t i = 0; i < npieces; ++i) {
      if (!std::getline(is, line)) fail(ErrorKind::format, "tokenizer file: truncated pieces");
      const auto sp = line.find(' ');
      const std::string hex = sp == std::string::npos ? std::string() : line.substr(sp + 1);
      std::string bytes;
      for (size_t k = 0; k + 1 < hex.size(); k += 2) {
        bytes.push_back(static_cast<char>(std::stoi(hex.substr(k, 2), nullptr, 16)));
      }
      if (bytes != m.pieces_[i]) fail(ErrorKind::format, "tokenizer file: piece " + std::to_string(i) + " mismatch");
    }
    return m;
  }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(ErrorKind::io, "cannot write " + path);
    out << serialize();
  }

  static SubwordModel load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::io, "cannot read " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
  }

  /// Content fingerprint of the serialized model.
  std::string hash() const { return hex64(fnv1a64(serialize())); }

  /// Greedy most-frequent-pair BPE over the 256-byte alphabet. Stops at
  /// `vocab_size` or when no pair occurs at least twice. Frequency ties go to
  /// the lexicographically smaller (left piece, right piece).
  static SubwordModel train(const std::vector<std::string>& corpus, size_t vocab_size,
                            const std::vector<LangTag>& langs);

 private:
  void rebuild_tables() {
    pieces_.clear();
    merges_.clear();
    merge_rank_.clear();
    tag_ids_.clear();
    for (const auto& s : specials_) pieces_.push_back(s);
    for (int b = 0; b < kByteCount; ++b) pieces_.push_back(std::string(1, static_cast<char>(b)));
    for (size_t i = 3; i < specials_.size(); ++i) tag_ids_[specials_[i]] = static_cast<int>(i);
  }

  static uint64_t key(int a, int b) {
    return (static_cast<uint64_t>(static_cast<uint32_t>(a)) << 32) | static_cast<uint32_t>(b);
  }

  int add_merge(int a, int b) {
    const int id = static_cast<int>(pieces_.size());
    merges_.emplace_back(a, b);
    pieces_.push_back(pieces_[static_cast<size_t>(a)] + pieces_[static_cast<size_t>(b)]);
    merge_rank_[key(a, b)] = static_cast<int>(merges_.size() - 1);
    return id;
  }

  void check_id(int id) const {
    if (id < 0 || static_cast<size_t>(id) >= pieces_.size()) {
      fail(ErrorKind::range, "token id " + std::to_string(id) + " out of range [0," +
                                 std::to_string(pieces_.size()) + ")");
    }
  }

  void encode_word(std::string_view word, std::vector<int>& out) const {
    std::vector<int> sym;
    sym.reserve(word.size());
    for (unsigned char c : word) sym.push_back(byte_id(c));
    while (sym.size() > 1) {
      int best_rank = INT32_MAX;
      size_t best_pos = 0;
      for (size_t i = 0; i + 1 < sym.size(); ++i) {
        auto it = merge_rank_.find(key(sym[i], sym[i + 1]));
        if (it != merge_rank_.end() && it->second < best_rank) {
          best_rank = it->second;
          best_pos = i;
        }
      }
      if (best_rank == INT32_MAX) break;
      const auto [a, b] = merges_[static_cast<size_t>(best_rank)];
      const int merged = static_cast<int>(specials_.size()) + kByteCount + best_rank;
      std::vector<int> next;
      next.reserve(sym.size());
      for (size_t i = 0; i < sym.size();) {
        if (i >= best_pos && i + 1 < sym.size() && sym[i] == a && sym[i + 1] == b) {
          next.push_back(merged);
          i += 2;
        } else {
          next.push_back(sym[i]);
          ++i;
        }
      }
      sym.swap(next);
    }
    out.insert(out.end(), sym.begin(), sym.end());
  }

  void encode_into(std::string_view text, std::vector<int>& out) const {
    // Leading language tags.
    while (!text.empty() && text.front() == '<') {
      const auto close = text.find('>');
      if (close == std::string_view::npos) break;
      const int id = tag_id(text.substr(0, close + 1));
      if (id < 0 || (close + 1 < text.size() && text[close + 1] != ' ')) break;
      out.push_back(id);
      text.remove_prefix(std::min(text.size(), close + 2));
    }
    bool first = true;
    std::string buf;
    for (auto word : text::split_ws(text)) {
      if (first) {
        encode_word(word, out);
        first = false;
      } else {
        buf.assign(1, ' ');
        buf += word;
        encode_word(buf, out);
      }
    }
  }

  std::vector<std::string> specials_;
  std::vector<std::string> pieces_;
  std::vector<std::pair<int, int>> merges_;
  std::unordered_map<uint64_t, int> merge_rank_;
  std::unordered_map<std::string, int> tag_ids_;
};

inline SubwordModel SubwordModel::train(const std::vector<std::string>& corpus, size_t vocab_size,
                                        const std::vector<LangTag>& langs) {
  SubwordModel model(langs);
  const size_t base = model.specials_.size() + kByteCount;
  if (vocab_size <= base) {
    fail(ErrorKind::config, "vocab_size " + std::to_string(vocab_size) + " must exceed " +
                                std::to_string(base) + " (specials + byte alphabet)");
  }

  std::map<std::string, int64_t> word_freq;
  for (const auto& line : corpus) {
    const std::string norm = normalize(line);
    bool first = true;
    for (auto w : text::split_ws(norm)) {
      ++word_freq[first ? std::string(w) : " " + std::string(w)];
      first = false;
    }
  }
  if (word_freq.empty()) fail(ErrorKind::empty_corpus, "tokenizer training corpus is empty");

  std::vector<std::vector<int>> words;
  std::vector<int64_t> freqs;
  for (const auto& [w, f] : word_freq) {
    std::vector<int> sym;
    for (unsigned char c : w) sym.push_back(model.byte_id(c));
    words.push_back(std::move(sym));
    freqs.push_back(f);
  }

  std::unordered_map<uint64_t, int64_t> counts;
  std::unordered_map<uint64_t, std::vector<uint32_t>> where;
  for (uint32_t wi = 0; wi < words.size(); ++wi) {
    const auto& s = words[wi];
    for (size_t i = 0; i + 1 < s.size(); ++i) {
      const auto k = key(s[i], s[i + 1]);
      counts[k] += freqs[wi];
      where[k].push_back(wi);
    }
  }

  struct Entry {
    int64_t count;
    int a, b;
  };
  const auto& pieces = model.pieces_;
  // Max-heap on count; ties prefer the lexicographically smaller pair.
  auto worse = [&pieces](const Entry& x, const Entry& y) {
    if (x.count != y.count) return x.count < y.count;
    const auto& xa = pieces[static_cast<size_t>(x.a)];
    const auto& ya = pieces[static_cast<size_t>(y.a)];
    if (xa != ya) return xa > ya;
    return pieces[static_cast<size_t>(x.b)] > pieces[static_cast<size_t>(y.b)];
  };
  std::priority_queue<Entry, std::vector<Entry>, decltype(worse)> heap(worse);
  for (const auto& [k, c] : counts) {
    heap.push({c, static_cast<int>(k >> 32), static_cast<int>(k & 0xffffffffu)});
  }

  std::unordered_set<uint64_t> banned;
  auto contains_special = [&](const std::string& s) {
    for (const auto& sp : model.specials_) {
      if (s.find(sp) != std::string::npos) return true;
    }
    return false;
  };

  std::vector<uint32_t> touched_mark(words.size(), UINT32_MAX);
  uint32_t merge_index = 0;
  while (model.pieces_.size() < vocab_size && !heap.empty()) {
    const Entry top = heap.top();
    heap.pop();
    const auto k = key(top.a, top.b);
    auto cit = counts.find(k);
    if (cit == counts.end() || cit->second != top.count) continue;  // stale
    if (top.count < 2) break;
    if (banned.count(k)) continue;
    if (contains_special(pieces[static_cast<size_t>(top.a)] + pieces[static_cast<size_t>(top.b)])) {
      banned.insert(k);
      continue;
    }
    const int merged = model.add_merge(top.a, top.b);
    std::unordered_map<uint64_t, int64_t> delta;
    for (uint32_t wi : where[k]) {
      if (touched_mark[wi] == merge_index) continue;
      touched_mark[wi] = merge_index;
      auto& s = words[wi];
      const int64_t f = freqs[wi];
      bool has = false;
      for (size_t i = 0; i + 1 < s.size(); ++i) {
        if (s[i] == top.a && s[i + 1] == top.b) {
          has = true;
          break;
        }
      }
      if (!has) continue;
      for (size_t i = 0; i + 1 < s.size(); ++i) delta[key(s[i], s[i + 1])] -= f;
      std::vector<int> next;
      next.reserve(s.size());
      for (size_t i = 0; i < s.size();) {
        if (i + 1 < s.size() && s[i] == top.a && s[i + 1] == top.b) {
          next.push_back(merged);
          i += 2;
        } else {
          next.push_back(s[i]);
          ++i;
        }
      }
      s.swap(next);
      for (size_t i = 0; i + 1 < s.size(); ++i) {
        const auto nk = key(s[i], s[i + 1]);
        delta[nk] += f;
        if (s[i] == merged || s[i + 1] == merged) where[nk].push_back(wi);
      }
    }
    for (const auto& [dk, dv] : delta) {
      if (dv == 0) continue;
      auto& c = counts[dk];
      c += dv;
      if (c > 0) heap.push({c, static_cast<int>(dk >> 32), static_cast<int>(dk & 0xffffffffu)});
    }
    counts.erase(k);
    ++merge_index;
  }
  return model;
}

}  // namespace mmt::tokenizer
