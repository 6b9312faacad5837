#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "mmt/core/error.hpp"
#include "mmt/core/text.hpp"
#include "mmt/tokenizer/bpe.hpp"

namespace mmt::metrics {

using Tokens = std::vector<std::string>;

inline void check_sizes(size_t hyps, size_t refs) {
  if (hyps != refs) {
    fail(ErrorKind::value, "hypothesis count " + std::to_string(hyps) + " != reference count " + std::to_string(refs));
  }
  if (hyps == 0) fail(ErrorKind::value, "empty evaluation set");
}

inline Tokens whitespace_tokens(std::string_view s) {
  Tokens out;
  for (auto w : text::split_ws(s)) out.emplace_back(w);
  return out;
}

namespace detail {

/// Length-prefixed join: distinct token sequences never share a key.
inline std::string ngram_key(const Tokens& toks, size_t start, size_t n) {
  std::string key;
  for (size_t i = start; i < start + n; ++i) {
    key += std::to_string(toks[i].size());
    key.push_back(':');
    key += toks[i];
  }
  return key;
}

inline std::unordered_map<std::string, size_t> ngram_counts(const Tokens& toks, size_t n) {
  std::unordered_map<std::string, size_t> out;
  for (size_t i = 0; i + n <= toks.size(); ++i) ++out[ngram_key(toks, i, n)];
  return out;
}

/// Clipped matches of hyp n-grams against ref n-grams.
inline size_t clipped_matches(const std::unordered_map<std::string, size_t>& hyp,
                              const std::unordered_map<std::string, size_t>& ref) {
  size_t m = 0;
  for (const auto& [k, c] : hyp) {
    auto it = ref.find(k);
    if (it != ref.end()) m += std::min(c, it->second);
  }
  return m;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// BLEU

struct BleuStats {
  std::array<size_t, 8> matches{};
  std::array<size_t, 8> totals{};
  size_t hyp_len = 0;
  size_t ref_len = 0;

  BleuStats& operator+=(const BleuStats& o) {
    for (size_t i = 0; i < matches.size(); ++i) {
      matches[i] += o.matches[i];
      totals[i] += o.totals[i];
    }
    hyp_len += o.hyp_len;
    ref_len += o.ref_len;
    return *this;
  }
};

inline BleuStats bleu_stats(const Tokens& hyp, const Tokens& ref, size_t max_n = 4) {
  if (max_n < 1 || max_n > 8) fail(ErrorKind::value, "bleu max_n must be in [1, 8]");
  BleuStats s;
  s.hyp_len = hyp.size();
  s.ref_len = ref.size();
  for (size_t n = 1; n <= max_n; ++n) {
    if (hyp.size() < n) break;
    s.totals[n - 1] = hyp.size() - n + 1;
    s.matches[n - 1] = detail::clipped_matches(detail::ngram_counts(hyp, n), detail::ngram_counts(ref, n));
  }
  return s;
}

/// Corpus BLEU from summed statistics with exponential smoothing: each order
/// with candidates but no matches doubles a factor s and uses 1/(s*total).
/// Orders without candidate n-grams are left out of the mean.
inline double bleu_from_stats(const BleuStats& s, size_t max_n = 4) {
  if (s.hyp_len == 0) return 0.0;
  double log_sum = 0.0;
  size_t orders = 0;
  double smooth = 1.0;
  for (size_t n = 0; n < max_n; ++n) {
    if (s.totals[n] == 0) continue;
    double p;
    if (s.matches[n] == 0) {
      smooth *= 2.0;
      p = 1.0 / (smooth * static_cast<double>(s.totals[n]));
    } else {
      p = static_cast<double>(s.matches[n]) / static_cast<double>(s.totals[n]);
    }
    log_sum += std::log(p);
    ++orders;
  }
  const double c = static_cast<double>(s.hyp_len), r = static_cast<double>(s.ref_len);
  const double bp = c > r ? 1.0 : std::exp(1.0 - r / c);
  return 100.0 * bp * std::exp(log_sum / static_cast<double>(orders));
}

inline double bleu(const std::vector<Tokens>& hyps, const std::vector<Tokens>& refs, size_t max_n = 4) {
  check_sizes(hyps.size(), refs.size());
  BleuStats total;
  for (size_t i = 0; i < hyps.size(); ++i) total += bleu_stats(hyps[i], refs[i], max_n);
  return bleu_from_stats(total, max_n);
}

inline std::vector<Tokens> piece_sequences(const std::vector<std::string>& texts, const tokenizer::SubwordModel& tok) {
  std::vector<Tokens> out;
  out.reserve(texts.size());
  for (const auto& t : texts) out.push_back(tok.encode_pieces(t));
  return out;
}

inline double spbleu(const std::vector<std::string>& hyps, const std::vector<std::string>& refs,
                     const tokenizer::SubwordModel& tok) {
  check_sizes(hyps.size(), refs.size());
  return bleu(piece_sequences(hyps, tok), piece_sequences(refs, tok));
}

// ---------------------------------------------------------------------------
// chrF

struct ChrfConfig {
  size_t n = 6;
  double beta = 2.0;
};

struct ChrfStats {
  std::vector<size_t> hyp, ref, match;  // per order

  explicit ChrfStats(size_t n = 6) : hyp(n), ref(n), match(n) {}

  ChrfStats& operator+=(const ChrfStats& o) {
    for (size_t i = 0; i < hyp.size(); ++i) {
      hyp[i] += o.hyp[i];
      ref[i] += o.ref[i];
      match[i] += o.match[i];
    }
    return *this;
  }
};

/// Order-1..n statistics over unit sequences (characters or pieces).
inline ChrfStats chrf_stats(const Tokens& hyp, const Tokens& ref, size_t n) {
  ChrfStats s(n);
  for (size_t k = 1; k <= n; ++k) {
    s.hyp[k - 1] = hyp.size() >= k ? hyp.size() - k + 1 : 0;
    s.ref[k - 1] = ref.size() >= k ? ref.size() - k + 1 : 0;
    if (s.hyp[k - 1] && s.ref[k - 1]) {
      s.match[k - 1] = detail::clipped_matches(detail::ngram_counts(hyp, k), detail::ngram_counts(ref, k));
    }
  }
  return s;
}

/// P and R are means over the orders with nonzero denominators.
inline double chrf_from_stats(const ChrfStats& s, double beta) {
  double p = 0.0, r = 0.0;
  size_t np = 0, nr = 0;
  for (size_t k = 0; k < s.hyp.size(); ++k) {
    if (s.hyp[k]) {
      p += static_cast<double>(s.match[k]) / static_cast<double>(s.hyp[k]);
      ++np;
    }
    if (s.ref[k]) {
      r += static_cast<double>(s.match[k]) / static_cast<double>(s.ref[k]);
      ++nr;
    }
  }
  if (np) p /= static_cast<double>(np);
  if (nr) r /= static_cast<double>(nr);
  if (p + r == 0.0) return 0.0;
  const double b2 = beta * beta;
  return 100.0 * (1.0 + b2) * p * r / (b2 * p + r);
}

/// Code points of `s` with whitespace removed, one string per character.
inline Tokens characters(std::string_view s) {
  Tokens out;
  for (uint32_t cp : text::code_points(s)) {
    if (cp == ' ' || cp == '\t' || cp == '\n' || cp == '\r' || cp == '\f' || cp == '\v') continue;
    std::string c;
    text::append_utf8(c, cp);
    out.push_back(std::move(c));
  }
  return out;
}

inline double chrf_units(const std::vector<Tokens>& hyps, const std::vector<Tokens>& refs, ChrfConfig cfg = {}) {
  check_sizes(hyps.size(), refs.size());
  if (cfg.n < 1) fail(ErrorKind::value, "chrF order must be >= 1");
  ChrfStats total(cfg.n);
  for (size_t i = 0; i < hyps.size(); ++i) total += chrf_stats(hyps[i], refs[i], cfg.n);
  return chrf_from_stats(total, cfg.beta);
}

/// Character chrF on raw text.
inline double chrf(const std::vector<std::string>& hyps, const std::vector<std::string>& refs, ChrfConfig cfg = {}) {
  check_sizes(hyps.size(), refs.size());
  std::vector<Tokens> h, r;
  for (const auto& s : hyps) h.push_back(characters(s));
  for (const auto& s : refs) r.push_back(characters(s));
  return chrf_units(h, r, cfg);
}

/// chrF with subword pieces as the units.
inline double spchrf(const std::vector<std::string>& hyps, const std::vector<std::string>& refs,
                     const tokenizer::SubwordModel& tok, ChrfConfig cfg = {}) {
  check_sizes(hyps.size(), refs.size());
  return chrf_units(piece_sequences(hyps, tok), piece_sequences(refs, tok), cfg);
}

// ---------------------------------------------------------------------------
// TER

inline constexpr size_t kMaxShiftLength = 10;

namespace detail {

inline size_t levenshtein(const std::vector<int>& h, const std::vector<int>& r, std::vector<size_t>& prev,
                          std::vector<size_t>& cur) {
  prev.resize(r.size() + 1);
  cur.resize(r.size() + 1);
  for (size_t j = 0; j <= r.size(); ++j) prev[j] = j;
  for (size_t i = 1; i <= h.size(); ++i) {
    cur[0] = i;
    for (size_t j = 1; j <= r.size(); ++j) {
      const size_t sub = prev[j - 1] + (h[i - 1] == r[j - 1] ? 0 : 1);
      cur[j] = std::min({sub, prev[j] + 1, cur[j - 1] + 1});
    }
    std::swap(prev, cur);
  }
  return prev[r.size()];
}

/// Hypothesis positions matched (equal words on the diagonal) by one optimal
/// alignment; the backtrace prefers matches, then substitutions.
inline std::vector<uint8_t> matched_positions(const std::vector<int>& h, const std::vector<int>& r) {
  const size_t n = h.size(), m = r.size();
  std::vector<size_t> d((n + 1) * (m + 1));
  auto at = [&](size_t i, size_t j) -> size_t& { return d[i * (m + 1) + j]; };
  for (size_t i = 0; i <= n; ++i) at(i, 0) = i;
  for (size_t j = 0; j <= m; ++j) at(0, j) = j;
  for (size_t i = 1; i <= n; ++i) {
    for (size_t j = 1; j <= m; ++j) {
      at(i, j) = std::min({at(i - 1, j - 1) + (h[i - 1] == r[j - 1] ? 0 : 1), at(i - 1, j) + 1, at(i, j - 1) + 1});
    }
  }
  std::vector<uint8_t> matched(n, 0);
  size_t i = n, j = m;
  while (i > 0 && j > 0) {
    const size_t diag = at(i - 1, j - 1) + (h[i - 1] == r[j - 1] ? 0 : 1);
    if (at(i, j) == diag) {
      if (h[i - 1] == r[j - 1]) matched[i - 1] = 1;
      --i;
      --j;
    } else if (at(i, j) == at(i - 1, j) + 1) {
      --i;
    } else {
      --j;
    }
  }
  return matched;
}

inline bool occurs_in(const std::vector<int>& r, const int* block, size_t len) {
  if (len > r.size()) return false;
  for (size_t s = 0; s + len <= r.size(); ++s) {
    if (std::equal(block, block + len, r.begin() + static_cast<long>(s))) return true;
  }
  return false;
}

/// Moves h[start, start+len) so that it begins at index `target` of the result.
inline std::vector<int> shifted(const std::vector<int>& h, size_t start, size_t len, size_t target) {
  std::vector<int> rest;
  rest.reserve(h.size());
  rest.insert(rest.end(), h.begin(), h.begin() + static_cast<long>(start));
  rest.insert(rest.end(), h.begin() + static_cast<long>(start + len), h.end());
  rest.insert(rest.begin() + static_cast<long>(target), h.begin() + static_cast<long>(start),
              h.begin() + static_cast<long>(start + len));
  return rest;
}

}  // namespace detail

struct TerStats {
  size_t edits = 0;
  size_t shifts = 0;
  size_t ref_words = 0;
};

/// Edits for one segment: greedy block shifts, each applied only if it lowers
/// the word edit distance, then the remaining edit distance. A candidate
/// block is a contiguous hypothesis span of at most kMaxShiftLength words
/// that occurs verbatim in the reference and contains a word left unmatched
/// by the current alignment. Among candidates the largest reduction wins,
/// then the longer block, then the earlier start, then the earlier target.
inline TerStats ter_stats(const Tokens& hyp, const Tokens& ref) {
  if (ref.empty()) fail(ErrorKind::value, "TER: empty reference segment");
  std::unordered_map<std::string, int> ids;
  auto intern = [&](const Tokens& t) {
    std::vector<int> out;
    for (const auto& w : t) out.push_back(ids.emplace(w, static_cast<int>(ids.size())).first->second);
    return out;
  };
  std::vector<int> h = intern(hyp);
  const std::vector<int> r = intern(ref);
  std::vector<size_t> b1, b2;
  size_t cur = detail::levenshtein(h, r, b1, b2);
  TerStats st;
  st.ref_words = ref.size();
  while (cur > 0) {
    const auto matched = detail::matched_positions(h, r);
    size_t best_gain = 0, best_len = 0, best_start = 0, best_target = 0;
    for (size_t start = 0; start < h.size(); ++start) {
      bool has_error = false;
      for (size_t len = 1; len <= kMaxShiftLength && start + len <= h.size(); ++len) {
        if (!detail::occurs_in(r, h.data() + start, len)) break;
        has_error = has_error || !matched[start + len - 1];
        if (!has_error) continue;
        for (size_t target = 0; target + len <= h.size(); ++target) {
          if (target == start) continue;
          const size_t ed = detail::levenshtein(detail::shifted(h, start, len, target), r, b1, b2);
          if (ed >= cur) continue;
          const size_t gain = cur - ed;
          // loop order already yields earlier start and target first
          if (gain > best_gain || (gain == best_gain && len > best_len)) {
            best_gain = gain;
            best_len = len;
            best_start = start;
            best_target = target;
          }
        }
      }
    }
    if (best_gain == 0) break;
    h = detail::shifted(h, best_start, best_len, best_target);
    cur -= best_gain;
    ++st.shifts;
  }
  st.edits = cur + st.shifts;
  return st;
}

inline double ter_units(const std::vector<Tokens>& hyps, const std::vector<Tokens>& refs) {
  check_sizes(hyps.size(), refs.size());
  size_t edits = 0, words = 0;
  for (size_t i = 0; i < hyps.size(); ++i) {
    const auto s = ter_stats(hyps[i], refs[i]);
    edits += s.edits;
    words += s.ref_words;
  }
  return 100.0 * static_cast<double>(edits) / static_cast<double>(words);
}

/// Word-level TER on whitespace tokens.
inline double ter(const std::vector<std::string>& hyps, const std::vector<std::string>& refs) {
  check_sizes(hyps.size(), refs.size());
  std::vector<Tokens> h, r;
  for (const auto& s : hyps) h.push_back(whitespace_tokens(s));
  for (const auto& s : refs) r.push_back(whitespace_tokens(s));
  return ter_units(h, r);
}

/// TER with subword pieces as the units.
inline double spter(const std::vector<std::string>& hyps, const std::vector<std::string>& refs,
                    const tokenizer::SubwordModel& tok) {
  check_sizes(hyps.size(), refs.size());
  return ter_units(piece_sequences(hyps, tok), piece_sequences(refs, tok));
}

}  // namespace mmt::metrics
