#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "mmt/core/error.hpp"
#include "mmt/core/parallel.hpp"
#include "mmt/core/rng.hpp"
#include "mmt/model/inference.hpp"
#include "mmt/numerics/sample.hpp"
#include "mmt/tokenizer/bpe.hpp"

namespace mmt::decode {

enum class Mode { greedy, sample, beam };

inline const char* mode_name(Mode m) {
  switch (m) {
    case Mode::greedy: return "greedy";
    case Mode::sample: return "sample";
    case Mode::beam: return "beam";
  }
  return "?";
}

inline Mode parse_mode(const std::string& s) {
  if (s == "greedy") return Mode::greedy;
  if (s == "sample") return Mode::sample;
  if (s == "beam") return Mode::beam;
  fail(ErrorKind::config, "unknown decode mode '" + s + "' (greedy|sample|beam)");
}

struct DecodeConfig {
  size_t max_new_tokens = 50;
  Mode mode = Mode::greedy;
  double temperature = 1.0;
  size_t beam_size = 4;
  double length_penalty = 1.0;

  void validate() const {
    if (max_new_tokens < 1) fail(ErrorKind::config, "max_new_tokens must be >= 1");
    if (mode == Mode::sample && !(temperature > 0.0)) fail(ErrorKind::config, "temperature must be > 0");
    if (mode == Mode::beam && beam_size < 1) fail(ErrorKind::config, "beam_size must be >= 1");
  }
};

/// Below this temperature sampling is replaced by exact argmax.
inline constexpr double kGreedyTemperature = 1e-4;

struct Generation {
  std::string text;
  std::vector<int> ids;  // generated ids, eos included when produced
  bool truncated = false;  // input clipped or no eos within budget
  double log_prob = 0.0;
  std::string error;  // set by generate_batch when this item failed
};

namespace detail {

/// Output vocabulary mask: pad, unk and language tags are never generated.
inline std::vector<uint8_t> output_mask(const tokenizer::SubwordModel& tok, size_t vocab) {
  std::vector<uint8_t> allowed(vocab, 1);
  allowed[tokenizer::SubwordModel::kPad] = 0;
  allowed[tokenizer::SubwordModel::kUnk] = 0;
  for (int id : tok.language_tag_ids()) {
    if (static_cast<size_t>(id) < vocab) allowed[static_cast<size_t>(id)] = 0;
  }
  return allowed;
}

template <class T>
size_t argmax(const std::vector<T>& logits, const std::vector<uint8_t>& allowed) {
  size_t best = SIZE_MAX;
  for (size_t i = 0; i < logits.size(); ++i) {
    if (!allowed[i]) continue;
    if (best == SIZE_MAX || logits[i] > logits[best]) best = i;
  }
  return best;
}

/// log softmax over allowed entries at temperature `temp`; disallowed get -inf.
template <class T>
std::vector<double> log_softmax(const std::vector<T>& logits, const std::vector<uint8_t>& allowed, double temp) {
  std::vector<double> out(logits.size(), -std::numeric_limits<double>::infinity());
  double mx = -std::numeric_limits<double>::infinity();
  for (size_t i = 0; i < logits.size(); ++i) {
    if (allowed[i]) mx = std::max(mx, static_cast<double>(logits[i]) / temp);
  }
  double sum = 0.0;
  for (size_t i = 0; i < logits.size(); ++i) {
    if (allowed[i]) sum += std::exp(static_cast<double>(logits[i]) / temp - mx);
  }
  const double lse = mx + std::log(sum);
  for (size_t i = 0; i < logits.size(); ++i) {
    if (allowed[i]) out[i] = static_cast<double>(logits[i]) / temp - lse;
  }
  return out;
}

template <class T>
Generation run_sequential(const model::IncrementalDecoder<T>& dec, size_t budget, const DecodeConfig& cfg,
                          const std::vector<uint8_t>& allowed, Rng* rng) {
  Generation g;
  auto state = dec.start();
  std::vector<T> logits;
  int prev = model::kEosId;
  const bool greedy = cfg.mode == Mode::greedy || cfg.temperature < kGreedyTemperature;
  if (!greedy && !rng) fail(ErrorKind::value, "sampling needs an rng");
  std::vector<double> probs;
  while (g.ids.size() < budget) {
    dec.step(state, prev, logits);
    size_t next;
    if (greedy) {
      next = argmax(logits, allowed);
      g.log_prob += log_softmax(logits, allowed, 1.0)[next];
    } else {
      const auto lp = log_softmax(logits, allowed, cfg.temperature);
      probs.resize(lp.size());
      for (size_t i = 0; i < lp.size(); ++i) probs[i] = std::exp(lp[i]);
      double total = 0.0;
      for (double p : probs) total += p;
      for (double& p : probs) p /= total;
      next = num::sample_categorical(probs, *rng);
      g.log_prob += lp[next];
    }
    prev = static_cast<int>(next);
    g.ids.push_back(prev);
    if (prev == model::kEosId) return g;
  }
  g.truncated = true;
  return g;
}

template <class T>
Generation run_beam(const model::IncrementalDecoder<T>& dec, size_t budget, const DecodeConfig& cfg,
                    const std::vector<uint8_t>& allowed) {
  using State = typename model::IncrementalDecoder<T>::State;
  struct Hyp {
    std::vector<int> ids;
    State state;
    double log_prob = 0.0;
  };
  auto normalized = [&](const Hyp& h) {
    return h.log_prob / std::pow(static_cast<double>(std::max<size_t>(1, h.ids.size())), cfg.length_penalty);
  };
  std::vector<Hyp> live(1);
  live[0].state = dec.start();
  std::vector<Hyp> finished;
  std::vector<T> logits;
  for (size_t step = 0; step < budget && !live.empty(); ++step) {
    struct Cand {
      double score;
      size_t hyp;
      int token;
    };
    std::vector<Cand> cands;
    std::vector<State> stepped;
    for (size_t h = 0; h < live.size(); ++h) {
      State s = live[h].state;
      dec.step(s, live[h].ids.empty() ? model::kEosId : live[h].ids.back(), logits);
      stepped.push_back(std::move(s));
      const auto lp = log_softmax(logits, allowed, 1.0);
      // top beam_size tokens of this hypothesis, ties to the lower id
      std::vector<size_t> order;
      for (size_t i = 0; i < lp.size(); ++i) {
        if (allowed[i]) order.push_back(i);
      }
      const size_t k = std::min(cfg.beam_size, order.size());
      std::partial_sort(order.begin(), order.begin() + static_cast<long>(k), order.end(),
                        [&](size_t a, size_t b) { return lp[a] > lp[b] || (lp[a] == lp[b] && a < b); });
      for (size_t i = 0; i < k; ++i) {
        cands.push_back({live[h].log_prob + lp[order[i]], h, static_cast<int>(order[i])});
      }
    }
    std::stable_sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
      if (a.score != b.score) return a.score > b.score;
      if (a.hyp != b.hyp) return a.hyp < b.hyp;
      return a.token < b.token;
    });
    std::vector<Hyp> next;
    for (const auto& c : cands) {
      if (next.size() + finished.size() >= cfg.beam_size) break;
      Hyp h;
      h.ids = live[c.hyp].ids;
      h.ids.push_back(c.token);
      h.log_prob = c.score;
      if (c.token == model::kEosId) {
        finished.push_back(std::move(h));
      } else {
        h.state = stepped[c.hyp];
        next.push_back(std::move(h));
      }
    }
    live = std::move(next);
    if (finished.size() >= cfg.beam_size) break;
  }
  const bool truncated = finished.empty();
  auto& pool = truncated ? live : finished;
  size_t best = 0;
  for (size_t i = 1; i < pool.size(); ++i) {
    if (normalized(pool[i]) > normalized(pool[best])) best = i;
  }
  Generation g;
  g.ids = pool[best].ids;
  g.log_prob = pool[best].log_prob;
  g.truncated = truncated;
  return g;
}

}  // namespace detail

/// Translates one tagged input ("<tgt> source text"). Stops at eos or after
/// max_new_tokens (bounded by max_positions), flagging truncation.
template <class T>
Generation generate(const model::Transformer<T>& mdl, const tokenizer::SubwordModel& tok, std::string_view input,
                    const DecodeConfig& cfg, Rng* rng = nullptr) {
  cfg.validate();
  const auto& mc = mdl.config();
  auto src = tok.encode(input);
  bool clipped = false;
  if (src.size() > mc.max_positions) {
    src = model::truncate_ids(std::move(src), mc.max_positions);
    clipped = true;
  }
  model::IncrementalDecoder<T> dec(mdl, src);
  const auto allowed = detail::output_mask(tok, mc.vocab_size);
  const size_t budget = std::min(cfg.max_new_tokens, mc.max_positions);
  Generation g = cfg.mode == Mode::beam ? detail::run_beam(dec, budget, cfg, allowed)
                                        : detail::run_sequential(dec, budget, cfg, allowed, rng);
  g.truncated = g.truncated || clipped;
  g.text = tok.decode(g.ids);
  return g;
}

/// Element i equals generate(inputs[i]) with rng_fork(seed, i), for any
/// worker count. Failures of single items are reported in their slot.
template <class T>
std::vector<Generation> generate_batch(const model::Transformer<T>& mdl, const tokenizer::SubwordModel& tok,
                                       const std::vector<std::string>& inputs, const DecodeConfig& cfg,
                                       uint64_t seed, size_t workers = 1) {
  cfg.validate();
  std::vector<Generation> out(inputs.size());
  parallel_for(inputs.size(), workers, [&](size_t i) {
    Rng rng = rng_fork(seed, i);
    try {
      out[i] = generate(mdl, tok, inputs[i], cfg, &rng);
    } catch (const std::exception& e) {
      out[i].error = e.what();
    }
  });
  return out;
}

}  // namespace mmt::decode
