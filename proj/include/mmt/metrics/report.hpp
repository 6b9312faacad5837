#pragma once

#include <cstdio>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mmt/core/error.hpp"
#include "mmt/core/lang.hpp"
#include "mmt/corpus/corpus.hpp"
#include "mmt/decode/generate.hpp"
#include "mmt/metrics/scores.hpp"

namespace mmt::metrics {

/// Two decimals, as in the result tables.
inline std::string format_score(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

/// "with (without)" cell.
inline std::string format_paired(double with, double without) {
  return format_score(with) + " (" + format_score(without) + ")";
}

struct EvalReport {
  Direction direction;
  size_t test_size = 0;
  double spbleu = 0.0;
  double spchrf = 0.0;
  double spter = 0.0;
  std::optional<double> off_target;  // filled by the synthetic harness
  std::map<std::string, std::string> meta;

  nlohmann::json to_json() const {
    nlohmann::json j = {{"direction", direction.str()}, {"test_size", test_size}, {"spBLEU", spbleu},
                        {"spCHRF", spchrf},         {"spTER", spter},         {"meta", meta}};
    j["off_target"] = off_target ? nlohmann::json(*off_target) : nlohmann::json(nullptr);
    return j;
  }

  static EvalReport from_json(const nlohmann::json& j) {
    EvalReport r;
    try {
      r.direction = Direction::parse(j.at("direction").get<std::string>());
      r.test_size = j.at("test_size").get<size_t>();
      r.spbleu = j.at("spBLEU").get<double>();
      r.spchrf = j.at("spCHRF").get<double>();
      r.spter = j.at("spTER").get<double>();
      if (j.contains("off_target") && !j["off_target"].is_null()) r.off_target = j["off_target"].get<double>();
      if (j.contains("meta")) r.meta = j["meta"].get<std::map<std::string, std::string>>();
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::format, std::string("bad report record: ") + e.what());
    }
    return r;
  }
};

/// Metadata every report carries.
inline std::map<std::string, std::string> metric_meta(const tokenizer::SubwordModel& eval_tok, ChrfConfig chrf = {}) {
  return {{"tokenizer_hash", eval_tok.hash()},
          {"bleu_smoothing", "exp"},
          {"bleu_max_n", "4"},
          {"chrf_n", std::to_string(chrf.n)},
          {"chrf_beta", format_score(chrf.beta)},
          {"sp_units", "spBLEU, spCHRF and spTER use subword pieces of the evaluation tokenizer as units"},
          {"ter_max_shift", std::to_string(kMaxShiftLength)}};
}

inline std::string reports_to_jsonl(const std::vector<EvalReport>& reports) {
  std::string out;
  for (const auto& r : reports) out += r.to_json().dump() + "\n";
  return out;
}

inline std::vector<EvalReport> reports_from_jsonl(const std::string& content) {
  std::vector<EvalReport> out;
  std::istringstream is(content);
  std::string line;
  while (std::getline(is, line)) {
    if (text::trim(line).empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::format, std::string("bad report line: ") + e.what());
    }
    out.push_back(EvalReport::from_json(j));
  }
  return out;
}

/// Metric metadata goes into "# key: value" comment lines ahead of the header.
inline std::string reports_to_csv(const std::vector<EvalReport>& reports) {
  std::ostringstream os;
  if (!reports.empty()) {
    for (const auto& [k, v] : reports.front().meta) os << "# " << k << ": " << v << "\n";
  }
  os << "direction,test_size,spBLEU,spCHRF,spTER,off_target\n";
  for (const auto& r : reports) {
    os << r.direction.str() << ',' << r.test_size << ',' << format_score(r.spbleu) << ','
       << format_score(r.spchrf) << ',' << format_score(r.spter) << ','
       << (r.off_target ? format_score(*r.off_target) : "") << "\n";
  }
  return os.str();
}

/// Aligned table; with `baseline`, cells read "this (baseline)" for the
/// directions present in both.
inline std::string reports_to_text(const std::vector<EvalReport>& reports,
                                   const std::vector<EvalReport>* baseline = nullptr) {
  auto find_base = [&](const Direction& d) -> const EvalReport* {
    if (!baseline) return nullptr;
    for (const auto& b : *baseline) {
      if (b.direction.src == d.src && b.direction.tgt == d.tgt) return &b;
    }
    return nullptr;
  };
  std::vector<std::vector<std::string>> rows = {{"Direction", "spBLEU", "spCHRF", "spTER"}};
  for (const auto& r : reports) {
    const auto* b = find_base(r.direction);
    auto cell = [&](double v, double EvalReport::*field) {
      return b ? format_paired(v, b->*field) : format_score(v);
    };
    rows.push_back({r.direction.src.code() + "->" + r.direction.tgt.code(), cell(r.spbleu, &EvalReport::spbleu),
                    cell(r.spchrf, &EvalReport::spchrf), cell(r.spter, &EvalReport::spter)});
  }
  std::vector<size_t> width(4, 0);
  for (const auto& row : rows) {
    for (size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  }
  std::ostringstream os;
  for (size_t i = 0; i < rows.size(); ++i) {
    for (size_t c = 0; c < rows[i].size(); ++c) {
      if (c) os << "  ";
      const auto& s = rows[i][c];
      if (c == 0) {
        os << s << std::string(width[c] - s.size(), ' ');
      } else {
        os << std::string(width[c] - s.size(), ' ') << s;
      }
    }
    os << "\n";
    if (i == 0) {
      size_t total = 0;
      for (size_t w : width) total += w;
      os << std::string(total + 2 * (width.size() - 1), '-') << "\n";
    }
  }
  return os.str();
}

/// Translates a list of tagged inputs, order-preserving.
using BatchTranslator = std::function<std::vector<std::string>(const std::vector<std::string>&)>;

template <class T>
BatchTranslator greedy_translator(const model::Transformer<T>& mdl, const tokenizer::SubwordModel& tok,
                                  size_t workers = 1, size_t max_new_tokens = 50) {
  return [&mdl, &tok, workers, max_new_tokens](const std::vector<std::string>& inputs) {
    decode::DecodeConfig cfg;
    cfg.max_new_tokens = max_new_tokens;
    std::vector<std::string> out;
    for (auto& g : decode::generate_batch(mdl, tok, inputs, cfg, 0, workers)) {
      if (!g.error.empty()) fail(ErrorKind::runtime, "translation failed: " + g.error);
      out.push_back(std::move(g.text));
    }
    return out;
  };
}

struct DirectionEval {
  EvalReport report;
  std::vector<std::string> hypotheses;
};

/// Greedy-translates every source with the target tag and scores the
/// outputs against the references.
inline DirectionEval evaluate_direction(const BatchTranslator& translate, const std::vector<corpus::ParallelPair>& pairs,
                                        const tokenizer::SubwordModel& eval_tok) {
  if (pairs.empty()) fail(ErrorKind::value, "empty test set");
  const Direction dir = pairs.front().direction;
  std::vector<std::string> inputs, refs;
  for (const auto& p : pairs) {
    if (p.direction.src != dir.src || p.direction.tgt != dir.tgt) {
      fail(ErrorKind::value, "test pairs mix directions " + dir.str() + " and " + p.direction.str());
    }
    inputs.push_back(dir.tgt.token() + " " + p.src_text);
    refs.push_back(p.tgt_text);
  }
  DirectionEval out;
  out.hypotheses = translate(inputs);
  if (out.hypotheses.size() != refs.size()) fail(ErrorKind::runtime, "translator returned wrong number of outputs");
  auto& r = out.report;
  r.direction = dir;
  r.test_size = pairs.size();
  r.spbleu = spbleu(out.hypotheses, refs, eval_tok);
  r.spchrf = spchrf(out.hypotheses, refs, eval_tok);
  r.spter = spter(out.hypotheses, refs, eval_tok);
  r.meta = metric_meta(eval_tok);
  return out;
}

}  // namespace mmt::metrics
