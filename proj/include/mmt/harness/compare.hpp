#pragma once

#include <algorithm>
#include <cstdio>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "mmt/core/error.hpp"
#include "mmt/harness/experiment.hpp"
#include "mmt/harness/synthetic.hpp"
#include "mmt/metrics/report.hpp"

namespace mmt::harness {

/// Scores every direction's test split. With `truth`, off-target rates are
/// filled in as well.
inline std::vector<metrics::EvalReport> evaluate_all(const metrics::BatchTranslator& translate,
                                                     const corpus::ParallelStore& parallel,
                                                     const std::vector<Direction>& directions,
                                                     const tokenizer::SubwordModel& eval_tok,
                                                     const GroundTruth* truth = nullptr, size_t test_limit = 0,
                                                     corpus::Split split = corpus::Split::test) {
  std::vector<metrics::EvalReport> out;
  for (const auto& d : directions) {
    auto pairs = parallel.pairs(d, split);
    if (pairs.empty()) continue;
    if (test_limit && pairs.size() > test_limit) pairs.resize(test_limit);
    auto ev = metrics::evaluate_direction(translate, pairs, eval_tok);
    if (truth) ev.report.off_target = off_target_rate(ev.hypotheses, d.tgt, *truth);
    out.push_back(std::move(ev.report));
  }
  if (out.empty()) fail(ErrorKind::insufficient_data, std::string("no ") + corpus::split_name(split) + " pairs to evaluate");
  return out;
}

/// Mean off-target rate over the reports whose target is `lang`.
inline double mean_off_target_into(const std::vector<metrics::EvalReport>& reports, const LangTag& lang) {
  double s = 0.0;
  size_t n = 0;
  for (const auto& r : reports) {
    if (r.direction.tgt == lang && r.off_target) {
      s += *r.off_target;
      ++n;
    }
  }
  if (!n) fail(ErrorKind::value, "no off-target measurements into " + lang.code());
  return s / static_cast<double>(n);
}

inline double median(std::vector<double> xs) {
  if (xs.empty()) fail(ErrorKind::value, "median of nothing");
  std::sort(xs.begin(), xs.end());
  const size_t n = xs.size();
  return n % 2 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

/// One score per (direction, column); a column is a setting, and a cell is
/// the median over the seeds that were run.
struct ComparisonTable {
  std::string metric = "spBLEU";
  std::vector<std::string> columns;
  std::vector<Direction> directions;
  std::map<std::pair<Direction, std::string>, std::vector<double>> samples;

  void add(const Direction& d, const std::string& column, double value) {
    if (std::find(columns.begin(), columns.end(), column) == columns.end()) columns.push_back(column);
    if (std::find(directions.begin(), directions.end(), d) == directions.end()) directions.push_back(d);
    samples[{d, column}].push_back(value);
  }

  std::optional<double> cell(const Direction& d, const std::string& column) const {
    auto it = samples.find({d, column});
    if (it == samples.end()) return std::nullopt;
    return median(it->second);
  }

  std::string to_csv() const {
    std::ostringstream os;
    os << "# metric: " << metric << " (median over seeds)\n";
    os << "direction";
    for (const auto& c : columns) os << ',' << c;
    os << '\n';
    for (const auto& d : directions) {
      os << d.str();
      for (const auto& c : columns) {
        os << ',';
        if (auto v = cell(d, c)) os << metrics::format_score(*v);
      }
      os << '\n';
    }
    return os.str();
  }

  /// Aligned text. With `paired`, each column other than `paired` reads
  /// "score (score of paired)".
  std::string to_text(std::string paired = "") const {
    if (columns.size() < 2) paired.clear();
    std::vector<std::vector<std::string>> rows;
    std::vector<std::string> header = {"Direction"};
    for (const auto& c : columns) {
      if (c != paired || paired.empty()) header.push_back(paired.empty() ? c : c + " (" + paired + ")");
    }
    rows.push_back(header);
    for (const auto& d : directions) {
      std::vector<std::string> row = {d.src.code() + "->" + d.tgt.code()};
      for (const auto& c : columns) {
        if (!paired.empty() && c == paired) continue;
        const auto v = cell(d, c);
        const auto base = paired.empty() ? std::nullopt : cell(d, paired);
        if (!v) {
          row.push_back("-");
        } else if (base) {
          row.push_back(metrics::format_paired(*v, *base));
        } else {
          row.push_back(metrics::format_score(*v));
        }
      }
      rows.push_back(row);
    }
    std::vector<size_t> width(header.size(), 0);
    for (const auto& r : rows) {
      for (size_t c = 0; c < r.size(); ++c) width[c] = std::max(width[c], r[c].size());
    }
    std::ostringstream os;
    for (size_t i = 0; i < rows.size(); ++i) {
      for (size_t c = 0; c < rows[i].size(); ++c) {
        const auto& s = rows[i][c];
        const std::string pad(width[c] - s.size(), ' ');
        os << (c ? "  " : "") << (c ? pad + s : s + pad);
      }
      os << '\n';
      if (i == 0) {
        size_t total = 2 * (width.size() - 1);
        for (size_t w : width) total += w;
        os << std::string(total, '-') << '\n';
      }
    }
    return os.str();
  }

  /// Grouped bar chart, one group per direction.
  std::string to_svg(const std::string& title = "") const {
    static const char* kColors[] = {"#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860"};
    const double bar = 14, gap = 18, left = 50, top = 40, height = 220;
    const double group = bar * static_cast<double>(columns.size()) + gap;
    const double width = left + group * static_cast<double>(directions.size()) + 20;
    double vmax = 1.0;
    for (const auto& d : directions) {
      for (const auto& c : columns) {
        if (auto v = cell(d, c)) vmax = std::max(vmax, *v);
      }
    }
    vmax *= 1.1;
    std::ostringstream os;
    char buf[256];
    auto num = [&](double v) {
      std::snprintf(buf, sizeof buf, "%.1f", v);
      return std::string(buf);
    };
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(width) << "\" height=\""
       << num(top + height + 70) << "\" font-family=\"sans-serif\" font-size=\"10\">\n";
    os << "<text x=\"" << num(left) << "\" y=\"20\" font-size=\"13\">" << (title.empty() ? metric : title)
       << "</text>\n";
    os << "<line x1=\"" << num(left) << "\" y1=\"" << num(top + height) << "\" x2=\"" << num(width - 10) << "\" y2=\""
       << num(top + height) << "\" stroke=\"black\"/>\n";
    for (int t = 0; t <= 4; ++t) {
      const double v = vmax * t / 4.0;
      const double y = top + height - height * t / 4.0;
      os << "<text x=\"" << num(left - 6) << "\" y=\"" << num(y + 3) << "\" text-anchor=\"end\">" << num(v)
         << "</text>\n";
    }
    for (size_t i = 0; i < directions.size(); ++i) {
      const double x0 = left + gap / 2 + group * static_cast<double>(i);
      for (size_t c = 0; c < columns.size(); ++c) {
        const auto v = cell(directions[i], columns[c]);
        if (!v) continue;
        const double h = height * std::max(0.0, *v) / vmax;
        os << "<rect x=\"" << num(x0 + bar * static_cast<double>(c)) << "\" y=\"" << num(top + height - h)
           << "\" width=\"" << num(bar - 2) << "\" height=\"" << num(h) << "\" fill=\"" << kColors[c % 6]
           << "\"><title>" << columns[c] << " " << metrics::format_score(*v) << "</title></rect>\n";
      }
      os << "<text x=\"" << num(x0 + bar * static_cast<double>(columns.size()) / 2) << "\" y=\""
         << num(top + height + 14) << "\" text-anchor=\"middle\">" << directions[i].src.code() << "-"
         << directions[i].tgt.code() << "</text>\n";
    }
    for (size_t c = 0; c < columns.size(); ++c) {
      const double x = left + 90 * static_cast<double>(c);
      os << "<rect x=\"" << num(x) << "\" y=\"" << num(top + height + 32) << "\" width=\"10\" height=\"10\" fill=\""
         << kColors[c % 6] << "\"/>";
      os << "<text x=\"" << num(x + 14) << "\" y=\"" << num(top + height + 41) << "\">" << columns[c] << "</text>\n";
    }
    os << "</svg>\n";
    return os.str();
  }
};

/// Table of one metric from per-setting report lists.
inline ComparisonTable table_from_reports(const std::vector<std::pair<std::string, std::vector<metrics::EvalReport>>>& runs,
                                          const std::string& metric = "spBLEU") {
  ComparisonTable t;
  t.metric = metric;
  for (const auto& [column, reports] : runs) {
    for (const auto& r : reports) {
      double v = 0.0;
      if (metric == "spBLEU") {
        v = r.spbleu;
      } else if (metric == "spCHRF") {
        v = r.spchrf;
      } else if (metric == "spTER") {
        v = r.spter;
      } else if (metric == "off_target") {
        if (!r.off_target) continue;
        v = *r.off_target;
      } else {
        fail(ErrorKind::config, "unknown metric '" + metric + "' (spBLEU|spCHRF|spTER|off_target)");
      }
      t.add(r.direction, column, v);
    }
  }
  return t;
}

/// Throws unless the configs differ only in the setting and the BT/REC
/// fields.
inline void check_comparable(const std::vector<ExperimentConfig>& configs) {
  auto core = [](const ExperimentConfig& c) {
    KeyValues kv = c.to_kv();
    KeyValues out;
    for (const auto& [k, v] : kv.values()) {
      if (k == "setting" || k.rfind("bt.", 0) == 0 || k.rfind("rec.", 0) == 0) continue;
      out.set(k, v);
    }
    return out.to_text();
  };
  for (size_t i = 1; i < configs.size(); ++i) {
    if (core(configs[i]) != core(configs[0])) {
      fail(ErrorKind::config, "compared configs differ in more than the setting-specific fields");
    }
  }
}

struct SettingRun {
  Setting setting;
  uint64_t seed = 0;
  std::vector<metrics::EvalReport> reports;
  RunResult run;
};

struct Comparison {
  std::vector<SettingRun> runs;
  ComparisonTable table;  // spBLEU, median over seeds

  ComparisonTable table_for(const std::string& metric) const {
    std::vector<std::pair<std::string, std::vector<metrics::EvalReport>>> cols;
    for (const auto& r : runs) cols.emplace_back(objectives::setting_name(r.setting), r.reports);
    return table_from_reports(cols, metric);
  }
};

struct CompareOptions {
  std::vector<uint64_t> seeds = {13};
  size_t test_limit = 0;
  std::ostream* progress = nullptr;
  // Called after every epoch of every run, e.g. to track off-target rates.
  std::function<void(Setting, uint64_t seed, size_t epoch, const model::Transformer<float>&)> on_epoch_end;
};

/// Runs `settings` (one config each, otherwise identical) for every seed and
/// scores all directions on the test split.
inline Comparison compare_settings(const std::vector<ExperimentConfig>& configs, const corpus::ParallelStore& parallel,
                                   const corpus::MonoStore& mono, const tokenizer::SubwordModel& tok,
                                   const GroundTruth* truth = nullptr, const CompareOptions& opt = {}) {
  if (configs.empty()) fail(ErrorKind::config, "nothing to compare");
  check_comparable(configs);
  Comparison out;
  for (uint64_t seed : opt.seeds) {
    for (const auto& base : configs) {
      ExperimentConfig cfg = base;
      cfg.seed = seed;
      RunOptions ro;
      ro.progress = opt.progress;
      if (opt.on_epoch_end) {
        ro.on_epoch_end = [&, setting = cfg.setting, seed](size_t e, const model::Transformer<float>& m) {
          opt.on_epoch_end(setting, seed, e, m);
        };
      }
      if (opt.progress) *opt.progress << "== " << objectives::setting_name(cfg.setting) << " seed " << seed << std::endl;
      SettingRun sr{cfg.setting, seed, {}, run_experiment(cfg, parallel, mono, tok, ro)};
      sr.reports = evaluate_all(metrics::greedy_translator(sr.run.best, tok, cfg.workers, cfg.model.max_positions),
                                parallel, cfg.directions(), tok, truth, opt.test_limit);
      out.runs.push_back(std::move(sr));
    }
  }
  out.table = out.table_for("spBLEU");
  return out;
}

}  // namespace mmt::harness
