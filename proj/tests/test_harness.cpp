#include <gtest/gtest.h>

#include <filesystem>
#include <set>

#include "mmt/harness/compare.hpp"
#include "test_util.hpp"

using namespace mmt;
using namespace mmt::harness;
using corpus::Split;
using mmt::testing::scratch;

namespace {

const LangTag A("sy1"), B("sy2"), C("sy3");

std::vector<SyntheticLangSpec> three_specs(size_t concepts = 12) {
  return default_specs({A, B, C}, concepts, 5);
}

SyntheticData tiny_data() {
  SyntheticOptions o;
  o.n_parallel_per_direction = 40;
  o.n_mono_per_lang = 30;
  o.min_len = 2;
  o.max_len = 4;
  o.dev_per_direction = 6;
  o.test_per_direction = 5;
  o.seed = 3;
  return gen_synthetic(three_specs(), o);
}

tokenizer::SubwordModel tiny_tokenizer(const SyntheticData& d) {
  std::vector<std::string> corpus;
  for (const auto& dir : d.parallel.directions()) {
    for (const auto& p : d.parallel.pairs(dir, Split::train)) corpus.push_back(p.src_text);
  }
  return tokenizer::SubwordModel::train(corpus, 330, {A, B, C});
}

ExperimentConfig tiny_config(Setting s) {
  ExperimentConfig c;
  c.languages = {A, B, C};
  c.setting = s;
  c.epochs = 2;
  c.bt.num_bt = 4;
  c.bt.start_epoch = 2;
  c.rec.num_rec = 3;
  c.optimizer.lr = 3e-3;
  c.schedule.warmup_steps = 2;
  c.batch_size = 16;
  c.accumulation = 2;
  c.eval_every_steps = 2;
  c.patience_evals = 50;
  c.model.d_model = 16;
  c.model.n_heads = 2;
  c.model.n_enc_layers = 1;
  c.model.n_dec_layers = 1;
  c.model.d_ff = 32;
  c.model.max_positions = 16;
  return c;
}

class Tiny : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    data_ = new SyntheticData(tiny_data());
    tok_ = new tokenizer::SubwordModel(tiny_tokenizer(*data_));
  }
  static void TearDownTestSuite() {
    delete data_;
    delete tok_;
  }
  static RunResult run(const ExperimentConfig& c, RunOptions o = {}) {
    return run_experiment(c, data_->parallel, data_->mono, *tok_, std::move(o));
  }
  static SyntheticData* data_;
  static tokenizer::SubwordModel* tok_;
};
SyntheticData* Tiny::data_ = nullptr;
tokenizer::SubwordModel* Tiny::tok_ = nullptr;

}  // namespace

// ---------------------------------------------------------------------------
// Synthetic languages

TEST(Synthetic, Base36) {
  EXPECT_EQ(base36(0), "0");
  EXPECT_EQ(base36(35), "z");
  EXPECT_EQ(base36(36), "10");
  EXPECT_EQ(base36(36 * 36 + 1), "101");
}

TEST(Synthetic, ReorderRules) {
  const std::vector<int> x = {1, 2, 3, 4, 5, 6, 7};
  EXPECT_EQ(apply_reorder({ReorderKind::identity, 2}, x), x);
  EXPECT_EQ(apply_reorder({ReorderKind::swap_adjacent_pairs, 2}, x), (std::vector<int>{2, 1, 4, 3, 6, 5, 7}));
  EXPECT_EQ(apply_reorder({ReorderKind::reverse_windows, 3}, x), (std::vector<int>{3, 2, 1, 6, 5, 4, 7}));
  EXPECT_EQ(ReorderRule::parse("reverse_windows:4").window, 4u);
  EXPECT_EQ(ReorderRule::parse(ReorderRule::parse("swap_adjacent_pairs").str()).kind, ReorderKind::swap_adjacent_pairs);
  EXPECT_THROW(ReorderRule::parse("reverse_windows:1"), Error);
  EXPECT_THROW(ReorderRule::parse("shuffle"), Error);
}

TEST(Synthetic, ReorderIsInvolution) {
  Rng rng(1);
  for (const auto& rule : {ReorderRule{ReorderKind::swap_adjacent_pairs, 2}, ReorderRule{ReorderKind::reverse_windows, 3},
                           ReorderRule{ReorderKind::reverse_windows, 5}}) {
    for (int t = 0; t < 50; ++t) {
      std::vector<uint64_t> x(rng.below(12));
      for (auto& v : x) v = rng.next();
      EXPECT_EQ(apply_reorder(rule, apply_reorder(rule, x)), x);
    }
  }
}

TEST(Synthetic, RenderingUsesPrefixAndLexicon) {
  SyntheticLanguage ka({A, 9, "ka", {}, 40});
  const auto s = ka.render({5, 7});
  const auto words = text::split_ws(s);
  ASSERT_EQ(words.size(), 2u);
  EXPECT_EQ(words[0], ka.word(5));
  EXPECT_EQ(words[1], ka.word(7));
  EXPECT_TRUE(text::starts_with(words[0], "ka"));
  std::set<std::string> lexicon;
  for (size_t c = 0; c < 40; ++c) lexicon.insert(ka.word(c));
  EXPECT_EQ(lexicon.size(), 40u);
  // The lexicon seed permutes the concept ids.
  SyntheticLanguage other({A, 10, "ka", {}, 40});
  size_t same = 0;
  for (size_t c = 0; c < 40; ++c) same += ka.word(c) == other.word(c);
  EXPECT_LT(same, 10u);
}

TEST(Synthetic, ParseInvertsRender) {
  for (const auto& spec : three_specs(50)) {
    SyntheticLanguage l(spec);
    Rng rng(spec.lexicon_seed);
    for (int t = 0; t < 30; ++t) {
      std::vector<size_t> c(1 + rng.below(9));
      for (auto& x : c) x = rng.below(50);
      EXPECT_EQ(l.parse(l.render(c)), c);
    }
    EXPECT_FALSE(l.parse("zz1 zz2").has_value());
  }
}

TEST(Synthetic, PrefixErrors) {
  auto specs = three_specs();
  specs[1].surface_prefix = specs[0].surface_prefix;
  EXPECT_THROW(GroundTruth{specs}, Error);
  specs = three_specs();
  specs[1].surface_prefix = specs[0].surface_prefix + "x";
  EXPECT_THROW(GroundTruth{specs}, Error);
  specs = three_specs();
  specs[2].code = specs[0].code;
  EXPECT_THROW(GroundTruth{specs}, Error);
  specs = three_specs();
  specs[0].surface_prefix = "K1";
  EXPECT_THROW(GroundTruth{specs}, Error);
  EXPECT_THROW(gen_synthetic({three_specs()[0]}, {}), Error);
}

TEST(Synthetic, StoresMatchGroundTruth) {
  const auto d = tiny_data();
  ASSERT_EQ(d.parallel.directions().size(), 6u);
  for (const auto& dir : d.parallel.directions()) {
    EXPECT_EQ(d.parallel.pairs(dir, Split::train).size(), 40u);
    EXPECT_EQ(d.parallel.pairs(dir, Split::dev).size(), 6u);
    EXPECT_EQ(d.parallel.pairs(dir, Split::test).size(), 5u);
    for (const auto& p : d.parallel.pairs(dir)) {
      EXPECT_EQ(d.truth.translate(p.src_text, dir.src, dir.tgt), p.tgt_text);
      EXPECT_EQ(d.truth.translate(p.tgt_text, dir.tgt, dir.src), p.src_text);
    }
  }
  for (const auto& l : {A, B, C}) {
    const auto mono = d.mono.sentences(l);
    EXPECT_EQ(mono.size(), 30u);
    for (const auto& s : mono) {
      for (const auto& w : text::split_ws(s)) EXPECT_EQ(d.truth.owner(w), &d.truth.language(l));
    }
  }
}

TEST(Synthetic, RoundTripThroughEveryPivotIsExact) {
  const auto d = tiny_data();
  for (const auto& dir : d.parallel.directions()) {
    for (const auto& p : d.parallel.pairs(dir, Split::train)) {
      for (const auto& pivot : {A, B, C}) {
        if (pivot == dir.src) continue;
        const auto there = d.truth.translate(p.src_text, dir.src, pivot);
        EXPECT_EQ(d.truth.translate(there, pivot, dir.src), p.src_text);
      }
    }
  }
}

TEST(Synthetic, LowResourceKeepsFullDevAndTest) {
  SyntheticOptions o;
  o.n_parallel_per_direction = 200;
  o.n_mono_per_lang = 10;
  o.dev_per_direction = 7;
  o.test_per_direction = 9;
  o.low_resource = {C};
  const auto d = gen_synthetic(three_specs(), o);
  EXPECT_EQ(d.parallel.pairs({A, B}, Split::train).size(), 200u);
  EXPECT_EQ(d.parallel.pairs({A, C}, Split::train).size(), 10u);
  EXPECT_EQ(d.parallel.pairs({C, B}, Split::train).size(), 10u);
  EXPECT_EQ(d.parallel.pairs({C, B}, Split::test).size(), 9u);
  EXPECT_EQ(d.parallel.pairs({A, C}, Split::dev).size(), 7u);
  EXPECT_EQ(d.mono.sentences(C).size(), 10u);
  o.low_resource = {LangTag("xx1")};
  EXPECT_THROW(gen_synthetic(three_specs(), o), Error);
}

TEST(Synthetic, Deterministic) {
  const auto a = tiny_data();
  const auto b = tiny_data();
  EXPECT_TRUE(a.parallel == b.parallel);
  EXPECT_EQ(a.mono.sentences(A), b.mono.sentences(A));
  SyntheticOptions o;
  o.n_parallel_per_direction = 40;
  o.seed = 4;
  EXPECT_FALSE(gen_synthetic(three_specs(), o).parallel == a.parallel);
}

TEST(Synthetic, ZipfSkewsConceptFrequencies) {
  SyntheticOptions o;
  o.n_parallel_per_direction = 0;
  o.dev_per_direction = o.test_per_direction = 0;
  o.n_mono_per_lang = 2000;
  std::vector<size_t> zipf(20, 0), uniform(20, 0);
  const auto specs = three_specs(20);
  SyntheticLanguage lang(specs[0]);
  for (double z : {1.0, 0.0}) {
    o.zipf = z;
    auto& counts = z > 0 ? zipf : uniform;
    const auto d = gen_synthetic(specs, o);
    for (const auto& s : d.mono.sentences(A)) {
      const auto concepts = lang.parse(s);
      ASSERT_TRUE(concepts.has_value());
      for (size_t c : *concepts) ++counts[c];
    }
  }
  // Weight 1/(c+1): concept 0 is 10 times as frequent as concept 9.
  const double ratio = static_cast<double>(zipf[0]) / static_cast<double>(zipf[9]);
  EXPECT_GT(ratio, 7.0);
  EXPECT_LT(ratio, 14.0);
  const auto [lo, hi] = std::minmax_element(uniform.begin(), uniform.end());
  EXPECT_LT(static_cast<double>(*hi) / static_cast<double>(*lo), 1.35);
}

TEST(Synthetic, GroundTruthKeyValuesRoundTrip) {
  GroundTruth t(three_specs());
  const auto back = GroundTruth::from_kv(KeyValues::parse(t.to_kv().to_text()));
  const auto s = t.language(B).render({1, 2, 3, 4});
  EXPECT_EQ(back.translate(s, B, C), t.translate(s, B, C));
  EXPECT_EQ(back.language(C).spec().reorder.str(), t.language(C).spec().reorder.str());
}

TEST(OffTarget, Rates) {
  GroundTruth t(three_specs());
  std::vector<std::string> in_b, in_a;
  for (size_t i = 0; i < 10; ++i) {
    in_b.push_back(t.language(B).render({i, i + 1, 2}));
    in_a.push_back(t.language(A).render({i, 1}));
  }
  EXPECT_EQ(off_target_rate(in_b, B, t), 0.0);
  EXPECT_EQ(off_target_rate(in_a, B, t), 1.0);
  auto mixed = in_b;
  for (size_t i : {1, 4, 8}) mixed[i] = in_a[i];
  EXPECT_DOUBLE_EQ(off_target_rate(mixed, B, t), 0.3);
}

TEST(OffTarget, MajorityRuleAndUnknownTokens) {
  GroundTruth t(three_specs());
  const auto b1 = t.language(B).word(1), b2 = t.language(B).word(2), a1 = t.language(A).word(1);
  EXPECT_TRUE(on_target(b1 + " " + b2 + " " + a1, B, t));
  EXPECT_FALSE(on_target(b1 + " " + a1, B, t));  // exactly half is not a majority
  EXPECT_FALSE(on_target("", B, t));
  EXPECT_FALSE(on_target("qq1 qq2 " + b1, B, t));
  EXPECT_FALSE(on_target(t.language(B).spec().surface_prefix, B, t));  // a bare prefix is not a word
  EXPECT_THROW(off_target_rate({}, B, t), Error);
}

// ---------------------------------------------------------------------------
// Experiment configuration

TEST(Config, KeyValueRoundTrip) {
  auto c = tiny_config(Setting::bt_rec);
  c.bt.decay = {100, 50, 10};
  c.exclusions = std::vector<Exclusion>{{A, B}};
  c.seed = 123456789012345ULL;
  ExperimentConfig back;
  back.read(KeyValues::parse(c.to_kv().to_text()));
  EXPECT_EQ(back.hash(), c.hash());
  EXPECT_EQ(back.bt.decay, c.bt.decay);
  EXPECT_EQ(back.seed, c.seed);
  EXPECT_EQ(back.resolved_exclusions().size(), 1u);
  back.workers = 8;
  EXPECT_EQ(back.hash(), c.hash());
  back.optimizer.lr *= 2;
  EXPECT_NE(back.hash(), c.hash());
}

TEST(Config, DefaultExclusionIsEngFra) {
  ExperimentConfig c;
  c.languages = parse_lang_list("eng,fra,ibo,fon");
  EXPECT_EQ(c.directions().size(), 10u);
  c.languages = parse_lang_list("eng,fra,ibo,fon,swa,kin,xho,yor");
  EXPECT_EQ(c.directions().size(), 54u);
  c.exclusions = std::vector<Exclusion>{};
  EXPECT_EQ(c.directions().size(), 56u);
  c.languages = {A, B, C};
  c.exclusions.reset();
  EXPECT_EQ(c.directions().size(), 6u);
}

TEST(Config, BaselinePreset) {
  ExperimentConfig c;
  apply_preset(c, "paper-baseline");
  EXPECT_EQ(c.bt.num_bt, 500u);
  EXPECT_EQ(c.rec.num_rec, 50u);
  EXPECT_DOUBLE_EQ(c.optimizer.lr, 5e-4);
  EXPECT_EQ(c.batch_size, 32u);
  EXPECT_EQ(c.batch_size * c.accumulation, 256u);
  EXPECT_EQ(c.patience_evals, 100u);
  EXPECT_EQ(c.epochs, 3u);
  EXPECT_EQ(c.directions().size(), 10u);
  // One plain epoch, then two with backtranslation.
  EXPECT_EQ(c.bt.start_epoch, 2u);
}

TEST(Config, FinalPreset) {
  ExperimentConfig c;
  apply_preset(c, "paper-final");
  EXPECT_EQ(c.bt.num_bt, 100u);
  EXPECT_EQ(c.bt.decay, (std::vector<size_t>{100, 50, 10}));
  EXPECT_EQ(c.rec.num_rec, 50u);
  EXPECT_DOUBLE_EQ(c.optimizer.lr, 3e-6);
  EXPECT_EQ(c.batch_size, 64u);
  EXPECT_EQ(c.batch_size * c.accumulation, 4096u);
  EXPECT_EQ(c.bt.start_epoch, 4u);
  EXPECT_EQ(c.setting, Setting::bt_rec);
  EXPECT_EQ(c.directions().size(), 54u);
  EXPECT_THROW(apply_preset(c, "huge"), Error);
}

TEST(Config, ValidationErrors) {
  auto c = tiny_config(Setting::bt);
  c.patience_evals = 0;
  EXPECT_THROW(c.validate(), Error);
  c = tiny_config(Setting::bt);
  c.languages = {A};
  EXPECT_THROW(c.validate(), Error);
  c = tiny_config(Setting::bt);
  c.languages = {A, A, B};
  EXPECT_THROW(c.validate(), Error);
  c = tiny_config(Setting::bt);
  c.bt.start_epoch = 3;
  EXPECT_THROW(c.validate(), Error);
  c.setting = Setting::base;
  EXPECT_NO_THROW(c.validate());
  c = tiny_config(Setting::base);
  c.exclusions = std::vector<Exclusion>{{A, LangTag("zzz")}};
  EXPECT_THROW(c.validate(), Error);
}

TEST(Config, PlannedSteps) {
  auto c = tiny_config(Setting::bt_rec);
  c.epochs = 3;
  c.bt.start_epoch = 2;
  c.bt.decay = {7, 2};
  c.batch_size = 10;
  c.accumulation = 3;
  // Epoch sizes 100, 100 + 3*(7+3), 100 + 3*(2+3); micro-batches 10, 13, 12.
  EXPECT_EQ(planned_steps(c, 100, 3), 4u + 5u + 4u);
}

// ---------------------------------------------------------------------------
// Runs

TEST_F(Tiny, BaseRunHasNoRounds) {
  const auto r = run(tiny_config(Setting::base));
  EXPECT_TRUE(r.log.of("bt_round").empty());
  EXPECT_TRUE(r.log.of("rec_round").empty());
  EXPECT_EQ(r.log.of("epoch_end").size(), 2u);
  EXPECT_FALSE(r.early_stopped);
}

TEST_F(Tiny, DecayListMapsToRounds) {
  auto c = tiny_config(Setting::bt_rec);
  c.epochs = 3;
  c.bt.start_epoch = 1;
  c.bt.decay = {100, 50, 10};
  const auto r = run(c);
  const auto bt = r.log.of("bt_round");
  ASSERT_EQ(bt.size(), 3u);
  const size_t nums[] = {100, 50, 10};
  for (size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(bt[i]["epoch"].get<size_t>(), i + 1);
    EXPECT_EQ(bt[i]["num_bt"].get<size_t>(), nums[i]);
    EXPECT_EQ(bt[i]["examples"].get<size_t>(), 3 * nums[i]);
  }
  const auto rec = r.log.of("rec_round");
  ASSERT_EQ(rec.size(), 3u);
  EXPECT_EQ(rec[0]["examples"].get<size_t>(), 9u);
}

TEST_F(Tiny, DecayRepeatsLastEntryAndRespectsStartEpoch) {
  auto c = tiny_config(Setting::bt);
  c.epochs = 4;
  c.bt.start_epoch = 2;
  c.bt.decay = {6, 2};
  const auto bt = run(c).log.of("bt_round");
  ASSERT_EQ(bt.size(), 3u);
  EXPECT_EQ(bt[0]["epoch"].get<size_t>(), 2u);
  EXPECT_EQ(bt[0]["num_bt"].get<size_t>(), 6u);
  EXPECT_EQ(bt[1]["num_bt"].get<size_t>(), 2u);
  EXPECT_EQ(bt[2]["num_bt"].get<size_t>(), 2u);
}

TEST_F(Tiny, StepCountMatchesPlan) {
  auto c = tiny_config(Setting::bt_rec);
  const auto r = run(c);
  EXPECT_EQ(r.log.of("step").size(), r.steps);
  EXPECT_EQ(r.log.of("start")[0]["total_steps"].get<size_t>(), r.steps);
  const auto lr = r.log.lr_trace();
  EXPECT_EQ(lr.front(), 0.0);  // warmup starts at zero
  EXPECT_DOUBLE_EQ(lr[2], c.optimizer.lr);
}

TEST_F(Tiny, SameSeedSameTrace) {
  const auto c = tiny_config(Setting::bt_rec);
  const auto a = run(c);
  const auto b = run(c);
  EXPECT_EQ(a.log.loss_trace(), b.log.loss_trace());
  EXPECT_EQ(a.log.dev_trace(), b.log.dev_trace());
  auto c2 = c;
  c2.seed = 99;
  EXPECT_NE(run(c2).log.loss_trace(), a.log.loss_trace());
}

TEST_F(Tiny, WorkerCountDoesNotChangeTrace) {
  auto c = tiny_config(Setting::bt);
  const auto a = run(c);
  c.workers = 3;
  EXPECT_EQ(run(c).log.loss_trace(), a.log.loss_trace());
}

TEST_F(Tiny, StoresAreNotMutated) {
  const auto parallel = data_->parallel;
  const auto mono_a = data_->mono.sentences(A);
  run(tiny_config(Setting::bt_rec));
  EXPECT_TRUE(parallel == data_->parallel);
  EXPECT_EQ(mono_a, data_->mono.sentences(A));
}

TEST_F(Tiny, BestModelHasBestDevLoss) {
  const auto r = run(tiny_config(Setting::base));
  const auto dev = r.log.dev_trace();
  EXPECT_EQ(r.best_dev_loss, *std::min_element(dev.begin(), dev.end()));
  // Re-evaluate the returned best parameters from scratch.
  std::vector<std::vector<int>> src, tgt;
  double sum = 0.0;
  size_t toks = 0;
  for (const auto& d : tiny_config(Setting::base).directions()) {
    for (const auto& p : data_->parallel.pairs(d, Split::dev)) {
      const auto ex = objectives::format_translation(p);
      const auto b = model::Batch::make({model::truncate_ids(tok_->encode(ex.input), 16)},
                                        {model::truncate_ids(tok_->encode(ex.target), 16)});
      sum += static_cast<double>(model::loss_teacher_forcing(r.best, b)) * static_cast<double>(b.target_tokens());
      toks += b.target_tokens();
    }
  }
  EXPECT_NEAR(sum / static_cast<double>(toks), r.best_dev_loss, 1e-4);
}

TEST_F(Tiny, EarlyStopWithinPatience) {
  auto c = tiny_config(Setting::base);
  c.epochs = 6;
  c.eval_every_steps = 1;
  c.patience_evals = 2;
  c.optimizer.lr = 0.3;
  c.optimizer.clip_norm = 1.0;
  c.schedule.warmup_steps = 0;
  const auto r = run(c);
  ASSERT_TRUE(r.early_stopped);
  const auto evals = r.log.of("eval");
  size_t since_best = 0;
  for (const auto& e : evals) since_best = e["improved"].get<bool>() ? 0 : since_best + 1;
  EXPECT_EQ(since_best, c.patience_evals);
  EXPECT_EQ(r.log.of("early_stop").size(), 1u);
}

TEST_F(Tiny, PatienceNeverExceeded) {
  auto c = tiny_config(Setting::bt);
  c.eval_every_steps = 1;
  c.patience_evals = 3;
  const auto r = run(c);
  size_t since_best = 0;
  for (const auto& e : r.log.of("eval")) {
    since_best = e["improved"].get<bool>() ? 0 : since_best + 1;
    EXPECT_LE(since_best, c.patience_evals);
  }
}

TEST_F(Tiny, ConfigErrorsBeforeTraining) {
  auto c = tiny_config(Setting::base);
  c.model.vocab_size = tok_->vocab_size() + 1;
  EXPECT_THROW(run(c), Error);
  c = tiny_config(Setting::base);
  c.languages = {A, B, LangTag("zz9")};
  EXPECT_THROW(run(c), Error);
  corpus::ParallelStore no_dev;
  for (const auto& d : data_->parallel.directions()) {
    for (const auto& p : data_->parallel.pairs(d, Split::train)) no_dev.add(p, Split::train);
  }
  EXPECT_THROW(run_experiment(tiny_config(Setting::base), no_dev, data_->mono, *tok_), Error);
  EXPECT_THROW(run_experiment(tiny_config(Setting::bt), data_->parallel, corpus::MonoStore{}, *tok_), Error);
}

TEST_F(Tiny, ResumeReproducesTrace) {
  auto c = tiny_config(Setting::bt_rec);
  c.epochs = 3;
  c.checkpoint_every_steps = 3;
  const auto full = run(c);
  for (size_t halt : {4u, 7u}) {
    const auto dir = scratch("resume" + std::to_string(halt));
    RunOptions o;
    o.checkpoint_dir = dir.string();
    o.halt_after_steps = halt;
    const auto first = run(c, o);
    ASSERT_TRUE(first.halted);
    EXPECT_LT(first.steps, full.steps);
    RunOptions again;
    again.checkpoint_dir = dir.string();
    again.resume = true;
    const auto second = run(c, again);
    EXPECT_FALSE(second.halted);
    EXPECT_EQ(second.log.loss_trace(), full.log.loss_trace()) << "halted after " << halt;
    EXPECT_EQ(second.log.dev_trace(), full.log.dev_trace());
    EXPECT_TRUE(second.best.params() == full.best.params());
    EXPECT_EQ(second.log.of("resume").size(), 1u);
  }
}

TEST_F(Tiny, ResumeAtEpochBoundary) {
  auto c = tiny_config(Setting::bt);
  c.epochs = 3;
  const auto full = run(c);
  const size_t first_epoch_steps = full.log.of("epoch_end")[0]["step"].get<size_t>();
  const auto dir = scratch("epoch");
  RunOptions o;
  o.checkpoint_dir = dir.string();
  o.halt_after_steps = first_epoch_steps;
  ASSERT_TRUE(run(c, o).halted);
  RunOptions again;
  again.checkpoint_dir = dir.string();
  again.resume = true;
  EXPECT_EQ(run(c, again).log.loss_trace(), full.log.loss_trace());
}

TEST_F(Tiny, ResumeRejectsDifferentConfig) {
  auto c = tiny_config(Setting::base);
  const auto dir = scratch("mismatch");
  RunOptions o;
  o.checkpoint_dir = dir.string();
  o.halt_after_steps = 2;
  c.checkpoint_every_steps = 2;
  run(c, o);
  c.optimizer.lr *= 2;
  RunOptions again;
  again.checkpoint_dir = dir.string();
  again.resume = true;
  EXPECT_THROW(run(c, again), Error);
  RunOptions missing;
  missing.checkpoint_dir = scratch("empty").string();
  missing.resume = true;
  EXPECT_THROW(run(c, missing), Error);
}

TEST_F(Tiny, RunLogJsonlRoundTripAndSink) {
  const auto dir = scratch("log");
  RunOptions o;
  o.log_path = (dir / "runlog.jsonl").string();
  o.audit_path = (dir / "audit.jsonl").string();
  const auto r = run(tiny_config(Setting::bt_rec), o);
  const auto back = RunLog::from_jsonl(read_text(o.log_path));
  EXPECT_EQ(back.events().size(), r.log.events().size());
  EXPECT_EQ(back.loss_trace(), r.log.loss_trace());
  const auto start = back.of("start").at(0);
  EXPECT_EQ(start["seed"], "13");
  EXPECT_EQ(start["config_hash"].get<std::string>().size(), 16u);
  std::set<std::string> kinds;
  std::istringstream audit(read_text(o.audit_path));
  std::string line;
  size_t n = 0;
  while (std::getline(audit, line)) {
    kinds.insert(nlohmann::json::parse(line)["kind"].get<std::string>());
    ++n;
  }
  EXPECT_EQ(kinds, (std::set<std::string>{"bt", "rec"}));
  EXPECT_EQ(n, 3u * 4u + 3u * 3u);
  EXPECT_THROW(RunLog::from_jsonl("{\"x\":1}\n"), Error);
}

TEST_F(Tiny, EpochCallbackSeesEveryEpoch) {
  std::vector<size_t> seen;
  RunOptions o;
  o.on_epoch_end = [&](size_t e, const model::Transformer<float>&) { seen.push_back(e); };
  run(tiny_config(Setting::base), o);
  EXPECT_EQ(seen, (std::vector<size_t>{1, 2}));
}

// ---------------------------------------------------------------------------
// Evaluation and comparison

TEST_F(Tiny, EvaluateAllWithGroundTruth) {
  const auto dirs = tiny_config(Setting::base).directions();
  const GroundTruth& truth = data_->truth;
  auto exact = [&](const std::vector<std::string>& inputs) {
    std::vector<std::string> out;
    for (const auto& in : inputs) {
      const auto tag = LangTag(in.substr(1, 3));
      const auto body = in.substr(6);
      const auto src = truth.owner(text::split_ws(body)[0])->spec().code;
      out.push_back(truth.translate(body, src, tag));
    }
    return out;
  };
  const auto reports = evaluate_all(exact, data_->parallel, dirs, *tok_, &truth);
  ASSERT_EQ(reports.size(), 6u);
  for (const auto& r : reports) {
    EXPECT_DOUBLE_EQ(r.spbleu, 100.0);
    EXPECT_EQ(r.off_target.value(), 0.0);
    EXPECT_EQ(r.test_size, 5u);
  }
  auto echo = [](const std::vector<std::string>& inputs) {
    std::vector<std::string> out;
    for (const auto& in : inputs) out.push_back(in.substr(6));
    return out;
  };
  for (const auto& r : evaluate_all(echo, data_->parallel, dirs, *tok_, &truth)) EXPECT_EQ(r.off_target.value(), 1.0);
  EXPECT_DOUBLE_EQ(mean_off_target_into(evaluate_all(echo, data_->parallel, dirs, *tok_, &truth), B), 1.0);
}

TEST(Compare, TableShapeAndRendering) {
  ComparisonTable t;
  const Direction ab(A, B), ba(B, A);
  for (double v : {10.0, 12.0, 11.0}) t.add(ab, "base", v);
  for (double v : {20.0, 14.0, 30.0}) t.add(ab, "bt", v);
  t.add(ab, "btrec", 15.0);
  t.add(ba, "base", 5.0);
  t.add(ba, "bt", 6.0);
  t.add(ba, "btrec", 7.0);
  EXPECT_EQ(t.cell(ab, "base").value(), 11.0);
  EXPECT_EQ(t.cell(ab, "bt").value(), 20.0);
  EXPECT_FALSE(t.cell(Direction(A, C), "bt").has_value());
  const auto csv = t.to_csv();
  EXPECT_NE(csv.find("direction,base,bt,btrec\n"), std::string::npos);
  EXPECT_NE(csv.find("sy1-sy2,11.00,20.00,15.00\n"), std::string::npos);
  const auto text = t.to_text();
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 4);
  const auto paired = t.to_text("base");
  EXPECT_NE(paired.find("20.00 (11.00)"), std::string::npos);
  EXPECT_NE(paired.find("7.00 (5.00)"), std::string::npos);
  const auto svg = t.to_svg();
  size_t bars = 0;
  for (size_t p = svg.find("<rect x"); p != std::string::npos; p = svg.find("<rect x", p + 1)) ++bars;
  EXPECT_EQ(bars, 6u + 3u);  // one per cell plus the legend swatches
  EXPECT_EQ(median({3.0, 1.0, 2.0, 10.0}), 2.5);
}

TEST(Compare, ComparableConfigs) {
  auto base = tiny_config(Setting::base);
  auto bt = base;
  bt.setting = Setting::bt;
  bt.bt.num_bt = 77;
  EXPECT_NO_THROW(check_comparable({base, bt}));
  bt.optimizer.lr *= 2;
  EXPECT_THROW(check_comparable({base, bt}), Error);
}

TEST_F(Tiny, CompareSettingsRunsEverySeed) {
  std::vector<ExperimentConfig> cfgs;
  for (auto s : {Setting::base, Setting::bt, Setting::bt_rec}) cfgs.push_back(tiny_config(s));
  CompareOptions o;
  o.seeds = {1, 2};
  size_t callbacks = 0;
  o.on_epoch_end = [&](Setting, uint64_t, size_t, const model::Transformer<float>&) { ++callbacks; };
  const auto cmp = compare_settings(cfgs, data_->parallel, data_->mono, *tok_, &data_->truth, o);
  EXPECT_EQ(cmp.runs.size(), 6u);
  EXPECT_EQ(callbacks, 12u);
  EXPECT_EQ(cmp.table.directions.size(), 6u);
  EXPECT_EQ(cmp.table.columns, (std::vector<std::string>{"base", "bt", "btrec"}));
  for (const auto& [key, v] : cmp.table.samples) EXPECT_EQ(v.size(), 2u);
  for (const auto& r : cmp.runs) {
    for (const auto& rep : r.reports) EXPECT_TRUE(rep.off_target.has_value());
  }
  EXPECT_EQ(cmp.table_for("off_target").directions.size(), 6u);
  EXPECT_THROW(cmp.table_for("rouge"), Error);
}
