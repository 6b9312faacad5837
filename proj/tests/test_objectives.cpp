#include <gtest/gtest.h>

#include <atomic>
#include <map>
#include <sstream>

#include "mmt/objectives/objectives.hpp"

using namespace mmt;
using namespace mmt::objectives;

namespace {

std::vector<LangTag> tags(std::initializer_list<const char*> codes) {
  std::vector<LangTag> out;
  for (const char* c : codes) out.emplace_back(c);
  return out;
}

std::multiset<std::string> words(const std::string& s) {
  std::multiset<std::string> out;
  for (auto w : text::split_ws(s)) out.emplace(w);
  return out;
}

corpus::MonoStore mono_fixture(const std::vector<LangTag>& langs, size_t per_lang) {
  corpus::MonoStore m;
  for (const auto& l : langs) {
    for (size_t i = 0; i < per_lang; ++i) m.add(l, l.code() + "w" + std::to_string(i) + " x y z");
  }
  return m;
}

TEST(Directions, FourLanguagesMinusEngFraGivesTen) {
  const auto d = build_directions(tags({"eng", "fra", "ibo", "fon"}), {{LangTag("eng"), LangTag("fra")}});
  EXPECT_EQ(d.size(), 10u);
  for (const auto& x : d) EXPECT_FALSE(excluded(x.src, x.tgt, {{LangTag("fra"), LangTag("eng")}}));
}

TEST(Directions, EightLanguagesByEnumeration) {
  const auto langs = tags({"eng", "fra", "ibo", "fon", "swa", "kin", "xho", "yor"});
  const auto d = build_directions(langs, {{LangTag("fra"), LangTag("eng")}});
  size_t expected = 0;
  for (const auto& a : langs) {
    for (const auto& b : langs) {
      const bool ef = (a.code() == "eng" && b.code() == "fra") || (a.code() == "fra" && b.code() == "eng");
      if (a != b && !ef) ++expected;
    }
  }
  EXPECT_EQ(expected, 54u);
  EXPECT_EQ(d.size(), expected);
  EXPECT_TRUE(std::is_sorted(d.begin(), d.end(), [](const Direction& x, const Direction& y) {
    return std::tie(x.src, x.tgt) < std::tie(y.src, y.tgt);
  }));
}

TEST(Directions, TwoLanguagesNoExclusions) {
  const auto d = build_directions(tags({"sy2", "sy1"}), {});
  ASSERT_EQ(d.size(), 2u);
  EXPECT_EQ(d[0].str(), "sy1-sy2");
  EXPECT_EQ(d[1].str(), "sy2-sy1");
}

TEST(Directions, TooFewLanguagesFails) {
  EXPECT_THROW(build_directions(tags({"sy1"}), {}), Error);
  EXPECT_THROW(build_directions(tags({"sy1", "sy1"}), {}), Error);
}

TEST(Format, TranslationPrependsTargetTag) {
  corpus::ParallelPair p{Direction::parse("ibo-eng"), "Daalụ maka ikwu eziokwu nke Chineke",
                         "Thank you for telling God's truth", ""};
  const auto ex = format_translation(p);
  EXPECT_EQ(ex.input, "<eng> Daalụ maka ikwu eziokwu nke Chineke");
  EXPECT_EQ(ex.target, "Thank you for telling God's truth");
  EXPECT_EQ(ex.input.substr(ex.input.find(' ') + 1), p.src_text);
  EXPECT_TRUE(has_tag_prefix(ex.input, tags({"eng"})));
  EXPECT_FALSE(has_tag_prefix(ex.input, tags({"ibo"})));
  EXPECT_FALSE(has_tag_prefix("<eng>x", tags({"eng"})));
}

TEST(Noise, SingleTokenIsPreserved) {
  Rng rng(1);
  for (int i = 0; i < 200; ++i) EXPECT_EQ(noise("alone", 2, 0.9, rng), "alone");
}

TEST(Noise, IdentityWithoutSwapsOrDeletion) {
  Rng rng(1);
  EXPECT_EQ(noise("a b  c d", 0, 0.0, rng), "a b c d");
}

TEST(Noise, SwapsPreserveMultiset) {
  Rng rng(4);
  const std::string s = "one two three four five six two";
  for (int i = 0; i < 500; ++i) {
    const auto n = noise(s, 2, 0.0, rng);
    EXPECT_EQ(words(n), words(s));
  }
}

TEST(Noise, SingleSwapAlwaysMovesTwoDistinctPositions) {
  Rng rng(5);
  for (int i = 0; i < 200; ++i) EXPECT_NE(noise("a b c d e", 1, 0.0, rng), "a b c d e");
}

TEST(Noise, SwapPositionsAreUniform) {
  // One swap on "a b c": each of the three transpositions with probability 1/3.
  Rng rng(6);
  std::map<std::string, int> seen;
  const int n = 30000;
  for (int i = 0; i < n; ++i) ++seen[noise("a b c", 1, 0.0, rng)];
  ASSERT_EQ(seen.size(), 3u);
  for (const auto& [k, c] : seen) EXPECT_NEAR(c / double(n), 1.0 / 3.0, 0.015) << k;
}

TEST(Noise, DeletionKeepRate) {
  // Long sentences so the keep-one floor never triggers; binomial interval
  // around 0.8 for >= 10^4 tokens.
  Rng rng(7);
  std::string s;
  for (int i = 0; i < 20; ++i) s += "t" + std::to_string(i) + " ";
  size_t total = 0, kept = 0;
  for (int r = 0; r < 1000; ++r) {
    total += 20;
    kept += text::split_ws(noise(s, 2, 0.2, rng)).size();
  }
  const double rate = double(kept) / double(total);
  EXPECT_GE(rate, 0.785);
  EXPECT_LE(rate, 0.815);
}

TEST(Noise, NeverEmpty) {
  Rng rng(8);
  for (int i = 0; i < 1000; ++i) EXPECT_FALSE(noise("a b", 0, 0.99, rng).empty());
  EXPECT_THROW(noise("   ", 2, 0.2, rng), Error);
}

TEST(Rec, CountsAndShape) {
  const auto langs = tags({"sy1", "sy2", "sy3"});
  const auto mono = mono_fixture(langs, 10);
  RECConfig cfg;
  Rng rng(3);
  const auto ex = make_rec_examples(mono, langs, cfg, rng);
  EXPECT_EQ(ex.size(), 150u);
  for (const auto& e : ex) {
    EXPECT_TRUE(has_tag_prefix(e.input, langs));
    EXPECT_EQ(e.kind, ExampleKind::rec);
    const std::string tag = e.input.substr(0, 5);
    EXPECT_EQ(e.target.substr(0, 3), tag.substr(1, 3));  // same-language reconstruction
    for (const auto& w : words(e.input.substr(6))) EXPECT_EQ(words(e.target).count(w), 1u);
  }
}

TEST(Rec, NoNoiseMeansPayloadEqualsTarget) {
  const auto langs = tags({"sy1"});
  RECConfig cfg;
  cfg.n_swaps = 0;
  cfg.p_del = 0;
  Rng rng(3);
  for (const auto& e : make_rec_examples(mono_fixture(langs, 5), langs, cfg, rng)) {
    EXPECT_EQ(e.input, "<sy1> " + e.target);
  }
}

TEST(Rec, DeterministicAndSkipsEmptyLanguages) {
  const auto langs = tags({"sy1", "sy2", "sy3"});
  const auto mono = mono_fixture(tags({"sy1", "sy3"}), 7);
  RECConfig cfg;
  cfg.num_rec = 20;
  Rng a(9), b(9);
  std::vector<std::string> warnings;
  const auto x = make_rec_examples(mono, langs, cfg, a, &warnings);
  const auto y = make_rec_examples(mono, langs, cfg, b);
  ASSERT_EQ(x.size(), 40u);
  ASSERT_EQ(warnings.size(), 1u);
  EXPECT_NE(warnings[0].find("sy2"), std::string::npos);
  for (size_t i = 0; i < x.size(); ++i) {
    EXPECT_EQ(x[i].input, y[i].input);
    EXPECT_EQ(x[i].target, y[i].target);
  }
}

TEST(Rec, OnlyTrainSplitIsUsed) {
  corpus::MonoStore m;
  m.add(LangTag("sy1"), "train one");
  m.add(LangTag("sy1"), "held out", corpus::Split::dev);
  RECConfig cfg;
  Rng rng(2);
  for (const auto& e : make_rec_examples(m, tags({"sy1"}), cfg, rng)) EXPECT_EQ(e.target, "train one");
}

TEST(Bt, ConstantStubModel) {
  const auto langs = tags({"sy1", "sy2", "sy3"});
  const auto mono = mono_fixture(langs, 12);
  std::atomic<int> calls{0};
  TranslateFn stub = [&](const std::string& in, Rng&) {
    EXPECT_TRUE(has_tag_prefix(in, langs));
    ++calls;
    return std::string("Z");
  };
  BTConfig cfg;
  Rng rng(1);
  const auto ex = make_bt_examples(stub, mono, langs, {}, cfg, 10, rng);
  EXPECT_EQ(ex.size(), 30u);
  EXPECT_EQ(calls.load(), 60);
  for (const auto& e : ex) {
    EXPECT_EQ(e.input, e.input.substr(0, 5) + " Z");
    EXPECT_EQ(e.target.substr(0, 3), e.input.substr(1, 3));
    const auto sents = mono.sentences(LangTag(e.input.substr(1, 3)));
    EXPECT_NE(std::find(sents.begin(), sents.end(), e.target), sents.end());
    EXPECT_NE(e.pivot, e.input.substr(1, 3));
  }
}

TEST(Bt, SingleCandidateIsAlwaysChosen) {
  const auto langs = tags({"sy1", "sy2"});
  const auto mono = mono_fixture(langs, 4);
  int counter = 0;
  TranslateFn stub = [&](const std::string&, Rng&) { return "c" + std::to_string(counter++); };
  BTConfig cfg;
  cfg.num_sample = 1;
  Rng rng(1);
  const auto ex = make_bt_examples(stub, mono, langs, {}, cfg, 5, rng);
  for (size_t i = 0; i < ex.size(); ++i) EXPECT_EQ(ex[i].input.substr(6), "c" + std::to_string(i));
}

TEST(Bt, PivotIsUniformAndRespectsExclusions) {
  const auto langs = tags({"eng", "fra", "ibo", "fon"});
  corpus::MonoStore mono;
  mono.add(LangTag("eng"), "hello there");
  TranslateFn echo = [](const std::string& in, Rng&) { return in; };
  BTConfig cfg;
  cfg.num_sample = 1;
  Rng rng(2);
  std::map<std::string, int> pivots;
  for (const auto& e : make_bt_examples(echo, mono, langs, {{LangTag("eng"), LangTag("fra")}}, cfg, 6000, rng)) {
    ++pivots[e.pivot];
    EXPECT_EQ(e.input, "<eng> <" + e.pivot + "> hello there");
  }
  EXPECT_EQ(pivots.count("fra"), 0u);
  ASSERT_EQ(pivots.size(), 2u);
  EXPECT_NEAR(pivots["ibo"] / 6000.0, 0.5, 0.03);
}

TEST(Bt, NoEligiblePivotFails) {
  const auto langs = tags({"eng", "fra"});
  const auto mono = mono_fixture(langs, 2);
  TranslateFn stub = [](const std::string&, Rng&) { return std::string("Z"); };
  Rng rng(1);
  EXPECT_THROW(make_bt_examples(stub, mono, langs, {{LangTag("eng"), LangTag("fra")}}, BTConfig{}, 3, rng), Error);
}

TEST(Bt, WorkerCountDoesNotChangeExamples) {
  const auto langs = tags({"sy1", "sy2", "sy3"});
  const auto mono = mono_fixture(langs, 30);
  // randomness consumed from the per-sentence stream makes the output seed-sensitive
  TranslateFn stub = [](const std::string& in, Rng& r) { return in.substr(6, 4) + std::to_string(r.below(1000)); };
  BTConfig cfg;
  cfg.num_sample = 3;
  Rng a(17), b(17);
  const auto x = make_bt_examples(stub, mono, langs, {}, cfg, 25, a, 1);
  const auto y = make_bt_examples(stub, mono, langs, {}, cfg, 25, b, 4);
  ASSERT_EQ(x.size(), y.size());
  for (size_t i = 0; i < x.size(); ++i) {
    EXPECT_EQ(x[i].input, y[i].input);
    EXPECT_EQ(x[i].target, y[i].target);
    EXPECT_EQ(x[i].pivot, y[i].pivot);
  }
}

TEST(Bt, ModelTranslatorIsReproducible) {
  const auto langs = tags({"sy1", "sy2"});
  const auto mono = mono_fixture(langs, 6);
  const auto tok = tokenizer::SubwordModel::train(mono.sentences(LangTag("sy1")), 280, langs);
  model::ModelConfig mc;
  mc.d_model = 16;
  mc.n_heads = 2;
  mc.n_enc_layers = mc.n_dec_layers = 1;
  mc.d_ff = 32;
  mc.vocab_size = tok.vocab_size();
  mc.max_positions = 24;
  const auto mdl = model::Transformer<float>::init(mc, 4);
  const auto tr = model_translator(mdl, tok, 1.0, 8);
  BTConfig cfg;
  Rng a(5), b(5);
  const auto x = make_bt_examples(tr, mono, langs, {}, cfg, 4, a, 1);
  const auto y = make_bt_examples(tr, mono, langs, {}, cfg, 4, b, 3);
  ASSERT_EQ(x.size(), 8u);
  for (size_t i = 0; i < x.size(); ++i) {
    EXPECT_EQ(x[i].input, y[i].input);
    EXPECT_TRUE(text::is_valid_utf8(x[i].input));
  }
}

TEST(Config, DecayListRepeatsLastEntry) {
  BTConfig c;
  c.decay = {100, 50, 10};
  EXPECT_EQ(c.num_bt_for_round(0), 100u);
  EXPECT_EQ(c.num_bt_for_round(2), 10u);
  EXPECT_EQ(c.num_bt_for_round(7), 10u);
  c.decay.clear();
  EXPECT_EQ(c.num_bt_for_round(3), c.num_bt);
  c.num_sample = 0;
  EXPECT_THROW(c.validate(), Error);
  RECConfig r;
  r.p_del = 1.0;
  EXPECT_THROW(r.validate(), Error);
  EXPECT_EQ(parse_setting("btrec"), Setting::bt_rec);
  EXPECT_THROW(parse_setting("rec"), Error);
}

TEST(Audit, JsonlLines) {
  std::ostringstream os;
  write_audit(os, {{"<sy1> a", "b", ExampleKind::bt, "sy2"}, {"<sy1> c", "c d", ExampleKind::rec, ""}}, 3);
  std::istringstream is(os.str());
  std::string line;
  std::getline(is, line);
  auto j = nlohmann::json::parse(line);
  EXPECT_EQ(j["kind"], "bt");
  EXPECT_EQ(j["pivot"], "sy2");
  EXPECT_EQ(j["round"], 3);
  std::getline(is, line);
  j = nlohmann::json::parse(line);
  EXPECT_TRUE(j["pivot"].is_null());
  EXPECT_EQ(j["target"], "c d");
}

}  // namespace
