#include <gtest/gtest.h>

#include <set>

#include "mmt/corpus/corpus.hpp"
#include "test_util.hpp"

using namespace mmt;
using namespace mmt::corpus;
using mmt::testing::scratch;
using mmt::testing::write_file;

namespace {

const Direction kFraEng{LangTag("fra"), LangTag("eng")};

ParallelPair pair(const Direction& d, std::string s, std::string t, std::string dom = "default") {
  return {d, std::move(s), std::move(t), std::move(dom)};
}

std::string words(size_t n, const std::string& w = "w") {
  std::string s;
  for (size_t i = 0; i < n; ++i) s += (i ? " " : "") + w + std::to_string(i);
  return s;
}

ParallelStore numbered(const Direction& d, size_t n, size_t domains = 1) {
  ParallelStore s;
  for (size_t i = 0; i < n; ++i) {
    s.add(pair(d, "src " + std::to_string(i), "tgt " + std::to_string(i), "dom" + std::to_string(i % domains)));
  }
  return s;
}

std::set<std::string> members(const ParallelStore& s, Split split) {
  std::set<std::string> out;
  for (const auto& d : s.directions()) {
    for (const auto& p : s.pairs(d, split)) out.insert(p.src_text);
  }
  return out;
}

}  // namespace

TEST(Load, Tsv2SinglePair) {
  auto dir = scratch("tsv_single");
  write_file(dir / "a.tsv", "bonjour\thello\n");
  auto r = load_parallel((dir / "a.tsv").string(), kFraEng, Format::tsv2);
  ASSERT_EQ(r.store.size(), 1u);
  EXPECT_EQ(r.malformed, 0u);
  auto p = r.store.pairs(kFraEng);
  EXPECT_EQ(p[0].src_text, "bonjour");
  EXPECT_EQ(p[0].tgt_text, "hello");
}

TEST(Load, Tsv2ThreeFieldsIsMalformed) {
  auto dir = scratch("tsv_three");
  write_file(dir / "a.tsv", "a b\tc d\n1\t2\t3\n");
  auto r = load_parallel((dir / "a.tsv").string(), kFraEng, Format::tsv2);
  EXPECT_EQ(r.store.size(), 1u);
  EXPECT_EQ(r.malformed, 1u);
}

TEST(Load, JsonlMissingTgtCounted) {
  auto dir = scratch("jsonl");
  std::string content;
  size_t expected_missing = 0;
  for (int i = 0; i < 100; ++i) {
    if (i == 17 || i == 64) {
      content += R"({"src": "only source", "domain": "x"})" "\n";
      ++expected_missing;
    } else {
      content += R"({"src": "s )" + std::to_string(i) + R"(", "tgt": "t )" + std::to_string(i) +
                 R"(", "domain": "d"})" "\n";
    }
  }
  write_file(dir / "a.jsonl", content);
  auto r = load_parallel((dir / "a.jsonl").string(), kFraEng, Format::jsonl);
  EXPECT_EQ(r.store.size(), 100u - expected_missing);
  EXPECT_EQ(r.malformed, expected_missing);
  EXPECT_EQ(r.store.pairs(kFraEng)[0].domain_label, "d");
}

TEST(Load, InvalidUtf8Rejected) {
  auto dir = scratch("badutf");
  write_file(dir / "a.tsv", "ok line\tfine\nbad \xC3\tx\n");
  auto r = load_parallel((dir / "a.tsv").string(), kFraEng, Format::tsv2);
  EXPECT_EQ(r.store.size(), 1u);
  EXPECT_EQ(r.malformed, 1u);
}

TEST(Load, Errors) {
  auto dir = scratch("load_err");
  try {
    load_parallel((dir / "missing.tsv").string(), kFraEng, Format::tsv2);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::io);
  }
  write_file(dir / "bad.tsv", "no tab here\n");
  try {
    load_parallel((dir / "bad.tsv").string(), kFraEng, Format::tsv2);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::empty_corpus);
  }
}

TEST(Clean, TooLongDropped) {
  ParallelStore s;
  s.add(pair(kFraEng, words(51), words(5)));
  s.add(pair(kFraEng, words(50), words(50)));
  auto r = clean(s, CleaningConfig{});
  EXPECT_EQ(r.store.size(), 1u);
  EXPECT_EQ(r.report.totals().too_long, 1u);
}

TEST(Clean, TooShortDropped) {
  ParallelStore s;
  s.add(pair(kFraEng, "hi", "yo"));
  auto r = clean(s, CleaningConfig{});
  EXPECT_EQ(r.store.size(), 0u);
  EXPECT_EQ(r.report.totals().too_short, 1u);
}

TEST(Clean, DuplicatesCollapse) {
  ParallelStore s;
  s.add(pair(kFraEng, "le chat", "the cat"));
  s.add(pair(kFraEng, " le   chat ", "the\tcat"));
  auto r = clean(s, CleaningConfig{});
  EXPECT_EQ(r.store.size(), 1u);
  EXPECT_EQ(r.report.totals().duplicate, 1u);
  CleaningConfig nodedup;
  nodedup.dedup = false;
  EXPECT_EQ(clean(s, nodedup).store.size(), 2u);
}

TEST(Clean, Idempotent) {
  ParallelStore s;
  for (int i = 0; i < 40; ++i) {
    s.add(pair(kFraEng, words(static_cast<size_t>(i % 7 + 1)), "  x  y " + std::to_string(i % 5)));
  }
  auto once = clean(s, CleaningConfig{}).store;
  auto twice = clean(once, CleaningConfig{}).store;
  EXPECT_TRUE(once == twice);
}

TEST(Clean, PreservesDiacriticsAndComposes) {
  ParallelStore s;
  s.add(pair(kFraEng, "Daalu\xCC\xA3 maka", "e\xCC\x81tat fédéral"));
  auto p = clean(s, CleaningConfig{}).store.pairs(kFraEng);
  ASSERT_EQ(p.size(), 1u);
  EXPECT_EQ(p[0].src_text, "Daalụ maka");
  EXPECT_EQ(p[0].tgt_text, "état fédéral");
}

TEST(Clean, InvalidConfig) {
  CleaningConfig c;
  c.min_len = 0;
  EXPECT_THROW(clean(ParallelStore{}, c), Error);
  c.min_len = 5;
  c.max_len = 4;
  EXPECT_THROW(clean(ParallelStore{}, c), Error);
}

TEST(Clean, ReportRenders) {
  ParallelStore s;
  s.add(pair(kFraEng, "hi", "yo"));
  s.add(pair(kFraEng, "a b", "c d"));
  auto r = clean(s, CleaningConfig{});
  EXPECT_NE(r.report.to_csv().find("fra-eng,2,0,1,0,1"), std::string::npos);
  EXPECT_NE(r.report.to_text().find("fra-eng"), std::string::npos);
}

TEST(Split, CountsAndReproducible) {
  auto s = numbered(kFraEng, 1000);
  SplitSpec spec{30, 30, 99, true};
  auto a = split(s, spec), b = split(s, spec);
  EXPECT_EQ(a.count(Split::train), 940u);
  EXPECT_EQ(a.count(Split::dev), 30u);
  EXPECT_EQ(a.count(Split::test), 30u);
  EXPECT_TRUE(a == b);
}

TEST(Split, StratifiedEqualDomains) {
  auto s = numbered(kFraEng, 1000, 2);
  auto out = split(s, SplitSpec{0, 30, 5, true});
  std::map<std::string, int> per;
  for (const auto& p : out.pairs(kFraEng, Split::test)) ++per[p.domain_label];
  EXPECT_EQ(per["dom0"], 15);
  EXPECT_EQ(per["dom1"], 15);
}

TEST(Split, UnevenDomainsWithinOne) {
  ParallelStore s;
  for (int i = 0; i < 300; ++i) {
    s.add(pair(kFraEng, "a " + std::to_string(i), "b " + std::to_string(i), "d" + std::to_string(i % 3)));
  }
  auto out = split(s, SplitSpec{10, 11, 1, true});
  for (Split sp : {Split::dev, Split::test}) {
    std::map<std::string, int> per;
    for (const auto& p : out.pairs(kFraEng, sp)) ++per[p.domain_label];
    int lo = 1 << 30, hi = 0;
    for (auto& [_, n] : per) {
      lo = std::min(lo, n);
      hi = std::max(hi, n);
    }
    EXPECT_EQ(per.size(), 3u);
    EXPECT_LE(hi - lo, 1);
  }
}

TEST(Split, DifferentSeedsDifferentTests) {
  auto s = numbered(kFraEng, 1000);
  auto a = members(split(s, SplitSpec{30, 30, 1, true}), Split::test);
  auto b = members(split(s, SplitSpec{30, 30, 2, true}), Split::test);
  EXPECT_NE(a, b);
}

TEST(Split, PartitionsStore) {
  auto s = numbered(kFraEng, 200, 3);
  s.merge(numbered(Direction(LangTag("eng"), LangTag("fra")), 120, 2));
  auto out = split(s, SplitSpec{7, 9, 3, true});
  EXPECT_EQ(out.size(), s.size());
  for (const auto& d : s.directions()) {
    std::multiset<std::string> all, parts;
    for (const auto& p : s.pairs(d)) all.insert(p.src_text);
    for (Split sp : {Split::train, Split::dev, Split::test}) {
      for (const auto& p : out.pairs(d, sp)) parts.insert(p.src_text);
    }
    EXPECT_EQ(all, parts);
  }
}

TEST(Split, InsufficientNamesDirection) {
  auto s = numbered(kFraEng, 20);
  try {
    split(s, SplitSpec{10, 10, 1, true});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::insufficient_data);
    EXPECT_NE(std::string(e.what()).find("fra-eng"), std::string::npos);
  }
}

TEST(Stats, EmptyStoreAllZero) {
  auto t = stats(ParallelStore{});
  EXPECT_EQ(t.total(), 0u);
}

TEST(Stats, SingleCell) {
  auto s = numbered(kFraEng, 3);
  auto t = stats(s);
  EXPECT_EQ(t.at(LangTag("fra"), LangTag("eng")), 3u);
  EXPECT_EQ(t.at(LangTag("eng"), LangTag("fra")), 0u);
  EXPECT_EQ(t.total(), s.size());
  EXPECT_EQ(t.languages().front().code(), "eng");
}

TEST(Stats, LargeTableRow) {
  const Direction ibo_yor{LangTag("ibo"), LangTag("yor")};
  const Direction ibo_fon{LangTag("ibo"), LangTag("fon")};
  ParallelStore s;
  for (size_t i = 0; i < 134219; ++i) s.add(pair(ibo_yor, "s", "t"));
  for (size_t i = 0; i < 3179; ++i) s.add(pair(ibo_fon, "s", "t"));
  auto t = stats(s);
  EXPECT_EQ(t.at(LangTag("ibo"), LangTag("yor")), 134219u);
  EXPECT_EQ(t.at(LangTag("ibo"), LangTag("fon")), 3179u);
  EXPECT_EQ(t.total(), 134219u + 3179u);
  EXPECT_NE(t.to_csv().find("134219"), std::string::npos);
  EXPECT_NE(t.to_text().find("134219"), std::string::npos);
}

TEST(StoreIo, RoundTrip) {
  auto dir = scratch("store_io");
  auto s = split(numbered(kFraEng, 50, 2), SplitSpec{5, 5, 4, true});
  save_store(s, (dir / "p.jsonl").string());
  EXPECT_TRUE(read_store((dir / "p.jsonl").string()) == s);

  MonoStore m;
  m.add(LangTag("ibo"), "otu abụọ", Split::train, "web");
  m.add(LangTag("fon"), "ɖokpo", Split::dev);
  save_mono_store(m, (dir / "m.jsonl").string());
  auto back = read_mono_store((dir / "m.jsonl").string());
  EXPECT_EQ(back.sentences(LangTag("ibo")), m.sentences(LangTag("ibo")));
  EXPECT_EQ(back.sentences(LangTag("fon"), Split::dev).size(), 1u);
}
