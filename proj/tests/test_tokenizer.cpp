#include <gtest/gtest.h>

#include <algorithm>

#include "mmt/core/rng.hpp"
#include "mmt/tokenizer/bpe.hpp"
#include "test_util.hpp"

using namespace mmt;
using mmt::tokenizer::SubwordModel;

namespace {

const std::vector<LangTag> kLangs = {LangTag("eng"), LangTag("fra"), LangTag("ibo"), LangTag("fon")};

std::vector<std::string> small_corpus() {
  return {"Daalụ maka ikwu eziokwu nke Chineke", "Thank you for telling God's truth",
          "état fédéral", "le chat est sur la table", "the cat is on the table",
          "Ẹ kú àárọ̀", "àwọn ọmọ ń ṣeré", "the the the cat cat"};
}

SubwordModel small_model() { return SubwordModel::train(small_corpus(), 7 + 256 + 60, kLangs); }

}  // namespace

TEST(Train, SingleMergeOnRepeatedLetter) {
  const size_t specials = 3 + kLangs.size();
  auto m = SubwordModel::train({"aaaa aaaa"}, specials + 256 + 1, kLangs);
  ASSERT_EQ(m.merges().size(), 1u);
  EXPECT_EQ(m.piece(m.merges()[0].first), "a");
  EXPECT_EQ(m.piece(m.merges()[0].second), "a");
  EXPECT_EQ(m.vocab_size(), specials + 256 + 1);
  const std::vector<std::string> expect = {"aa", "aa"};
  EXPECT_EQ(m.encode_pieces("aaaa"), expect);
}

TEST(Train, EmptyCorpusAndSmallVocabFail) {
  EXPECT_THROW(SubwordModel::train({}, 1000, kLangs), Error);
  EXPECT_THROW(SubwordModel::train({"   "}, 1000, kLangs), Error);
  EXPECT_THROW(SubwordModel::train({"abc"}, 3 + kLangs.size() + 256, kLangs), Error);
}

TEST(Train, SpecialsPresentOnceAndFixedIds) {
  auto m = small_model();
  for (const auto& l : kLangs) {
    const auto& p = m.pieces();
    EXPECT_EQ(std::count(p.begin(), p.end(), l.token()), 1) << l.token();
  }
  EXPECT_EQ(m.piece(SubwordModel::kPad), "<pad>");
  EXPECT_EQ(m.piece(SubwordModel::kEos), "</s>");
  EXPECT_EQ(m.piece(SubwordModel::kUnk), "<unk>");
}

TEST(Train, StopsWhenNoPairRepeats) {
  auto m = SubwordModel::train({"abcdefg"}, 100000, kLangs);
  EXPECT_EQ(m.merges().size(), 0u);
}

TEST(Train, DeterministicAndTieBreak) {
  // "ab" and "cd" both occur twice; "ab" < "cd" wins the tie.
  auto m = SubwordModel::train({"ab", "cd", "ab", "cd"}, 7 + 256 + 1, kLangs);
  ASSERT_EQ(m.merges().size(), 1u);
  EXPECT_EQ(m.piece(7 + 256), "ab");
  auto a = SubwordModel::train(small_corpus(), 400, kLangs);
  auto b = SubwordModel::train(small_corpus(), 400, kLangs);
  EXPECT_EQ(a.serialize(), b.serialize());
}

TEST(Train, MergesNeverContainSpecialSurface) {
  std::vector<std::string> corpus;
  for (int i = 0; i < 50; ++i) corpus.push_back("x<eng>y <eng><eng> <fra>");
  auto m = SubwordModel::train(corpus, 7 + 256 + 200, kLangs);
  for (size_t i = m.special_count() + 256; i < m.vocab_size(); ++i) {
    for (const auto& s : m.special_tokens()) {
      EXPECT_EQ(m.pieces()[i].find(s), std::string::npos) << m.pieces()[i];
    }
  }
}

TEST(Encode, LeadingTagIsAtomic) {
  auto m = small_model();
  auto ids = m.encode("<eng> hello");
  EXPECT_EQ(ids[0], m.tag_id("<eng>"));
  EXPECT_EQ(ids.back(), SubwordModel::kEos);
  EXPECT_EQ(m.decode(ids), "<eng> hello");
}

TEST(Encode, EmptyIsEos) {
  auto m = small_model();
  EXPECT_EQ(m.encode(""), std::vector<int>{SubwordModel::kEos});
  EXPECT_TRUE(m.encode_pieces("").empty());
  EXPECT_EQ(m.decode(std::vector<int>{SubwordModel::kEos}), "");
}

TEST(Encode, RoundTripExamples) {
  auto m = small_model();
  for (const char* s : {"Daalụ maka ikwu eziokwu nke Chineke", "état fédéral", "àwọn ọmọ ń ṣeré"}) {
    EXPECT_EQ(m.decode(m.encode(s)), s);
  }
}

TEST(Encode, UnknownRendersMarker) {
  auto m = small_model();
  EXPECT_EQ(m.decode(std::vector<int>{SubwordModel::kUnk}), "⁇");
  EXPECT_THROW(m.decode(std::vector<int>{static_cast<int>(m.vocab_size())}), Error);
  EXPECT_THROW(m.decode(std::vector<int>{-1}), Error);
}

TEST(Encode, BoundaryPieceVisible) {
  auto m = small_model();
  auto pieces = m.encode_pieces("the cat");
  ASSERT_GE(pieces.size(), 2u);
  EXPECT_NE(pieces[0].rfind("▁", 0), 0u);
  size_t opened = 0;
  for (const auto& p : pieces) opened += p.rfind("▁", 0) == 0;
  EXPECT_EQ(opened, 1u);
}

TEST(Encode, GeneratedLeadingBoundaryDropped) {
  auto m = SubwordModel::train({"x the", "y the"}, 7 + 256 + 10, kLangs);
  auto ids = m.encode("x the");
  ids.erase(ids.begin());  // now opens with the " the" pieces
  EXPECT_EQ(m.decode(ids), "the");
}

TEST(Encode, NonLeadingTagIsPlainText) {
  auto m = small_model();
  auto ids = m.encode("hi <eng>");
  EXPECT_EQ(std::count(ids.begin(), ids.end(), m.tag_id("<eng>")), 0);
  EXPECT_EQ(m.decode(ids), "hi <eng>");
}

TEST(Property, RoundTripRandomUtf8) {
  auto m = small_model();
  Rng rng(42);
  const std::vector<std::string> alphabet = {"a", "b", "ụ", "é", "ọ̀", "ɖ", "ɛ", " ", "  ", "\t", "x", "Z", "中", "😀"};
  for (int trial = 0; trial < 300; ++trial) {
    std::string s;
    const size_t len = rng.below(20);
    for (size_t i = 0; i < len; ++i) s += alphabet[rng.below(alphabet.size())];
    auto ids = m.encode(s);
    EXPECT_EQ(m.decode(ids), tokenizer::normalize(s)) << s;
    EXPECT_EQ(std::count(ids.begin(), ids.end(), SubwordModel::kUnk), 0);
    std::string joined;
    for (const auto& p : m.encode_pieces(s)) joined += p;
    std::string expect = tokenizer::normalize(s);
    std::string rendered;
    for (size_t i = 0; i < expect.size(); ++i) {
      if (expect[i] == ' ') {
        rendered += "▁";
      } else {
        rendered += expect[i];
      }
    }
    EXPECT_EQ(joined, rendered);
  }
}

TEST(Serialize, RoundTripByteExact) {
  auto m = small_model();
  auto dir = mmt::testing::scratch("bpe_io");
  const auto path = (dir / "model.bpe").string();
  m.save(path);
  auto back = SubwordModel::load(path);
  EXPECT_EQ(back.serialize(), m.serialize());
  EXPECT_EQ(back.hash(), m.hash());
  EXPECT_EQ(back.encode("Daalụ maka"), m.encode("Daalụ maka"));
  EXPECT_EQ(mmt::testing::read_file(path), m.serialize());
}

TEST(Serialize, RejectsCorruptFile) {
  auto text = small_model().serialize();
  EXPECT_THROW(SubwordModel::parse("garbage"), Error);
  text.resize(text.size() / 2);
  EXPECT_THROW(SubwordModel::parse(text), Error);
}
