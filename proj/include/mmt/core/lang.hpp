#pragma once

#include <compare>
#include <string>
#include <string_view>
#include <vector>

#include "mmt/core/error.hpp"

namespace mmt {

/// Three-character lowercase language identifier ("ibo", "eng", "sy1").
class LangTag {
 public:
  LangTag() = default;
  explicit LangTag(std::string_view code) : code_(code) {
    if (!valid(code)) {
      fail(ErrorKind::value, "invalid language code '" + std::string(code) + "'");
    }
  }

  static bool valid(std::string_view code) {
    if (code.size() != 3) return false;
    if (code[0] < 'a' || code[0] > 'z') return false;
    for (char c : code) {
      if (!((c >= 'a' && c <= 'z') || (c >= '0' && c <= '9'))) return false;
    }
    return true;
  }

  const std::string& code() const noexcept { return code_; }
  /// Surface form of the tag token in model input, e.g. "<eng>".
  std::string token() const { return "<" + code_ + ">"; }

  friend auto operator<=>(const LangTag&, const LangTag&) = default;
  friend bool operator==(const LangTag&, const LangTag&) = default;

 private:
  std::string code_;
};

struct Direction {
  LangTag src;
  LangTag tgt;

  Direction() = default;
  Direction(LangTag s, LangTag t) : src(std::move(s)), tgt(std::move(t)) {
    if (src == tgt) fail(ErrorKind::value, "direction source equals target: " + src.code());
  }

  /// "src-tgt"
  std::string str() const { return src.code() + "-" + tgt.code(); }

  static Direction parse(std::string_view text) {
    if (auto arrow = text.find("->"); arrow != std::string_view::npos) {
      return {LangTag(text.substr(0, arrow)), LangTag(text.substr(arrow + 2))};
    }
    auto dash = text.find('-');
    if (dash == std::string_view::npos) {
      fail(ErrorKind::value, "direction must look like 'src-tgt': " + std::string(text));
    }
    return {LangTag(text.substr(0, dash)), LangTag(text.substr(dash + 1))};
  }

  friend auto operator<=>(const Direction&, const Direction&) = default;
  friend bool operator==(const Direction&, const Direction&) = default;
};

inline std::vector<LangTag> parse_lang_list(std::string_view csv) {
  std::vector<LangTag> out;
  size_t start = 0;
  while (start <= csv.size()) {
    auto comma = csv.find(',', start);
    auto item = csv.substr(start, comma == std::string_view::npos ? std::string_view::npos
                                                                  : comma - start);
    if (!item.empty()) out.emplace_back(item);
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

}  // namespace mmt
