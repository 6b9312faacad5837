#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

namespace mmt::testing {

/// Fresh scratch directory for one test; wiped on creation.
inline std::filesystem::path scratch(const std::string& name) {
  const char* base = std::getenv("MMT_TEST_TMP");
  std::filesystem::path root = base ? base : std::filesystem::temp_directory_path() / "mmt_tests";
  auto dir = root / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline void write_file(const std::filesystem::path& p, const std::string& content) {
  std::ofstream out(p, std::ios::binary);
  out << content;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace mmt::testing
