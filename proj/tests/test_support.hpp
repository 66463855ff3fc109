#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <unistd.h>

#include "intentctx/corpus.hpp"

namespace testing_support {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("intentctx-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline void write_file(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Dialogue JSON line with `turns` turns labelled a, b, a, ...
inline std::string dialogue_line(const std::string& id, std::size_t turns) {
  std::string s = R"({"id":")" + id + R"(","turns":[)";
  for (std::size_t t = 0; t < turns; ++t) {
    if (t) s += ",";
    s += R"({"user":"pergunta )" + std::to_string(t) + R"(","system":"resposta","intent":")" + (t % 2 ? "b" : "a") +
         R"("})";
  }
  return s + "]}\n";
}

}  // namespace testing_support
