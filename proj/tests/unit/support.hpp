#pragma once

#include <stdlib.h>

#include <filesystem>
#include <fstream>
#include <string>
#include <system_error>

#include "corpus.hpp"
#include "error.hpp"

namespace sprag::test {

// Scratch directory removed on scope exit.
class TempDir {
 public:
  TempDir() {
    std::string pattern = (std::filesystem::temp_directory_path() / "sprag-test-XXXXXX").string();
    if (!mkdtemp(pattern.data())) throw std::runtime_error("mkdtemp failed");
    path_ = pattern;
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& leaf) const { return path_ / leaf; }

 private:
  std::filesystem::path path_;
};

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << text;
}

inline Task make_task(const std::string& key, const std::string& title, const std::string& description,
                      std::optional<double> sp, std::int64_t created_millis) {
  Task t;
  t.project_id = "P";
  t.issue_key = key;
  t.title = title;
  t.description = description;
  t.story_point = sp;
  t.created = Timestamp{created_millis};
  return t;
}

inline std::filesystem::path source_dir() { return SPRAG_SOURCE_DIR; }

// ErrorCode thrown by fn, nullopt when it returns normally.
template <typename Fn>
std::optional<ErrorCode> error_of(Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return std::nullopt;
}

}  // namespace sprag::test
