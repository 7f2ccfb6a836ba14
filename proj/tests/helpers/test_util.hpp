#pragma once

#include <stdlib.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "greenbench/corpus.hpp"
#include "greenbench/jsonl.hpp"

namespace testutil {

// Fresh directory removed on destruction.
class TempDir {
 public:
  TempDir() {
    std::string tmpl = (std::filesystem::temp_directory_path() / "greenbench-test-XXXXXX").string();
    if (!::mkdtemp(tmpl.data())) throw std::runtime_error("mkdtemp failed");
    path_ = tmpl;
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

inline void write_file(const std::filesystem::path& p, const std::string& content) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  out << content;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::filesystem::path source_dir() { return GREENBENCH_SOURCE_DIR; }

inline std::filesystem::path sample_corpus() { return source_dir() / "data" / "corpus" / "sample.jsonl"; }

inline greenbench::Json problem_record(const std::string& id, const std::string& difficulty,
                                       std::vector<std::string> tags, const std::string& canonical,
                                       std::vector<std::string> tests) {
  return greenbench::Json{{"id", id},
                          {"title", "Problem " + id},
                          {"difficulty", difficulty},
                          {"tags", tags},
                          {"prompt_body", "Solve " + id + "."},
                          {"canonical_source", canonical},
                          {"tests", tests},
                          {"interpreter_ref", "python3"}};
}

inline greenbench::Problem make_problem(const std::string& id, const std::string& difficulty,
                                        std::vector<std::string> tags, const std::string& canonical,
                                        std::vector<std::string> tests) {
  return greenbench::parse_problem(problem_record(id, difficulty, std::move(tags), canonical, std::move(tests)),
                                   "test", 1);
}

}  // namespace testutil
