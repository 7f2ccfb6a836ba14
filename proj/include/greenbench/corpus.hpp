#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "greenbench/error.hpp"
#include "greenbench/jsonl.hpp"

namespace greenbench {

enum class Difficulty { Easy, Medium, Hard };

inline constexpr std::array<Difficulty, 3> kDifficulties{Difficulty::Easy, Difficulty::Medium,
                                                         Difficulty::Hard};

// The eleven algorithm categories a problem may be tagged with.
enum class Category {
  Greedy,
  DP,
  Backtracking,
  DivideAndConquer,
  DFS,
  BFS,
  BinarySearch,
  TwoPointers,
  SlidingWindow,
  BitManipulation,
  Sorting,
};

inline constexpr std::size_t kCategoryCount = 11;

inline constexpr std::array<Category, kCategoryCount> kCategories{
    Category::Greedy,       Category::DP,           Category::Backtracking,
    Category::DivideAndConquer, Category::DFS,      Category::BFS,
    Category::BinarySearch, Category::TwoPointers,  Category::SlidingWindow,
    Category::BitManipulation, Category::Sorting};

inline std::string_view to_string(Difficulty d) {
  switch (d) {
    case Difficulty::Easy: return "Easy";
    case Difficulty::Medium: return "Medium";
    case Difficulty::Hard: return "Hard";
  }
  return "?";
}

inline std::string_view to_string(Category c) {
  switch (c) {
    case Category::Greedy: return "Greedy";
    case Category::DP: return "DP";
    case Category::Backtracking: return "Backtracking";
    case Category::DivideAndConquer: return "Divide & Conquer";
    case Category::DFS: return "DFS";
    case Category::BFS: return "BFS";
    case Category::BinarySearch: return "Binary Search";
    case Category::TwoPointers: return "Two Pointers";
    case Category::SlidingWindow: return "Sliding Window";
    case Category::BitManipulation: return "Bit Manipulation";
    case Category::Sorting: return "Sorting";
  }
  return "?";
}

inline std::optional<Difficulty> parse_difficulty(std::string_view s) {
  for (auto d : kDifficulties)
    if (to_string(d) == s) return d;
  return std::nullopt;
}

inline std::optional<Category> parse_category(std::string_view s) {
  for (auto c : kCategories)
    if (to_string(c) == s) return c;
  return std::nullopt;
}

struct TestCase {
  std::size_t index = 0;  // 1-based
  std::string test_code;
};

struct Problem {
  std::string id;
  std::string title;
  Difficulty difficulty = Difficulty::Easy;
  std::set<Category> tags;
  std::string prompt_body;
  std::string canonical_source;
  std::vector<TestCase> tests;
  std::string interpreter_ref;

  bool has_tag(Category c) const { return tags.count(c) != 0; }
};

struct Corpus {
  std::vector<Problem> problems;
  std::string source_path;

  const Problem* find(std::string_view id) const {
    auto it = std::find_if(problems.begin(), problems.end(),
                           [&](const Problem& p) { return p.id == id; });
    return it == problems.end() ? nullptr : &*it;
  }
};

namespace detail {

inline std::string require_string(const Json& rec, const char* field, const std::string& source,
                                  std::size_t line) {
  auto it = rec.find(field);
  if (it == rec.end()) throw ParseError(source, line, std::string("missing field '") + field + "'");
  if (!it->is_string())
    throw ParseError(source, line, std::string("field '") + field + "' must be a string");
  return it->get<std::string>();
}

inline const Json& require_array(const Json& rec, const char* field, const std::string& source,
                                 std::size_t line) {
  auto it = rec.find(field);
  if (it == rec.end()) throw ParseError(source, line, std::string("missing field '") + field + "'");
  if (!it->is_array())
    throw ParseError(source, line, std::string("field '") + field + "' must be an array");
  return *it;
}

}  // namespace detail

// Parses one corpus record. Field names: id, title, difficulty, tags,
// prompt_body, canonical_source, tests, interpreter_ref.
inline Problem parse_problem(const Json& rec, const std::string& source, std::size_t line) {
  Problem p;
  p.id = detail::require_string(rec, "id", source, line);
  if (p.id.empty()) throw ParseError(source, line, "empty id");
  p.title = detail::require_string(rec, "title", source, line);

  auto diff = detail::require_string(rec, "difficulty", source, line);
  auto d = parse_difficulty(diff);
  if (!d) throw ParseError(source, line, "unknown difficulty '" + diff + "'");
  p.difficulty = *d;

  for (const auto& t : detail::require_array(rec, "tags", source, line)) {
    if (!t.is_string()) throw ParseError(source, line, "tag must be a string");
    auto name = t.get<std::string>();
    auto c = parse_category(name);
    if (!c) throw ParseError(source, line, "unknown tag '" + name + "'");
    p.tags.insert(*c);
  }
  if (p.tags.empty()) throw ParseError(source, line, "problem '" + p.id + "' has no tags");

  p.prompt_body = detail::require_string(rec, "prompt_body", source, line);
  p.canonical_source = detail::require_string(rec, "canonical_source", source, line);
  if (p.canonical_source.empty())
    throw ParseError(source, line, "problem '" + p.id + "' has an empty canonical_source");

  std::size_t index = 0;
  for (const auto& t : detail::require_array(rec, "tests", source, line)) {
    if (!t.is_string()) throw ParseError(source, line, "test must be a string");
    auto code = t.get<std::string>();
    if (code.empty())
      throw ParseError(source, line, "problem '" + p.id + "' has an empty test case");
    p.tests.push_back({++index, std::move(code)});
  }
  if (p.tests.empty()) throw ParseError(source, line, "problem '" + p.id + "' has no tests");

  p.interpreter_ref = detail::require_string(rec, "interpreter_ref", source, line);
  return p;
}

inline Corpus parse_corpus(std::istream& in, const std::string& source) {
  Corpus corpus;
  corpus.source_path = source;
  std::unordered_set<std::string> seen;
  jsonl::for_each_record(in, source, [&](const Json& rec, std::size_t line) {
    auto p = parse_problem(rec, source, line);
    if (!seen.insert(p.id).second) throw ParseError(source, line, "duplicate id '" + p.id + "'");
    corpus.problems.push_back(std::move(p));
  });
  if (corpus.problems.empty()) throw ParseError(source, 0, "corpus has no problems");
  return corpus;
}

inline Corpus load_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw HarnessError("cannot open corpus " + path.string());
  return parse_corpus(in, path.string());
}

inline Json to_json(const Problem& p) {
  Json tags = Json::array();
  for (auto c : p.tags) tags.push_back(std::string(to_string(c)));
  Json tests = Json::array();
  for (const auto& t : p.tests) tests.push_back(t.test_code);
  return Json{{"id", p.id},
              {"title", p.title},
              {"difficulty", std::string(to_string(p.difficulty))},
              {"tags", std::move(tags)},
              {"prompt_body", p.prompt_body},
              {"canonical_source", p.canonical_source},
              {"tests", std::move(tests)},
              {"interpreter_ref", p.interpreter_ref}};
}

inline void write_corpus(const std::filesystem::path& path, const std::vector<Problem>& problems) {
  std::vector<Json> records;
  records.reserve(problems.size());
  for (const auto& p : problems) records.push_back(to_json(p));
  jsonl::write_records(path, records);
}

// Difficulty x category counts. A problem with several tags is counted in each
// of its category cells, so a row's cells may sum to more than its total.
struct CorpusStats {
  std::array<std::array<std::size_t, kCategoryCount>, 3> cells{};
  std::array<std::size_t, 3> totals{};

  std::size_t cell(Difficulty d, Category c) const {
    return cells[static_cast<std::size_t>(d)][static_cast<std::size_t>(c)];
  }
  std::size_t total(Difficulty d) const { return totals[static_cast<std::size_t>(d)]; }
  std::size_t category_total(Category c) const {
    std::size_t n = 0;
    for (auto d : kDifficulties) n += cell(d, c);
    return n;
  }
  std::size_t grand_total() const { return totals[0] + totals[1] + totals[2]; }
};

inline CorpusStats corpus_stats(std::span<const Problem> problems) {
  CorpusStats s;
  for (const auto& p : problems) {
    auto d = static_cast<std::size_t>(p.difficulty);
    ++s.totals[d];
    for (auto c : p.tags) ++s.cells[d][static_cast<std::size_t>(c)];
  }
  return s;
}

inline CorpusStats corpus_stats(const Corpus& corpus) { return corpus_stats(corpus.problems); }

}  // namespace greenbench
