#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "greenbench/error.hpp"

namespace greenbench {

using Json = nlohmann::ordered_json;

namespace jsonl {

// Guest stderr can carry arbitrary bytes; invalid UTF-8 is replaced rather
// than thrown on.
inline std::string dump(const Json& j) {
  return j.dump(-1, ' ', false, Json::error_handler_t::replace);
}

// Calls `fn(record, line_number)` for every non-blank line.
inline void for_each_record(std::istream& in, const std::string& source,
                            const std::function<void(const Json&, std::size_t)>& fn) {
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    Json record;
    try {
      record = Json::parse(line);
    } catch (const Json::parse_error& e) {
      throw ParseError(source, lineno, std::string("invalid JSON: ") + e.what());
    }
    if (!record.is_object()) throw ParseError(source, lineno, "record is not an object");
    fn(record, lineno);
  }
}

inline std::vector<Json> read_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw HarnessError("cannot open " + path.string());
  std::vector<Json> out;
  for_each_record(in, path.string(), [&](const Json& r, std::size_t) { out.push_back(r); });
  return out;
}

// Writes through a temporary sibling and renames, so readers never observe a
// half-written log.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw HarnessError("cannot write " + tmp.string());
    out << content;
    if (!out) throw HarnessError("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline void write_records(const std::filesystem::path& path, const std::vector<Json>& records) {
  std::string content;
  for (const auto& r : records) {
    content += dump(r);
    content += '\n';
  }
  write_file_atomic(path, content);
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw HarnessError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace jsonl
}  // namespace greenbench
