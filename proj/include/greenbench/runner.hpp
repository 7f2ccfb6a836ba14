#pragma once

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "greenbench/corpus.hpp"
#include "greenbench/error.hpp"
#include "greenbench/process.hpp"

namespace greenbench {

enum class Verdict { Pass, CompileError, TestFailure, Timeout, ExtractionFailure, HarnessError };

inline std::string_view to_string(Verdict v) {
  switch (v) {
    case Verdict::Pass: return "Pass";
    case Verdict::CompileError: return "CompileError";
    case Verdict::TestFailure: return "TestFailure";
    case Verdict::Timeout: return "Timeout";
    case Verdict::ExtractionFailure: return "ExtractionFailure";
    case Verdict::HarnessError: return "HarnessError";
  }
  return "?";
}

inline std::optional<Verdict> parse_verdict(std::string_view s) {
  for (auto v : {Verdict::Pass, Verdict::CompileError, Verdict::TestFailure, Verdict::Timeout,
                 Verdict::ExtractionFailure, Verdict::HarnessError})
    if (to_string(v) == s) return v;
  return std::nullopt;
}

inline constexpr std::string_view kProgramPlaceholder = "{program}";

struct ExecutionSpec {
  std::vector<std::string> interpreter_command{"python3", std::string(kProgramPlaceholder)};
  std::chrono::milliseconds timeout{120000};
  std::filesystem::path working_dir = ".";
  std::vector<std::string> env_allowlist{"PATH", "LANG", "LC_ALL", "HOME", "TMPDIR"};
  std::size_t capture_limit_bytes = 4096;

  void validate() const {
    if (timeout.count() <= 0) throw ConfigError("timeout_ms must be positive");
    if (capture_limit_bytes == 0) throw ConfigError("capture_limit_bytes must be positive");
    std::size_t count = 0;
    for (const auto& arg : interpreter_command) {
      for (auto pos = arg.find(kProgramPlaceholder); pos != std::string::npos;
           pos = arg.find(kProgramPlaceholder, pos + 1))
        ++count;
    }
    if (count != 1)
      throw ConfigError("interpreter command must contain {program} exactly once");
  }

  std::vector<std::string> argv_for(const std::filesystem::path& program) const {
    std::vector<std::string> argv;
    for (auto arg : interpreter_command) {
      if (auto pos = arg.find(kProgramPlaceholder); pos != std::string::npos)
        arg.replace(pos, kProgramPlaceholder.size(), program.string());
      argv.push_back(std::move(arg));
    }
    return argv;
  }
};

struct ExecutionResult {
  Verdict verdict = Verdict::Pass;
  std::optional<ExitStatus> exit;  // absent when killed at the timeout
  double duration_ms = 0;
  std::string stderr_excerpt;
  std::filesystem::path program_path;
};

// Solution first, then each test fragment in index order, each preceded by a
// separator comment.
inline std::string assemble_program(std::string_view solution_source, std::span<const TestCase> tests,
                                    std::string_view comment_prefix = "#") {
  std::string out(solution_source);
  if (!out.empty() && out.back() != '\n') out += '\n';
  for (const auto& t : tests) {
    out += '\n';
    out += comment_prefix;
    out += " --- test ";
    out += std::to_string(t.index);
    out += " ---\n";
    out += t.test_code;
    if (t.test_code.empty() || t.test_code.back() != '\n') out += '\n';
  }
  return out;
}

inline std::vector<std::string> sanitized_environment(std::span<const std::string> allowlist) {
  std::vector<std::string> env;
  for (const auto& name : allowlist) {
    if (const char* v = std::getenv(name.c_str())) env.push_back(name + "=" + v);
  }
  return env;
}

// File-safe rendering of an identifier: anything outside [A-Za-z0-9._-]
// becomes '_'.
inline std::string file_safe(std::string_view s) {
  std::string out(s);
  for (auto& ch : out) {
    bool ok = (ch >= 'a' && ch <= 'z') || (ch >= 'A' && ch <= 'Z') || (ch >= '0' && ch <= '9') ||
              ch == '.' || ch == '-' || ch == '_';
    if (!ok) ch = '_';
  }
  return out;
}

// Name of an assembled attempt program: <problem_id>__<model_id>__<iteration>.guest
inline std::string program_file_name(std::string_view problem_id, std::string_view model_id,
                                     std::size_t iteration) {
  return file_safe(problem_id) + "__" + file_safe(model_id) + "__" + std::to_string(iteration) +
         ".guest";
}

inline void write_program_file(const std::filesystem::path& path, std::string_view program) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw HarnessError("cannot write " + path.string());
  out << program;
  if (!out) throw HarnessError("write failed: " + path.string());
}

// Removes every occurrence of `dir` + '/' so diagnostics name program files
// relative to their directory and do not depend on where a campaign lives.
inline std::string strip_directory(std::string text, const std::filesystem::path& dir) {
  const std::string prefix = dir.string() + "/";
  for (auto pos = text.find(prefix); pos != std::string::npos; pos = text.find(prefix, pos))
    text.erase(pos, prefix.size());
  return text;
}

// Runs an existing program file. Timeout kills the whole process group.
inline ExecutionResult execute_file(const std::filesystem::path& program_path,
                                    const ExecutionSpec& spec) {
  spec.validate();
  SpawnOptions opts;
  const auto absolute_path = std::filesystem::absolute(program_path).lexically_normal();
  opts.argv = spec.argv_for(absolute_path);
  opts.env = sanitized_environment(spec.env_allowlist);
  opts.working_dir = spec.working_dir;
  opts.capture_limit_bytes = spec.capture_limit_bytes;

  ExecutionResult result;
  result.program_path = program_path;
  auto start = std::chrono::steady_clock::now();
  Subprocess proc(opts);
  bool exited = proc.wait_until(start + spec.timeout);
  auto end = std::chrono::steady_clock::now();
  if (!exited) proc.kill_group();
  result.duration_ms = std::chrono::duration<double, std::milli>(end - start).count();
  result.stderr_excerpt = strip_directory(proc.stderr_text(), absolute_path.parent_path());
  if (!exited) {
    result.verdict = Verdict::Timeout;
  } else {
    result.exit = proc.status();
    result.verdict = result.exit->success() ? Verdict::Pass : Verdict::TestFailure;
  }
  return result;
}

namespace detail {
inline std::string unique_stem() {
  static std::atomic<unsigned long> counter{0};
  return "run-" + std::to_string(::getpid()) + "-" + std::to_string(counter++);
}
}  // namespace detail

// Writes `program` to <working_dir>/<stem>.guest and runs it. The file is
// removed on Pass and retained otherwise.
inline ExecutionResult execute(std::string_view program, const ExecutionSpec& spec,
                               std::string_view file_name = {}) {
  spec.validate();
  std::string name = file_name.empty() ? detail::unique_stem() + ".guest" : std::string(file_name);
  auto path = spec.working_dir / name;
  write_program_file(path, program);
  auto result = execute_file(path, spec);
  if (result.verdict == Verdict::Pass) {
    std::error_code ec;
    std::filesystem::remove(path, ec);
  }
  return result;
}

// A failed syntax check dominates whatever the later run reported.
inline Verdict classify_result(const ExecutionResult& result, std::optional<bool> syntax_ok) {
  if (syntax_ok.has_value() && !*syntax_ok) return Verdict::CompileError;
  return result.verdict;
}

struct SyntaxCheck {
  bool ok = true;
  std::string message;
};

// What the corpus gate and the generation loop need from an executor.
class ExecutionFacility {
 public:
  virtual ~ExecutionFacility() = default;
  // Compile-only check of a bare source text.
  virtual SyntaxCheck syntax_check(std::string_view source, std::string_view file_name) = 0;
  virtual ExecutionResult run(std::string_view program, std::string_view file_name) = 0;
  virtual std::string_view comment_prefix() const { return "#"; }
};

// Executes guest programs through an interpreter subprocess. The syntax check
// is a separate compile-only interpreter invocation; without one configured
// every source is accepted.
class GuestRunner : public ExecutionFacility {
 public:
  explicit GuestRunner(ExecutionSpec spec, std::vector<std::string> syntax_command = {},
                       std::string comment_prefix = "#")
      : spec_(std::move(spec)),
        syntax_command_(std::move(syntax_command)),
        comment_prefix_(std::move(comment_prefix)) {
    spec_.validate();
    if (!syntax_command_.empty()) syntax_spec().validate();
  }

  const ExecutionSpec& spec() const { return spec_; }

  SyntaxCheck syntax_check(std::string_view source, std::string_view file_name) override {
    if (syntax_command_.empty()) return {};
    std::string name = file_name.empty() ? detail::unique_stem() + ".syntax.guest"
                                         : std::string(file_name) + ".syntax";
    auto path = spec_.working_dir / name;
    write_program_file(path, source);
    auto r = execute_file(path, syntax_spec());
    std::error_code ec;
    std::filesystem::remove(path, ec);
    if (r.verdict == Verdict::Pass) return {};
    if (r.verdict == Verdict::Timeout) return {false, "syntax check timed out"};
    return {false, r.stderr_excerpt};
  }

  ExecutionResult run(std::string_view program, std::string_view file_name) override {
    return execute(program, spec_, file_name);
  }

  std::string_view comment_prefix() const override { return comment_prefix_; }

 private:
  ExecutionSpec syntax_spec() const {
    ExecutionSpec s = spec_;
    s.interpreter_command = syntax_command_;
    return s;
  }

  ExecutionSpec spec_;
  std::vector<std::string> syntax_command_;
  std::string comment_prefix_;
};

}  // namespace greenbench
