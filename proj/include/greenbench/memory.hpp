#pragma once

#include <charconv>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "greenbench/error.hpp"
#include "greenbench/jsonl.hpp"
#include "greenbench/process.hpp"
#include "greenbench/runner.hpp"

namespace greenbench {

// Decimal megabytes.
inline constexpr double kBytesPerMB = 1e6;

// Number of independent memory runs per program.
inline constexpr int kMemoryRuns = 3;

struct MemorySample {
  double t_s = 0;     // since process start
  double rss_mb = 0;
};

struct MemoryTrace {
  std::vector<MemorySample> samples;
  double sample_interval_s = 0.001;
  int run_index = 0;

  void validate() const {
    if (samples.empty()) throw PreconditionError("memory trace has no samples");
    for (std::size_t i = 0; i < samples.size(); ++i) {
      if (samples[i].t_s < 0 || samples[i].rss_mb < 0)
        throw PreconditionError("memory sample with negative time or rss");
      if (i > 0 && !(samples[i].t_s > samples[i - 1].t_s))
        throw PreconditionError("memory trace timestamps not strictly increasing");
    }
  }
};

// Trapezoid integral of resident memory over time, in MB*s. Uses the recorded
// timestamps, not the nominal interval.
inline double mem_seconds(const MemoryTrace& trace) {
  trace.validate();
  double sum = 0;
  for (std::size_t i = 0; i + 1 < trace.samples.size(); ++i) {
    const auto& a = trace.samples[i];
    const auto& b = trace.samples[i + 1];
    sum += (a.rss_mb + b.rss_mb) / 2.0 * (b.t_s - a.t_s);
  }
  return sum;
}

// Mean mem-seconds over exactly three independent runs.
inline double final_memory(std::span<const MemoryTrace> traces) {
  if (traces.size() != static_cast<std::size_t>(kMemoryRuns))
    throw PreconditionError("final_memory needs exactly 3 traces, got " +
                            std::to_string(traces.size()));
  double sum = 0;
  for (const auto& t : traces) sum += mem_seconds(t);
  return sum / kMemoryRuns;
}

inline double final_memory(std::span<const double> mem_seconds_per_run) {
  if (mem_seconds_per_run.size() != static_cast<std::size_t>(kMemoryRuns))
    throw PreconditionError("final_memory needs exactly 3 runs, got " +
                            std::to_string(mem_seconds_per_run.size()));
  return (mem_seconds_per_run[0] + mem_seconds_per_run[1] + mem_seconds_per_run[2]) / kMemoryRuns;
}

// Samples the resident memory of `proc` and its descendants once per tick
// until it exits or `deadline` passes. The first sample is taken at once.
// Ticks missed because of scheduling delays are skipped, not replayed.
inline MemoryTrace sample_memory(Subprocess& proc, std::chrono::steady_clock::time_point started,
                                 double interval_s, int run_index,
                                 std::chrono::steady_clock::time_point deadline) {
  using namespace std::chrono;
  if (!(interval_s > 0)) throw PreconditionError("sampling interval must be > 0");
  MemoryTrace trace;
  trace.sample_interval_s = interval_s;
  trace.run_index = run_index;
  const auto tick = duration_cast<steady_clock::duration>(duration<double>(interval_s));
  double last_rss = 0;

  auto take = [&] {
    auto now = steady_clock::now();
    double t = duration<double>(now - started).count();
    double rss = static_cast<double>(process_tree_rss_bytes(proc.pid())) / kBytesPerMB;
    // A zero reading means the process is already gone (zombie or reaped).
    if (rss <= 0) return;
    last_rss = rss;
    if (!trace.samples.empty() && !(t > trace.samples.back().t_s)) return;
    trace.samples.push_back({t, rss});
  };

  take();
  auto next = started + tick;
  for (;;) {
    auto target = std::min(next, deadline);
    if (proc.wait_until(target)) break;
    if (steady_clock::now() >= deadline) break;
    take();
    auto now = steady_clock::now();
    while (next <= now) next += tick;
  }
  if (trace.samples.empty()) trace.samples.push_back({0.0, last_rss});
  return trace;
}

struct MemoryRun {
  MemoryTrace trace;
  Verdict verdict = Verdict::Pass;
  std::string stderr_excerpt;
};

// Produces one memory trace for one execution of a program.
class MemoryProbe {
 public:
  virtual ~MemoryProbe() = default;
  virtual MemoryRun measure(const std::filesystem::path& program, const ExecutionSpec& spec,
                            double interval_s, int run_index) = 0;
};

// Runs the program and samples /proc.
class ProcMemoryProbe final : public MemoryProbe {
 public:
  MemoryRun measure(const std::filesystem::path& program, const ExecutionSpec& spec,
                    double interval_s, int run_index) override {
    spec.validate();
    SpawnOptions opts;
    opts.argv = spec.argv_for(std::filesystem::absolute(program));
    opts.env = sanitized_environment(spec.env_allowlist);
    opts.working_dir = spec.working_dir;
    opts.capture_limit_bytes = spec.capture_limit_bytes;
    auto started = std::chrono::steady_clock::now();
    Subprocess proc(opts);
    MemoryRun run;
    run.trace = sample_memory(proc, started, interval_s, run_index, started + spec.timeout);
    if (!proc.exited()) {
      proc.kill_group();
      run.verdict = Verdict::Timeout;
    } else {
      run.verdict = proc.status()->success() ? Verdict::Pass : Verdict::TestFailure;
    }
    run.stderr_excerpt = proc.stderr_text();
    return run;
  }
};

// Scripted traces, one per measure() call, cycling. Each line:
//   {"trace": 0, "t_s": 0.0, "rss_mb": 12.5}
// Traces are served in order of first appearance. The program is not run.
class ReplayMemoryProbe final : public MemoryProbe {
 public:
  explicit ReplayMemoryProbe(std::vector<MemoryTrace> traces) : traces_(std::move(traces)) {
    if (traces_.empty()) throw ConfigError("memory replay file has no traces");
    for (const auto& t : traces_) t.validate();
  }

  static ReplayMemoryProbe from_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw HarnessError("cannot open memory replay " + path.string());
    std::vector<MemoryTrace> traces;
    std::map<long long, std::size_t> slot;
    jsonl::for_each_record(in, path.string(), [&](const Json& r, std::size_t line) {
      try {
        auto id = r.at("trace").get<long long>();
        auto [it, inserted] = slot.try_emplace(id, traces.size());
        if (inserted) traces.emplace_back();
        traces[it->second].samples.push_back({r.at("t_s").get<double>(), r.at("rss_mb").get<double>()});
      } catch (const Json::exception& e) {
        throw ParseError(path.string(), line, e.what());
      }
    });
    return ReplayMemoryProbe(std::move(traces));
  }

  MemoryRun measure(const std::filesystem::path&, const ExecutionSpec&, double interval_s,
                    int run_index) override {
    MemoryRun run;
    run.trace = traces_[cursor_];
    cursor_ = (cursor_ + 1) % traces_.size();
    run.trace.sample_interval_s = interval_s;
    run.trace.run_index = run_index;
    return run;
  }

 private:
  std::vector<MemoryTrace> traces_;
  std::size_t cursor_ = 0;
};

namespace detail {
inline std::string shortest(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}
}  // namespace detail

// Per-run trace file: a '#' header naming the program and run, then one
// "t_s rss_mb" line per sample.
inline std::string format_trace_file(const std::string& program_ref, const MemoryTrace& trace) {
  std::string out = "# program_ref=" + program_ref + " run_index=" + std::to_string(trace.run_index) +
                    " interval_s=" + detail::shortest(trace.sample_interval_s) +
                    " unit=MB(1e6 bytes)\n# t_s rss_mb\n";
  for (const auto& s : trace.samples) {
    out += detail::shortest(s.t_s);
    out += ' ';
    out += detail::shortest(s.rss_mb);
    out += '\n';
  }
  return out;
}

inline MemoryTrace parse_trace_file(std::istream& in, const std::string& source) {
  MemoryTrace trace;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (line[0] == '#') {
      if (auto pos = line.find("run_index="); pos != std::string::npos)
        trace.run_index = std::stoi(line.substr(pos + 10));
      if (auto pos = line.find("interval_s="); pos != std::string::npos)
        trace.sample_interval_s = std::stod(line.substr(pos + 11));
      continue;
    }
    std::istringstream fields(line);
    MemorySample s;
    if (!(fields >> s.t_s >> s.rss_mb)) throw ParseError(source, lineno, "expected 't_s rss_mb'");
    trace.samples.push_back(s);
  }
  return trace;
}

}  // namespace greenbench
