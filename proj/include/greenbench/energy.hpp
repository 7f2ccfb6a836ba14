#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "greenbench/clock.hpp"
#include "greenbench/error.hpp"
#include "greenbench/runner.hpp"

namespace greenbench {

struct EnergyReading {
  double pkg_joules = 0;
  double ram_joules = 0;
  double duration_s = 0;
};

// Whether the interval being metered is an idle baseline window or a measured
// execution. Hardware and replay backends ignore it; the synthetic backend
// uses it to pick its power level.
enum class Phase { Idle, Workload };

// Package and RAM energy over a start/stop interval. Counter wraparound is
// corrected inside the backend.
class EnergyMeterBackend {
 public:
  virtual ~EnergyMeterBackend() = default;
  virtual void start(Phase phase) = 0;
  virtual EnergyReading stop() = 0;
  virtual std::string name() const = 0;
};

struct BaselinePower {
  double pkg_watts = 0;
  double ram_watts = 0;
  double window_s = 30;
  double measured_at_s = 0;  // on the measuring clock
};

enum class NegativeEnergyPolicy { KeepFlagged, ClampZero };

inline std::string_view to_string(NegativeEnergyPolicy p) {
  return p == NegativeEnergyPolicy::KeepFlagged ? "KeepFlagged" : "ClampZero";
}

inline std::optional<NegativeEnergyPolicy> parse_negative_energy_policy(std::string_view s) {
  if (s == "KeepFlagged") return NegativeEnergyPolicy::KeepFlagged;
  if (s == "ClampZero") return NegativeEnergyPolicy::ClampZero;
  return std::nullopt;
}

struct MeasurementConfig {
  int runs_per_program = 5;
  double cooldown_s = 10;
  double baseline_window_s = 30;
  std::uint64_t rng_seed = 0;
  NegativeEnergyPolicy negative_energy_policy = NegativeEnergyPolicy::KeepFlagged;

  void validate() const {
    if (runs_per_program < 1) throw ConfigError("runs_per_program must be >= 1");
    if (cooldown_s < 0) throw ConfigError("cooldown_s must be >= 0");
    if (baseline_window_s <= 0) throw ConfigError("baseline_window_s must be > 0");
  }
};

// Idle power per domain: energy over a quiescent window divided by the window.
inline BaselinePower measure_baseline(EnergyMeterBackend& meter, Clock& clock, double window_s) {
  if (window_s <= 0) throw PreconditionError("baseline window must be > 0");
  BaselinePower b;
  b.window_s = window_s;
  b.measured_at_s = clock.now().count();
  meter.start(Phase::Idle);
  clock.sleep_for(Seconds(window_s));
  auto r = meter.stop();
  b.pkg_watts = r.pkg_joules / window_s;
  b.ram_watts = r.ram_joules / window_s;
  return b;
}

struct AdjustedEnergy {
  double joules = 0;
  bool negative = false;  // raw energy fell below baseline x duration
};

// raw - baseline_watts x duration. Negative results are returned signed
// (KeepFlagged) or as zero (ClampZero), flagged either way.
inline AdjustedEnergy adjusted_energy(double raw_joules, double baseline_watts, double duration_s,
                                      NegativeEnergyPolicy policy) {
  if (!(duration_s > 0)) throw PreconditionError("duration must be > 0");
  double j = raw_joules - baseline_watts * duration_s;
  if (j < 0) return {policy == NegativeEnergyPolicy::ClampZero ? 0.0 : j, true};
  return {j, false};
}

struct RunPlanEntry {
  std::size_t program = 0;
  int run_index = 0;  // 1-based, in execution order within the program

  bool operator==(const RunPlanEntry&) const = default;
};

namespace detail {
// Uniform draw in [0, bound) by rejection, so the sequence is fixed by the
// engine's specified output rather than by a library's distribution code.
inline std::uint64_t uniform_below(std::mt19937_64& rng, std::uint64_t bound) {
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % bound;
  std::uint64_t x;
  do {
    x = rng();
  } while (x >= limit);
  return x % bound;
}
}  // namespace detail

// runs_per_program entries per program, in a seed-determined random order.
inline std::vector<RunPlanEntry> plan_runs(std::size_t program_count, const MeasurementConfig& config) {
  config.validate();
  if (program_count == 0) throw PreconditionError("plan_runs: no programs");
  std::vector<RunPlanEntry> plan;
  plan.reserve(program_count * static_cast<std::size_t>(config.runs_per_program));
  for (std::size_t p = 0; p < program_count; ++p)
    for (int r = 0; r < config.runs_per_program; ++r) plan.push_back({p, 0});
  std::mt19937_64 rng(config.rng_seed);
  for (std::size_t i = plan.size(); i > 1; --i)
    std::swap(plan[i - 1], plan[detail::uniform_below(rng, i)]);
  std::vector<int> seen(program_count, 0);
  for (auto& e : plan) e.run_index = ++seen[e.program];
  return plan;
}

enum RunFlag : unsigned {
  kNegativePkg = 1u << 0,
  kNegativeRam = 1u << 1,
};

inline std::vector<std::string> flag_names(unsigned flags, NegativeEnergyPolicy policy) {
  std::vector<std::string> out;
  if (flags & kNegativePkg) out.push_back("negative_pkg");
  if (flags & kNegativeRam) out.push_back("negative_ram");
  if (flags && policy == NegativeEnergyPolicy::ClampZero) out.push_back("clamped");
  return out;
}

struct RunEnergy {
  int run_index = 0;
  double raw_pkg_j = 0;
  double raw_ram_j = 0;
  double adj_pkg_j = 0;
  double adj_ram_j = 0;
  double adj_total_j = 0;
  double runtime_ms = 0;
  unsigned flags = 0;
};

struct EnergyMeasurement {
  std::string program_ref;
  std::vector<RunEnergy> runs;
  double avg_pkg_j = 0;
  double avg_ram_j = 0;
  double avg_total_j = 0;
  double avg_runtime_ms = 0;
  BaselinePower baseline_used;
  std::optional<std::string> aborted;  // diagnostic when a run failed

  void recompute_averages() {
    avg_pkg_j = avg_ram_j = avg_total_j = avg_runtime_ms = 0;
    if (runs.empty()) return;
    for (const auto& r : runs) {
      avg_pkg_j += r.adj_pkg_j;
      avg_ram_j += r.adj_ram_j;
      avg_total_j += r.adj_total_j;
      avg_runtime_ms += r.runtime_ms;
    }
    const double n = static_cast<double>(runs.size());
    avg_pkg_j /= n;
    avg_ram_j /= n;
    avg_total_j /= n;
    avg_runtime_ms /= n;
  }
};

inline RunEnergy adjust_run(int run_index, const EnergyReading& reading, const BaselinePower& baseline,
                            NegativeEnergyPolicy policy) {
  RunEnergy r;
  r.run_index = run_index;
  r.raw_pkg_j = reading.pkg_joules;
  r.raw_ram_j = reading.ram_joules;
  r.runtime_ms = reading.duration_s * 1000.0;
  auto pkg = adjusted_energy(reading.pkg_joules, baseline.pkg_watts, reading.duration_s, policy);
  auto ram = adjusted_energy(reading.ram_joules, baseline.ram_watts, reading.duration_s, policy);
  r.adj_pkg_j = pkg.joules;
  r.adj_ram_j = ram.joules;
  r.adj_total_j = r.adj_pkg_j + r.adj_ram_j;
  if (pkg.negative) r.flags |= kNegativePkg;
  if (ram.negative) r.flags |= kNegativeRam;
  return r;
}

struct MeasuredProgram {
  std::string program_ref;
  std::filesystem::path path;
};

struct ScheduleEvent {
  enum class Kind { Baseline, Run, Cooldown } kind;
  std::string program_ref;  // empty for cooldowns
  int run_index = 0;
  double start_s = 0;
  double end_s = 0;
};

inline std::string_view to_string(ScheduleEvent::Kind k) {
  switch (k) {
    case ScheduleEvent::Kind::Baseline: return "baseline";
    case ScheduleEvent::Kind::Run: return "run";
    case ScheduleEvent::Kind::Cooldown: return "cooldown";
  }
  return "?";
}

struct EnergyCampaignResult {
  std::vector<EnergyMeasurement> measurements;  // parallel to the input programs
  std::vector<ScheduleEvent> schedule;
};

// Executes the randomized run schedule strictly serially. Each program gets a
// fresh baseline right before its first run; consecutive executions are
// separated by the cooldown. A run that exits unsuccessfully aborts that
// program's measurement; the others continue. The runtime of a run is the
// duration the backend reports for the interval bracketing the subprocess.
inline EnergyCampaignResult measure_energy_campaign(std::span<const MeasuredProgram> programs,
                                                    EnergyMeterBackend& meter,
                                                    const ExecutionSpec& spec,
                                                    const MeasurementConfig& config, Clock& clock) {
  config.validate();
  spec.validate();
  EnergyCampaignResult out;
  out.measurements.resize(programs.size());
  for (std::size_t i = 0; i < programs.size(); ++i)
    out.measurements[i].program_ref = programs[i].program_ref;
  if (programs.empty()) return out;

  std::vector<bool> has_baseline(programs.size(), false);
  bool first = true;
  for (const auto& entry : plan_runs(programs.size(), config)) {
    auto& m = out.measurements[entry.program];
    if (m.aborted) continue;
    if (!first && config.cooldown_s > 0) {
      double t0 = clock.now().count();
      clock.sleep_for(Seconds(config.cooldown_s));
      out.schedule.push_back({ScheduleEvent::Kind::Cooldown, "", 0, t0, clock.now().count()});
    }
    first = false;

    if (!has_baseline[entry.program]) {
      double t0 = clock.now().count();
      m.baseline_used = measure_baseline(meter, clock, config.baseline_window_s);
      has_baseline[entry.program] = true;
      out.schedule.push_back({ScheduleEvent::Kind::Baseline, m.program_ref, 0, t0, clock.now().count()});
    }

    double t0 = clock.now().count();
    meter.start(Phase::Workload);
    ExecutionResult result;
    try {
      result = execute_file(programs[entry.program].path, spec);
    } catch (...) {
      meter.stop();
      throw;
    }
    auto reading = meter.stop();
    double t1 = clock.now().count();
    out.schedule.push_back({ScheduleEvent::Kind::Run, m.program_ref, entry.run_index, t0, t1});

    if (result.verdict != Verdict::Pass) {
      m.aborted = "run " + std::to_string(entry.run_index) + " ended with " +
                  std::string(to_string(result.verdict)) + ": " + result.stderr_excerpt;
      m.runs.clear();
      continue;
    }
    if (!(reading.duration_s > 0))
      throw HarnessError(meter.name() + " backend reported a non-positive run duration");
    m.runs.push_back(adjust_run(entry.run_index, reading, m.baseline_used,
                                config.negative_energy_policy));
  }
  for (auto& m : out.measurements) m.recompute_averages();
  return out;
}

inline EnergyMeasurement measure_program_energy(const MeasuredProgram& program,
                                                EnergyMeterBackend& meter, const ExecutionSpec& spec,
                                                const MeasurementConfig& config, Clock& clock) {
  auto r = measure_energy_campaign(std::span(&program, 1), meter, spec, config, clock);
  return std::move(r.measurements.front());
}

struct CampaignEnergyAverages {
  double avg_total_j = 0;    // Avg. TE
  double avg_runtime_ms = 0; // Avg. ET
};

// Means over problems of each problem's five-run averages.
inline CampaignEnergyAverages average_campaign_energy(std::span<const EnergyMeasurement> ms) {
  if (ms.empty()) throw PreconditionError("average_campaign_energy: no measurements");
  CampaignEnergyAverages a;
  for (const auto& m : ms) {
    a.avg_total_j += m.avg_total_j;
    a.avg_runtime_ms += m.avg_runtime_ms;
  }
  a.avg_total_j /= static_cast<double>(ms.size());
  a.avg_runtime_ms /= static_cast<double>(ms.size());
  return a;
}

}  // namespace greenbench
