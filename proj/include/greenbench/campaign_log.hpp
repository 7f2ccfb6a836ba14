#pragma once

#include <cmath>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "greenbench/energy.hpp"
#include "greenbench/error.hpp"
#include "greenbench/generation.hpp"
#include "greenbench/jsonl.hpp"
#include "greenbench/machine.hpp"
#include "greenbench/memory.hpp"

namespace greenbench {

// Key of a measured program: "<model_id or canonical>/<problem_id>".
inline std::string program_ref(std::string_view target, std::string_view problem_id) {
  return std::string(target) + "/" + std::string(problem_id);
}

struct EnergyRecord {
  std::string program_ref;
  int run_index = 0;
  double raw_pkg_uj = 0;
  double raw_ram_uj = 0;
  double duration_ms = 0;
  double baseline_pkg_w = 0;
  double baseline_ram_w = 0;
  double adj_pkg_j = 0;
  double adj_ram_j = 0;
  double adj_total_j = 0;
  std::vector<std::string> flags;
};

inline EnergyRecord make_energy_record(const std::string& ref, const RunEnergy& run,
                                       const BaselinePower& baseline, NegativeEnergyPolicy policy) {
  EnergyRecord r;
  r.program_ref = ref;
  r.run_index = run.run_index;
  // Counters tick in whole microjoules; rounding to nanojoules only removes
  // the noise of the joule round trip.
  r.raw_pkg_uj = std::round(run.raw_pkg_j * 1e9) / 1e3;
  r.raw_ram_uj = std::round(run.raw_ram_j * 1e9) / 1e3;
  r.duration_ms = run.runtime_ms;
  r.baseline_pkg_w = baseline.pkg_watts;
  r.baseline_ram_w = baseline.ram_watts;
  r.adj_pkg_j = run.adj_pkg_j;
  r.adj_ram_j = run.adj_ram_j;
  r.adj_total_j = run.adj_total_j;
  r.flags = flag_names(run.flags, policy);
  return r;
}

inline Json to_json(const EnergyRecord& r) {
  return Json{{"program_ref", r.program_ref},       {"run_index", r.run_index},
              {"raw_pkg_uJ", r.raw_pkg_uj},         {"raw_ram_uJ", r.raw_ram_uj},
              {"duration_ms", r.duration_ms},       {"baseline_pkg_w", r.baseline_pkg_w},
              {"baseline_ram_w", r.baseline_ram_w}, {"adj_pkg_j", r.adj_pkg_j},
              {"adj_ram_j", r.adj_ram_j},           {"adj_total_j", r.adj_total_j},
              {"flags", r.flags}};
}

inline EnergyRecord energy_record_from_json(const Json& j) {
  EnergyRecord r;
  r.program_ref = j.at("program_ref").get<std::string>();
  r.run_index = j.at("run_index").get<int>();
  r.raw_pkg_uj = j.at("raw_pkg_uJ").get<double>();
  r.raw_ram_uj = j.at("raw_ram_uJ").get<double>();
  r.duration_ms = j.at("duration_ms").get<double>();
  r.baseline_pkg_w = j.at("baseline_pkg_w").get<double>();
  r.baseline_ram_w = j.at("baseline_ram_w").get<double>();
  r.adj_pkg_j = j.at("adj_pkg_j").get<double>();
  r.adj_ram_j = j.at("adj_ram_j").get<double>();
  r.adj_total_j = j.at("adj_total_j").get<double>();
  r.flags = j.at("flags").get<std::vector<std::string>>();
  return r;
}

struct MemoryRecord {
  std::string program_ref;
  int run_index = 0;
  double mem_mbs = 0;
  std::size_t samples = 0;
  std::string trace_file;  // relative to the campaign directory
};

inline Json to_json(const MemoryRecord& r) {
  return Json{{"program_ref", r.program_ref},
              {"run_index", r.run_index},
              {"mem_mbs", r.mem_mbs},
              {"samples", r.samples},
              {"trace_file", r.trace_file}};
}

inline MemoryRecord memory_record_from_json(const Json& j) {
  MemoryRecord r;
  r.program_ref = j.at("program_ref").get<std::string>();
  r.run_index = j.at("run_index").get<int>();
  r.mem_mbs = j.at("mem_mbs").get<double>();
  r.samples = j.at("samples").get<std::size_t>();
  r.trace_file = j.at("trace_file").get<std::string>();
  return r;
}

// Everything measured in one campaign, keyed by (target, problem).
struct CampaignLog {
  MachineProfile profile;
  // model_id -> problem_id -> outcome
  std::map<std::string, std::map<std::string, GenerationOutcome>> generation;
  // program_ref -> runs
  std::map<std::string, std::vector<EnergyRecord>> energy;
  std::map<std::string, std::vector<MemoryRecord>> memory;

  const GenerationOutcome* outcome(const std::string& model_id, const std::string& problem_id) const {
    auto m = generation.find(model_id);
    if (m == generation.end()) return nullptr;
    auto p = m->second.find(problem_id);
    return p == m->second.end() ? nullptr : &p->second;
  }
};

// File layout of a campaign directory.
struct CampaignPaths {
  std::filesystem::path root;

  std::filesystem::path generation_log() const { return root / "generation.jsonl"; }
  std::filesystem::path energy_log() const { return root / "energy.jsonl"; }
  std::filesystem::path memory_log() const { return root / "memory.jsonl"; }
  std::filesystem::path schedule_log() const { return root / "schedule.jsonl"; }
  std::filesystem::path work_dir() const { return root / "work"; }
  std::filesystem::path traces_dir() const { return root / "traces"; }
  std::filesystem::path reports_dir() const { return root / "reports"; }
  std::filesystem::path benchmark_sets_dir() const { return root / "benchmark_sets"; }
  std::filesystem::path lock_file() const { return root / "campaign.lock"; }
  std::filesystem::path solution(const std::string& target, const std::string& problem_id) const {
    return root / "solutions" / file_safe(target) / (file_safe(problem_id) + ".guest");
  }
};

// First line of every log: {"header": {machine profile..., "mb_unit": ...}}.
inline Json log_header(const MachineProfile& profile) {
  Json h = to_json(profile);
  h["mb_unit"] = "1e6 bytes";
  return Json{{"header", std::move(h)}};
}

namespace detail {
inline std::vector<Json> read_log_body(const std::filesystem::path& path, MachineProfile* profile) {
  std::vector<Json> body;
  if (!std::filesystem::exists(path)) return body;
  for (auto& rec : jsonl::read_file(path)) {
    if (rec.contains("header")) {
      if (profile) *profile = machine_profile_from_json(rec.at("header"));
      continue;
    }
    body.push_back(std::move(rec));
  }
  return body;
}
}  // namespace detail

inline std::vector<Json> read_log_records(const std::filesystem::path& path) {
  return detail::read_log_body(path, nullptr);
}

inline void write_log(const std::filesystem::path& path, const MachineProfile& profile,
                      const std::vector<Json>& records) {
  std::vector<Json> all;
  all.reserve(records.size() + 1);
  all.push_back(log_header(profile));
  all.insert(all.end(), records.begin(), records.end());
  jsonl::write_records(path, all);
}

// Groups generation records into outcomes. Pairs whose records include a
// HarnessError are incomplete and get harness_error set.
inline std::map<std::string, std::map<std::string, GenerationOutcome>> outcomes_from_records(
    const std::vector<Json>& records) {
  std::map<std::string, std::map<std::string, GenerationOutcome>> out;
  for (const auto& rec : records) {
    auto model = rec.at("model_id").get<std::string>();
    auto problem = rec.at("problem_id").get<std::string>();
    auto& o = out[model][problem];
    o.model_id = model;
    o.problem_id = problem;
    auto a = attempt_from_json(rec);
    if (a.verdict == Verdict::HarnessError) {
      o.harness_error = a.error_excerpt;
      continue;
    }
    o.attempts.push_back(std::move(a));
  }
  for (auto& [m, by_problem] : out)
    for (auto& [p, o] : by_problem) finalize_outcome(o);
  return out;
}

// Loads whatever logs exist under `root`. Winning sources are read from the
// solutions directory.
inline CampaignLog load_campaign_log(const std::filesystem::path& root) {
  CampaignPaths paths{root};
  CampaignLog log;
  log.generation = outcomes_from_records(detail::read_log_body(paths.generation_log(), &log.profile));
  for (auto& [model, by_problem] : log.generation) {
    for (auto& [problem, o] : by_problem) {
      if (!o.pass_at) continue;
      auto file = paths.solution(model, problem);
      if (std::filesystem::exists(file)) o.winning_source = jsonl::read_text(file);
    }
  }
  for (const auto& rec : detail::read_log_body(paths.energy_log(), &log.profile)) {
    auto r = energy_record_from_json(rec);
    log.energy[r.program_ref].push_back(std::move(r));
  }
  for (const auto& rec : detail::read_log_body(paths.memory_log(), &log.profile)) {
    auto r = memory_record_from_json(rec);
    log.memory[r.program_ref].push_back(std::move(r));
  }
  return log;
}

}  // namespace greenbench
