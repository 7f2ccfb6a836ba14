#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "greenbench/clock.hpp"
#include "greenbench/energy.hpp"
#include "greenbench/error.hpp"
#include "greenbench/jsonl.hpp"

namespace greenbench {

// Difference of two readings of a counter that wraps at `max_range`.
inline std::uint64_t unwrap_delta(std::uint64_t start, std::uint64_t end, std::uint64_t max_range) {
  if (end >= start) return end - start;
  return (max_range - start) + end;
}

// Reads the OS powercap energy counters (microjoules). Package zones are the
// top-level "package-N" zones, summed over sockets; RAM zones are the "dram"
// subzones.
class PowercapBackend final : public EnergyMeterBackend {
 public:
  struct Zone {
    std::filesystem::path dir;
    std::uint64_t max_range_uj = 0;
  };

  PowercapBackend(std::shared_ptr<Clock> clock,
                  std::filesystem::path root = "/sys/class/powercap")
      : clock_(std::move(clock)), root_(std::move(root)) {
    std::error_code ec;
    std::vector<std::filesystem::path> dirs;
    for (const auto& entry : std::filesystem::directory_iterator(root_, ec)) dirs.push_back(entry.path());
    if (ec) throw HarnessError("energy counters unavailable at " + root_.string() + ": " + ec.message());
    std::sort(dirs.begin(), dirs.end());
    for (const auto& dir : dirs) {
      std::ifstream name_file(dir / "name");
      std::string name;
      if (!(name_file >> name)) continue;
      if (!std::filesystem::exists(dir / "energy_uj")) continue;
      Zone z{dir, read_u64(dir / "max_energy_range_uj")};
      if (name.rfind("package", 0) == 0)
        package_.push_back(z);
      else if (name == "dram")
        ram_.push_back(z);
    }
    if (package_.empty())
      throw HarnessError("no package energy counter under " + root_.string() +
                         "; use --backend replay:<path> or synthetic:<watts> instead");
    if (ram_.empty())
      throw HarnessError("no RAM (dram) energy counter under " + root_.string() +
                         "; use --backend replay:<path> or synthetic:<watts> instead");
  }

  void start(Phase) override {
    start_pkg_ = read_all(package_);
    start_ram_ = read_all(ram_);
    start_t_ = clock_->now().count();
  }

  EnergyReading stop() override {
    auto end_pkg = read_all(package_);
    auto end_ram = read_all(ram_);
    double end_t = clock_->now().count();
    EnergyReading r;
    r.pkg_joules = sum_delta(package_, start_pkg_, end_pkg) * 1e-6;
    r.ram_joules = sum_delta(ram_, start_ram_, end_ram) * 1e-6;
    r.duration_s = end_t - start_t_;
    return r;
  }

  std::string name() const override { return "hw"; }

 private:
  static std::uint64_t read_u64(const std::filesystem::path& p) {
    std::ifstream in(p);
    std::uint64_t v = 0;
    if (!(in >> v)) throw HarnessError("cannot read " + p.string());
    return v;
  }

  static std::vector<std::uint64_t> read_all(const std::vector<Zone>& zones) {
    std::vector<std::uint64_t> v;
    v.reserve(zones.size());
    for (const auto& z : zones) v.push_back(read_u64(z.dir / "energy_uj"));
    return v;
  }

  static double sum_delta(const std::vector<Zone>& zones, const std::vector<std::uint64_t>& a,
                          const std::vector<std::uint64_t>& b) {
    double total = 0;
    for (std::size_t i = 0; i < zones.size(); ++i)
      total += static_cast<double>(unwrap_delta(a[i], b[i], zones[i].max_range_uj));
    return total;
  }

  std::shared_ptr<Clock> clock_;
  std::filesystem::path root_;
  std::vector<Zone> package_;
  std::vector<Zone> ram_;
  std::vector<std::uint64_t> start_pkg_;
  std::vector<std::uint64_t> start_ram_;
  double start_t_ = 0;
};

// Scripted cumulative counter snapshots. Each line:
//   {"t_offset_s": 0.0, "domain": "package", "cumulative_uJ": 1000000}
// with an optional "max_uJ" wrap range and an optional "phase" ("idle" or
// "workload", default "workload"). Lines of one phase sharing a t_offset_s
// form one snapshot, which must cover both domains. Each phase is a separate
// stream: start() and stop() each consume the next snapshot of the stream for
// the interval's phase, starting over after the last one. Without idle
// snapshots, idle intervals draw from the workload stream.
class ReplayBackend final : public EnergyMeterBackend {
 public:
  struct Snapshot {
    double t_s = 0;
    std::uint64_t pkg_uj = 0;
    std::uint64_t ram_uj = 0;
    std::uint64_t pkg_max = 0;
    std::uint64_t ram_max = 0;
  };

  explicit ReplayBackend(std::vector<Snapshot> workload, std::vector<Snapshot> idle = {})
      : workload_(std::move(workload)), idle_(std::move(idle)) {
    if (workload_.size() < 2) throw ConfigError("replay trace needs at least two workload snapshots");
    if (idle_.size() == 1) throw ConfigError("replay trace needs at least two idle snapshots");
  }

  static ReplayBackend from_stream(std::istream& in, const std::string& source) {
    // phase -> time -> snapshot
    std::map<double, Snapshot> by_time[2];
    std::map<double, unsigned> seen[2];
    jsonl::for_each_record(in, source, [&](const Json& r, std::size_t line) {
      double t;
      std::string domain;
      std::string phase;
      std::uint64_t value;
      try {
        t = r.at("t_offset_s").get<double>();
        domain = r.at("domain").get<std::string>();
        value = r.at("cumulative_uJ").get<std::uint64_t>();
        phase = r.value("phase", std::string("workload"));
      } catch (const Json::exception& e) {
        throw ParseError(source, line, e.what());
      }
      if (phase != "idle" && phase != "workload") throw ParseError(source, line, "unknown phase '" + phase + "'");
      const int k = phase == "idle" ? 1 : 0;
      std::uint64_t max = r.contains("max_uJ") ? r.at("max_uJ").get<std::uint64_t>() : 0;
      auto& s = by_time[k][t];
      s.t_s = t;
      if (domain == "package") {
        s.pkg_uj = value;
        s.pkg_max = max;
        seen[k][t] |= 1u;
      } else if (domain == "ram") {
        s.ram_uj = value;
        s.ram_max = max;
        seen[k][t] |= 2u;
      } else {
        throw ParseError(source, line, "unknown domain '" + domain + "'");
      }
    });
    std::vector<Snapshot> snaps[2];
    for (int k = 0; k < 2; ++k) {
      for (const auto& [t, s] : by_time[k]) {
        if (seen[k][t] != 3u)
          throw ParseError(source, 0, "snapshot at t=" + std::to_string(t) + " lacks a domain");
        snaps[k].push_back(s);
      }
    }
    return ReplayBackend(std::move(snaps[0]), std::move(snaps[1]));
  }

  static ReplayBackend from_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw HarnessError("cannot open replay trace " + path.string());
    return from_stream(in, path.string());
  }

  void start(Phase phase) override {
    idle_interval_ = phase == Phase::Idle && !idle_.empty();
    start_ = next();
  }

  EnergyReading stop() override {
    const Snapshot end = next();
    if (!(end.t_s > start_.t_s))
      throw HarnessError("replay trace interval is not increasing in time at t=" +
                         std::to_string(end.t_s));
    EnergyReading r;
    r.pkg_joules = delta(start_.pkg_uj, end.pkg_uj, end.pkg_max) * 1e-6;
    r.ram_joules = delta(start_.ram_uj, end.ram_uj, end.ram_max) * 1e-6;
    r.duration_s = end.t_s - start_.t_s;
    return r;
  }

  std::string name() const override { return "replay"; }

  std::size_t snapshot_count() const { return workload_.size() + idle_.size(); }

 private:
  static double delta(std::uint64_t a, std::uint64_t b, std::uint64_t max) {
    if (b < a && max == 0) throw HarnessError("replay counter decreased without a max_uJ range");
    return static_cast<double>(unwrap_delta(a, b, max));
  }

  Snapshot next() {
    auto& snaps = idle_interval_ ? idle_ : workload_;
    auto& cursor = idle_interval_ ? idle_cursor_ : workload_cursor_;
    const Snapshot s = snaps[cursor];
    cursor = (cursor + 1) % snaps.size();
    return s;
  }

  std::vector<Snapshot> workload_;
  std::vector<Snapshot> idle_;
  std::size_t workload_cursor_ = 0;
  std::size_t idle_cursor_ = 0;
  bool idle_interval_ = false;
  Snapshot start_;
};

// Constant power per domain: load power during Workload intervals, idle power
// during Idle intervals, integrated over the shared clock.
class SyntheticBackend final : public EnergyMeterBackend {
 public:
  struct Powers {
    double pkg_load_w = 0;
    double ram_load_w = 0;
    double pkg_idle_w = 0;
    double ram_idle_w = 0;
  };

  SyntheticBackend(std::shared_ptr<Clock> clock, Powers powers)
      : clock_(std::move(clock)), powers_(powers) {
    if (powers_.pkg_load_w < 0 || powers_.ram_load_w < 0 || powers_.pkg_idle_w < 0 ||
        powers_.ram_idle_w < 0)
      throw ConfigError("synthetic backend powers must be >= 0");
  }

  void start(Phase phase) override {
    phase_ = phase;
    start_t_ = clock_->now().count();
  }

  EnergyReading stop() override {
    double dt = clock_->now().count() - start_t_;
    bool load = phase_ == Phase::Workload;
    EnergyReading r;
    r.pkg_joules = (load ? powers_.pkg_load_w : powers_.pkg_idle_w) * dt;
    r.ram_joules = (load ? powers_.ram_load_w : powers_.ram_idle_w) * dt;
    r.duration_s = dt;
    return r;
  }

  std::string name() const override { return "synthetic"; }

 private:
  std::shared_ptr<Clock> clock_;
  Powers powers_;
  Phase phase_ = Phase::Idle;
  double start_t_ = 0;
};

}  // namespace greenbench
