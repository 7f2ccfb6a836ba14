#include <gtest/gtest.h>

#include <algorithm>
#include <map>
#include <set>
#include <sstream>

#include "greenbench/energy.hpp"
#include "greenbench/energy_backends.hpp"
#include "helpers/test_util.hpp"

using namespace greenbench;

namespace {

ExecutionSpec sh_spec(const std::filesystem::path& dir) {
  ExecutionSpec s;
  s.interpreter_command = {"/bin/sh", "{program}"};
  s.working_dir = dir;
  s.timeout = std::chrono::milliseconds(20000);
  return s;
}

MeasuredProgram sh_program(const testutil::TempDir& dir, const std::string& name, const std::string& body) {
  testutil::write_file(dir / name, body);
  return {name, dir / name};
}

std::string replay_line(double t, const char* domain, std::uint64_t uj, const char* phase = nullptr) {
  Json j{{"t_offset_s", t}, {"domain", domain}, {"cumulative_uJ", uj}};
  if (phase) j["phase"] = phase;
  return j.dump() + "\n";
}

}  // namespace

TEST(AdjustedEnergy, SubtractsBaselineTimesDuration) {
  auto a = adjusted_energy(10.0, 2.0, 3.0, NegativeEnergyPolicy::KeepFlagged);
  EXPECT_DOUBLE_EQ(a.joules, 4.0);
  EXPECT_FALSE(a.negative);
  EXPECT_DOUBLE_EQ(adjusted_energy(7.5, 0.0, 12.0, NegativeEnergyPolicy::ClampZero).joules, 7.5);
}

TEST(AdjustedEnergy, NegativeResultsFollowPolicy) {
  auto kept = adjusted_energy(1.0, 2.0, 1.0, NegativeEnergyPolicy::KeepFlagged);
  EXPECT_DOUBLE_EQ(kept.joules, -1.0);
  EXPECT_TRUE(kept.negative);
  auto clamped = adjusted_energy(1.0, 2.0, 1.0, NegativeEnergyPolicy::ClampZero);
  EXPECT_DOUBLE_EQ(clamped.joules, 0.0);
  EXPECT_TRUE(clamped.negative);
  EXPECT_THROW(adjusted_energy(1.0, 1.0, 0.0, NegativeEnergyPolicy::KeepFlagged), PreconditionError);
}

TEST(AdjustedEnergy, RunFlagsNameDomainsAndClamping) {
  BaselinePower b;
  b.pkg_watts = 5;
  b.ram_watts = 1;
  auto r = adjust_run(2, {1.0, 3.0, 1.0}, b, NegativeEnergyPolicy::ClampZero);
  EXPECT_EQ(r.flags, static_cast<unsigned>(kNegativePkg));
  EXPECT_DOUBLE_EQ(r.adj_pkg_j, 0.0);
  EXPECT_DOUBLE_EQ(r.adj_ram_j, 2.0);
  EXPECT_DOUBLE_EQ(r.adj_total_j, 2.0);
  EXPECT_DOUBLE_EQ(r.runtime_ms, 1000.0);
  EXPECT_EQ(flag_names(r.flags, NegativeEnergyPolicy::ClampZero),
            (std::vector<std::string>{"negative_pkg", "clamped"}));
  EXPECT_EQ(flag_names(kNegativePkg | kNegativeRam, NegativeEnergyPolicy::KeepFlagged),
            (std::vector<std::string>{"negative_pkg", "negative_ram"}));
  EXPECT_TRUE(flag_names(0, NegativeEnergyPolicy::ClampZero).empty());
}

TEST(PlanRuns, FiveEntriesPerProgramWithOrderedRunIndices) {
  MeasurementConfig cfg;
  cfg.rng_seed = 3;
  auto plan = plan_runs(4, cfg);
  ASSERT_EQ(plan.size(), 20u);
  std::map<std::size_t, std::vector<int>> per;
  for (const auto& e : plan) per[e.program].push_back(e.run_index);
  ASSERT_EQ(per.size(), 4u);
  for (const auto& [p, idx] : per) EXPECT_EQ(idx, (std::vector<int>{1, 2, 3, 4, 5}));
  EXPECT_THROW(plan_runs(0, cfg), PreconditionError);
}

TEST(PlanRuns, SeedDeterminesPermutation) {
  MeasurementConfig a, b;
  for (std::uint64_t s = 0; s < 100; ++s) {
    a.rng_seed = s;
    b.rng_seed = s;
    EXPECT_EQ(plan_runs(3, a), plan_runs(3, b));
    b.rng_seed = s + 1000;
    EXPECT_NE(plan_runs(3, a), plan_runs(3, b)) << "seed " << s;
  }
}

TEST(PlanRuns, InterleavesPrograms) {
  MeasurementConfig cfg;
  int interleaved = 0;
  for (std::uint64_t s = 0; s < 50; ++s) {
    cfg.rng_seed = s;
    auto plan = plan_runs(3, cfg);
    bool blocked = true;
    for (std::size_t i = 0; i < plan.size(); ++i)
      if (plan[i].program != plan[(i / 5) * 5].program) blocked = false;
    if (!blocked) ++interleaved;
  }
  EXPECT_EQ(interleaved, 50);
}

TEST(ReplayBackend, IdleWindowGivesBaselinePower) {
  std::string trace = replay_line(0, "package", 0, "idle") + replay_line(0, "ram", 0, "idle") +
                      replay_line(30, "package", 60'000'000, "idle") + replay_line(30, "ram", 15'000'000, "idle") +
                      replay_line(0, "package", 0) + replay_line(0, "ram", 0) + replay_line(1, "package", 1) +
                      replay_line(1, "ram", 1);
  std::istringstream in(trace);
  auto meter = ReplayBackend::from_stream(in, "mem");
  VirtualClock clock;
  auto b = measure_baseline(meter, clock, 30);
  EXPECT_DOUBLE_EQ(b.pkg_watts, 2.0);
  EXPECT_DOUBLE_EQ(b.ram_watts, 0.5);
  EXPECT_EQ(meter.snapshot_count(), 4u);
}

TEST(ReplayBackend, FiveRunsAverageToEightJoules) {
  // Workload intervals of 6, 7, 8, 9, 10 J package energy, zero idle power.
  std::string trace;
  double t = 0;
  std::uint64_t e = 0;
  for (int j : {6, 7, 8, 9, 10}) {
    trace += replay_line(t, "package", e) + replay_line(t, "ram", 0);
    t += 0.5;
    e += static_cast<std::uint64_t>(j) * 1'000'000;
    trace += replay_line(t, "package", e) + replay_line(t, "ram", 0);
    t += 0.5;
  }
  trace += replay_line(0, "package", 0, "idle") + replay_line(0, "ram", 0, "idle") +
           replay_line(30, "package", 0, "idle") + replay_line(30, "ram", 0, "idle");
  std::istringstream in(trace);
  auto meter = ReplayBackend::from_stream(in, "mem");

  testutil::TempDir dir;
  auto prog = sh_program(dir, "ok.sh", "exit 0\n");
  VirtualClock clock;
  MeasurementConfig cfg;
  auto m = measure_program_energy(prog, meter, sh_spec(dir.path()), cfg, clock);
  ASSERT_FALSE(m.aborted);
  ASSERT_EQ(m.runs.size(), 5u);
  EXPECT_NEAR(m.avg_pkg_j, 8.0, 1e-12);
  EXPECT_NEAR(m.avg_total_j, 8.0, 1e-12);
  EXPECT_NEAR(m.avg_runtime_ms, 500.0, 1e-9);
  std::vector<double> raw;
  for (const auto& r : m.runs) raw.push_back(r.raw_pkg_j);
  EXPECT_EQ(raw, (std::vector<double>{6, 7, 8, 9, 10}));
}

TEST(ReplayBackend, WithoutIdleStreamIdleDrawsFromWorkload) {
  std::string trace = replay_line(0, "package", 0) + replay_line(0, "ram", 0) +
                      replay_line(2, "package", 4'000'000) + replay_line(2, "ram", 2'000'000);
  std::istringstream in(trace);
  auto meter = ReplayBackend::from_stream(in, "mem");
  meter.start(Phase::Idle);
  auto r = meter.stop();
  EXPECT_DOUBLE_EQ(r.pkg_joules, 4.0);
  EXPECT_DOUBLE_EQ(r.ram_joules, 2.0);
  EXPECT_DOUBLE_EQ(r.duration_s, 2.0);
}

TEST(ReplayBackend, WrapsAtMaxRange) {
  std::string trace = Json{{"t_offset_s", 0}, {"domain", "package"}, {"cumulative_uJ", 900}, {"max_uJ", 1000}}.dump() +
                      "\n" + replay_line(0, "ram", 0) +
                      Json{{"t_offset_s", 1}, {"domain", "package"}, {"cumulative_uJ", 100}, {"max_uJ", 1000}}.dump() +
                      "\n" + replay_line(1, "ram", 5);
  std::istringstream in(trace);
  auto meter = ReplayBackend::from_stream(in, "mem");
  meter.start(Phase::Workload);
  auto r = meter.stop();
  EXPECT_NEAR(r.pkg_joules, 200e-6, 1e-15);
}

TEST(ReplayBackend, RejectsMalformedTraces) {
  auto parse = [](const std::string& text) {
    std::istringstream in(text);
    return ReplayBackend::from_stream(in, "mem");
  };
  EXPECT_THROW(parse(replay_line(0, "gpu", 0)), ParseError);
  EXPECT_THROW(parse(replay_line(0, "package", 0) + replay_line(1, "package", 1) + replay_line(1, "ram", 1)),
               ParseError);
  EXPECT_THROW(parse(replay_line(0, "package", 0) + replay_line(0, "ram", 0)), ConfigError);
  EXPECT_THROW(parse(replay_line(0, "package", 0, "warmup")), ParseError);
  auto decreasing = parse(replay_line(0, "package", 5) + replay_line(0, "ram", 0) + replay_line(1, "package", 1) +
                          replay_line(1, "ram", 1));
  decreasing.start(Phase::Workload);
  EXPECT_THROW(decreasing.stop(), HarnessError);
}

TEST(SyntheticBackend, ConstantPowerPerPhase) {
  auto clock = std::make_shared<VirtualClock>();
  SyntheticBackend meter(clock, {20, 4, 5, 1});
  meter.start(Phase::Idle);
  clock->sleep_for(Seconds(30));
  auto idle = meter.stop();
  EXPECT_NEAR(idle.pkg_joules, 150, 0.01);
  EXPECT_NEAR(idle.ram_joules, 30, 0.01);
  meter.start(Phase::Workload);
  clock->sleep_for(Seconds(2));
  auto load = meter.stop();
  EXPECT_NEAR(load.pkg_joules, 40, 0.01);
  EXPECT_NEAR(load.ram_joules, 8, 0.01);
  EXPECT_THROW(SyntheticBackend(clock, {-1, 0, 0, 0}), ConfigError);
}

TEST(PowercapBackend, ReadsZonesAndCorrectsWraparound) {
  testutil::TempDir root;
  auto zone = [&](const std::string& dir, const std::string& name, std::uint64_t value, std::uint64_t max) {
    testutil::write_file(root / dir / "name", name + "\n");
    testutil::write_file(root / dir / "energy_uj", std::to_string(value) + "\n");
    testutil::write_file(root / dir / "max_energy_range_uj", std::to_string(max) + "\n");
  };
  zone("intel-rapl:0", "package-0", 999'000'000, 1'000'000'000);
  zone("intel-rapl:1", "package-1", 5'000'000, 1'000'000'000);
  zone("intel-rapl:0:0", "dram", 100, 1'000'000);
  zone("intel-rapl:0:1", "core", 0, 1'000'000);

  auto clock = std::make_shared<VirtualClock>();
  PowercapBackend meter(clock, root.path());
  meter.start(Phase::Workload);
  clock->sleep_for(Seconds(2));
  zone("intel-rapl:0", "package-0", 1'000'000, 1'000'000);  // wrapped past 1e9
  testutil::write_file(root / "intel-rapl:0" / "max_energy_range_uj", "1000000000\n");
  zone("intel-rapl:1", "package-1", 6'000'000, 1'000'000'000);
  zone("intel-rapl:0:0", "dram", 500'100, 1'000'000);
  auto r = meter.stop();
  // package-0: 1e6 to the wrap plus 1e6 after; package-1: 1e6.
  EXPECT_NEAR(r.pkg_joules, 3.0, 1e-9);
  EXPECT_NEAR(r.ram_joules, 0.5, 1e-9);
  EXPECT_NEAR(r.duration_s, 2.0, 0.05);
  EXPECT_EQ(meter.name(), "hw");
}

TEST(PowercapBackend, MissingRamZoneIsReported) {
  testutil::TempDir root;
  testutil::write_file(root / "intel-rapl:0" / "name", "package-0\n");
  testutil::write_file(root / "intel-rapl:0" / "energy_uj", "0\n");
  testutil::write_file(root / "intel-rapl:0" / "max_energy_range_uj", "100\n");
  try {
    PowercapBackend meter(std::make_shared<VirtualClock>(), root.path());
    FAIL() << "expected HarnessError";
  } catch (const HarnessError& e) {
    EXPECT_NE(std::string(e.what()).find("dram"), std::string::npos);
  }
  EXPECT_THROW(PowercapBackend(std::make_shared<VirtualClock>(), root / "absent"), HarnessError);
}

TEST(EnergyCampaign, ScheduleHasCooldownsAndFreshBaselines) {
  testutil::TempDir dir;
  std::vector<MeasuredProgram> programs{sh_program(dir, "a.sh", "exit 0\n"), sh_program(dir, "b.sh", "exit 0\n"),
                                        sh_program(dir, "c.sh", "exit 0\n")};
  auto clock = std::make_shared<VirtualClock>();
  SyntheticBackend meter(clock, {10, 2, 4, 1});
  MeasurementConfig cfg;
  cfg.rng_seed = 42;
  auto res = measure_energy_campaign(programs, meter, sh_spec(dir.path()), cfg, *clock);

  std::vector<const ScheduleEvent*> runs;
  std::map<std::string, int> baselines;
  std::set<std::string> started;
  const ScheduleEvent* prev = nullptr;
  for (const auto& e : res.schedule) {
    if (e.kind == ScheduleEvent::Kind::Baseline) {
      ++baselines[e.program_ref];
      EXPECT_FALSE(started.count(e.program_ref));
      EXPECT_NEAR(e.end_s - e.start_s, 30.0, 0.5);
    }
    if (e.kind == ScheduleEvent::Kind::Run) {
      if (!started.count(e.program_ref)) {
        // The program's baseline is the event right before its first run.
        ASSERT_NE(prev, nullptr);
        EXPECT_EQ(prev->kind, ScheduleEvent::Kind::Baseline);
        EXPECT_EQ(prev->program_ref, e.program_ref);
        started.insert(e.program_ref);
      }
      runs.push_back(&e);
    }
    prev = &e;
  }
  ASSERT_EQ(runs.size(), 15u);
  for (std::size_t i = 1; i < runs.size(); ++i) EXPECT_GE(runs[i]->start_s - runs[i - 1]->end_s, 10.0);
  EXPECT_EQ(baselines, (std::map<std::string, int>{{"a.sh", 1}, {"b.sh", 1}, {"c.sh", 1}}));

  for (const auto& m : res.measurements) {
    ASSERT_EQ(m.runs.size(), 5u);
    EXPECT_NEAR(m.baseline_used.pkg_watts, 4.0, 0.01);
    EXPECT_NEAR(m.baseline_used.ram_watts, 1.0, 0.01);
    for (const auto& r : m.runs) EXPECT_NEAR(r.adj_total_j, (12.0 - 5.0) * r.runtime_ms / 1000.0, 1e-9);
  }
}

TEST(EnergyCampaign, FailingRunAbortsOnlyThatProgram) {
  testutil::TempDir dir;
  std::vector<MeasuredProgram> programs{sh_program(dir, "good.sh", "exit 0\n"),
                                        sh_program(dir, "bad.sh", "echo broken >&2\nexit 3\n")};
  auto clock = std::make_shared<VirtualClock>();
  SyntheticBackend meter(clock, {10, 2, 4, 1});
  MeasurementConfig cfg;
  auto res = measure_energy_campaign(programs, meter, sh_spec(dir.path()), cfg, *clock);
  EXPECT_FALSE(res.measurements[0].aborted);
  EXPECT_EQ(res.measurements[0].runs.size(), 5u);
  ASSERT_TRUE(res.measurements[1].aborted);
  EXPECT_NE(res.measurements[1].aborted->find("broken"), std::string::npos);
  EXPECT_TRUE(res.measurements[1].runs.empty());
  int bad_runs = 0;
  for (const auto& e : res.schedule)
    if (e.kind == ScheduleEvent::Kind::Run && e.program_ref == "bad.sh") ++bad_runs;
  EXPECT_EQ(bad_runs, 1);
}

TEST(EnergyCampaign, AveragesAcrossProblems) {
  std::vector<EnergyMeasurement> ms(2);
  ms[0].avg_total_j = 4;
  ms[0].avg_runtime_ms = 100;
  ms[1].avg_total_j = 8;
  ms[1].avg_runtime_ms = 300;
  auto a = average_campaign_energy(ms);
  EXPECT_DOUBLE_EQ(a.avg_total_j, 6);
  EXPECT_DOUBLE_EQ(a.avg_runtime_ms, 200);
  EXPECT_THROW(average_campaign_energy({}), PreconditionError);
}

TEST(MeasurementConfig, RejectsInvalidValues) {
  MeasurementConfig c;
  c.runs_per_program = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.cooldown_s = -1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.baseline_window_s = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_EQ(parse_negative_energy_policy("ClampZero"), NegativeEnergyPolicy::ClampZero);
  EXPECT_FALSE(parse_negative_energy_policy("clamp"));
}
