#pragma once

#include <fcntl.h>
#include <signal.h>
#include <sys/stat.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "greenbench/campaign_log.hpp"
#include "greenbench/clock.hpp"
#include "greenbench/corpus.hpp"
#include "greenbench/corpus_validation.hpp"
#include "greenbench/energy.hpp"
#include "greenbench/energy_backends.hpp"
#include "greenbench/error.hpp"
#include "greenbench/generation.hpp"
#include "greenbench/jsonl.hpp"
#include "greenbench/machine.hpp"
#include "greenbench/memory.hpp"
#include "greenbench/metrics.hpp"
#include "greenbench/parallel.hpp"
#include "greenbench/providers.hpp"
#include "greenbench/report.hpp"
#include "greenbench/runner.hpp"

namespace greenbench {

// Exit statuses shared by every command.
inline constexpr int kExitOk = 0;
inline constexpr int kExitError = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitPartial = 3;

struct InterpreterConfig {
  std::vector<std::string> command{"python3", std::string(kProgramPlaceholder)};
  std::vector<std::string> syntax_check;
  int timeout_ms = 120000;
  int validation_timeout_ms = 60000;
  std::string comment_prefix = "#";
  std::optional<std::vector<std::string>> env_allowlist;
};

struct ProviderConfig {
  std::string kind;  // scripted | mock | openai-compatible
  std::filesystem::path script;
  std::uint64_t seed = 0;
  double p_correct = 0.5;
  std::string base_url;
  std::string path = "/v1/chat/completions";
};

struct CampaignConfig {
  std::string name = "campaign";
  std::filesystem::path corpus;
  std::filesystem::path output_dir;
  std::string platform;
  std::map<std::string, InterpreterConfig> interpreters;
  std::vector<ModelSpec> models;
  std::map<std::string, ProviderConfig> providers;
  MeasurementConfig measurement;
  double memory_interval_s = 0.001;
  std::string backend = "hw";          // hw | replay:<path> | synthetic:<w>[,<w>...]
  std::string memory_backend = "proc"; // proc | replay:<path>
  bool virtual_clock = false;
  std::size_t parallelism = 1;
  RetryPolicy retry;
  std::map<std::string, std::vector<std::string>> benchmark_sets;  // name -> model ids
  std::filesystem::path base_dir;  // relative paths in overrides resolve here

  void validate() const {
    if (corpus.empty()) throw ConfigError("config: corpus path is required");
    if (output_dir.empty()) throw ConfigError("config: output_dir is required");
    if (parallelism < 1) throw ConfigError("config: parallelism must be >= 1");
    if (!(memory_interval_s > 0)) throw ConfigError("config: memory interval must be > 0");
    measurement.validate();
    std::set<std::string> ids;
    for (const auto& m : models) {
      m.validate();
      if (!ids.insert(m.model_id).second) throw ConfigError("config: duplicate model " + m.model_id);
      if (!providers.count(m.provider))
        throw ConfigError("config: model " + m.model_id + " uses unknown provider '" + m.provider + "'");
    }
    for (const auto& [set, members] : benchmark_sets)
      for (const auto& id : members)
        if (!ids.count(id)) throw ConfigError("benchmark set " + set + " names unknown model " + id);
    for (const auto& [name, interp] : interpreters) {
      if (interp.timeout_ms <= 0 || interp.validation_timeout_ms <= 0)
        throw ConfigError("interpreter " + name + ": timeouts must be positive");
    }
  }

  const ModelSpec* model(const std::string& id) const {
    for (const auto& m : models)
      if (m.model_id == id) return &m;
    return nullptr;
  }

  const InterpreterConfig& interpreter(const std::string& ref) const {
    auto it = interpreters.find(ref);
    if (it == interpreters.end()) throw ConfigError("no interpreter configured for '" + ref + "'");
    return it->second;
  }
};

// ---------------------------------------------------------------------------
// Configuration file

namespace detail {

inline std::filesystem::path resolve(const std::filesystem::path& base, const std::filesystem::path& p) {
  return (p.is_absolute() || base.empty() ? p : base / p).lexically_normal();
}

inline ModelSpec model_from_json(const Json& j) {
  ModelSpec m;
  m.model_id = j.at("model_id").get<std::string>();
  m.provider = j.at("provider").get<std::string>();
  m.price_in_usd_per_M = j.at("price_in_usd_per_M").get<double>();
  m.price_out_usd_per_M = j.at("price_out_usd_per_M").get<double>();
  m.temperature = j.value("temperature", 1.0);
  m.max_iterations = j.value("max_iterations", 25);
  return m;
}

}  // namespace detail

// A model table file: {"models": [{model_id, provider, price_in_usd_per_M,
// price_out_usd_per_M, temperature}, ...]}.
inline std::vector<ModelSpec> load_model_table(const std::filesystem::path& path) {
  Json doc;
  try {
    doc = Json::parse(jsonl::read_text(path));
    std::vector<ModelSpec> out;
    for (const auto& m : doc.at("models")) out.push_back(detail::model_from_json(m));
    return out;
  } catch (const Json::exception& e) {
    throw ConfigError("invalid model table " + path.string() + ": " + e.what());
  }
}

inline CampaignConfig parse_campaign_config(const Json& j, const std::filesystem::path& base_dir) {
  using detail::resolve;
  CampaignConfig c;
  c.base_dir = base_dir;
  try {
    c.name = j.value("campaign", c.name);
    if (j.contains("corpus")) c.corpus = resolve(base_dir, j.at("corpus").get<std::string>());
    if (j.contains("output_dir")) c.output_dir = resolve(base_dir, j.at("output_dir").get<std::string>());
    c.platform = j.value("platform", std::string());

    if (auto it = j.find("interpreters"); it != j.end()) {
      for (const auto& [ref, spec] : it->items()) {
        InterpreterConfig ic;
        if (spec.contains("command")) ic.command = spec.at("command").get<std::vector<std::string>>();
        if (spec.contains("syntax_check"))
          ic.syntax_check = spec.at("syntax_check").get<std::vector<std::string>>();
        ic.timeout_ms = spec.value("timeout_ms", ic.timeout_ms);
        ic.validation_timeout_ms = spec.value("validation_timeout_ms", ic.validation_timeout_ms);
        ic.comment_prefix = spec.value("comment_prefix", ic.comment_prefix);
        if (spec.contains("env_allowlist"))
          ic.env_allowlist = spec.at("env_allowlist").get<std::vector<std::string>>();
        c.interpreters[ref] = std::move(ic);
      }
    }

    if (j.contains("model_table")) {
      c.models = load_model_table(resolve(base_dir, j.at("model_table").get<std::string>()));
    }
    if (auto it = j.find("models"); it != j.end()) {
      for (const auto& m : *it) c.models.push_back(detail::model_from_json(m));
    }

    if (auto it = j.find("providers"); it != j.end()) {
      for (const auto& [name, spec] : it->items()) {
        ProviderConfig pc;
        pc.kind = spec.at("kind").get<std::string>();
        if (spec.contains("script")) pc.script = resolve(base_dir, spec.at("script").get<std::string>());
        pc.seed = spec.value("seed", pc.seed);
        pc.p_correct = spec.value("p_correct", pc.p_correct);
        pc.base_url = spec.value("base_url", pc.base_url);
        pc.path = spec.value("path", pc.path);
        if (pc.kind != "scripted" && pc.kind != "mock" && pc.kind != "openai-compatible")
          throw ConfigError("provider " + name + ": unknown kind '" + pc.kind + "'");
        if (pc.kind == "scripted" && pc.script.empty())
          throw ConfigError("provider " + name + ": scripted provider needs a script path");
        if (pc.kind == "openai-compatible" && pc.base_url.empty())
          throw ConfigError("provider " + name + ": base_url is required");
        c.providers[name] = std::move(pc);
      }
    }

    if (auto it = j.find("measurement"); it != j.end()) {
      const Json& m = *it;
      c.measurement.runs_per_program = m.value("runs_per_program", c.measurement.runs_per_program);
      c.measurement.cooldown_s = m.value("cooldown_s", c.measurement.cooldown_s);
      c.measurement.baseline_window_s = m.value("baseline_window_s", c.measurement.baseline_window_s);
      c.measurement.rng_seed = m.value("seed", c.measurement.rng_seed);
      if (m.contains("negative_energy_policy")) {
        auto p = parse_negative_energy_policy(m.at("negative_energy_policy").get<std::string>());
        if (!p) throw ConfigError("negative_energy_policy must be KeepFlagged or ClampZero");
        c.measurement.negative_energy_policy = *p;
      }
      c.memory_interval_s = m.value("memory_interval_s", c.memory_interval_s);
      c.backend = m.value("backend", c.backend);
      c.memory_backend = m.value("memory_backend", c.memory_backend);
      c.virtual_clock = m.value("virtual_clock", c.virtual_clock);
    }

    if (auto it = j.find("generation"); it != j.end()) {
      c.parallelism = it->value("parallelism", c.parallelism);
      c.retry.retries = it->value("retries", c.retry.retries);
      c.retry.initial_backoff = std::chrono::milliseconds(
          it->value("initial_backoff_ms", static_cast<long long>(c.retry.initial_backoff.count())));
      c.retry.multiplier = it->value("backoff_multiplier", c.retry.multiplier);
    }

    if (auto it = j.find("benchmark_sets"); it != j.end())
      for (const auto& [name, members] : it->items())
        c.benchmark_sets[name] = members.get<std::vector<std::string>>();
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("invalid configuration: ") + e.what());
  }
  // Replay paths inside backend specs are relative to the config file too.
  auto rebase = [&](std::string& spec) {
    if (spec.rfind("replay:", 0) == 0) spec = "replay:" + resolve(base_dir, spec.substr(7)).string();
  };
  rebase(c.backend);
  rebase(c.memory_backend);
  return c;
}

inline CampaignConfig load_campaign_config(const std::filesystem::path& path) {
  Json j;
  try {
    j = Json::parse(jsonl::read_text(path));
  } catch (const Json::parse_error& e) {
    throw ConfigError("cannot parse config " + path.string() + ": " + e.what());
  }
  return parse_campaign_config(j, std::filesystem::absolute(path).lexically_normal().parent_path());
}

// ---------------------------------------------------------------------------
// Campaign lock

// Exclusive lock file in the output directory. A lock left behind by a dead
// process is taken over.
class CampaignLock {
 public:
  explicit CampaignLock(std::filesystem::path path) : path_(std::move(path)) {
    std::filesystem::create_directories(path_.parent_path());
    for (int attempt = 0; attempt < 2; ++attempt) {
      int fd = ::open(path_.c_str(), O_WRONLY | O_CREAT | O_EXCL | O_CLOEXEC, 0644);
      if (fd >= 0) {
        auto pid = std::to_string(::getpid()) + "\n";
        [[maybe_unused]] auto n = ::write(fd, pid.data(), pid.size());
        ::close(fd);
        return;
      }
      if (errno != EEXIST) throw HarnessError("cannot create lock " + path_.string() + ": " + std::strerror(errno));
      long holder = 0;
      std::ifstream(path_) >> holder;
      if (holder > 0 && (::kill(static_cast<pid_t>(holder), 0) == 0 || errno == EPERM))
        throw HarnessError("campaign is locked by running process " + std::to_string(holder) + " (" +
                           path_.string() + ")");
      std::error_code ec;
      std::filesystem::remove(path_, ec);
    }
    throw HarnessError("cannot acquire campaign lock " + path_.string());
  }

  ~CampaignLock() {
    std::error_code ec;
    std::filesystem::remove(path_, ec);
  }

  CampaignLock(const CampaignLock&) = delete;
  CampaignLock& operator=(const CampaignLock&) = delete;

 private:
  std::filesystem::path path_;
};

// ---------------------------------------------------------------------------
// Shared plumbing

inline std::filesystem::path validated_corpus_path(const CampaignConfig& c) {
  return c.output_dir / "corpus.validated.jsonl";
}

inline std::filesystem::path validation_report_path(const CampaignConfig& c) {
  return c.output_dir / "validation.json";
}

inline Corpus load_validated_corpus(const CampaignConfig& c) {
  auto path = validated_corpus_path(c);
  if (!std::filesystem::exists(path))
    throw PreconditionError("no validated corpus at " + path.string() + "; run 'corpus validate' first");
  auto doc = load_corpus(path);
  return doc;
}

inline ExecutionSpec execution_spec(const CampaignConfig& c, const InterpreterConfig& ic, bool validation) {
  ExecutionSpec s;
  s.interpreter_command = ic.command;
  s.timeout = std::chrono::milliseconds(validation ? ic.validation_timeout_ms : ic.timeout_ms);
  s.working_dir = std::filesystem::absolute(CampaignPaths{c.output_dir}.work_dir());
  if (ic.env_allowlist) s.env_allowlist = *ic.env_allowlist;
  return s;
}

// One executor per interpreter_ref, created on first use.
class RunnerPool {
 public:
  RunnerPool(const CampaignConfig& c, bool validation) : config_(c), validation_(validation) {}

  GuestRunner& get(const std::string& ref) {
    std::lock_guard lock(mu_);
    auto it = runners_.find(ref);
    if (it != runners_.end()) return *it->second;
    const auto& ic = config_.interpreter(ref);
    auto spec = execution_spec(config_, ic, validation_);
    std::filesystem::create_directories(spec.working_dir);
    auto r = std::make_unique<GuestRunner>(spec, ic.syntax_check, ic.comment_prefix);
    return *runners_.emplace(ref, std::move(r)).first->second;
  }

 private:
  const CampaignConfig& config_;
  bool validation_;
  std::mutex mu_;
  std::map<std::string, std::unique_ptr<GuestRunner>> runners_;
};

// Routes each problem to the executor for its interpreter.
class PerProblemFacility final : public ExecutionFacility {
 public:
  PerProblemFacility(RunnerPool& pool, const Corpus& corpus) : pool_(pool), corpus_(corpus) {}

  void bind(const Problem& p) { current_ = &p; }

  SyntaxCheck syntax_check(std::string_view source, std::string_view file_name) override {
    return runner().syntax_check(source, file_name);
  }
  ExecutionResult run(std::string_view program, std::string_view file_name) override {
    return runner().run(program, file_name);
  }
  std::string_view comment_prefix() const override {
    return pool_.get(current_->interpreter_ref).comment_prefix();
  }

 private:
  GuestRunner& runner() { return pool_.get(current_->interpreter_ref); }

  RunnerPool& pool_;
  const Corpus& corpus_;
  const Problem* current_ = nullptr;
};

inline MachineProfile campaign_profile(const CampaignConfig& c) { return capture_machine_profile(c.platform); }

// ---------------------------------------------------------------------------
// corpus validate

struct ValidateSummary {
  std::size_t accepted = 0;
  std::size_t rejected = 0;
};

inline ValidateSummary cmd_corpus_validate(const CampaignConfig& c, std::ostream& log = std::cerr) {
  c.validate();
  auto corpus = load_corpus(c.corpus);
  for (const auto& p : corpus.problems) c.interpreter(p.interpreter_ref);
  std::filesystem::create_directories(c.output_dir);

  RunnerPool pool(c, true);
  // Each worker checks one problem at a time through its own router.
  ValidationReport report;
  std::vector<std::optional<Rejection>> outcomes(corpus.problems.size());
  parallel_for(corpus.problems.size(), c.parallelism, [&](std::size_t i) {
    PerProblemFacility facility(pool, corpus);
    facility.bind(corpus.problems[i]);
    outcomes[i] = check_canonical(corpus.problems[i], facility);
  });
  for (std::size_t i = 0; i < outcomes.size(); ++i) {
    if (outcomes[i])
      report.rejected.push_back(std::move(*outcomes[i]));
    else
      report.accepted_ids.push_back(corpus.problems[i].id);
  }

  jsonl::write_file_atomic(validation_report_path(c), to_json(report).dump(2) + "\n");
  write_corpus(validated_corpus_path(c), accepted_subset(corpus, report).problems);
  for (const auto& r : report.rejected)
    log << "rejected " << r.problem_id << ": " << to_string(r.reason) << "\n";
  log << report.accepted_ids.size() << " accepted, " << report.rejected.size() << " rejected\n";
  return {report.accepted_ids.size(), report.rejected.size()};
}

// ---------------------------------------------------------------------------
// generate

struct ClientFactory {
  // Builds the client for one provider entry. Tests substitute their own.
  std::function<std::unique_ptr<ProviderClient>(const std::string& name, const ProviderConfig&,
                                                const Corpus&)>
      make;
};

inline std::unique_ptr<ProviderClient> default_client(const std::string& name, const ProviderConfig& pc,
                                                      const Corpus& corpus) {
  if (pc.kind == "scripted") return std::make_unique<ScriptedClient>(corpus, ScriptedClient::load_script(pc.script));
  if (pc.kind == "mock") return std::make_unique<SeededMockClient>(corpus, pc.seed, pc.p_correct);
  return std::make_unique<OpenAICompatibleClient>(pc.base_url, require_credential(name), pc.path);
}

inline std::vector<const ModelSpec*> select_models(const CampaignConfig& c,
                                                   const std::vector<std::string>& filter) {
  std::vector<const ModelSpec*> out;
  if (filter.empty()) {
    for (const auto& m : c.models) out.push_back(&m);
    return out;
  }
  for (const auto& id : filter) {
    const auto* m = c.model(id);
    if (!m) throw ConfigError("unknown model '" + id + "'");
    out.push_back(m);
  }
  return out;
}

struct GenerateSummary {
  std::size_t pairs = 0;
  std::size_t generated = 0;  // pairs run in this invocation
  std::size_t skipped = 0;    // already complete
  std::size_t harness_errors = 0;
  int exit_code() const { return harness_errors ? kExitPartial : kExitOk; }
};

namespace detail {

inline std::vector<Json> outcome_records(const GenerationOutcome& o) {
  std::vector<Json> out;
  for (const auto& a : o.attempts) out.push_back(attempt_to_json(o.problem_id, o.model_id, a));
  if (o.harness_error) {
    AttemptRecord h;
    h.iteration = static_cast<int>(o.attempts.size()) + 1;
    h.verdict = Verdict::HarnessError;
    h.error_excerpt = *o.harness_error;
    out.push_back(attempt_to_json(o.problem_id, o.model_id, h));
  }
  return out;
}

inline bool outcome_complete(const GenerationOutcome& o, const ModelSpec& m) {
  if (o.harness_error) return false;
  if (o.solved()) return true;
  return static_cast<int>(o.attempts.size()) >= m.max_iterations;
}

}  // namespace detail

// Runs the generate-verify-regenerate loop for every selected (model,
// problem) pair that is not already complete, then rewrites the log in
// canonical order: models as configured, problems in corpus order.
inline GenerateSummary cmd_generate(const CampaignConfig& c, const std::vector<std::string>& model_filter,
                                    const ClientFactory& factory = {}, std::ostream& log = std::cerr) {
  c.validate();
  const auto corpus = load_validated_corpus(c);
  const auto models = select_models(c, model_filter);
  CampaignPaths paths{c.output_dir};
  const auto profile = campaign_profile(c);

  // Credentials are checked for every selected provider before any call.
  std::map<std::string, std::unique_ptr<ProviderClient>> clients;
  for (const auto* m : models) {
    if (clients.count(m->provider)) continue;
    const auto& pc = c.providers.at(m->provider);
    clients[m->provider] = factory.make ? factory.make(m->provider, pc, corpus)
                                        : default_client(m->provider, pc, corpus);
  }
  for (const auto& p : corpus.problems) c.interpreter(p.interpreter_ref);

  // Existing records, grouped by pair; only complete pairs are kept.
  std::map<std::pair<std::string, std::string>, std::vector<Json>> records;
  for (auto& rec : read_log_records(paths.generation_log()))
    records[{rec.at("model_id").get<std::string>(), rec.at("problem_id").get<std::string>()}].push_back(rec);
  auto existing = outcomes_from_records(read_log_records(paths.generation_log()));

  struct Job {
    const ModelSpec* model;
    const Problem* problem;
  };
  std::vector<Job> jobs;
  GenerateSummary summary;
  for (const auto* m : models) {
    for (const auto& p : corpus.problems) {
      ++summary.pairs;
      auto mit = existing.find(m->model_id);
      const GenerationOutcome* prior = nullptr;
      if (mit != existing.end())
        if (auto pit = mit->second.find(p.id); pit != mit->second.end()) prior = &pit->second;
      if (prior && detail::outcome_complete(*prior, *m)) {
        ++summary.skipped;
        continue;
      }
      records.erase({m->model_id, p.id});
      jobs.push_back({m, &p});
    }
  }

  auto rewrite = [&] {
    std::vector<Json> ordered;
    std::set<std::pair<std::string, std::string>> placed;
    auto place = [&](const std::string& model, const std::string& problem) {
      auto it = records.find({model, problem});
      if (it == records.end() || !placed.insert(it->first).second) return;
      ordered.insert(ordered.end(), it->second.begin(), it->second.end());
    };
    for (const auto& m : c.models)
      for (const auto& p : corpus.problems) place(m.model_id, p.id);
    // Records for models or problems no longer configured are preserved at the end.
    for (const auto& [key, recs] : records) place(key.first, key.second);
    std::filesystem::create_directories(c.output_dir);
    write_log(paths.generation_log(), profile, ordered);
  };
  rewrite();

  RunnerPool pool(c, false);
  std::mutex mu;
  GenerationOptions options;
  options.retry = c.retry;
  SteadyClock clock;
  std::ofstream append(paths.generation_log(), std::ios::app | std::ios::binary);
  parallel_for(jobs.size(), c.parallelism, [&](std::size_t i) {
    const auto& job = jobs[i];
    PerProblemFacility facility(pool, corpus);
    facility.bind(*job.problem);
    auto outcome = run_generation_loop(*job.problem, *job.model, *clients.at(job.model->provider), facility,
                                       options, clock);
    if (outcome.winning_source) {
      auto file = paths.solution(job.model->model_id, job.problem->id);
      std::filesystem::create_directories(file.parent_path());
      jsonl::write_file_atomic(file, *outcome.winning_source);
    }
    auto recs = detail::outcome_records(outcome);
    std::lock_guard lock(mu);
    for (const auto& r : recs) append << jsonl::dump(r) << '\n';
    append.flush();
    records[{job.model->model_id, job.problem->id}] = std::move(recs);
    ++summary.generated;
    if (outcome.harness_error) {
      ++summary.harness_errors;
      log << "harness error for (" << job.model->model_id << ", " << job.problem->id
          << "): " << *outcome.harness_error << "\n";
    }
  });
  append.close();
  rewrite();
  log << summary.generated << " pair(s) generated, " << summary.skipped << " already complete";
  if (summary.harness_errors) log << ", " << summary.harness_errors << " incomplete (rerun to resume)";
  log << "\n";
  return summary;
}

// ---------------------------------------------------------------------------
// measure

struct MeasureSummary {
  std::size_t programs = 0;
  std::size_t measured = 0;
  std::size_t skipped = 0;
  std::size_t failed = 0;
  int exit_code() const { return failed ? kExitPartial : kExitOk; }
};

// "synthetic:<pkg_load>[,<ram_load>[,<pkg_idle>[,<ram_idle>]]]" in watts;
// omitted values are zero.
inline SyntheticBackend::Powers parse_synthetic_powers(const std::string& spec) {
  std::vector<double> v;
  std::string rest = spec.substr(spec.find(':') + 1);
  std::size_t pos = 0;
  while (pos <= rest.size()) {
    auto comma = rest.find(',', pos);
    auto field = rest.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
    try {
      std::size_t used = 0;
      v.push_back(std::stod(field, &used));
      if (used != field.size()) throw std::invalid_argument(field);
    } catch (const std::exception&) {
      throw ConfigError("bad synthetic backend spec '" + spec + "'");
    }
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  if (v.empty() || v.size() > 4) throw ConfigError("bad synthetic backend spec '" + spec + "'");
  v.resize(4, 0.0);
  return {v[0], v[1], v[2], v[3]};
}

inline std::unique_ptr<EnergyMeterBackend> make_energy_backend(const std::string& spec,
                                                               std::shared_ptr<Clock> clock) {
  if (spec == "hw") return std::make_unique<PowercapBackend>(std::move(clock));
  if (spec.rfind("replay:", 0) == 0)
    return std::make_unique<ReplayBackend>(ReplayBackend::from_file(spec.substr(7)));
  if (spec.rfind("synthetic:", 0) == 0)
    return std::make_unique<SyntheticBackend>(std::move(clock), parse_synthetic_powers(spec));
  throw ConfigError("unknown backend '" + spec + "' (expected hw, replay:<path> or synthetic:<watts>)");
}

inline std::unique_ptr<MemoryProbe> make_memory_probe(const std::string& spec) {
  if (spec == "proc") return std::make_unique<ProcMemoryProbe>();
  if (spec.rfind("replay:", 0) == 0)
    return std::make_unique<ReplayMemoryProbe>(ReplayMemoryProbe::from_file(spec.substr(7)));
  throw ConfigError("unknown memory backend '" + spec + "' (expected proc or replay:<path>)");
}

namespace detail {

struct PendingProgram {
  std::string target;
  const Problem* problem;
  MeasuredProgram program;
};

inline bool program_complete(const CampaignLog& log, const std::string& ref, int runs) {
  auto e = log.energy.find(ref);
  auto m = log.memory.find(ref);
  return e != log.energy.end() && static_cast<int>(e->second.size()) == runs && m != log.memory.end() &&
         m->second.size() == static_cast<std::size_t>(kMemoryRuns);
}

}  // namespace detail

// Measures the canonical solution and every winning solution of the
// selected models: energy runs for all pending programs first, under the
// randomized schedule, then three memory runs each. Programs already fully
// measured are skipped.
inline MeasureSummary cmd_measure(const CampaignConfig& c, const std::vector<std::string>& targets,
                                  std::ostream& log = std::cerr) {
  c.validate();
  CampaignPaths paths{c.output_dir};
  if (!std::filesystem::exists(paths.generation_log()))
    throw PreconditionError("no generation log at " + paths.generation_log().string() +
                            "; run 'generate' before 'measure'");
  CampaignLock lock(paths.lock_file());
  const auto corpus = load_validated_corpus(c);
  const auto profile = campaign_profile(c);
  auto state = load_campaign_log(c.output_dir);

  std::vector<std::string> selected;
  bool include_canonical = targets.empty();
  std::vector<std::string> model_filter;
  for (const auto& t : targets) {
    if (t == kCanonical)
      include_canonical = true;
    else
      model_filter.push_back(t);
  }
  if (include_canonical) selected.emplace_back(kCanonical);
  if (targets.empty() || !model_filter.empty())
    for (const auto* m : select_models(c, model_filter)) selected.push_back(m->model_id);

  if (c.virtual_clock && c.backend == "hw")
    throw ConfigError("the virtual clock cannot be combined with the hw backend");
  std::shared_ptr<Clock> clock;
  if (c.virtual_clock)
    clock = std::make_shared<VirtualClock>();
  else
    clock = std::make_shared<SteadyClock>();

  // Programs to measure, assembled with their tests.
  MeasureSummary summary;
  std::vector<detail::PendingProgram> pending;
  const auto measure_dir = paths.work_dir() / "measure";
  for (const auto& target : selected) {
    for (const auto& p : corpus.problems) {
      std::string source;
      if (target == kCanonical) {
        source = p.canonical_source;
        auto file = paths.solution(target, p.id);
        if (!std::filesystem::exists(file)) {
          std::filesystem::create_directories(file.parent_path());
          jsonl::write_file_atomic(file, source);
        }
      } else {
        const auto* o = state.outcome(target, p.id);
        if (!o || !o->solved()) continue;
        if (!o->winning_source)
          throw PreconditionError("solution file missing for (" + target + ", " + p.id + ")");
        source = *o->winning_source;
      }
      ++summary.programs;
      const auto ref = program_ref(target, p.id);
      if (detail::program_complete(state, ref, c.measurement.runs_per_program)) {
        ++summary.skipped;
        continue;
      }
      const auto& ic = c.interpreter(p.interpreter_ref);
      auto path = measure_dir / (file_safe(target) + "__" + file_safe(p.id) + ".guest");
      write_program_file(path, assemble_program(source, p.tests, ic.comment_prefix));
      pending.push_back({target, &p, {ref, path}});
    }
  }

  // Partial records of pending programs are discarded and remeasured.
  for (const auto& pp : pending) {
    state.energy.erase(pp.program.program_ref);
    state.memory.erase(pp.program.program_ref);
  }

  auto write_logs = [&] {
    std::vector<Json> energy, memory;
    for (const auto& [ref, runs] : state.energy) {
      auto sorted = runs;
      std::sort(sorted.begin(), sorted.end(), [](auto& a, auto& b) { return a.run_index < b.run_index; });
      for (const auto& r : sorted) energy.push_back(to_json(r));
    }
    for (const auto& [ref, runs] : state.memory) {
      auto sorted = runs;
      std::sort(sorted.begin(), sorted.end(), [](auto& a, auto& b) { return a.run_index < b.run_index; });
      for (const auto& r : sorted) memory.push_back(to_json(r));
    }
    write_log(paths.energy_log(), profile, energy);
    write_log(paths.memory_log(), profile, memory);
  };

  if (pending.empty()) {
    log << "all " << summary.programs << " program(s) already measured\n";
    return summary;
  }

  auto meter = make_energy_backend(c.backend, clock);
  auto probe = make_memory_probe(c.memory_backend);

  // Energy, grouped by interpreter since each group shares one execution spec.
  std::map<std::string, std::vector<std::size_t>> by_interp;
  for (std::size_t i = 0; i < pending.size(); ++i) by_interp[pending[i].problem->interpreter_ref].push_back(i);
  std::set<std::string> failed;
  std::ofstream schedule(paths.schedule_log(), std::ios::app | std::ios::binary);
  for (const auto& [ref, indices] : by_interp) {
    std::vector<MeasuredProgram> programs;
    for (auto i : indices) programs.push_back(pending[i].program);
    auto spec = execution_spec(c, c.interpreter(ref), false);
    auto result = measure_energy_campaign(programs, *meter, spec, c.measurement, *clock);
    for (const auto& ev : result.schedule) {
      Json j{{"event", std::string(to_string(ev.kind))},
             {"program_ref", ev.program_ref},
             {"run_index", ev.run_index},
             {"start_s", ev.start_s},
             {"end_s", ev.end_s}};
      schedule << jsonl::dump(j) << '\n';
    }
    for (const auto& m : result.measurements) {
      if (m.aborted) {
        failed.insert(m.program_ref);
        log << "energy measurement of " << m.program_ref << " aborted: " << *m.aborted << "\n";
        continue;
      }
      auto& runs = state.energy[m.program_ref];
      for (const auto& r : m.runs)
        runs.push_back(make_energy_record(m.program_ref, r, m.baseline_used, c.measurement.negative_energy_policy));
    }
  }

  // Memory runs, serial, in a fixed order.
  std::filesystem::create_directories(paths.traces_dir());
  for (const auto& pp : pending) {
    const auto& ref = pp.program.program_ref;
    if (failed.count(ref)) continue;
    auto spec = execution_spec(c, c.interpreter(pp.problem->interpreter_ref), false);
    std::vector<MemoryRecord> recs;
    for (int run = 1; run <= kMemoryRuns; ++run) {
      auto mr = probe->measure(pp.program.path, spec, c.memory_interval_s, run);
      if (mr.verdict != Verdict::Pass) {
        failed.insert(ref);
        log << "memory run " << run << " of " << ref << " ended with " << to_string(mr.verdict) << "\n";
        break;
      }
      const std::string name = file_safe(pp.target) + "__" + file_safe(pp.problem->id) + "__" +
                               std::to_string(run) + ".dat";
      jsonl::write_file_atomic(paths.traces_dir() / name, format_trace_file(ref, mr.trace));
      recs.push_back({ref, run, mem_seconds(mr.trace), mr.trace.samples.size(), "traces/" + name});
    }
    if (failed.count(ref)) {
      state.energy.erase(ref);
      continue;
    }
    state.memory[ref] = std::move(recs);
  }

  write_logs();
  summary.failed = failed.size();
  summary.measured = pending.size() - failed.size();
  log << summary.measured << " program(s) measured, " << summary.skipped << " already complete";
  if (summary.failed) log << ", " << summary.failed << " failed";
  log << "\n";
  return summary;
}

// ---------------------------------------------------------------------------
// report

struct BenchmarkSet {
  std::string name;
  std::vector<std::string> model_ids;
  std::vector<std::string> problem_ids;
};

inline Json to_json(const BenchmarkSet& s) {
  return Json{{"name", s.name}, {"models", s.model_ids}, {"problem_ids", s.problem_ids}};
}

inline BenchmarkSet benchmark_set_from_json(const Json& j) {
  return {j.at("name").get<std::string>(), j.at("models").get<std::vector<std::string>>(),
          j.at("problem_ids").get<std::vector<std::string>>()};
}

inline constexpr std::string_view kDefaultBenchmarkSet = "all";

// Loads the frozen set, or computes the common subset and freezes it.
inline BenchmarkSet resolve_benchmark_set(const CampaignConfig& c, const CampaignLog& log, const Corpus& corpus,
                                          const std::string& name) {
  CampaignPaths paths{c.output_dir};
  auto file = paths.benchmark_sets_dir() / (file_safe(name) + ".json");
  if (std::filesystem::exists(file)) return benchmark_set_from_json(Json::parse(jsonl::read_text(file)));

  BenchmarkSet set;
  set.name = name;
  if (auto it = c.benchmark_sets.find(name); it != c.benchmark_sets.end())
    set.model_ids = it->second;
  else if (name == kDefaultBenchmarkSet)
    for (const auto& m : c.models) set.model_ids.push_back(m.model_id);
  else
    throw ConfigError("unknown benchmark set '" + name + "'");
  if (set.model_ids.empty()) throw ConfigError("benchmark set '" + name + "' has no models");
  std::vector<std::string> ids;
  for (const auto& p : corpus.problems) ids.push_back(p.id);
  set.problem_ids = common_subset(log, set.model_ids, ids);
  std::filesystem::create_directories(file.parent_path());
  jsonl::write_file_atomic(file, to_json(set).dump(2) + "\n");
  return set;
}

inline ReportData build_report(const CampaignConfig& c, const CampaignLog& log, const Corpus& corpus,
                               const BenchmarkSet& set) {
  std::vector<ModelSpec> models;
  for (const auto& id : set.model_ids) {
    const auto* m = c.model(id);
    if (!m) throw ConfigError("benchmark set " + set.name + " names unknown model " + id);
    models.push_back(*m);
  }
  if (set.problem_ids.empty())
    throw PreconditionError("benchmark set " + set.name + " is empty: no problem is solved by all its models");
  std::vector<std::string> all_ids;
  for (const auto& p : corpus.problems) all_ids.push_back(p.id);

  ReportData d;
  d.benchmark_set = set.name;
  d.problem_ids = set.problem_ids;
  d.profile = log.profile;
  d.pass_rates = pass_rate_rows(log, models, all_ids);
  d.aggregates = aggregate_rows(log, models, set.problem_ids);
  d.relative = relative_rows(d.aggregates);
  d.by_difficulty = breakdown(log, corpus, models, set.problem_ids, Axis::Difficulty);
  d.by_category = breakdown(log, corpus, models, set.problem_ids, Axis::Category);
  return d;
}

// Writes reports/<set>/... and returns the written paths.
inline std::vector<std::filesystem::path> cmd_report(const CampaignConfig& c, const std::string& set_name,
                                                     ReportFormat format, std::ostream& log = std::cerr) {
  c.validate();
  const auto corpus = load_validated_corpus(c);
  const auto state = load_campaign_log(c.output_dir);
  const auto set = resolve_benchmark_set(c, state, corpus, set_name);
  const auto data = build_report(c, state, corpus, set);
  auto dir = CampaignPaths{c.output_dir}.reports_dir() / file_safe(set.name);
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> written;
  for (const auto& f : render_report(data, format)) {
    jsonl::write_file_atomic(dir / f.name, f.content);
    written.push_back(dir / f.name);
  }
  log << "benchmark set " << set.name << ": " << set.problem_ids.size() << " problem(s), "
      << set.model_ids.size() << " model(s); wrote " << written.size() << " file(s) to " << dir.string() << "\n";
  return written;
}

}  // namespace greenbench
