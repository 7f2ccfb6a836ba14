#include <CLI11.hpp>

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "greenbench/campaign.hpp"

namespace {

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (pos <= s.size()) {
    auto comma = s.find(',', pos);
    auto item = s.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
    if (!item.empty()) out.push_back(item);
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  return out;
}

struct Overrides {
  std::string config_path;
  std::string models;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> backend;
  std::optional<std::string> memory_backend;
  std::optional<std::string> output_dir;
  std::optional<std::size_t> parallelism;
  bool virtual_clock = false;
  std::string benchmark_set{greenbench::kDefaultBenchmarkSet};
  std::string format = "markdown";
  std::string targets;
};

greenbench::CampaignConfig load(const Overrides& o) {
  auto c = greenbench::load_campaign_config(o.config_path);
  // Flags take precedence over the file.
  if (o.seed) c.measurement.rng_seed = *o.seed;
  if (o.backend) {
    c.backend = *o.backend;
    if (c.backend.rfind("replay:", 0) == 0)
      c.backend = "replay:" + std::filesystem::absolute(c.backend.substr(7)).string();
  }
  if (o.memory_backend) {
    c.memory_backend = *o.memory_backend;
    if (c.memory_backend.rfind("replay:", 0) == 0)
      c.memory_backend = "replay:" + std::filesystem::absolute(c.memory_backend.substr(7)).string();
  }
  if (o.output_dir) c.output_dir = std::filesystem::absolute(*o.output_dir);
  if (o.parallelism) c.parallelism = *o.parallelism;
  if (o.virtual_clock) c.virtual_clock = true;
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Measure the energy, runtime and memory cost of generated code against canonical solutions"};
  app.require_subcommand(1);
  Overrides o;
  app.add_option("--config", o.config_path, "Campaign configuration file")->required()->check(CLI::ExistingFile);
  app.add_option("--output-dir", o.output_dir, "Override the campaign output directory");

  auto* corpus = app.add_subcommand("corpus", "Corpus operations");
  corpus->require_subcommand(1);
  auto* validate = corpus->add_subcommand("validate", "Run every canonical solution and write the accepted subset");
  validate->add_option("--parallelism", o.parallelism, "Concurrent validation workers");

  auto* generate = app.add_subcommand("generate", "Generate solutions with the regeneration loop");
  generate->add_option("--models", o.models, "Comma-separated model ids (default: all configured)");
  generate->add_option("--parallelism", o.parallelism, "Concurrent (model, problem) pairs");

  auto* measure = app.add_subcommand("measure", "Measure energy and memory of canonical and generated solutions");
  measure->add_option("--models", o.targets, "Comma-separated targets: 'canonical' and/or model ids (default: all)");
  measure->add_option("--seed", o.seed, "Seed of the randomized run order");
  measure->add_option("--backend", o.backend, "hw | replay:<path> | synthetic:<pkg_w>[,<ram_w>[,<pkg_idle_w>[,<ram_idle_w>]]]");
  measure->add_option("--memory-backend", o.memory_backend, "proc | replay:<path>");
  measure->add_flag("--virtual-clock", o.virtual_clock,
                    "Skip baseline and cooldown waits (replay and synthetic backends only)");

  auto* report = app.add_subcommand("report", "Render pass-rate, aggregate, relative and breakdown tables");
  report->add_option("--benchmark-set", o.benchmark_set, "Named benchmark set (default: all models)");
  report->add_option("--format", o.format, "Output format")
      ->check(CLI::IsMember({"csv", "markdown", "structured"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? greenbench::kExitOk : greenbench::kExitUsage;
  }

  try {
    auto config = load(o);
    if (validate->parsed()) {
      greenbench::cmd_corpus_validate(config);
      return greenbench::kExitOk;
    }
    if (generate->parsed()) return greenbench::cmd_generate(config, split_csv(o.models)).exit_code();
    if (measure->parsed()) return greenbench::cmd_measure(config, split_csv(o.targets)).exit_code();
    if (report->parsed()) {
      greenbench::cmd_report(config, o.benchmark_set, greenbench::parse_report_format(o.format));
      return greenbench::kExitOk;
    }
  } catch (const greenbench::Error& e) {
    std::cerr << "greenbench: " << e.what() << "\n";
    return greenbench::kExitError;
  } catch (const std::exception& e) {
    std::cerr << "greenbench: unexpected error: " << e.what() << "\n";
    return greenbench::kExitError;
  }
  return greenbench::kExitUsage;
}
