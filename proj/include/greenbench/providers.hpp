#pragma once

#include <cctype>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <random>
#include <string>
#include <utility>
#include <vector>

#ifndef CPPHTTPLIB_OPENSSL_SUPPORT
#define CPPHTTPLIB_OPENSSL_SUPPORT
#endif
#include <httplib.h>

#include "greenbench/corpus.hpp"
#include "greenbench/digest.hpp"
#include "greenbench/error.hpp"
#include "greenbench/generation.hpp"
#include "greenbench/jsonl.hpp"

namespace greenbench {

// GREENBENCH_<PROVIDER>_API_KEY, with the provider key upper-cased and
// non-alphanumerics mapped to '_'.
inline std::string credential_env_var(std::string_view provider) {
  std::string name = "GREENBENCH_";
  for (char ch : provider) {
    auto u = static_cast<unsigned char>(ch);
    name += std::isalnum(u) ? static_cast<char>(std::toupper(u)) : '_';
  }
  return name + "_API_KEY";
}

inline std::string require_credential(std::string_view provider) {
  auto var = credential_env_var(provider);
  const char* value = std::getenv(var.c_str());
  if (!value || !*value)
    throw ConfigError("missing credential for provider '" + std::string(provider) + "': set " + var);
  return value;
}

// Maps a received prompt back to its problem: every prompt, first or
// regeneration, starts with the problem's base prompt.
class PromptIndex {
 public:
  explicit PromptIndex(const Corpus& corpus) {
    for (const auto& p : corpus.problems) entries_.emplace_back(build_prompt(p), &p);
    // Longest first so a prompt that is a prefix of another never shadows it.
    std::sort(entries_.begin(), entries_.end(),
              [](const auto& a, const auto& b) { return a.first.size() > b.first.size(); });
  }

  const Problem* lookup(const std::string& prompt) const {
    for (const auto& [base, problem] : entries_)
      if (prompt.compare(0, base.size(), base) == 0) return problem;
    return nullptr;
  }

 private:
  std::vector<std::pair<std::string, const Problem*>> entries_;
};

// Replays scripted completions per (model, problem). Script document:
//   { "<model_id>": { "<problem_id>": [ {"completion": "...",
//       "input_tokens": 10, "output_tokens": 5}, {"transport_error": "..."} ] } }
// Token fields may be omitted to simulate missing usage data. When a script is
// exhausted its last entry repeats.
class ScriptedClient final : public ProviderClient {
 public:
  ScriptedClient(const Corpus& corpus, Json script) : index_(corpus), script_(std::move(script)) {}

  static Json load_script(const std::filesystem::path& path) {
    try {
      return Json::parse(jsonl::read_text(path));
    } catch (const Json::parse_error& e) {
      throw ConfigError("invalid script " + path.string() + ": " + e.what());
    }
  }

  Completion send(const std::string& prompt, double, const std::string& model_id) override {
    const Problem* problem = index_.lookup(prompt);
    if (!problem) throw HarnessError("scripted client: prompt matches no problem");
    auto model_it = script_.find(model_id);
    if (model_it == script_.end()) throw HarnessError("scripted client: no script for " + model_id);
    auto steps_it = model_it->find(problem->id);
    if (steps_it == model_it->end() || !steps_it->is_array() || steps_it->empty())
      throw HarnessError("scripted client: no script for " + model_id + "/" + problem->id);

    std::size_t step;
    {
      std::lock_guard lock(mu_);
      step = calls_[{model_id, problem->id}]++;
    }
    const Json& entry = (*steps_it)[std::min(step, steps_it->size() - 1)];
    if (auto err = entry.find("transport_error"); err != entry.end())
      throw TransportError(err->get<std::string>());
    Completion c;
    c.text = entry.value("completion", std::string());
    if (entry.contains("input_tokens")) c.input_tokens = entry.at("input_tokens").get<std::int64_t>();
    if (entry.contains("output_tokens"))
      c.output_tokens = entry.at("output_tokens").get<std::int64_t>();
    return c;
  }

  std::size_t calls() const {
    std::lock_guard lock(mu_);
    std::size_t n = 0;
    for (const auto& [key, count] : calls_) n += count;
    return n;
  }

 private:
  PromptIndex index_;
  Json script_;
  mutable std::mutex mu_;
  std::map<std::pair<std::string, std::string>, std::size_t> calls_;
};

// Deterministic stand-in for a live model: answers with the canonical
// solution with probability `p_correct`, otherwise with a program that does
// not compile. Each answer depends only on (seed, model, problem, attempt),
// so results do not depend on thread scheduling. Token counts are a fixed
// function of text length.
class SeededMockClient final : public ProviderClient {
 public:
  SeededMockClient(const Corpus& corpus, std::uint64_t seed, double p_correct)
      : index_(corpus), seed_(seed), p_correct_(p_correct) {}

  Completion send(const std::string& prompt, double, const std::string& model_id) override {
    const Problem* problem = index_.lookup(prompt);
    if (!problem) throw HarnessError("mock client: prompt matches no problem");
    std::size_t attempt;
    {
      std::lock_guard lock(mu_);
      attempt = calls_[{model_id, problem->id}]++;
    }
    auto digest = sha256_hex(std::to_string(seed_) + "\n" + model_id + "\n" + problem->id + "\n" +
                             std::to_string(attempt));
    std::mt19937_64 rng(std::stoull(digest.substr(0, 16), nullptr, 16));
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    Completion c;
    if (u < p_correct_)
      c.text = "Here is the solution.\n```\n" + problem->canonical_source + "\n```\n";
    else
      c.text = "Here is the solution.\n```\ndef solve(:\n    return\n```\n";
    c.input_tokens = static_cast<std::int64_t>(prompt.size() / 4);
    c.output_tokens = static_cast<std::int64_t>(c.text.size() / 4);
    return c;
  }

 private:
  PromptIndex index_;
  std::uint64_t seed_;
  double p_correct_;
  std::mutex mu_;
  std::map<std::pair<std::string, std::string>, std::size_t> calls_;
};

// Chat-completions client for OpenAI-compatible endpoints (OpenAI, Fireworks,
// Groq, xAI, Mistral and others expose this shape). Token counts come from the
// response's usage block when present.
class OpenAICompatibleClient final : public ProviderClient {
 public:
  OpenAICompatibleClient(std::string base_url, std::string api_key,
                         std::string path = "/v1/chat/completions",
                         std::chrono::seconds timeout = std::chrono::seconds(300))
      : base_url_(std::move(base_url)),
        api_key_(std::move(api_key)),
        path_(std::move(path)),
        timeout_(timeout) {}

  Completion send(const std::string& prompt, double temperature,
                  const std::string& model_id) override {
    httplib::Client client(base_url_);
    client.set_connection_timeout(std::chrono::seconds(30));
    client.set_read_timeout(timeout_);
    client.set_bearer_token_auth(api_key_);

    Json body{{"model", model_id},
              {"temperature", temperature},
              {"messages", Json::array({Json{{"role", "user"}, {"content", prompt}}})}};
    auto res = client.Post(path_, jsonl::dump(body), "application/json");
    if (!res) throw TransportError("request to " + base_url_ + " failed: " + httplib::to_string(res.error()));
    if (res->status != 200)
      throw TransportError("provider returned HTTP " + std::to_string(res->status) + ": " +
                           res->body.substr(0, 512));
    Json reply;
    try {
      reply = Json::parse(res->body);
    } catch (const Json::parse_error& e) {
      throw TransportError(std::string("malformed provider response: ") + e.what());
    }
    Completion c;
    try {
      const auto& content = reply.at("choices").at(0).at("message").at("content");
      c.text = content.is_string() ? content.get<std::string>() : std::string();
    } catch (const Json::exception& e) {
      throw TransportError(std::string("provider response lacks a completion: ") + e.what());
    }
    if (auto usage = reply.find("usage"); usage != reply.end() && usage->is_object()) {
      if (auto it = usage->find("prompt_tokens"); it != usage->end() && it->is_number_integer())
        c.input_tokens = it->get<std::int64_t>();
      if (auto it = usage->find("completion_tokens"); it != usage->end() && it->is_number_integer())
        c.output_tokens = it->get<std::int64_t>();
    }
    return c;
  }

 private:
  std::string base_url_;
  std::string api_key_;
  std::string path_;
  std::chrono::seconds timeout_;
};

}  // namespace greenbench
