#pragma once

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "greenbench/clock.hpp"
#include "greenbench/corpus.hpp"
#include "greenbench/digest.hpp"
#include "greenbench/error.hpp"
#include "greenbench/jsonl.hpp"
#include "greenbench/runner.hpp"

namespace greenbench {

// Reserved target name for the human-written reference solutions.
inline constexpr std::string_view kCanonical = "canonical";

struct ModelSpec {
  std::string model_id;
  std::string provider;
  double price_in_usd_per_M = 0;
  double price_out_usd_per_M = 0;
  double temperature = 1.0;
  int max_iterations = 25;

  void validate() const {
    if (model_id.empty()) throw ConfigError("model_id must not be empty");
    if (model_id == kCanonical) throw ConfigError("model_id 'canonical' is reserved");
    if (price_in_usd_per_M < 0 || price_out_usd_per_M < 0)
      throw ConfigError("model " + model_id + ": prices must be non-negative");
    if (max_iterations < 1) throw ConfigError("model " + model_id + ": max_iterations must be >= 1");
  }
};

struct AttemptRecord {
  int iteration = 1;
  std::optional<std::int64_t> input_tokens;  // absent when the provider reported no usage
  std::optional<std::int64_t> output_tokens;
  std::optional<std::string> extracted_source;
  Verdict verdict = Verdict::ExtractionFailure;
  std::string error_excerpt;
};

struct GenerationOutcome {
  std::string problem_id;
  std::string model_id;
  std::vector<AttemptRecord> attempts;
  std::optional<int> pass_at;
  std::int64_t total_input_tokens = 0;
  std::int64_t total_output_tokens = 0;
  // False when any counted attempt lacked provider usage data; such outcomes
  // are left out of token averages.
  bool tokens_complete = true;
  std::optional<std::string> winning_source;
  // Set when the provider could not be reached; distinct from a model failure.
  std::optional<std::string> harness_error;

  bool solved() const { return pass_at.has_value(); }
};

// Recomputes pass_at, token totals and the winning source from `attempts`.
// Attempts after the first Pass are dropped.
inline void finalize_outcome(GenerationOutcome& o) {
  std::sort(o.attempts.begin(), o.attempts.end(),
            [](const AttemptRecord& a, const AttemptRecord& b) { return a.iteration < b.iteration; });
  o.pass_at.reset();
  o.winning_source.reset();
  for (std::size_t i = 0; i < o.attempts.size(); ++i) {
    if (o.attempts[i].verdict == Verdict::Pass) {
      o.pass_at = o.attempts[i].iteration;
      o.winning_source = o.attempts[i].extracted_source;
      o.attempts.resize(i + 1);
      break;
    }
  }
  o.total_input_tokens = o.total_output_tokens = 0;
  o.tokens_complete = true;
  for (const auto& a : o.attempts) {
    if (a.input_tokens && a.output_tokens) {
      o.total_input_tokens += *a.input_tokens;
      o.total_output_tokens += *a.output_tokens;
    } else {
      o.tokens_complete = false;
    }
  }
}

// ---------------------------------------------------------------------------
// Prompts

namespace detail {

inline std::string language_tag(std::string_view interpreter_ref) {
  std::string tag;
  for (char ch : interpreter_ref) {
    if ((ch >= '0' && ch <= '9') || ch == '.' || ch == '-' || ch == '_') break;
    tag += static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  }
  return tag;
}

inline std::string language_name(const std::string& tag) {
  if (tag.empty()) return "the";
  std::string name = tag;
  name[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(name[0])));
  return name;
}

inline void append_fenced(std::string& out, std::string_view tag, std::string_view body) {
  out += "```";
  out += tag;
  out += '\n';
  out += body;
  if (body.empty() || body.back() != '\n') out += '\n';
  out += "```\n";
}

}  // namespace detail

// Identical structure for every model: instruction, task description
// (statement, I/O spec, constraints, examples), solution cue.
inline std::string build_prompt(const Problem& problem) {
  const auto tag = detail::language_tag(problem.interpreter_ref);
  std::string out = "Please complete " + detail::language_name(tag) +
                    " code based on the task description. Return the complete solution in a "
                    "single fenced code block.\n";
  out += "# Task description:\n";
  detail::append_fenced(out, tag, problem.title + "\n" + problem.prompt_body);
  out += "# Solution:\n";
  return out;
}

// Original prompt, then the failed solution, then the execution error.
inline std::string build_regeneration_prompt(const Problem& problem, std::string_view previous_source,
                                             std::string_view error_excerpt) {
  const auto tag = detail::language_tag(problem.interpreter_ref);
  std::string out = build_prompt(problem);
  out += "\n# Previous solution:\n";
  detail::append_fenced(out, tag, previous_source);
  out += "# Execution error:\n";
  detail::append_fenced(out, "", error_excerpt);
  out +=
      "# The previous solution is incorrect. Fix it and return the complete corrected solution "
      "in a single fenced code block.\n";
  return out;
}

// Keeps at most `cap` trailing bytes, starting on a UTF-8 boundary.
inline std::string cap_excerpt(std::string_view text, std::size_t cap) {
  if (text.size() <= cap) return std::string(text);
  std::size_t start = text.size() - cap;
  while (start < text.size() && (static_cast<unsigned char>(text[start]) & 0xC0) == 0x80) ++start;
  return std::string(text.substr(start));
}

// Contents of the first fenced block. Without any fence the whole completion
// is accepted when `parses` says it is a valid guest program.
inline std::optional<std::string> extract_code(
    std::string_view completion, const std::function<bool(std::string_view)>& parses = {}) {
  auto open = completion.find("```");
  if (open != std::string_view::npos) {
    auto body_start = completion.find('\n', open);
    if (body_start == std::string_view::npos) return std::nullopt;
    ++body_start;
    std::size_t close = std::string_view::npos;
    if (completion.substr(body_start).rfind("```", 0) == 0)
      close = body_start;
    else if (auto nl = completion.find("\n```", body_start); nl != std::string_view::npos)
      close = nl + 1;
    auto body = close == std::string_view::npos ? completion.substr(body_start)
                                                : completion.substr(body_start, close - body_start);
    if (body.find_first_not_of(" \t\r\n") == std::string_view::npos) return std::nullopt;
    return std::string(body);
  }
  if (completion.find_first_not_of(" \t\r\n") == std::string_view::npos) return std::nullopt;
  if (parses && parses(completion)) return std::string(completion);
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Providers

struct Completion {
  std::string text;
  std::optional<std::int64_t> input_tokens;
  std::optional<std::int64_t> output_tokens;
};

// Provider could not be reached or returned a malformed response. Retryable.
class TransportError : public HarnessError {
 public:
  using HarnessError::HarnessError;
};

class ProviderClient {
 public:
  virtual ~ProviderClient() = default;
  virtual Completion send(const std::string& prompt, double temperature,
                          const std::string& model_id) = 0;
};

struct RetryPolicy {
  int retries = 3;
  std::chrono::milliseconds initial_backoff{500};
  double multiplier = 2.0;
};

// Sends with bounded retries on TransportError; rethrows the last failure.
inline Completion send_with_retry(ProviderClient& client, const std::string& prompt,
                                  double temperature, const std::string& model_id,
                                  const RetryPolicy& policy, Clock& clock) {
  auto backoff = Seconds(policy.initial_backoff);
  for (int attempt = 0;; ++attempt) {
    try {
      return client.send(prompt, temperature, model_id);
    } catch (const TransportError&) {
      if (attempt >= policy.retries) throw;
      clock.sleep_for(backoff);
      backoff *= policy.multiplier;
    }
  }
}

struct GenerationOptions {
  std::size_t error_excerpt_cap = 4096;
  RetryPolicy retry;
};

// Generate, verify, and regenerate until the first passing solution or
// max_iterations attempts.
inline GenerationOutcome run_generation_loop(const Problem& problem, const ModelSpec& model,
                                             ProviderClient& client, ExecutionFacility& runner,
                                             const GenerationOptions& options, Clock& clock) {
  model.validate();
  GenerationOutcome outcome;
  outcome.problem_id = problem.id;
  outcome.model_id = model.model_id;

  const std::string base_prompt = build_prompt(problem);
  std::string previous_source;
  std::string previous_error;

  for (int i = 1; i <= model.max_iterations; ++i) {
    const std::string prompt =
        i == 1 ? base_prompt : build_regeneration_prompt(problem, previous_source, previous_error);
    Completion completion;
    try {
      completion = send_with_retry(client, prompt, model.temperature, model.model_id,
                                   options.retry, clock);
    } catch (const TransportError& e) {
      outcome.harness_error = e.what();
      break;
    }

    AttemptRecord rec;
    rec.iteration = i;
    rec.input_tokens = completion.input_tokens;
    rec.output_tokens = completion.output_tokens;
    const std::string file_name = program_file_name(problem.id, model.model_id, i);

    auto source = extract_code(completion.text, [&](std::string_view text) {
      return runner.syntax_check(text, file_name + ".extract").ok;
    });
    if (!source) {
      rec.verdict = Verdict::ExtractionFailure;
      rec.error_excerpt = "no code block found in the completion";
      previous_source = completion.text;
    } else {
      rec.extracted_source = *source;
      previous_source = *source;
      auto syntax = runner.syntax_check(*source, file_name);
      if (!syntax.ok) {
        rec.verdict = Verdict::CompileError;
        rec.error_excerpt = cap_excerpt(syntax.message, options.error_excerpt_cap);
      } else {
        auto program = assemble_program(*source, problem.tests, runner.comment_prefix());
        auto result = runner.run(program, file_name);
        rec.verdict = classify_result(result, true);
        if (rec.verdict == Verdict::Timeout) {
          rec.error_excerpt = cap_excerpt(
              "execution timed out after " + std::to_string(static_cast<long>(result.duration_ms)) +
                  " ms\n" + result.stderr_excerpt,
              options.error_excerpt_cap);
        } else if (rec.verdict != Verdict::Pass) {
          rec.error_excerpt = cap_excerpt(result.stderr_excerpt, options.error_excerpt_cap);
        }
      }
    }
    previous_error = rec.error_excerpt;
    const bool passed = rec.verdict == Verdict::Pass;
    outcome.attempts.push_back(std::move(rec));
    if (passed) break;
  }
  finalize_outcome(outcome);
  return outcome;
}

// ---------------------------------------------------------------------------
// Cost and Pass@ metrics

// (in x price_in + out x price_out) / 1e6 dollars, in cents. Token arguments
// may be averages, hence floating point; integer inputs are exact.
inline double generation_cost_cents(double input_tokens, double output_tokens,
                                    const ModelSpec& model) {
  if (input_tokens < 0 || output_tokens < 0) throw PreconditionError("token counts must be >= 0");
  long double dollars_times_1e6 =
      static_cast<long double>(input_tokens) * static_cast<long double>(model.price_in_usd_per_M) +
      static_cast<long double>(output_tokens) * static_cast<long double>(model.price_out_usd_per_M);
  return static_cast<double>(dollars_times_1e6 / 10000.0L);
}

// Share of problems solved within k attempts.
inline double pass_rate_at_k(std::span<const GenerationOutcome> outcomes, int k) {
  if (outcomes.empty()) throw PreconditionError("pass_rate_at_k: no outcomes");
  if (k < 1) throw PreconditionError("pass_rate_at_k: k must be >= 1");
  std::size_t hits = 0;
  for (const auto& o : outcomes)
    if (o.pass_at && *o.pass_at <= k) ++hits;
  return static_cast<double>(hits) / static_cast<double>(outcomes.size());
}

inline double avg_pass_at(std::span<const GenerationOutcome> outcomes) {
  if (outcomes.empty()) throw PreconditionError("avg_pass_at: no outcomes");
  double sum = 0;
  for (const auto& o : outcomes) {
    if (!o.pass_at)
      throw PreconditionError("avg_pass_at: problem " + o.problem_id + " unsolved by " + o.model_id);
    sum += *o.pass_at;
  }
  return sum / static_cast<double>(outcomes.size());
}

// ---------------------------------------------------------------------------
// Generation log records

inline Json attempt_to_json(const std::string& problem_id, const std::string& model_id,
                            const AttemptRecord& a) {
  Json j;
  j["problem_id"] = problem_id;
  j["model_id"] = model_id;
  j["iteration"] = a.iteration;
  j["input_tokens"] = a.input_tokens ? Json(*a.input_tokens) : Json(nullptr);
  j["output_tokens"] = a.output_tokens ? Json(*a.output_tokens) : Json(nullptr);
  j["verdict"] = std::string(to_string(a.verdict));
  j["error_excerpt"] = a.error_excerpt;
  j["source_digest"] = a.extracted_source ? Json(sha256_hex(*a.extracted_source)) : Json(nullptr);
  return j;
}

// Reads back an attempt record. The extracted source itself is not in the
// log; only its digest is.
inline AttemptRecord attempt_from_json(const Json& j) {
  AttemptRecord a;
  a.iteration = j.at("iteration").get<int>();
  if (!j.at("input_tokens").is_null()) a.input_tokens = j.at("input_tokens").get<std::int64_t>();
  if (!j.at("output_tokens").is_null()) a.output_tokens = j.at("output_tokens").get<std::int64_t>();
  auto v = parse_verdict(j.at("verdict").get<std::string>());
  if (!v) throw HarnessError("unknown verdict " + j.at("verdict").dump());
  a.verdict = *v;
  a.error_excerpt = j.at("error_excerpt").get<std::string>();
  return a;
}

}  // namespace greenbench
