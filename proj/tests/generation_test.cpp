#include <gtest/gtest.h>

#include <deque>
#include <random>

#include "greenbench/clock.hpp"
#include "greenbench/generation.hpp"
#include "helpers/test_util.hpp"

using namespace greenbench;

namespace {

// Classifies sources by marker so no interpreter is needed.
class MarkerRunner final : public ExecutionFacility {
 public:
  SyntaxCheck syntax_check(std::string_view source, std::string_view) override {
    ++syntax_checks;
    if (source.find("SYNTAX") != std::string_view::npos) return {false, "SyntaxError: bad"};
    if (source.find("PASS") == std::string_view::npos && source.find("FAIL") == std::string_view::npos &&
        source.find("SLOW") == std::string_view::npos)
      return {false, "not a program"};
    return {};
  }
  ExecutionResult run(std::string_view program, std::string_view) override {
    ++runs;
    last_program = std::string(program);
    ExecutionResult r;
    if (program.find("PASS") != std::string_view::npos) {
      r.verdict = Verdict::Pass;
    } else if (program.find("SLOW") != std::string_view::npos) {
      r.verdict = Verdict::Timeout;
      r.duration_ms = 120000;
    } else {
      r.verdict = Verdict::TestFailure;
      r.stderr_excerpt = "AssertionError: expected 3";
    }
    return r;
  }
  int syntax_checks = 0;
  int runs = 0;
  std::string last_program;
};

// Serves completions in order and records prompts.
class QueueClient final : public ProviderClient {
 public:
  Completion send(const std::string& prompt, double temperature, const std::string& model) override {
    prompts.push_back(prompt);
    temperatures.push_back(temperature);
    models.push_back(model);
    if (!failures.empty() && failures.front() > 0) {
      --failures.front();
      throw TransportError("connection reset");
    }
    if (!failures.empty()) failures.pop_front();
    if (queue.empty()) return always;
    auto c = queue.front();
    queue.pop_front();
    return c;
  }
  std::deque<Completion> queue;
  Completion always;
  std::deque<int> failures;  // transport failures before each answer
  std::vector<std::string> prompts;
  std::vector<double> temperatures;
  std::vector<std::string> models;
};

Completion fenced(const std::string& body, std::int64_t in, std::int64_t out) {
  return {"Sure:\n```python\n" + body + "\n```\n", in, out};
}

Problem sample_problem() {
  return testutil::make_problem("add-one", "Easy", {"DP"}, "def f(x):\n    return x + 1\n",
                                {"assert f(1) == 2", "assert f(5) == 6"});
}

ModelSpec model(double in = 1.0, double out = 2.0) {
  ModelSpec m;
  m.model_id = "test-model";
  m.provider = "test";
  m.price_in_usd_per_M = in;
  m.price_out_usd_per_M = out;
  m.temperature = 0.7;
  return m;
}

GenerationOptions fast_options() {
  GenerationOptions o;
  o.retry.initial_backoff = std::chrono::milliseconds(500);
  return o;
}

}  // namespace

// ---------------------------------------------------------------------------
// Prompts

TEST(Prompt, DeterministicAndContainsBodyVerbatim) {
  auto corpus = load_corpus(testutil::sample_corpus());
  for (const auto& p : corpus.problems) {
    auto a = build_prompt(p);
    EXPECT_EQ(a, build_prompt(p));
    EXPECT_NE(a.find(p.prompt_body), std::string::npos);
    EXPECT_NE(a.find(p.title), std::string::npos);
  }
  EXPECT_NE(build_prompt(corpus.problems[0]), build_prompt(corpus.problems[1]));
  // Constraint text of a sample problem survives verbatim.
  const auto* stairs = corpus.find("climbing-stairs");
  ASSERT_NE(stairs, nullptr);
  EXPECT_NE(build_prompt(*stairs).find("Constraints: 1 <= n <= 45."), std::string::npos);
}

TEST(Prompt, RegenerationContainsBaseSourceAndErrorInOrder) {
  auto p = sample_problem();
  auto base = build_prompt(p);
  auto regen = build_regeneration_prompt(p, "def f(x):\n    return x\n", "AssertionError: injected-marker");
  EXPECT_EQ(regen.rfind(base, 0), 0u);
  auto src = regen.find("return x\n");
  auto err = regen.find("injected-marker");
  ASSERT_NE(src, std::string::npos);
  ASSERT_NE(err, std::string::npos);
  EXPECT_LT(base.size(), src);
  EXPECT_LT(src, err);
  EXPECT_GT(regen.size(), base.size());
  auto empty_error = build_regeneration_prompt(p, "x", "");
  EXPECT_NE(empty_error.find("# Execution error:\n```\n\n```"), std::string::npos);
}

// ---------------------------------------------------------------------------
// Extraction

TEST(ExtractCode, FirstFencedBlockWins) {
  EXPECT_EQ(extract_code("Here:\n```python\nprint(1)\n```\n"), "print(1)\n");
  EXPECT_EQ(extract_code("```\na = 1\n```\ntext\n```python\nb = 2\n```"), "a = 1\n");
  EXPECT_EQ(extract_code("```py\nx\n```"), "x\n");
}

TEST(ExtractCode, UnfencedTextMustParse) {
  auto parses = [](std::string_view s) { return s.find("def ") != std::string_view::npos; };
  EXPECT_EQ(extract_code("def f():\n    return 1\n", parses), "def f():\n    return 1\n");
  EXPECT_FALSE(extract_code("I am sorry, I cannot help.", parses));
  EXPECT_FALSE(extract_code("   \n", parses));
  EXPECT_FALSE(extract_code("def f(): pass"));  // no parser given
}

TEST(ExtractCode, UnterminatedFenceTakesTheRest) {
  EXPECT_EQ(extract_code("```python\nx = 1\ny = 2\n"), "x = 1\ny = 2\n");
}

TEST(CapExcerpt, KeepsTheTailOnCharacterBoundaries) {
  EXPECT_EQ(cap_excerpt("short", 4096), "short");
  std::string long_text(5000, 'a');
  long_text += "TAIL";
  auto capped = cap_excerpt(long_text, 4096);
  EXPECT_EQ(capped.size(), 4096u);
  EXPECT_EQ(capped.substr(4092), "TAIL");
  // "é" is two bytes; a cut in its middle drops the orphaned continuation byte.
  auto cut = cap_excerpt("\xC3\xA9xyz", 4);
  EXPECT_EQ(cut, "xyz");
}

// ---------------------------------------------------------------------------
// Generation loop

TEST(GenerationLoop, CorrectImmediately) {
  MarkerRunner runner;
  QueueClient client;
  client.queue = {fenced("# PASS", 100, 40)};
  VirtualClock clock;
  auto p = sample_problem();
  auto o = run_generation_loop(p, model(), client, runner, fast_options(), clock);
  EXPECT_EQ(o.pass_at, 1);
  ASSERT_EQ(o.attempts.size(), 1u);
  EXPECT_EQ(o.total_input_tokens, 100);
  EXPECT_EQ(o.total_output_tokens, 40);
  EXPECT_EQ(o.winning_source, "# PASS\n");
  EXPECT_EQ(client.temperatures[0], 0.7);
  EXPECT_EQ(client.models[0], "test-model");
  // Tests are appended before running.
  EXPECT_NE(runner.last_program.find("assert f(5) == 6"), std::string::npos);
}

TEST(GenerationLoop, TwoFailuresThenSuccess) {
  MarkerRunner runner;
  QueueClient client;
  client.queue = {fenced("# SYNTAX", 100, 40), fenced("# FAIL", 150, 45), fenced("# PASS", 210, 50),
                  fenced("# PASS never requested", 999, 999)};
  VirtualClock clock;
  auto p = sample_problem();
  auto o = run_generation_loop(p, model(), client, runner, fast_options(), clock);
  EXPECT_EQ(o.pass_at, 3);
  ASSERT_EQ(o.attempts.size(), 3u);
  EXPECT_EQ(o.attempts[0].verdict, Verdict::CompileError);
  EXPECT_EQ(o.attempts[1].verdict, Verdict::TestFailure);
  EXPECT_EQ(o.attempts[2].verdict, Verdict::Pass);
  EXPECT_EQ(o.total_input_tokens, 100 + 150 + 210);
  EXPECT_EQ(o.total_output_tokens, 40 + 45 + 50);
  // Regeneration prompts carry the previous source and its error.
  ASSERT_EQ(client.prompts.size(), 3u);
  EXPECT_EQ(client.prompts[0], build_prompt(p));
  EXPECT_NE(client.prompts[1].find("# SYNTAX"), std::string::npos);
  EXPECT_NE(client.prompts[1].find("SyntaxError: bad"), std::string::npos);
  EXPECT_NE(client.prompts[2].find("# FAIL"), std::string::npos);
  EXPECT_NE(client.prompts[2].find("AssertionError: expected 3"), std::string::npos);
}

TEST(GenerationLoop, AlwaysWrongStopsAfterTwentyFiveAttempts) {
  MarkerRunner runner;
  QueueClient client;
  client.always = fenced("# FAIL", 10, 3);
  VirtualClock clock;
  auto o = run_generation_loop(sample_problem(), model(), client, runner, fast_options(), clock);
  EXPECT_FALSE(o.pass_at);
  EXPECT_FALSE(o.solved());
  EXPECT_EQ(o.attempts.size(), 25u);
  EXPECT_EQ(client.prompts.size(), 25u);
  EXPECT_EQ(o.total_input_tokens, 250);
  EXPECT_EQ(o.total_output_tokens, 75);
  EXPECT_FALSE(o.winning_source);
}

TEST(GenerationLoop, ExtractionFailureAndTimeoutAreRegenerationWorthy) {
  MarkerRunner runner;
  QueueClient client;
  client.queue = {{"I cannot do that.", 20, 5}, fenced("# SLOW", 30, 6), fenced("# PASS", 40, 7)};
  VirtualClock clock;
  auto o = run_generation_loop(sample_problem(), model(), client, runner, fast_options(), clock);
  ASSERT_EQ(o.attempts.size(), 3u);
  EXPECT_EQ(o.attempts[0].verdict, Verdict::ExtractionFailure);
  EXPECT_FALSE(o.attempts[0].extracted_source);
  EXPECT_EQ(o.attempts[1].verdict, Verdict::Timeout);
  EXPECT_NE(o.attempts[1].error_excerpt.find("timed out"), std::string::npos);
  EXPECT_EQ(o.pass_at, 3);
  // Extraction-failure tokens count toward the totals.
  EXPECT_EQ(o.total_input_tokens, 90);
}

TEST(GenerationLoop, MissingUsageMarksTokensIncomplete) {
  MarkerRunner runner;
  QueueClient client;
  client.queue = {{"```\n# FAIL\n```", std::nullopt, std::nullopt}, fenced("# PASS", 40, 7)};
  VirtualClock clock;
  auto o = run_generation_loop(sample_problem(), model(), client, runner, fast_options(), clock);
  EXPECT_EQ(o.pass_at, 2);
  EXPECT_FALSE(o.tokens_complete);
  EXPECT_FALSE(o.attempts[0].input_tokens);
}

TEST(GenerationLoop, ErrorExcerptIsCapped) {
  class NoisyRunner final : public ExecutionFacility {
   public:
    SyntaxCheck syntax_check(std::string_view, std::string_view) override { return {}; }
    ExecutionResult run(std::string_view program, std::string_view) override {
      ExecutionResult r;
      r.verdict = program.find("PASS") != std::string_view::npos ? Verdict::Pass : Verdict::TestFailure;
      r.stderr_excerpt = std::string(10000, 'e') + "LAST";
      return r;
    }
  } runner;
  QueueClient client;
  client.queue = {fenced("# FAIL", 1, 1), fenced("# PASS", 1, 1)};
  VirtualClock clock;
  auto o = run_generation_loop(sample_problem(), model(), client, runner, fast_options(), clock);
  EXPECT_EQ(o.attempts[0].error_excerpt.size(), 4096u);
  EXPECT_EQ(o.attempts[0].error_excerpt.substr(4092), "LAST");
}

TEST(GenerationLoop, TransportFailuresAreRetriedWithBackoff) {
  MarkerRunner runner;
  QueueClient client;
  client.failures = {3};
  client.queue = {fenced("# PASS", 5, 5)};
  VirtualClock clock;
  const auto before = clock.now();
  auto o = run_generation_loop(sample_problem(), model(), client, runner, fast_options(), clock);
  EXPECT_EQ(o.pass_at, 1);
  EXPECT_FALSE(o.harness_error);
  EXPECT_EQ(client.prompts.size(), 4u);
  // 0.5 + 1 + 2 seconds of backoff on the virtual clock.
  EXPECT_NEAR((clock.now() - before).count(), 3.5, 0.25);
}

TEST(GenerationLoop, ExhaustedRetriesYieldHarnessError) {
  MarkerRunner runner;
  QueueClient client;
  client.queue = {fenced("# FAIL", 5, 5)};
  client.failures = {0, 4};
  VirtualClock clock;
  auto o = run_generation_loop(sample_problem(), model(), client, runner, fast_options(), clock);
  ASSERT_TRUE(o.harness_error);
  EXPECT_NE(o.harness_error->find("connection reset"), std::string::npos);
  EXPECT_EQ(o.attempts.size(), 1u);
  EXPECT_FALSE(o.solved());
}

// ---------------------------------------------------------------------------
// Cost and Pass@

TEST(Cost, TableAnchors) {
  EXPECT_NEAR(generation_cost_cents(1411.5, 400.6, model(0.90, 0.90)), 0.163, 0.0005);
  EXPECT_NEAR(generation_cost_cents(1380.3, 229.1, model(2.00, 10.00)), 0.505, 0.0005);
  EXPECT_EQ(generation_cost_cents(0, 0, model(3, 15)), 0.0);
  EXPECT_THROW(generation_cost_cents(-1, 0, model()), PreconditionError);
}

TEST(Cost, ExactOnIntegers) {
  // 1e6 tokens at $1 per M is one dollar.
  EXPECT_EQ(generation_cost_cents(1'000'000, 0, model(1, 0)), 100.0);
  EXPECT_EQ(generation_cost_cents(250'000, 500'000, model(4, 2)), 200.0);
}

TEST(Cost, LinearAndHomogeneous) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> tok(0, 1e5), price(0, 20);
  for (int i = 0; i < 1000; ++i) {
    double a = tok(rng), b = tok(rng), c = tok(rng);
    auto m = model(price(rng), price(rng));
    EXPECT_NEAR(generation_cost_cents(a + b, c, m),
                generation_cost_cents(a, c, m) + generation_cost_cents(b, 0, m), 1e-9);
    auto scaled = model(3 * m.price_in_usd_per_M, 3 * m.price_out_usd_per_M);
    EXPECT_NEAR(generation_cost_cents(a, c, scaled), 3 * generation_cost_cents(a, c, m), 1e-9);
  }
}

namespace {
GenerationOutcome with_pass_at(std::optional<int> k) {
  GenerationOutcome o;
  o.problem_id = "p";
  o.model_id = "m";
  o.pass_at = k;
  return o;
}
}  // namespace

TEST(PassRate, EnumerationExample) {
  std::vector<GenerationOutcome> os{with_pass_at(1), with_pass_at(3), with_pass_at(std::nullopt)};
  EXPECT_DOUBLE_EQ(pass_rate_at_k(os, 1), 1.0 / 3);
  EXPECT_DOUBLE_EQ(pass_rate_at_k(os, 10), 2.0 / 3);
  EXPECT_DOUBLE_EQ(pass_rate_at_k(os, 25), 2.0 / 3);
  std::vector<GenerationOutcome> all_one{with_pass_at(1), with_pass_at(1)};
  EXPECT_DOUBLE_EQ(pass_rate_at_k(all_one, 1), 1.0);
  EXPECT_THROW(pass_rate_at_k(std::vector<GenerationOutcome>{}, 1), PreconditionError);
  EXPECT_THROW(pass_rate_at_k(os, 0), PreconditionError);
}

TEST(PassRate, AveragePassAt) {
  std::vector<GenerationOutcome> ones{with_pass_at(1), with_pass_at(1), with_pass_at(1)};
  EXPECT_DOUBLE_EQ(avg_pass_at(ones), 1.0);
  std::vector<GenerationOutcome> mixed{with_pass_at(1), with_pass_at(2), with_pass_at(3)};
  EXPECT_DOUBLE_EQ(avg_pass_at(mixed), 2.0);
  std::vector<GenerationOutcome> unsolved{with_pass_at(1), with_pass_at(std::nullopt)};
  EXPECT_THROW(avg_pass_at(unsolved), PreconditionError);
}

// ---------------------------------------------------------------------------
// Log records

TEST(AttemptRecord, JsonFieldsAndRoundTrip) {
  AttemptRecord a;
  a.iteration = 2;
  a.input_tokens = 10;
  a.verdict = Verdict::TestFailure;
  a.error_excerpt = "boom";
  a.extracted_source = "x = 1\n";
  auto j = attempt_to_json("p", "m", a);
  std::vector<std::string> keys;
  for (const auto& [k, v] : j.items()) keys.push_back(k);
  EXPECT_EQ(keys, (std::vector<std::string>{"problem_id", "model_id", "iteration", "input_tokens", "output_tokens",
                                            "verdict", "error_excerpt", "source_digest"}));
  EXPECT_TRUE(j["output_tokens"].is_null());
  EXPECT_EQ(j["source_digest"], sha256_hex("x = 1\n"));
  auto back = attempt_from_json(j);
  EXPECT_EQ(back.iteration, 2);
  EXPECT_EQ(back.input_tokens, 10);
  EXPECT_FALSE(back.output_tokens);
  EXPECT_EQ(back.verdict, Verdict::TestFailure);
  EXPECT_EQ(back.error_excerpt, "boom");
}

TEST(Digest, KnownVector) {
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(ModelSpec, CanonicalIsReserved) {
  auto m = model();
  m.model_id = "canonical";
  EXPECT_THROW(m.validate(), ConfigError);
}
