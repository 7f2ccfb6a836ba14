#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "greenbench/corpus.hpp"
#include "greenbench/jsonl.hpp"
#include "greenbench/parallel.hpp"
#include "greenbench/runner.hpp"

namespace greenbench {

enum class RejectionReason { CanonicalSyntaxError, CanonicalTestFailure, MalformedTests, Timeout };

inline std::string_view to_string(RejectionReason r) {
  switch (r) {
    case RejectionReason::CanonicalSyntaxError: return "canonical_syntax_error";
    case RejectionReason::CanonicalTestFailure: return "canonical_test_failure";
    case RejectionReason::MalformedTests: return "malformed_tests";
    case RejectionReason::Timeout: return "timeout";
  }
  return "?";
}

struct Rejection {
  std::string problem_id;
  RejectionReason reason;
  std::string detail;
};

struct ValidationReport {
  std::vector<std::string> accepted_ids;
  std::vector<Rejection> rejected;
};

// Outcome for one problem: nullopt when accepted.
inline std::optional<Rejection> check_canonical(const Problem& p, ExecutionFacility& runner) {
  const std::string stem = file_safe(p.id) + "__canonical__validate";
  auto syntax = runner.syntax_check(p.canonical_source, stem + ".guest");
  if (!syntax.ok) return Rejection{p.id, RejectionReason::CanonicalSyntaxError, syntax.message};

  auto program = assemble_program(p.canonical_source, p.tests, runner.comment_prefix());
  auto assembled = runner.syntax_check(program, stem + ".assembled.guest");
  if (!assembled.ok) return Rejection{p.id, RejectionReason::MalformedTests, assembled.message};

  auto result = runner.run(program, stem + ".guest");
  switch (result.verdict) {
    case Verdict::Pass: return std::nullopt;
    case Verdict::Timeout: return Rejection{p.id, RejectionReason::Timeout, result.stderr_excerpt};
    default: return Rejection{p.id, RejectionReason::CanonicalTestFailure, result.stderr_excerpt};
  }
}

// Runs every canonical solution against its full test suite and rejects the
// problems whose canonical fails. Harness faults (missing interpreter)
// propagate as exceptions.
inline ValidationReport validate_corpus(const Corpus& corpus, ExecutionFacility& runner,
                                        std::size_t parallelism = 1) {
  std::vector<std::optional<Rejection>> outcomes(corpus.problems.size());
  parallel_for(corpus.problems.size(), parallelism,
               [&](std::size_t i) { outcomes[i] = check_canonical(corpus.problems[i], runner); });
  ValidationReport report;
  for (std::size_t i = 0; i < outcomes.size(); ++i) {
    if (outcomes[i])
      report.rejected.push_back(std::move(*outcomes[i]));
    else
      report.accepted_ids.push_back(corpus.problems[i].id);
  }
  return report;
}

inline Corpus accepted_subset(const Corpus& corpus, const ValidationReport& report) {
  Corpus out;
  out.source_path = corpus.source_path;
  for (const auto& id : report.accepted_ids)
    if (const auto* p = corpus.find(id)) out.problems.push_back(*p);
  return out;
}

inline Json to_json(const ValidationReport& r) {
  Json rejected = Json::array();
  for (const auto& x : r.rejected)
    rejected.push_back({{"id", x.problem_id},
                        {"reason", std::string(to_string(x.reason))},
                        {"detail", x.detail}});
  return Json{{"accepted_ids", r.accepted_ids}, {"rejected", std::move(rejected)}};
}

}  // namespace greenbench
