#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "greenbench/campaign_log.hpp"
#include "greenbench/corpus.hpp"
#include "greenbench/error.hpp"
#include "greenbench/generation.hpp"
#include "greenbench/memory.hpp"

namespace greenbench {

// Problems solved by every model in `model_ids`, in the order of `problem_ids`.
inline std::vector<std::string> common_subset(const CampaignLog& log,
                                              std::span<const std::string> model_ids,
                                              std::span<const std::string> problem_ids) {
  if (model_ids.empty()) throw PreconditionError("common_subset: no models given");
  std::vector<std::string> missing;
  std::vector<std::string> subset;
  for (const auto& p : problem_ids) {
    bool all = true;
    for (const auto& m : model_ids) {
      const auto* o = log.outcome(m, p);
      if (!o || o->harness_error) {
        missing.push_back("(" + m + ", " + p + ")");
        all = false;
      } else if (!o->solved()) {
        all = false;
      }
    }
    if (all) subset.push_back(p);
  }
  if (!missing.empty()) {
    std::string msg = "missing generation outcomes for " + std::to_string(missing.size()) + " pair(s):";
    for (const auto& s : missing) msg += " " + s;
    throw PreconditionError(msg);
  }
  return subset;
}

// The five measured quantities of one (target, problem).
struct ProblemMeasurement {
  double pkg_j = 0;
  double ram_j = 0;
  double total_j = 0;
  double runtime_ms = 0;
  double mem_mbs = 0;
};

// Per-problem averages: energy and runtime over the logged energy runs, memory
// as the three-run mean. Absent when either log lacks the program.
inline std::optional<ProblemMeasurement> problem_measurement(const CampaignLog& log,
                                                             const std::string& target,
                                                             const std::string& problem_id) {
  const auto ref = program_ref(target, problem_id);
  auto e = log.energy.find(ref);
  auto m = log.memory.find(ref);
  if (e == log.energy.end() || e->second.empty() || m == log.memory.end() ||
      m->second.size() != static_cast<std::size_t>(kMemoryRuns))
    return std::nullopt;
  ProblemMeasurement pm;
  for (const auto& r : e->second) {
    pm.pkg_j += r.adj_pkg_j;
    pm.ram_j += r.adj_ram_j;
    pm.total_j += r.adj_total_j;
    pm.runtime_ms += r.duration_ms;
  }
  const double n = static_cast<double>(e->second.size());
  pm.pkg_j /= n;
  pm.ram_j /= n;
  pm.total_j /= n;
  pm.runtime_ms /= n;
  std::vector<double> mem;
  for (const auto& r : m->second) mem.push_back(r.mem_mbs);
  pm.mem_mbs = final_memory(std::span<const double>(mem));
  return pm;
}

struct AggregateRow {
  std::string model_id;
  // Generation columns; absent for the canonical row.
  std::optional<double> avg_cost_cents;
  std::optional<double> avg_input_tokens;
  std::optional<double> avg_output_tokens;
  std::optional<double> avg_pass_at;
  std::optional<double> avg_pkg_j;
  std::optional<double> avg_ram_j;
  std::optional<double> avg_total_j;
  std::optional<double> avg_runtime_ms;
  std::optional<double> avg_mem_mbs;
  std::size_t n_problems = 0;
  // Problems whose token counts were fully reported by the provider; token
  // and cost averages are taken over these only.
  std::size_t n_token_problems = 0;

  bool is_canonical() const { return model_id == kCanonical; }
};

namespace detail {

inline void require_coverage(const CampaignLog& log, std::span<const ModelSpec> models,
                             std::span<const std::string> problems) {
  std::vector<std::string> missing;
  auto check = [&](const std::string& target, const std::string& p) {
    if (!problem_measurement(log, target, p)) missing.push_back("(" + target + ", " + p + ")");
  };
  for (const auto& p : problems) {
    check(std::string(kCanonical), p);
    for (const auto& m : models) {
      const auto* o = log.outcome(m.model_id, p);
      if (!o || !o->solved()) {
        missing.push_back("(" + m.model_id + ", " + p + ") unsolved");
        continue;
      }
      check(m.model_id, p);
    }
  }
  if (!missing.empty()) {
    std::string msg = "incomplete measurement coverage, " + std::to_string(missing.size()) + " missing:";
    for (const auto& s : missing) msg += " " + s;
    throw PreconditionError(msg);
  }
}

// Means over `problems`; absent columns when the set is empty.
inline AggregateRow aggregate_one(const CampaignLog& log, const ModelSpec* model,
                                  std::span<const std::string> problems) {
  AggregateRow row;
  row.model_id = model ? model->model_id : std::string(kCanonical);
  row.n_problems = problems.size();
  if (problems.empty()) return row;

  const std::string target = row.model_id;
  double pkg = 0, ram = 0, total = 0, runtime = 0, mem = 0;
  for (const auto& p : problems) {
    auto pm = problem_measurement(log, target, p);
    if (!pm) throw PreconditionError("no measurements for (" + target + ", " + p + ")");
    pkg += pm->pkg_j;
    ram += pm->ram_j;
    total += pm->total_j;
    runtime += pm->runtime_ms;
    mem += pm->mem_mbs;
  }
  const double n = static_cast<double>(problems.size());
  row.avg_pkg_j = pkg / n;
  row.avg_ram_j = ram / n;
  row.avg_total_j = total / n;
  row.avg_runtime_ms = runtime / n;
  row.avg_mem_mbs = mem / n;

  if (!model) return row;
  double in = 0, out = 0, cost = 0, pass = 0;
  for (const auto& p : problems) {
    const auto* o = log.outcome(model->model_id, p);
    if (!o || !o->pass_at)
      throw PreconditionError("(" + model->model_id + ", " + p + ") is not solved");
    pass += *o->pass_at;
    if (!o->tokens_complete) continue;
    ++row.n_token_problems;
    const auto ti = static_cast<double>(o->total_input_tokens);
    const auto to = static_cast<double>(o->total_output_tokens);
    in += ti;
    out += to;
    cost += generation_cost_cents(ti, to, *model);
  }
  row.avg_pass_at = pass / n;
  if (row.n_token_problems > 0) {
    const double k = static_cast<double>(row.n_token_problems);
    row.avg_input_tokens = in / k;
    row.avg_output_tokens = out / k;
    row.avg_cost_cents = cost / k;
  }
  return row;
}

}  // namespace detail

// The canonical row followed by one row per model, in the given model order.
inline std::vector<AggregateRow> aggregate_rows(const CampaignLog& log, std::span<const ModelSpec> models,
                                                std::span<const std::string> problems) {
  detail::require_coverage(log, models, problems);
  std::vector<AggregateRow> rows;
  rows.push_back(detail::aggregate_one(log, nullptr, problems));
  for (const auto& m : models) rows.push_back(detail::aggregate_one(log, &m, problems));
  return rows;
}

struct RelativeRow {
  std::string model_id;
  double pkg = 0;
  double ram = 0;
  double total = 0;
  double runtime = 0;
  double memory = 0;
};

inline RelativeRow relative_cost(const AggregateRow& model_row, const AggregateRow& canonical_row) {
  auto ratio = [&](const std::optional<double>& v, const std::optional<double>& c, const char* metric) {
    if (!c || !(*c > 0))
      throw PreconditionError(std::string("undefined ratio: canonical ") + metric + " is " +
                              (c ? "not positive" : "absent"));
    if (!v) throw PreconditionError(std::string("undefined ratio: ") + model_row.model_id + " lacks " + metric);
    return *v / *c;
  };
  RelativeRow r;
  r.model_id = model_row.model_id;
  r.pkg = ratio(model_row.avg_pkg_j, canonical_row.avg_pkg_j, "avg_pkg_j");
  r.ram = ratio(model_row.avg_ram_j, canonical_row.avg_ram_j, "avg_ram_j");
  r.total = ratio(model_row.avg_total_j, canonical_row.avg_total_j, "avg_total_j");
  r.runtime = ratio(model_row.avg_runtime_ms, canonical_row.avg_runtime_ms, "avg_runtime_ms");
  r.memory = ratio(model_row.avg_mem_mbs, canonical_row.avg_mem_mbs, "avg_mem_mbs");
  return r;
}

// Relative rows for every non-canonical row against the canonical one.
inline std::vector<RelativeRow> relative_rows(std::span<const AggregateRow> rows) {
  auto canon = std::find_if(rows.begin(), rows.end(), [](const auto& r) { return r.is_canonical(); });
  if (canon == rows.end()) throw PreconditionError("relative costs need a canonical row");
  std::vector<RelativeRow> out;
  for (const auto& r : rows)
    if (!r.is_canonical()) out.push_back(relative_cost(r, *canon));
  return out;
}

enum class Axis { Difficulty, Category };

struct BreakdownTable {
  std::string label;  // difficulty or category name
  std::vector<AggregateRow> rows;
};

// One table per axis value, in the fixed enum order. A problem with several
// category tags contributes to each of them.
inline std::vector<BreakdownTable> breakdown(const CampaignLog& log, const Corpus& corpus,
                                             std::span<const ModelSpec> models,
                                             std::span<const std::string> problems, Axis axis) {
  detail::require_coverage(log, models, problems);
  std::vector<const Problem*> resolved;
  for (const auto& id : problems) {
    const Problem* p = corpus.find(id);
    if (!p) throw PreconditionError("problem " + id + " is not in the corpus");
    resolved.push_back(p);
  }
  auto table_for = [&](std::string label, auto&& matches) {
    std::vector<std::string> cell;
    for (const Problem* p : resolved)
      if (matches(*p)) cell.push_back(p->id);
    BreakdownTable t{std::move(label), {}};
    t.rows.push_back(detail::aggregate_one(log, nullptr, cell));
    for (const auto& m : models) t.rows.push_back(detail::aggregate_one(log, &m, cell));
    return t;
  };
  std::vector<BreakdownTable> out;
  if (axis == Axis::Difficulty) {
    for (auto d : kDifficulties)
      out.push_back(table_for(std::string(to_string(d)), [d](const Problem& p) { return p.difficulty == d; }));
  } else {
    for (auto c : kCategories)
      out.push_back(table_for(std::string(to_string(c)), [c](const Problem& p) { return p.has_tag(c); }));
  }
  return out;
}

// Generation quality over the whole validated corpus (not a benchmark set).
struct PassRateRow {
  std::string model_id;
  std::size_t n_problems = 0;
  std::size_t n_solved = 0;
  double pass_at_1 = 0;
  double pass_at_10 = 0;
  double pass_at_25 = 0;
  std::optional<double> avg_pass_at;        // over solved problems
  std::optional<double> avg_input_tokens;   // over solved problems with full token data
  std::optional<double> avg_output_tokens;
  std::optional<double> avg_cost_cents;
  std::size_t n_token_problems = 0;
};

inline std::vector<PassRateRow> pass_rate_rows(const CampaignLog& log, std::span<const ModelSpec> models,
                                               std::span<const std::string> problems) {
  std::vector<std::string> ids;
  for (const auto& m : models) ids.push_back(m.model_id);
  common_subset(log, ids, problems);  // validates that every outcome exists

  std::vector<PassRateRow> out;
  for (const auto& m : models) {
    std::vector<GenerationOutcome> outcomes;
    for (const auto& p : problems) outcomes.push_back(*log.outcome(m.model_id, p));
    PassRateRow row;
    row.model_id = m.model_id;
    row.n_problems = outcomes.size();
    row.pass_at_1 = pass_rate_at_k(outcomes, 1);
    row.pass_at_10 = pass_rate_at_k(outcomes, 10);
    row.pass_at_25 = pass_rate_at_k(outcomes, 25);
    std::vector<GenerationOutcome> solved;
    for (const auto& o : outcomes)
      if (o.solved()) solved.push_back(o);
    row.n_solved = solved.size();
    if (!solved.empty()) row.avg_pass_at = avg_pass_at(solved);
    double in = 0, outt = 0, cost = 0;
    for (const auto& o : solved) {
      if (!o.tokens_complete) continue;
      ++row.n_token_problems;
      const auto ti = static_cast<double>(o.total_input_tokens);
      const auto to = static_cast<double>(o.total_output_tokens);
      in += ti;
      outt += to;
      cost += generation_cost_cents(ti, to, m);
    }
    if (row.n_token_problems > 0) {
      const double k = static_cast<double>(row.n_token_problems);
      row.avg_input_tokens = in / k;
      row.avg_output_tokens = outt / k;
      row.avg_cost_cents = cost / k;
    }
    out.push_back(std::move(row));
  }
  return out;
}

}  // namespace greenbench
