#pragma once

#include <cmath>
#include <cstdio>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "greenbench/error.hpp"
#include "greenbench/jsonl.hpp"
#include "greenbench/machine.hpp"
#include "greenbench/metrics.hpp"

namespace greenbench {

enum class ReportFormat { Csv, Markdown, Structured };

inline ReportFormat parse_report_format(std::string_view s) {
  if (s == "csv") return ReportFormat::Csv;
  if (s == "markdown") return ReportFormat::Markdown;
  if (s == "structured") return ReportFormat::Structured;
  throw ConfigError("unknown report format '" + std::string(s) + "' (expected csv, markdown or structured)");
}

// Display precision per quantity.
namespace digits {
inline constexpr int kCents = 3;
inline constexpr int kTokens = 1;
inline constexpr int kPassAt = 3;
inline constexpr int kJoules = 2;
inline constexpr int kMillis = 2;
inline constexpr int kMemory = 2;
inline constexpr int kRatio = 4;
inline constexpr int kRate = 3;
}  // namespace digits

inline constexpr std::string_view kAbsent = "--";

// Fixed-point text; never "-0.00".
inline std::string format_fixed(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  std::string s(buf);
  if (s[0] == '-' && s.find_first_not_of("-0.") == std::string::npos) s.erase(0, 1);
  return s;
}

inline std::string format_cell(const std::optional<double>& v, int decimals) {
  return v ? format_fixed(*v, decimals) : std::string(kAbsent);
}

// Rounded value for the structured report; null when absent.
inline Json rounded(const std::optional<double>& v, int decimals) {
  if (!v) return nullptr;
  const double scale = std::pow(10.0, decimals);
  double r = std::round(*v * scale) / scale;
  if (r == 0) r = 0;  // drops the sign of -0
  return r;
}

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

namespace detail {

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

inline std::string md_field(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '|') out += '\\';
    out += c == '\n' ? ' ' : c;
  }
  return out;
}

}  // namespace detail

inline std::string render_csv(const Table& t) {
  std::string out;
  auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out += ',';
      out += detail::csv_field(cells[i]);
    }
    out += '\n';
  };
  line(t.header);
  for (const auto& r : t.rows) line(r);
  return out;
}

inline std::string render_markdown(const Table& t) {
  std::string out;
  auto line = [&](const std::vector<std::string>& cells) {
    out += '|';
    for (const auto& c : cells) out += " " + detail::md_field(c) + " |";
    out += '\n';
  };
  line(t.header);
  out += '|';
  for (std::size_t i = 0; i < t.header.size(); ++i) out += i == 0 ? " --- |" : " ---: |";
  out += '\n';
  for (const auto& r : t.rows) line(r);
  return out;
}

// ---------------------------------------------------------------------------
// Table builders

inline const std::vector<std::string>& aggregate_columns() {
  static const std::vector<std::string> cols{
      "model",     "avg_cost_cents", "avg_input_tokens", "avg_output_tokens", "avg_pass_at",
      "avg_pkg_j", "avg_ram_j",      "avg_total_j",      "avg_runtime_ms",    "avg_mem_mbs"};
  return cols;
}

inline std::vector<std::string> aggregate_cells(const AggregateRow& r) {
  return {r.model_id,
          format_cell(r.avg_cost_cents, digits::kCents),
          format_cell(r.avg_input_tokens, digits::kTokens),
          format_cell(r.avg_output_tokens, digits::kTokens),
          format_cell(r.avg_pass_at, digits::kPassAt),
          format_cell(r.avg_pkg_j, digits::kJoules),
          format_cell(r.avg_ram_j, digits::kJoules),
          format_cell(r.avg_total_j, digits::kJoules),
          format_cell(r.avg_runtime_ms, digits::kMillis),
          format_cell(r.avg_mem_mbs, digits::kMemory)};
}

inline Table aggregate_table(std::span<const AggregateRow> rows) {
  if (rows.empty()) throw PreconditionError("report: no aggregate rows");
  Table t{aggregate_columns(), {}};
  for (const auto& r : rows) t.rows.push_back(aggregate_cells(r));
  return t;
}

inline Table relative_table(std::span<const RelativeRow> rows) {
  if (rows.empty()) throw PreconditionError("report: no relative rows");
  Table t{{"model", "pkg_energy", "ram_energy", "total_energy", "runtime", "memory"}, {}};
  for (const auto& r : rows)
    t.rows.push_back({r.model_id, format_fixed(r.pkg, digits::kRatio), format_fixed(r.ram, digits::kRatio),
                      format_fixed(r.total, digits::kRatio), format_fixed(r.runtime, digits::kRatio),
                      format_fixed(r.memory, digits::kRatio)});
  return t;
}

inline Table pass_rate_table(std::span<const PassRateRow> rows) {
  if (rows.empty()) throw PreconditionError("report: no pass-rate rows");
  Table t{{"model", "pass_at_1", "pass_at_10", "pass_at_25", "avg_pass_at", "avg_input_tokens",
           "avg_output_tokens", "avg_cost_cents", "n_solved", "n_problems", "n_token_problems"},
          {}};
  for (const auto& r : rows)
    t.rows.push_back({r.model_id, format_fixed(r.pass_at_1, digits::kRate),
                      format_fixed(r.pass_at_10, digits::kRate), format_fixed(r.pass_at_25, digits::kRate),
                      format_cell(r.avg_pass_at, digits::kPassAt),
                      format_cell(r.avg_input_tokens, digits::kTokens),
                      format_cell(r.avg_output_tokens, digits::kTokens),
                      format_cell(r.avg_cost_cents, digits::kCents), std::to_string(r.n_solved),
                      std::to_string(r.n_problems), std::to_string(r.n_token_problems)});
  return t;
}

inline Table breakdown_table(std::span<const BreakdownTable> tables, const std::string& axis_name) {
  if (tables.empty()) throw PreconditionError("report: no breakdown tables");
  Table t;
  t.header.push_back(axis_name);
  for (const auto& c : aggregate_columns()) t.header.push_back(c);
  t.header.push_back("n_problems");
  for (const auto& bt : tables) {
    for (const auto& r : bt.rows) {
      std::vector<std::string> cells{bt.label};
      for (auto& c : aggregate_cells(r)) cells.push_back(std::move(c));
      cells.push_back(std::to_string(r.n_problems));
      t.rows.push_back(std::move(cells));
    }
  }
  return t;
}

// ---------------------------------------------------------------------------
// Structured rows

inline Json to_json(const AggregateRow& r) {
  return Json{{"model", r.model_id},
              {"avg_cost_cents", rounded(r.avg_cost_cents, digits::kCents)},
              {"avg_input_tokens", rounded(r.avg_input_tokens, digits::kTokens)},
              {"avg_output_tokens", rounded(r.avg_output_tokens, digits::kTokens)},
              {"avg_pass_at", rounded(r.avg_pass_at, digits::kPassAt)},
              {"avg_pkg_j", rounded(r.avg_pkg_j, digits::kJoules)},
              {"avg_ram_j", rounded(r.avg_ram_j, digits::kJoules)},
              {"avg_total_j", rounded(r.avg_total_j, digits::kJoules)},
              {"avg_runtime_ms", rounded(r.avg_runtime_ms, digits::kMillis)},
              {"avg_mem_mbs", rounded(r.avg_mem_mbs, digits::kMemory)},
              {"n_problems", r.n_problems},
              {"n_token_problems", r.n_token_problems}};
}

inline Json to_json(const RelativeRow& r) {
  return Json{{"model", r.model_id},
              {"pkg_energy", rounded(r.pkg, digits::kRatio)},
              {"ram_energy", rounded(r.ram, digits::kRatio)},
              {"total_energy", rounded(r.total, digits::kRatio)},
              {"runtime", rounded(r.runtime, digits::kRatio)},
              {"memory", rounded(r.memory, digits::kRatio)}};
}

inline Json to_json(const PassRateRow& r) {
  return Json{{"model", r.model_id},
              {"pass_at_1", rounded(r.pass_at_1, digits::kRate)},
              {"pass_at_10", rounded(r.pass_at_10, digits::kRate)},
              {"pass_at_25", rounded(r.pass_at_25, digits::kRate)},
              {"avg_pass_at", rounded(r.avg_pass_at, digits::kPassAt)},
              {"avg_input_tokens", rounded(r.avg_input_tokens, digits::kTokens)},
              {"avg_output_tokens", rounded(r.avg_output_tokens, digits::kTokens)},
              {"avg_cost_cents", rounded(r.avg_cost_cents, digits::kCents)},
              {"n_solved", r.n_solved},
              {"n_problems", r.n_problems},
              {"n_token_problems", r.n_token_problems}};
}

// ---------------------------------------------------------------------------
// Whole report

struct ReportData {
  std::string benchmark_set;
  std::vector<std::string> problem_ids;
  MachineProfile profile;
  std::vector<PassRateRow> pass_rates;
  std::vector<AggregateRow> aggregates;
  std::vector<RelativeRow> relative;
  std::vector<BreakdownTable> by_difficulty;
  std::vector<BreakdownTable> by_category;
};

struct RenderedFile {
  std::string name;
  std::string content;
};

namespace detail {

inline Json structured_section(const MachineProfile& profile, Json rows) {
  return Json{{"machine_profile", to_json(profile)}, {"rows", std::move(rows)}};
}

inline Json breakdown_json(std::span<const BreakdownTable> tables) {
  Json out = Json::array();
  for (const auto& t : tables) {
    Json rows = Json::array();
    for (const auto& r : t.rows) rows.push_back(to_json(r));
    out.push_back(Json{{"label", t.label}, {"rows", std::move(rows)}});
  }
  return out;
}

inline std::string profile_markdown(const MachineProfile& p) {
  std::string out;
  out += "- platform: " + p.platform + "\n";
  out += "- processor: " + p.processor + "\n";
  out += "- memory: " + p.memory + "\n";
  out += "- os: " + p.os + "\n";
  out += "- kernel: " + p.kernel + "\n";
  return out;
}

}  // namespace detail

// Renders every table of the report. CSV yields one file per table; markdown
// and structured yield a single document.
inline std::vector<RenderedFile> render_report(const ReportData& d, ReportFormat format) {
  if (d.aggregates.empty()) throw PreconditionError("report: no rows to render");
  switch (format) {
    case ReportFormat::Csv: {
      std::vector<RenderedFile> out;
      if (!d.pass_rates.empty()) out.push_back({"pass_rates.csv", render_csv(pass_rate_table(d.pass_rates))});
      out.push_back({"aggregates.csv", render_csv(aggregate_table(d.aggregates))});
      if (!d.relative.empty()) out.push_back({"relative.csv", render_csv(relative_table(d.relative))});
      if (!d.by_difficulty.empty())
        out.push_back({"by_difficulty.csv", render_csv(breakdown_table(d.by_difficulty, "difficulty"))});
      if (!d.by_category.empty())
        out.push_back({"by_category.csv", render_csv(breakdown_table(d.by_category, "category"))});
      return out;
    }
    case ReportFormat::Markdown: {
      std::string doc = "# Benchmark set " + d.benchmark_set + " (" + std::to_string(d.problem_ids.size()) +
                        " problems)\n\n## Machine\n\n" + detail::profile_markdown(d.profile);
      auto section = [&](const std::string& title, const Table& t) {
        doc += "\n## " + title + "\n\n" + render_markdown(t);
      };
      if (!d.pass_rates.empty()) section("Pass rates", pass_rate_table(d.pass_rates));
      section("Aggregates", aggregate_table(d.aggregates));
      if (!d.relative.empty()) section("Relative to canonical", relative_table(d.relative));
      if (!d.by_difficulty.empty()) section("By difficulty", breakdown_table(d.by_difficulty, "difficulty"));
      if (!d.by_category.empty()) section("By category", breakdown_table(d.by_category, "category"));
      return {{"report.md", doc}};
    }
    case ReportFormat::Structured: {
      Json pass = Json::array(), agg = Json::array(), rel = Json::array();
      for (const auto& r : d.pass_rates) pass.push_back(to_json(r));
      for (const auto& r : d.aggregates) agg.push_back(to_json(r));
      for (const auto& r : d.relative) rel.push_back(to_json(r));
      Json doc{{"benchmark_set", d.benchmark_set},
               {"problem_ids", d.problem_ids},
               {"pass_rates", detail::structured_section(d.profile, std::move(pass))},
               {"aggregates", detail::structured_section(d.profile, std::move(agg))},
               {"relative", detail::structured_section(d.profile, std::move(rel))},
               {"by_difficulty", detail::structured_section(d.profile, detail::breakdown_json(d.by_difficulty))},
               {"by_category", detail::structured_section(d.profile, detail::breakdown_json(d.by_category))}};
      return {{"report.json", doc.dump(2, ' ', false, Json::error_handler_t::replace) + "\n"}};
    }
  }
  throw ConfigError("unknown report format");
}

}  // namespace greenbench
