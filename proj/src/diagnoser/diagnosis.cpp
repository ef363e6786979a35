#include <algorithm>
#include <set>
#include <sstream>

#include <json.hpp>

#include "repro/diagnoser.hpp"

namespace repro::diagnoser {
namespace {

using nlohmann::ordered_json;

bool same_entry(const NondetEntry& a, const NondetEntry& b) {
  return a.framework == b.framework && a.function_pattern == b.function_pattern;
}

void push_unique(std::vector<NondetEntry>& list, const NondetEntry& entry) {
  if (std::none_of(list.begin(), list.end(), [&](const NondetEntry& e) { return same_entry(e, entry); }))
    list.push_back(entry);
}

ordered_json entry_json(const NondetEntry& e) {
  ordered_json j = {
      {"function_pattern", e.function_pattern},
      {"framework", e.framework},
      {"affected_versions", e.affected_versions},
      {"cause", e.cause},
      {"patch_status", std::string(to_string(e.patch_status))},
      {"remediation", e.remediation},
  };
  return j;
}

std::string render_json(const DiagnosisReport& r) {
  ordered_json trace = ordered_json::array();
  for (const auto& f : r.trace_findings) {
    trace.push_back({{"matched_rule", f.matched_rule},
                     {"syscall", f.syscall},
                     {"line_number", f.line_number},
                     {"count", f.count},
                     {"requests", f.requests},
                     {"evidence", f.evidence}});
  }
  ordered_json lib = ordered_json::array();
  for (const auto& f : r.lib_findings) {
    lib.push_back({{"function", f.function},
                   {"call_count", f.call_count},
                   {"mitigated", f.mitigated},
                   {"entry", entry_json(f.entry)}});
  }
  ordered_json patches = ordered_json::array();
  for (const auto& e : r.plan.patches_to_apply) patches.push_back(entry_json(e));
  ordered_json blockers = ordered_json::array();
  for (const auto& e : r.plan.blockers) blockers.push_back(entry_json(e));

  ordered_json doc = {
      {"schema_version", 1},
      {"kind", "diagnosis"},
      {"status", std::string(to_string(r.status))},
      {"trace_findings", trace},
      {"lib_findings", lib},
      {"current_intercepts", r.current_intercepts},
      {"plan",
       {{"syscalls_to_intercept", r.plan.syscalls_to_intercept},
        {"patches_to_apply", patches},
        {"blockers", blockers}}},
      {"diagnostics",
       {{"unparseable_trace_lines", r.unparseable_trace_lines},
        {"malformed_profile_rows", r.malformed_profile_rows}}},
  };
  return doc.dump(2) + "\n";
}

std::string render_text(const DiagnosisReport& r) {
  std::ostringstream out;
  out << "status: " << to_string(r.status) << '\n';
  out << "randomness system calls: " << r.trace_findings.size() << '\n';
  for (const auto& f : r.trace_findings) {
    out << "  " << f.matched_rule << ": " << f.count << " line(s), first at line " << f.line_number << '\n';
    out << "    " << f.evidence << '\n';
  }
  out << "nondeterministic library functions: " << r.lib_findings.size() << '\n';
  for (const auto& f : r.lib_findings) {
    out << "  " << f.function << " (" << f.call_count << " calls, patch " << to_string(f.entry.patch_status)
        << (f.mitigated ? ", already patched" : "") << ")\n";
    out << "    cause: " << f.entry.cause << '\n';
  }
  out << "plan:\n";
  if (r.plan.empty()) out << "  nothing to do\n";
  for (const auto& s : r.plan.syscalls_to_intercept) out << "  intercept " << s << '\n';
  for (const auto& e : r.plan.patches_to_apply)
    out << "  patch " << e.function_pattern << " [" << to_string(e.patch_status) << "]: " << e.remediation << '\n';
  for (const auto& e : r.plan.blockers)
    out << "  unsupported " << e.function_pattern << " (" << e.framework << " " << e.affected_versions
        << "): " << e.remediation << '\n';
  if (r.unparseable_trace_lines || r.malformed_profile_rows)
    out << "skipped: " << r.unparseable_trace_lines << " unparseable trace line(s), " << r.malformed_profile_rows
        << " malformed profile row(s)\n";
  return out.str();
}

}  // namespace

std::string_view to_string(DiagnosisStatus status) {
  switch (status) {
    case DiagnosisStatus::Clean:
      return "clean";
    case DiagnosisStatus::FullyMitigated:
      return "fully mitigated";
    case DiagnosisStatus::Mitigable:
      return "mitigable";
    case DiagnosisStatus::NotFullyMitigable:
      return "not fully mitigable";
  }
  return "clean";
}

std::vector<LibFinding> cross_check_nondeterminism(std::span<const FunctionStat> stats,
                                                   const NondetCatalog& catalog) {
  std::vector<LibFinding> findings;
  std::set<std::size_t> patched;
  for (const auto& stat : stats) {
    for (std::size_t i = 0; i < catalog.entries.size(); ++i) {
      const auto& e = catalog.entries[i];
      if (e.patched_name && stat.name.find(*e.patched_name) != std::string::npos) patched.insert(i);
    }
  }
  for (const auto& stat : stats) {
    if (stat.call_count == 0) continue;
    for (std::size_t i = 0; i < catalog.entries.size(); ++i) {
      const auto& e = catalog.entries[i];
      if (stat.name.find(e.function_pattern) == std::string::npos) continue;
      // The replacement's own row names the pattern too; it is not a finding.
      if (e.patched_name && stat.name.find(*e.patched_name) != std::string::npos) continue;
      findings.push_back({stat.name, stat.call_count, e, patched.count(i) > 0});
    }
  }
  return findings;
}

DiagnosisReport build_diagnosis(std::span<const TraceFinding> trace_findings,
                                std::span<const LibFinding> lib_findings,
                                std::span<const std::string> current_intercepts) {
  DiagnosisReport report;
  report.trace_findings.assign(trace_findings.begin(), trace_findings.end());
  report.lib_findings.assign(lib_findings.begin(), lib_findings.end());
  report.current_intercepts.assign(current_intercepts.begin(), current_intercepts.end());

  const std::set<std::string> intercepted(current_intercepts.begin(), current_intercepts.end());
  for (const auto& f : trace_findings) {
    if (intercepted.count(f.matched_rule)) continue;
    auto& list = report.plan.syscalls_to_intercept;
    if (std::find(list.begin(), list.end(), f.matched_rule) == list.end()) list.push_back(f.matched_rule);
  }
  for (const auto& f : lib_findings) {
    if (f.mitigated) continue;
    if (f.entry.patch_status == PatchStatus::None)
      push_unique(report.plan.blockers, f.entry);
    else
      push_unique(report.plan.patches_to_apply, f.entry);
  }

  if (!report.plan.blockers.empty())
    report.status = DiagnosisStatus::NotFullyMitigable;
  else if (!report.plan.empty())
    report.status = DiagnosisStatus::Mitigable;
  else if (!trace_findings.empty() || !lib_findings.empty())
    report.status = DiagnosisStatus::FullyMitigated;
  else
    report.status = DiagnosisStatus::Clean;
  return report;
}

std::string render_diagnosis(const DiagnosisReport& report, DiagnosisFormat format) {
  return format == DiagnosisFormat::Json ? render_json(report) : render_text(report);
}

int exit_code(const DiagnosisReport& report) { return report.plan.blockers.empty() ? 0 : 1; }

}  // namespace repro::diagnoser
