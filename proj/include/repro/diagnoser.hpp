#pragma once

// Finds sources of run-to-run variation in a training run.
//
// Two inputs are analysed: a line-oriented system-call trace (strace output
// or the degraded trace written by the preload shim) and a tabular function
// profile (cProfile-style). Both are matched against data-driven catalogs and
// folded into a diagnosis with an update plan.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace repro::diagnoser {

class CatalogError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr int kCatalogSchemaVersion = 1;

enum class MatchKind { SyscallName, PathArgument };

struct SyscallRule {
  /// Rule name; also the interposer source name used in intercept lists.
  std::string name;
  MatchKind match_kind = MatchKind::SyscallName;
  /// Syscall matched by SyscallName rules; defaults to `name`.
  std::string syscall;
  /// Substring searched in the arguments of PathArgument rules.
  std::optional<std::string> path_pattern;
  std::optional<std::string> min_kernel;
};

struct SyscallCatalog {
  std::vector<SyscallRule> entries;

  static SyscallCatalog defaults();
  static SyscallCatalog from_json(std::string_view text);
  static SyscallCatalog load(const std::filesystem::path& path);
};

enum class PatchStatus { Available, Experimental, None };

std::string_view to_string(PatchStatus status);

struct NondetEntry {
  std::string function_pattern;
  std::string framework;
  std::string affected_versions;
  std::string cause;
  PatchStatus patch_status = PatchStatus::None;
  std::string remediation;
  /// Name the patched replacement shows up under in a profile.
  std::optional<std::string> patched_name;

  friend bool operator==(const NondetEntry&, const NondetEntry&) = default;
};

struct NondetCatalog {
  std::vector<NondetEntry> entries;

  static NondetCatalog defaults();
  static NondetCatalog from_json(std::string_view text);
  static NondetCatalog load(const std::filesystem::path& path);
};

struct TraceFinding {
  std::string syscall;       // syscall on the first matching line
  std::size_t line_number;   // 1-based, first occurrence
  std::size_t count;         // matching lines
  std::size_t requests;      // entropy requests (reads / getrandom calls)
  std::string evidence;      // excerpt of the first matching line
  std::string matched_rule;  // SyscallRule::name
};

struct TraceAnalysis {
  std::vector<TraceFinding> findings;
  std::size_t lines = 0;
  std::size_t calls = 0;
  std::size_t unparseable = 0;
};

TraceAnalysis parse_syscall_trace(std::string_view text, const SyscallCatalog& catalog);

struct FunctionStat {
  std::string name;
  std::uint64_t call_count = 0;
};

struct FunctionProfile {
  std::vector<FunctionStat> stats;
  std::size_t malformed_rows = 0;
};

FunctionProfile parse_function_profile(std::string_view text);

struct LibFinding {
  std::string function;
  std::uint64_t call_count = 0;
  NondetEntry entry;
  /// The patched replacement was observed instead of the original.
  bool mitigated = false;
};

std::vector<LibFinding> cross_check_nondeterminism(std::span<const FunctionStat> stats,
                                                   const NondetCatalog& catalog);

struct UpdatePlan {
  std::vector<std::string> syscalls_to_intercept;
  std::vector<NondetEntry> patches_to_apply;
  std::vector<NondetEntry> blockers;

  bool empty() const {
    return syscalls_to_intercept.empty() && patches_to_apply.empty() && blockers.empty();
  }
};

enum class DiagnosisStatus { Clean, FullyMitigated, Mitigable, NotFullyMitigable };

std::string_view to_string(DiagnosisStatus status);

struct DiagnosisReport {
  std::vector<TraceFinding> trace_findings;
  std::vector<LibFinding> lib_findings;
  std::vector<std::string> current_intercepts;
  UpdatePlan plan;
  DiagnosisStatus status = DiagnosisStatus::Clean;
  std::size_t unparseable_trace_lines = 0;
  std::size_t malformed_profile_rows = 0;
};

DiagnosisReport build_diagnosis(std::span<const TraceFinding> trace_findings,
                                std::span<const LibFinding> lib_findings,
                                std::span<const std::string> current_intercepts);

enum class DiagnosisFormat { Text, Json };

std::string render_diagnosis(const DiagnosisReport& report, DiagnosisFormat format);

/// 1 when blockers were found, 0 otherwise.
int exit_code(const DiagnosisReport& report);

}  // namespace repro::diagnoser
