#pragma once

// The `repro` command: runs training commands under the preload shim, and
// ties verification and diagnosis into the iterative reproduce-diagnose-fix
// loop.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "repro/diagnoser.hpp"
#include "repro/interposer.hpp"
#include "repro/verifier.hpp"

namespace repro::orchestrator {

inline constexpr int kExitOk = 0;
inline constexpr int kExitNotReproducible = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitDivergence = 3;
inline constexpr int kExitChildFailure = 4;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---- child processes ----

struct SpawnOptions {
  std::vector<std::string> argv;
  /// Overrides on top of the inherited environment; nullopt unsets.
  std::map<std::string, std::optional<std::string>> env;
  /// Drop inherited RRR_* and LD_PRELOAD unless named in `passthrough`.
  bool scrub_harness_env = true;
  std::vector<std::string> passthrough;
  bool capture_stdout = false;
  bool quiet_stderr = false;
};

struct SpawnResult {
  bool started = false;
  int exit_code = -1;   // valid when exited normally
  int term_signal = 0;  // nonzero when killed by a signal
  double wall_seconds = 0;
  std::string stdout_text;
  std::string error;  // why the child could not be started
};

SpawnResult spawn_and_wait(const SpawnOptions& options);

std::optional<std::filesystem::path> find_on_path(std::string_view program);
std::filesystem::path self_executable();

/// RRR_PRELOAD when set, otherwise librrr_preload.so beside this executable.
std::filesystem::path default_preload_path();

// ---- digests ----

enum class DigestAlgo { Sha1, Sha256 };

std::optional<DigestAlgo> parse_digest_algo(std::string_view name);
std::string_view to_string(DigestAlgo algo);

class DigestError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string digest_hex(DigestAlgo algo, std::span<const std::uint8_t> data);
std::string digest_file(DigestAlgo algo, const std::filesystem::path& path);

/// `algo:hex  path` lines; directories are walked in sorted order.
std::vector<std::string> hash_manifest(std::span<const std::filesystem::path> paths, DigestAlgo algo);

// ---- statistics for timing comparisons ----

struct RankSumResult {
  double statistic = 0;  // rank sum of the first sample
  double p_value = 1;    // two-sided
  bool exact = false;
};

/// Largest per-sample size for which the exact null distribution is used.
inline constexpr std::size_t kExactRankSumLimit = 10;

RankSumResult wilcoxon_rank_sum(std::span<const double> x, std::span<const double> y);

/// P(x > y) - P(x < y) over all cross pairs.
double cliffs_delta(std::span<const double> x, std::span<const double> y);

enum class EffectMagnitude { Negligible, Small, Medium, Large };

EffectMagnitude effect_magnitude(double delta);
std::string_view to_string(EffectMagnitude magnitude);

double mean(std::span<const double> values);
double median(std::vector<double> values);

struct TimingReport {
  std::size_t n_without = 0;
  std::size_t n_with = 0;
  double mean_without = 0;
  double mean_with = 0;
  double ratio = 0;  // mean_with / mean_without
  RankSumResult rank_sum;
  double cliffs_delta = 0;  // with vs without
  EffectMagnitude magnitude = EffectMagnitude::Negligible;
};

/// Requires at least two samples per side.
TimingReport timing_report(std::span<const double> without, std::span<const double> with);
std::string render_timing(const TimingReport& report, bool json);

// ---- runs ----

struct RunConfig {
  interposer::Mode mode = interposer::Mode::Off;
  std::optional<std::filesystem::path> profile_dir;
  std::vector<std::string> command;
  bool trace = false;
  std::optional<std::filesystem::path> trace_file;
  std::optional<std::filesystem::path> artifact_dir;
  std::vector<std::string> env_passthrough;
  /// Sources handed to RRR_INTERCEPT; unset leaves the shim default.
  std::optional<std::vector<std::string>> intercepts;
  std::optional<std::filesystem::path> preload;
  bool capture_stdout = false;
  bool quiet = false;
};

struct RunOutcome {
  int exit_code = kExitOk;
  std::string status;  // ok, failed, diverged
  double wall_seconds = 0;
  std::optional<int> child_exit;
  std::optional<std::filesystem::path> trace_path;
  bool used_system_tracer = false;
  std::string stdout_text;
  std::string message;
};

RunOutcome cmd_run(const RunConfig& config);

/// Off, record and replay runs of this executable's hidden consumer.
std::vector<std::string> consumer_command(std::size_t bytes, std::size_t chunk = 256);

// ---- pipeline ----

struct PipelineConfig {
  std::vector<std::string> command;
  std::filesystem::path profile_dir;
  std::filesystem::path out_dir;
  int max_iterations = 3;
  std::optional<std::filesystem::path> function_profile;
  diagnoser::SyscallCatalog syscall_catalog = diagnoser::SyscallCatalog::defaults();
  diagnoser::NondetCatalog nondet_catalog = diagnoser::NondetCatalog::defaults();
  std::optional<std::filesystem::path> preload;
  std::vector<std::string> env_passthrough;
};

struct PipelineResult {
  int exit_code = kExitNotReproducible;
  std::string verdict;  // reproducible, not_reproducible, blocked, child_failed
  int iterations = 0;   // completed record/replay iterations
  std::vector<std::string> intercepts;
  std::optional<diagnoser::DiagnosisReport> last_diagnosis;
  std::vector<std::string> log;
};

/// Writes pipeline.log and pipeline_report.json under out_dir.
PipelineResult cmd_pipeline(const PipelineConfig& config, std::ostream& log);

// ---- self test ----

struct SelftestConfig {
  int trials = 20;
  std::size_t bytes = 4096;
  bool tamper = false;
  std::optional<std::filesystem::path> preload;
  std::optional<std::filesystem::path> work_dir;
  std::uint64_t seed = 0;  // tamper offsets
};

struct SelftestResult {
  int passed = 0;
  int trials = 0;
  double seconds = 0;
  std::vector<std::string> failures;
  bool ok() const { return trials > 0 && passed == trials && failures.empty(); }
};

SelftestResult cmd_selftest(const SelftestConfig& config, std::ostream& out);

// ---- hidden consumer ----

struct ConsumerConfig {
  std::size_t bytes = 4096;
  std::size_t chunk = 256;
  std::string device = "/dev/urandom";
  bool use_getrandom = true;
  bool no_entropy = false;
  std::optional<std::filesystem::path> artifact_dir;
};

/// Draws entropy through the device and getrandom in alternating chunks and
/// returns the sha256 of everything read. Throws std::system_error.
std::string consume_entropy(const ConsumerConfig& config, std::vector<std::uint8_t>* bytes = nullptr);

/// Toy classification artifact whose predictions and losses depend on the
/// consumed bytes.
verifier::RunArtifact consumer_artifact(std::span<const std::uint8_t> entropy);

int cmd_consume(const ConsumerConfig& config, std::ostream& out);

}  // namespace repro::orchestrator
