#include <fstream>
#include <sstream>

#include <json.hpp>

#include "repro/orchestrator.hpp"

namespace repro::orchestrator {
namespace {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class Pipeline {
 public:
  Pipeline(const PipelineConfig& config, std::ostream& log) : config_(config), log_(log) {}

  PipelineResult run() {
    if (config_.command.empty()) throw UsageError("no command given");
    if (config_.max_iterations < 1) throw UsageError("--max-iters must be at least 1");
    fs::create_directories(config_.out_dir);
    plog_.open(config_.out_dir / "pipeline.log", std::ios::trunc);

    note("phase 1: two initial runs without interposition");
    const fs::path a = config_.out_dir / "phase1" / "run_a";
    const fs::path b = config_.out_dir / "phase1" / "run_b";
    if (!execute(interposer::Mode::Off, a, false)) return finish();
    if (!execute(interposer::Mode::Off, b, false)) return finish();

    note("phase 2: verify");
    if (!verify(a, b)) return finish();
    if (last_comparison_->reproducible) {
      note("  reproducible without record-and-replay");
      return conclude(kExitOk, "reproducible", "initial runs are identical");
    }

    for (int iteration = 1; iteration <= config_.max_iterations; ++iteration) {
      const fs::path dir = config_.out_dir / ("iteration_" + std::to_string(iteration));
      note("iteration " + std::to_string(iteration) + " of " + std::to_string(config_.max_iterations));

      note("phase 3: traced run and diagnosis");
      if (!execute(interposer::Mode::Off, dir / "traced", true)) return finish();
      diagnose(dir);
      const auto& plan = result_.last_diagnosis->plan;

      note("phase 4: update");
      if (!plan.blockers.empty()) {
        for (const auto& e : plan.blockers)
          note("  blocker: " + e.function_pattern + " has no deterministic implementation; documented");
        return conclude(kExitNotReproducible, "blocked", "unsupported nondeterministic operations found");
      }
      for (const auto& e : plan.patches_to_apply)
        note("  patch required in the training script: " + e.function_pattern + " (" + e.remediation + ")");
      std::size_t added = 0;
      for (const auto& name : plan.syscalls_to_intercept) {
        if (!parse_entropy_source(name)) {
          note("  " + name + " is not an entropy source the shim can intercept");
          continue;
        }
        result_.intercepts.push_back(name);
        ++added;
        note("  intercept " + name);
      }
      if (added == 0)
        return conclude(kExitNotReproducible, "not_reproducible",
                        "no further randomness source can be intercepted automatically");

      note("phase 5: record and replay");
      if (!execute(interposer::Mode::Record, dir / "record", false)) return finish();
      const RunOutcome replay = run_once(interposer::Mode::Replay, dir / "replay", false);
      if (replay.exit_code == kExitDivergence) {
        note("  replay diverged: " + replay.message);
        result_.iterations = iteration;
        continue;
      }
      if (replay.exit_code != kExitOk) {
        child_failure(replay);
        return finish();
      }
      if (!verify(dir / "record", dir / "replay")) return finish();
      result_.iterations = iteration;
      if (last_comparison_->reproducible)
        return conclude(kExitOk, "reproducible", "record and replay runs are identical");
      note("  record and replay runs differ");
    }
    return conclude(kExitNotReproducible, "not_reproducible", "iteration budget exhausted");
  }

 private:
  void note(const std::string& line) {
    result_.log.push_back(line);
    log_ << line << '\n';
    plog_ << line << '\n';
    plog_.flush();
  }

  RunOutcome run_once(interposer::Mode mode, const fs::path& artifact, bool trace) {
    RunConfig rc;
    rc.mode = mode;
    rc.command = config_.command;
    rc.artifact_dir = artifact;
    rc.trace = trace;
    rc.preload = config_.preload;
    rc.env_passthrough = config_.env_passthrough;
    if (mode != interposer::Mode::Off) {
      rc.profile_dir = config_.profile_dir;
      rc.intercepts = result_.intercepts;
    }
    RunOutcome outcome = cmd_run(rc);
    note("  " + std::string(interposer::to_string(mode)) + " run -> " + artifact.string() + ": " + outcome.status);
    if (trace && outcome.trace_path) {
      trace_path_ = *outcome.trace_path;
      if (!outcome.used_system_tracer) note("  strace not found; using the shim's request log as the trace");
    }
    return outcome;
  }

  bool execute(interposer::Mode mode, const fs::path& artifact, bool trace) {
    const RunOutcome outcome = run_once(mode, artifact, trace);
    if (outcome.exit_code == kExitOk) return true;
    child_failure(outcome);
    return false;
  }

  void child_failure(const RunOutcome& outcome) {
    pending_ = {outcome.exit_code == kExitDivergence ? kExitDivergence : kExitChildFailure, "child_failed",
                outcome.message};
  }

  bool verify(const fs::path& a, const fs::path& b) {
    try {
      last_comparison_ = verifier::compare_runs(verifier::load_run_artifact(a), verifier::load_run_artifact(b));
    } catch (const std::exception& e) {
      pending_ = {kExitUsage, "invalid_artifact", e.what()};
      note(std::string("  cannot compare runs: ") + e.what());
      return false;
    }
    const auto& r = *last_comparison_;
    note(std::string("  verdict: ") + (r.reproducible ? "reproducible" : "not reproducible") + " (" +
         std::to_string(r.predictions.count) + " inconsistent predictions)");
    return true;
  }

  void diagnose(const fs::path& dir) {
    const std::string trace = trace_path_ ? read_text(*trace_path_) : std::string();
    const diagnoser::TraceAnalysis analysis = diagnoser::parse_syscall_trace(trace, config_.syscall_catalog);
    std::vector<diagnoser::LibFinding> lib;
    std::size_t malformed = 0;
    if (config_.function_profile) {
      const auto profile = diagnoser::parse_function_profile(read_text(*config_.function_profile));
      lib = diagnoser::cross_check_nondeterminism(profile.stats, config_.nondet_catalog);
      malformed = profile.malformed_rows;
    }
    auto report = diagnoser::build_diagnosis(analysis.findings, lib, result_.intercepts);
    report.unparseable_trace_lines = analysis.unparseable;
    report.malformed_profile_rows = malformed;
    fs::create_directories(dir);
    std::ofstream(dir / "diagnosis.json") << diagnoser::render_diagnosis(report, diagnoser::DiagnosisFormat::Json);
    note("  " + std::to_string(report.trace_findings.size()) + " randomness system call finding(s), " +
         std::to_string(report.lib_findings.size()) + " library finding(s): " +
         std::string(diagnoser::to_string(report.status)));
    for (const auto& f : report.trace_findings)
      note("    " + f.matched_rule + " x" + std::to_string(f.count) + " first at trace line " +
           std::to_string(f.line_number));
    result_.last_diagnosis = std::move(report);
  }

  PipelineResult conclude(int code, const std::string& verdict, const std::string& reason) {
    pending_ = {code, verdict, reason};
    return finish();
  }

  PipelineResult finish() {
    result_.exit_code = pending_.code;
    result_.verdict = pending_.verdict;
    note("result: " + result_.verdict + " after " + std::to_string(result_.iterations) +
         " record/replay iteration(s): " + pending_.reason);

    ordered_json doc = {
        {"schema_version", 1},
        {"kind", "pipeline"},
        {"verdict", result_.verdict},
        {"exit_code", result_.exit_code},
        {"reason", pending_.reason},
        {"iterations", result_.iterations},
        {"max_iterations", config_.max_iterations},
        {"intercepts", result_.intercepts},
        {"log", result_.log},
    };
    doc["final_diagnosis"] =
        result_.last_diagnosis
            ? ordered_json::parse(diagnoser::render_diagnosis(*result_.last_diagnosis, diagnoser::DiagnosisFormat::Json))
            : ordered_json(nullptr);
    doc["last_comparison"] =
        last_comparison_ ? ordered_json::parse(verifier::render_report(*last_comparison_, verifier::ReportFormat::Json))
                         : ordered_json(nullptr);
    std::ofstream(config_.out_dir / "pipeline_report.json", std::ios::trunc) << doc.dump(2) << '\n';
    return result_;
  }

  struct Pending {
    int code = kExitNotReproducible;
    std::string verdict = "not_reproducible";
    std::string reason;
  };

  const PipelineConfig& config_;
  std::ostream& log_;
  std::ofstream plog_;
  PipelineResult result_;
  Pending pending_;
  std::optional<verifier::ComparisonReport> last_comparison_;
  std::optional<fs::path> trace_path_;
};

}  // namespace

PipelineResult cmd_pipeline(const PipelineConfig& config, std::ostream& log) { return Pipeline(config, log).run(); }

}  // namespace repro::orchestrator
