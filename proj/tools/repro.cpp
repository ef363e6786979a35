#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "repro/decimal.hpp"
#include "repro/orchestrator.hpp"

namespace {

namespace fs = std::filesystem;
namespace orch = repro::orchestrator;
namespace diag = repro::diagnoser;
namespace ver = repro::verifier;
using repro::interposer::Mode;

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw orch::UsageError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  out << text;
  if (!out) throw orch::UsageError("cannot write " + path.string());
}

Mode parse_mode(const std::string& name) {
  if (name == "record") return Mode::Record;
  if (name == "replay") return Mode::Replay;
  return Mode::Off;
}

// A number, or an artifact directory whose process.json holds wall_seconds.
std::vector<double> wall_times(const std::vector<std::string>& items) {
  std::vector<double> out;
  for (const auto& item : items) {
    if (auto v = repro::parse_decimal(item)) {
      out.push_back(*v);
      continue;
    }
    out.push_back(ver::load_run_artifact(item).process.wall_seconds);
  }
  return out;
}

struct Catalogs {
  std::string syscall_path;
  std::string nondet_path;

  void add_options(CLI::App* app) {
    app->add_option("--syscall-catalog", syscall_path, "syscall catalog JSON (default: built in)");
    app->add_option("--nondet-catalog", nondet_path, "nondeterministic function catalog JSON (default: built in)");
  }
  diag::SyscallCatalog syscalls() const {
    return syscall_path.empty() ? diag::SyscallCatalog::defaults() : diag::SyscallCatalog::load(syscall_path);
  }
  diag::NondetCatalog nondet() const {
    return nondet_path.empty() ? diag::NondetCatalog::defaults() : diag::NondetCatalog::load(nondet_path);
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Record and replay OS randomness, verify run-to-run reproducibility, diagnose nondeterminism"};
  app.require_subcommand(1);

  // run
  auto* run = app.add_subcommand("run", "run a command under the preload shim");
  std::string run_mode;
  std::string run_dir, run_out, run_trace_file;
  bool run_trace = false;
  std::vector<std::string> run_env, run_intercepts, run_command;
  run->add_option("--mode", run_mode, "off, record or replay")
      ->required()
      ->check(CLI::IsMember({"off", "record", "replay"}));
  run->add_option("--dir", run_dir, "profile directory");
  run->add_flag("--trace", run_trace, "trace system calls (strace when available)");
  run->add_option("--trace-file", run_trace_file, "trace destination (default: <out>/trace.txt)");
  run->add_option("--out", run_out, "artifact directory handed to the command as RRR_ARTIFACT_DIR");
  run->add_option("--env", run_env, "inherited RRR_* variable to pass through")->delimiter(',')->allow_extra_args(false);
  run->add_option("--intercept", run_intercepts, "entropy sources to record/replay")->delimiter(',')->allow_extra_args(false);
  run->add_option("command", run_command, "command to run (after --)")->required();

  // verify
  auto* verify = app.add_subcommand("verify", "compare two run artifacts");
  std::string verify_a, verify_b, verify_json;
  verify->add_option("a", verify_a, "first artifact directory")->required();
  verify->add_option("b", verify_b, "second artifact directory")->required();
  auto* verify_json_opt =
      verify->add_option("--json", verify_json, "JSON report to FILE, or to stdout without FILE")->expected(0, 1);

  // variance
  auto* variance = app.add_subcommand("variance", "summarise differences over pairs of runs");
  std::vector<std::string> variance_dirs;
  bool variance_json = false;
  variance->add_option("artifacts", variance_dirs, "A1 B1 A2 B2 ...")->required();
  variance->add_flag("--json", variance_json, "JSON output");

  // diagnose
  auto* diagnose = app.add_subcommand("diagnose", "find randomness sources and nondeterministic functions");
  std::string diag_trace, diag_prof, diag_json;
  std::vector<std::string> diag_intercepts;
  Catalogs diag_catalogs;
  diagnose->add_option("--trace", diag_trace, "system-call trace")->required();
  diagnose->add_option("--prof", diag_prof, "function profile table");
  diagnose->add_option("--intercepts", diag_intercepts, "sources already intercepted")->delimiter(',')->allow_extra_args(false);
  diag_catalogs.add_options(diagnose);
  auto* diag_json_opt =
      diagnose->add_option("--json", diag_json, "JSON report to FILE, or to stdout without FILE")->expected(0, 1);

  // pipeline
  auto* pipeline = app.add_subcommand("pipeline", "iterate run, verify, diagnose and record/replay");
  std::string pipe_dir, pipe_out = "repro-pipeline", pipe_prof;
  int pipe_iters = 3;
  std::vector<std::string> pipe_env, pipe_command;
  Catalogs pipe_catalogs;
  pipeline->add_option("--dir", pipe_dir, "profile directory")->required();
  pipeline->add_option("--max-iters", pipe_iters, "record/replay iteration budget")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  pipeline->add_option("--out", pipe_out, "directory for artifacts, traces and reports")->capture_default_str();
  pipeline->add_option("--prof", pipe_prof, "function profile table used in diagnosis");
  pipeline->add_option("--env", pipe_env, "inherited RRR_* variable to pass through")->delimiter(',')->allow_extra_args(false);
  pipe_catalogs.add_options(pipeline);
  pipeline->add_option("command", pipe_command, "command to run (after --)")->required();

  // hash
  auto* hash = app.add_subcommand("hash", "digest manifest of files and directories");
  std::string hash_algo = "sha256";
  std::vector<std::string> hash_paths;
  hash->add_option("--algo", hash_algo, "sha1 or sha256")
      ->check(CLI::IsMember({"sha1", "sha256"}))
      ->capture_default_str();
  hash->add_option("paths", hash_paths, "files or directories")->required();

  // selftest
  auto* selftest = app.add_subcommand("selftest", "check record/replay bit-identity end to end");
  orch::SelftestConfig st;
  selftest->add_option("--trials", st.trials, "number of trials")->capture_default_str();
  selftest->add_option("--bytes", st.bytes, "entropy bytes per run")->capture_default_str();
  selftest->add_flag("--tamper", st.tamper, "flip one profile byte and expect detection");
  selftest->add_option("--seed", st.seed, "seed for tamper offsets");

  // timing
  auto* timing = app.add_subcommand("timing", "compare wall times with and without the shim");
  std::vector<std::string> timing_without, timing_with;
  bool timing_json = false;
  timing->add_option("--without", timing_without, "wall seconds or artifact directories")->required();
  timing->add_option("--with", timing_with, "wall seconds or artifact directories")->required();
  timing->add_flag("--json", timing_json, "JSON output");

  // Consumer re-invoked by selftest and usable as a toy training command.
  auto* consume = app.add_subcommand("__consume", "");
  consume->group("");
  orch::ConsumerConfig cc;
  std::string consume_artifact;
  bool consume_no_getrandom = false;
  consume->add_option("--bytes", cc.bytes);
  consume->add_option("--chunk", cc.chunk);
  consume->add_option("--device", cc.device);
  consume->add_flag("--no-getrandom", consume_no_getrandom);
  consume->add_flag("--no-entropy", cc.no_entropy);
  consume->add_option("--artifact", consume_artifact);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return orch::kExitUsage;
  }

  try {
    if (*run) {
      orch::RunConfig rc;
      rc.mode = parse_mode(run_mode);
      if (!run_dir.empty()) rc.profile_dir = run_dir;
      rc.command = run_command;
      rc.trace = run_trace;
      if (!run_trace_file.empty()) rc.trace_file = run_trace_file;
      if (!run_out.empty()) rc.artifact_dir = run_out;
      rc.env_passthrough = run_env;
      if (!run_intercepts.empty()) rc.intercepts = run_intercepts;
      const orch::RunOutcome r = orch::cmd_run(rc);
      std::cerr << "repro: " << run_mode << " run " << r.status << " in " << repro::format_decimal(r.wall_seconds)
                << " s";
      if (!r.message.empty()) std::cerr << ": " << r.message;
      if (r.trace_path) std::cerr << " (trace: " << r.trace_path->string() << ")";
      std::cerr << '\n';
      return r.exit_code;
    }
    if (*verify) {
      const auto report = ver::compare_runs(ver::load_run_artifact(verify_a), ver::load_run_artifact(verify_b));
      if (verify_json_opt->count() > 0 && verify_json.empty()) {
        std::cout << ver::render_report(report, ver::ReportFormat::Json);
      } else {
        std::cout << ver::render_report(report, ver::ReportFormat::Text);
        if (!verify_json.empty()) write_text(verify_json, ver::render_report(report, ver::ReportFormat::Json));
      }
      return ver::exit_code(report);
    }
    if (*variance) {
      if (variance_dirs.size() % 2 != 0) throw orch::UsageError("variance needs artifact directories in pairs");
      std::vector<ver::ArtifactPair> pairs;
      for (std::size_t i = 0; i < variance_dirs.size(); i += 2)
        pairs.emplace_back(ver::load_run_artifact(variance_dirs[i]), ver::load_run_artifact(variance_dirs[i + 1]));
      std::cout << ver::render_summary(ver::variance_analysis(pairs),
                                       variance_json ? ver::ReportFormat::Json : ver::ReportFormat::Text);
      return orch::kExitOk;
    }
    if (*diagnose) {
      const auto analysis = diag::parse_syscall_trace(read_text(diag_trace), diag_catalogs.syscalls());
      std::vector<diag::LibFinding> lib;
      std::size_t malformed = 0;
      if (!diag_prof.empty()) {
        const auto profile = diag::parse_function_profile(read_text(diag_prof));
        lib = diag::cross_check_nondeterminism(profile.stats, diag_catalogs.nondet());
        malformed = profile.malformed_rows;
      }
      auto report = diag::build_diagnosis(analysis.findings, lib, diag_intercepts);
      report.unparseable_trace_lines = analysis.unparseable;
      report.malformed_profile_rows = malformed;
      if (diag_json_opt->count() > 0 && diag_json.empty()) {
        std::cout << diag::render_diagnosis(report, diag::DiagnosisFormat::Json);
      } else {
        std::cout << diag::render_diagnosis(report, diag::DiagnosisFormat::Text);
        if (!diag_json.empty()) write_text(diag_json, diag::render_diagnosis(report, diag::DiagnosisFormat::Json));
      }
      return diag::exit_code(report);
    }
    if (*pipeline) {
      orch::PipelineConfig pc;
      pc.command = pipe_command;
      pc.profile_dir = pipe_dir;
      pc.out_dir = pipe_out;
      pc.max_iterations = pipe_iters;
      if (!pipe_prof.empty()) pc.function_profile = pipe_prof;
      pc.syscall_catalog = pipe_catalogs.syscalls();
      pc.nondet_catalog = pipe_catalogs.nondet();
      pc.env_passthrough = pipe_env;
      return orch::cmd_pipeline(pc, std::cerr).exit_code;
    }
    if (*hash) {
      std::vector<fs::path> paths(hash_paths.begin(), hash_paths.end());
      for (const auto& line : orch::hash_manifest(paths, *orch::parse_digest_algo(hash_algo)))
        std::cout << line << '\n';
      return orch::kExitOk;
    }
    if (*selftest) {
      return orch::cmd_selftest(st, std::cout).ok() ? orch::kExitOk : orch::kExitNotReproducible;
    }
    if (*timing) {
      const auto report = orch::timing_report(wall_times(timing_without), wall_times(timing_with));
      std::cout << orch::render_timing(report, timing_json);
      return orch::kExitOk;
    }
    if (*consume) {
      cc.use_getrandom = !consume_no_getrandom;
      if (!consume_artifact.empty()) {
        cc.artifact_dir = consume_artifact;
      } else if (const char* dir = std::getenv("RRR_ARTIFACT_DIR"); dir && *dir) {
        cc.artifact_dir = dir;
      }
      return orch::cmd_consume(cc, std::cout);
    }
  } catch (const std::exception& e) {
    std::cerr << "repro: " << e.what() << '\n';
    return orch::kExitUsage;
  }
  return orch::kExitUsage;
}
