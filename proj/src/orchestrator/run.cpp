#include <ctime>
#include <fstream>
#include <iostream>
#include <sstream>

#include <json.hpp>

#include "repro/decimal.hpp"
#include "repro/orchestrator.hpp"

namespace repro::orchestrator {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::string utc_now() {
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  ::gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string shell_join(const std::vector<std::string>& argv) {
  std::string out;
  for (const auto& arg : argv) {
    if (!out.empty()) out += ' ';
    const bool plain = !arg.empty() && arg.find_first_not_of(
                                           "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ"
                                           "0123456789-_./=:,+@%") == std::string::npos;
    if (plain) {
      out += arg;
      continue;
    }
    out += '\'';
    for (char c : arg) {
      if (c == '\'')
        out += "'\\''";
      else
        out += c;
    }
    out += '\'';
  }
  return out;
}

std::optional<json> read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) return std::nullopt;
  try {
    return json::parse(in);
  } catch (const json::exception&) {
    return std::nullopt;
  }
}

void write_json_file(const fs::path& path, const json& doc) {
  std::ofstream out(path, std::ios::trunc);
  out << doc.dump(2) << '\n';
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

// Stamps the measured wall time and the run metadata into whatever the child
// left in its artifact directory.
void finalize_artifact(const fs::path& dir, const std::string& command, const std::string& started,
                       const std::string& ended, const std::string& status, double wall_seconds) {
  if (auto process = read_json_file(dir / "process.json"); process && process->is_object()) {
    (*process)["wall_seconds"] = format_decimal(wall_seconds);
    write_json_file(dir / "process.json", *process);
  }
  json manifest;
  if (auto existing = read_json_file(dir / "manifest.json"); existing && existing->is_object()) {
    manifest = *existing;
  } else {
    auto eval = read_json_file(dir / "eval.json");
    if (!eval || !eval->is_object()) return;
    manifest["schema_version"] = verifier::kArtifactSchemaVersion;
    manifest["task"] = eval->contains("labels") ? "classification" : "regression";
  }
  manifest["command"] = command;
  manifest["started_at"] = started;
  manifest["ended_at"] = ended;
  manifest["status"] = status;
  write_json_file(dir / "manifest.json", manifest);
}

std::string join(const std::vector<std::string>& items, char sep) {
  std::string out;
  for (const auto& s : items) {
    if (!out.empty()) out += sep;
    out += s;
  }
  return out;
}

}  // namespace

std::vector<std::string> consumer_command(std::size_t bytes, std::size_t chunk) {
  return {self_executable().string(), "__consume", "--bytes", std::to_string(bytes), "--chunk",
          std::to_string(chunk)};
}

RunOutcome cmd_run(const RunConfig& config) {
  using interposer::Mode;
  if (config.command.empty()) throw UsageError("no command given");
  if (config.mode != Mode::Off && !config.profile_dir)
    throw UsageError("--dir is required in " + std::string(interposer::to_string(config.mode)) + " mode");
  const fs::path preload = config.preload.value_or(default_preload_path());
  if (!fs::exists(preload)) throw UsageError("preload library not found: " + preload.string());

  RunOutcome outcome;
  if (config.mode == Mode::Replay && !fs::is_directory(*config.profile_dir)) {
    outcome.exit_code = kExitDivergence;
    outcome.status = "diverged";
    outcome.message = "replay profile directory " + config.profile_dir->string() + " does not exist";
    return outcome;
  }
  if (config.mode == Mode::Record) fs::create_directories(*config.profile_dir);

  if (config.artifact_dir) {
    fs::create_directories(*config.artifact_dir);
    for (const char* name : {"manifest.json", "process.json", "eval.json"}) fs::remove(*config.artifact_dir / name);
  }

  SpawnOptions spawn;
  spawn.passthrough = config.env_passthrough;
  spawn.capture_stdout = config.capture_stdout;
  spawn.quiet_stderr = config.quiet;
  spawn.env["RRR_MODE"] = std::string(interposer::to_string(config.mode));
  if (config.profile_dir) spawn.env["RRR_DIR"] = fs::absolute(*config.profile_dir).string();
  if (config.intercepts) spawn.env["RRR_INTERCEPT"] = join(*config.intercepts, ',');
  if (config.artifact_dir) spawn.env["RRR_ARTIFACT_DIR"] = fs::absolute(*config.artifact_dir).string();

  std::vector<std::string> argv = config.command;
  if (config.trace) {
    fs::path trace;
    if (config.trace_file)
      trace = *config.trace_file;
    else if (config.artifact_dir)
      trace = *config.artifact_dir / "trace.txt";
    else
      throw UsageError("--trace needs --out or --trace-file");
    if (trace.has_parent_path()) fs::create_directories(trace.parent_path());
    std::ofstream(trace, std::ios::trunc).close();
    outcome.trace_path = trace;
    if (auto strace = find_on_path("strace")) {
      // The tracer itself must not load the shim; strace hands it to the tracee.
      outcome.used_system_tracer = true;
      argv = {strace->string(), "-f", "-y", "-o", trace.string(), "-E", "LD_PRELOAD=" + fs::absolute(preload).string(),
              "--"};
      argv.insert(argv.end(), config.command.begin(), config.command.end());
    } else {
      spawn.env["RRR_TRACE"] = fs::absolute(trace).string();
    }
  }
  if (!outcome.used_system_tracer) spawn.env["LD_PRELOAD"] = fs::absolute(preload).string();
  spawn.argv = std::move(argv);

  const std::string started = utc_now();
  SpawnResult child = spawn_and_wait(spawn);
  const std::string ended = utc_now();
  if (!child.started) throw UsageError(child.error);

  outcome.wall_seconds = child.wall_seconds;
  outcome.stdout_text = std::move(child.stdout_text);
  if (child.term_signal == 0) outcome.child_exit = child.exit_code;

  if (child.term_signal == 0 && child.exit_code == 0) {
    outcome.exit_code = kExitOk;
    outcome.status = "ok";
  } else if (config.mode == Mode::Replay && child.term_signal == 0 &&
             child.exit_code == interposer::kDivergenceExitCode) {
    outcome.exit_code = kExitDivergence;
    outcome.status = "diverged";
    outcome.message = "replay diverged from the recorded profile";
  } else {
    outcome.exit_code = kExitChildFailure;
    outcome.status = "failed";
    outcome.message = child.term_signal ? "child killed by signal " + std::to_string(child.term_signal)
                                        : "child exited with status " + std::to_string(child.exit_code);
  }
  if (config.artifact_dir)
    finalize_artifact(*config.artifact_dir, shell_join(config.command), started, ended, outcome.status,
                      outcome.wall_seconds);
  return outcome;
}

}  // namespace repro::orchestrator
