#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <fstream>
#include <ostream>
#include <random>

#include "repro/orchestrator.hpp"

namespace repro::orchestrator {
namespace {

namespace fs = std::filesystem;
using interposer::Mode;

std::string trimmed(std::string s) {
  while (!s.empty() && (s.back() == '\n' || s.back() == '\r' || s.back() == ' ')) s.pop_back();
  return s;
}

bool looks_like_digest(const std::string& s) {
  return s.size() == 64 && s.find_first_not_of("0123456789abcdef") == std::string::npos;
}

std::string snapshot(const fs::path& dir) {
  std::vector<fs::path> paths{dir};
  std::string out;
  for (const auto& line : hash_manifest(paths, DigestAlgo::Sha256)) out += line + "\n";
  return out;
}

void flip_byte(const fs::path& file, std::uint64_t offset, std::uint8_t mask) {
  std::fstream f(file, std::ios::in | std::ios::out | std::ios::binary);
  f.seekg(static_cast<std::streamoff>(offset));
  char c = 0;
  f.get(c);
  c = static_cast<char>(static_cast<std::uint8_t>(c) ^ mask);
  f.seekp(static_cast<std::streamoff>(offset));
  f.put(c);
  if (!f) throw std::runtime_error("cannot tamper with " + file.string());
}

class Trial {
 public:
  Trial(const fs::path& preload, const fs::path& dir, std::vector<std::string> command)
      : preload_(preload), dir_(dir), command_(std::move(command)) {}

  // Returns the failed property, empty on success.
  std::string run(bool tamper, std::mt19937_64& rng) {
    std::string off_a, off_b, recorded;
    if (auto err = digest_of(Mode::Off, &off_a); !err.empty()) return err;
    if (auto err = digest_of(Mode::Off, &off_b); !err.empty()) return err;
    if (off_a == off_b) return "off-mode runs produced identical digests";
    if (auto err = digest_of(Mode::Record, &recorded); !err.empty()) return err;

    if (tamper) return run_tampered(recorded, rng);

    const std::string before = snapshot(profile());
    std::string first, second;
    if (auto err = digest_of(Mode::Replay, &first); !err.empty()) return err;
    if (first != recorded) return "replay digest differs from record digest";
    if (auto err = digest_of(Mode::Replay, &second); !err.empty()) return err;
    if (second != first) return "second replay differs from the first (replay not idempotent)";
    if (snapshot(profile()) != before) return "replay modified the profile directory";
    return {};
  }

 private:
  fs::path profile() const { return dir_ / "profile"; }

  RunOutcome launch(Mode mode) {
    RunConfig rc;
    rc.mode = mode;
    if (mode != Mode::Off) rc.profile_dir = profile();
    rc.command = command_;
    rc.preload = preload_;
    rc.capture_stdout = true;
    rc.quiet = true;
    return cmd_run(rc);
  }

  std::string digest_of(Mode mode, std::string* digest) {
    const RunOutcome r = launch(mode);
    const std::string name(interposer::to_string(mode));
    if (r.exit_code != kExitOk) return name + " run failed: " + r.message;
    *digest = trimmed(r.stdout_text);
    if (!looks_like_digest(*digest)) return name + " run printed no digest";
    return {};
  }

  std::string run_tampered(const std::string& recorded, std::mt19937_64& rng) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(profile()))
      if (entry.is_regular_file() && fs::file_size(entry.path()) > 0) files.push_back(entry.path());
    if (files.empty()) return "record run wrote no profile";
    std::sort(files.begin(), files.end());
    const fs::path target = files[rng() % files.size()];
    const std::uint64_t offset = rng() % fs::file_size(target);
    const auto mask = static_cast<std::uint8_t>(1 + rng() % 255);
    flip_byte(target, offset, mask);

    const RunOutcome r = launch(Mode::Replay);
    // Detected as a divergence, a load failure or a changed digest.
    if (r.exit_code != kExitOk || trimmed(r.stdout_text) != recorded) return {};
    return "flipped byte at " + target.filename().string() + ":" + std::to_string(offset) + " went undetected";
  }

  fs::path preload_;
  fs::path dir_;
  std::vector<std::string> command_;
};

}  // namespace

SelftestResult cmd_selftest(const SelftestConfig& config, std::ostream& out) {
  const auto start = std::chrono::steady_clock::now();
  SelftestResult result;
  result.trials = config.trials;
  auto finish = [&] {
    result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    out << "selftest: " << result.passed << "/" << result.trials << " trials passed in " << result.seconds << " s"
        << (config.tamper ? " (tamper detection)" : "") << '\n';
    return result;
  };
  if (config.trials < 1) {
    result.failures.push_back("at least one trial is required");
    out << "FAIL: " << result.failures.back() << '\n';
    return finish();
  }

  const fs::path preload = config.preload.value_or(default_preload_path());
  if (!fs::exists(preload)) {
    result.failures.push_back("preload library not found: " + preload.string());
    out << "FAIL: " << result.failures.back() << '\n';
    return finish();
  }

  const bool own_dir = !config.work_dir;
  const fs::path work = config.work_dir.value_or(fs::temp_directory_path() /
                                                 ("repro-selftest-" + std::to_string(::getpid())));
  fs::create_directories(work);
  std::mt19937_64 rng(config.seed ? config.seed : std::random_device{}());
  const auto command = consumer_command(config.bytes);

  for (int t = 1; t <= config.trials; ++t) {
    const fs::path dir = work / ("trial_" + std::to_string(t));
    fs::remove_all(dir);
    fs::create_directories(dir);
    std::string failure;
    try {
      failure = Trial(preload, dir, command).run(config.tamper, rng);
    } catch (const std::exception& e) {
      failure = e.what();
    }
    if (failure.empty()) {
      ++result.passed;
      out << "trial " << t << ": ok\n";
    } else {
      result.failures.push_back("trial " + std::to_string(t) + ": " + failure);
      out << "trial " << t << ": FAIL " << failure << '\n';
    }
    fs::remove_all(dir);
  }
  if (own_dir) fs::remove_all(work);
  return finish();
}

}  // namespace repro::orchestrator
