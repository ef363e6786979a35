#pragma once

// Record/replay core behind the preload library.
//
// The preload shim (src/interposer/preload.cpp) owns one Interposer per
// process and forwards every hooked libc call to it together with the next
// provider of the symbol. Keeping the state machine here, free of dlsym and
// global constructors, lets the unit tests drive it directly.

#include <sys/types.h>

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <string_view>

#include "repro/profile_store.hpp"

namespace repro::interposer {

enum class Mode { Off, Record, Replay };
enum class Strictness { Abort, Warn };

/// Exit code used when replay diverges from the recorded request stream.
inline constexpr int kDivergenceExitCode = 3;
/// Exit code used when the RRR_* environment cannot be honored.
inline constexpr int kConfigExitCode = 2;

struct Config {
  Mode mode = Mode::Off;
  std::filesystem::path profile_dir;
  Strictness strictness = Strictness::Abort;
  std::optional<std::filesystem::path> log_path;
  /// Degraded syscall trace written by the shim itself (strace-like lines).
  std::optional<std::filesystem::path> trace_path;
  /// Sources that are recorded or replayed; the rest pass through.
  std::set<EntropySource> intercepts{EntropySource::UrandomRead, EntropySource::Getrandom};
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Reads RRR_MODE, RRR_DIR, RRR_STRICT, RRR_LOG, RRR_TRACE and RRR_INTERCEPT
/// through `lookup`. Throws ConfigError on invalid values.
Config config_from_env(const std::function<const char*(const char*)>& lookup);

std::string_view to_string(Mode mode);

/// Called for unrecoverable conditions. Must not return; the production
/// handler logs and calls _exit(code).
using FatalHandler = std::function<void(int exit_code, const std::string& message)>;

using RealGetrandom = ssize_t (*)(void*, std::size_t, unsigned int);
using RealRead = ssize_t (*)(int, void*, std::size_t);

class Interposer {
 public:
  Interposer(Config config, FatalHandler fatal, pid_t owner_pid);
  ~Interposer();

  Interposer(const Interposer&) = delete;
  Interposer& operator=(const Interposer&) = delete;

  /// Opens writers (record) or readers (replay) and the log/trace sinks.
  /// A missing replay profile is fatal with kDivergenceExitCode.
  void start();

  ssize_t on_getrandom(void* buf, std::size_t capacity, unsigned int flags,
                       RealGetrandom real);
  ssize_t on_read(int fd, void* buf, std::size_t capacity, RealRead real);

  /// Reports the outcome of an open-family call. `call` is the libc entry
  /// point name, used for the trace.
  void on_open(std::string_view call, int dirfd, const char* path, int flags, int result_fd);
  void on_close(int fd, int result);

  bool is_tracked(int fd) const;
  std::size_t tracked_count() const;
  Mode mode() const noexcept { return config_.mode; }
  const Config& config() const noexcept { return config_; }

  /// True when any hook has work to do beyond forwarding.
  bool active() const noexcept {
    return config_.mode != Mode::Off || config_.trace_path.has_value();
  }

  /// Test hook: overrides the process id consulted for fork detection.
  void set_pid_source(std::function<pid_t()> pid_source) { pid_source_ = std::move(pid_source); }

 private:
  bool intercepted(EntropySource source) const { return config_.intercepts.count(source) > 0; }
  bool foreign_process_locked(const char* call);
  ssize_t serve_replay_locked(EntropySource source, void* buf, std::size_t capacity,
                              std::uint32_t flags, bool* fall_through);
  void record_locked(EntropySource source, std::size_t capacity, std::uint32_t flags,
                     const void* buf, ssize_t result);
  void log_locked(const std::string& line);
  void trace_locked(const std::string& line);
  [[noreturn]] void fail(int exit_code, const std::string& message);

  Config config_;
  FatalHandler fatal_;
  pid_t owner_pid_;
  std::function<pid_t()> pid_source_;
  bool fork_warned_ = false;

  mutable std::mutex mutex_;
  std::set<int> tracked_fds_;
  std::optional<ProfileWriter> urandom_writer_;
  std::optional<ProfileWriter> getrandom_writer_;
  std::optional<ProfileReader> urandom_reader_;
  std::optional<ProfileReader> getrandom_reader_;
  int log_fd_ = -1;
  int trace_fd_ = -1;
  dev_t urandom_rdev_ = 0;
  bool have_urandom_rdev_ = false;
};

/// Formats up to `limit` leading bytes the way strace prints buffers.
std::string escape_bytes(const void* data, std::size_t size, std::size_t limit = 8);

}  // namespace repro::interposer
