#include "repro/interposer.hpp"

#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

namespace repro::interposer {
namespace {

constexpr const char* kUrandomPath = "/dev/urandom";

std::string describe_request(EntropySource source, std::uint64_t len, std::uint32_t flags) {
  char buf[128];
  std::snprintf(buf, sizeof(buf), "%s(len=%llu, flags=0x%x)",
                std::string(to_string(source)).c_str(), static_cast<unsigned long long>(len), flags);
  return buf;
}

std::string result_text(ssize_t result, int err) {
  if (result >= 0) return std::to_string(result);
  return "-1 " + std::string(strerrorname_np(err) ? strerrorname_np(err) : "E?") + " (" +
         std::strerror(err) + ")";
}

void write_fully(int fd, const std::string& text) {
  const char* p = text.data();
  std::size_t left = text.size();
  while (left > 0) {
    const ssize_t n = ::write(fd, p, left);
    if (n < 0) {
      if (errno == EINTR) continue;
      return;
    }
    p += n;
    left -= static_cast<std::size_t>(n);
  }
}

}  // namespace

std::string_view to_string(Mode mode) {
  switch (mode) {
    case Mode::Off:
      return "off";
    case Mode::Record:
      return "record";
    case Mode::Replay:
      return "replay";
  }
  return "unknown";
}

Config config_from_env(const std::function<const char*(const char*)>& lookup) {
  Config config;
  const char* mode = lookup("RRR_MODE");
  const std::string_view mode_text = mode ? mode : "";
  if (mode_text.empty() || mode_text == "off") {
    config.mode = Mode::Off;
  } else if (mode_text == "record") {
    config.mode = Mode::Record;
  } else if (mode_text == "replay") {
    config.mode = Mode::Replay;
  } else {
    throw ConfigError("RRR_MODE must be record, replay or off, got '" + std::string(mode_text) + "'");
  }

  if (const char* dir = lookup("RRR_DIR"); dir && *dir) config.profile_dir = dir;
  if (config.mode != Mode::Off && config.profile_dir.empty())
    throw ConfigError("RRR_DIR is required when RRR_MODE=" + std::string(to_string(config.mode)));

  if (const char* strict = lookup("RRR_STRICT"); strict && *strict) {
    const std::string_view s = strict;
    if (s == "abort") {
      config.strictness = Strictness::Abort;
    } else if (s == "warn") {
      config.strictness = Strictness::Warn;
    } else {
      throw ConfigError("RRR_STRICT must be abort or warn, got '" + std::string(s) + "'");
    }
  }

  if (const char* log = lookup("RRR_LOG"); log && *log) config.log_path = log;
  if (const char* trace = lookup("RRR_TRACE"); trace && *trace) config.trace_path = trace;

  if (const char* intercept = lookup("RRR_INTERCEPT")) {
    config.intercepts.clear();
    std::string_view rest = intercept;
    while (!rest.empty()) {
      const auto comma = rest.find(',');
      const std::string_view item = rest.substr(0, comma);
      if (!item.empty()) {
        auto source = parse_entropy_source(item);
        if (!source) throw ConfigError("RRR_INTERCEPT names unknown source '" + std::string(item) + "'");
        config.intercepts.insert(*source);
      }
      if (comma == std::string_view::npos) break;
      rest.remove_prefix(comma + 1);
    }
  }
  return config;
}

std::string escape_bytes(const void* data, std::size_t size, std::size_t limit) {
  const auto* p = static_cast<const std::uint8_t*>(data);
  std::string out = "\"";
  const std::size_t shown = size < limit ? size : limit;
  char hex[5];
  for (std::size_t i = 0; i < shown; ++i) {
    std::snprintf(hex, sizeof(hex), "\\x%02x", p[i]);
    out += hex;
  }
  out += '"';
  if (shown < size) out += "...";
  return out;
}

Interposer::Interposer(Config config, FatalHandler fatal, pid_t owner_pid)
    : config_(std::move(config)), fatal_(std::move(fatal)), owner_pid_(owner_pid),
      pid_source_([] { return ::getpid(); }) {}

Interposer::~Interposer() {
  if (log_fd_ >= 0) ::close(log_fd_);
  if (trace_fd_ >= 0) ::close(trace_fd_);
}

void Interposer::start() {
  std::lock_guard lock(mutex_);
  struct stat st {};
  if (::stat(kUrandomPath, &st) == 0 && S_ISCHR(st.st_mode)) {
    urandom_rdev_ = st.st_rdev;
    have_urandom_rdev_ = true;
  }
  if (config_.log_path) {
    log_fd_ = ::open(config_.log_path->c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
  }
  if (config_.trace_path) {
    trace_fd_ = ::open(config_.trace_path->c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
    if (trace_fd_ < 0) log_locked("cannot open trace file " + config_.trace_path->string());
  }

  try {
    if (config_.mode == Mode::Record) {
      if (intercepted(EntropySource::UrandomRead))
        urandom_writer_.emplace(ProfileWriter::create(config_.profile_dir, EntropySource::UrandomRead));
      if (intercepted(EntropySource::Getrandom))
        getrandom_writer_.emplace(ProfileWriter::create(config_.profile_dir, EntropySource::Getrandom));
    } else if (config_.mode == Mode::Replay) {
      if (intercepted(EntropySource::UrandomRead))
        urandom_reader_.emplace(ProfileReader::open(config_.profile_dir, EntropySource::UrandomRead));
      if (intercepted(EntropySource::Getrandom))
        getrandom_reader_.emplace(ProfileReader::open(config_.profile_dir, EntropySource::Getrandom));
    }
  } catch (const ProfileError& e) {
    const int code = config_.mode == Mode::Replay ? kDivergenceExitCode : kConfigExitCode;
    fail(code, std::string("cannot start ") + std::string(to_string(config_.mode)) + ": " + e.what());
  }
}

bool Interposer::is_tracked(int fd) const {
  std::lock_guard lock(mutex_);
  return tracked_fds_.count(fd) > 0;
}

std::size_t Interposer::tracked_count() const {
  std::lock_guard lock(mutex_);
  return tracked_fds_.size();
}

void Interposer::log_locked(const std::string& line) {
  write_fully(log_fd_ >= 0 ? log_fd_ : STDERR_FILENO,
              "rrr[" + std::to_string(pid_source_()) + "]: " + line + "\n");
}

void Interposer::trace_locked(const std::string& line) {
  if (trace_fd_ < 0) return;
  write_fully(trace_fd_, std::to_string(pid_source_()) + "  " + line + "\n");
}

void Interposer::fail(int exit_code, const std::string& message) {
  log_locked(message);
  fatal_(exit_code, message);
  std::abort();
}

bool Interposer::foreign_process_locked(const char* call) {
  if (config_.mode == Mode::Off) return false;
  const pid_t pid = pid_source_();
  if (pid == owner_pid_) return false;
  if (config_.mode == Mode::Replay) {
    fail(kDivergenceExitCode, std::string(call) + " from forked process " + std::to_string(pid) +
                                  " (profile owner " + std::to_string(owner_pid_) +
                                  "); replay cannot be shared between processes");
  }
  if (!fork_warned_) {
    fork_warned_ = true;
    log_locked(std::string(call) + " from forked process " + std::to_string(pid) + " (profile owner " +
               std::to_string(owner_pid_) + "); recording disabled in this process");
  }
  return true;
}

ssize_t Interposer::serve_replay_locked(EntropySource source, void* buf, std::size_t capacity,
                                        std::uint32_t flags, bool* fall_through) {
  *fall_through = false;
  auto& reader = source == EntropySource::Getrandom ? getrandom_reader_ : urandom_reader_;
  const RandomRecord* expected = reader ? reader->peek() : nullptr;
  std::string problem;
  if (expected == nullptr) {
    problem = "replay divergence: unexpected request " + describe_request(source, capacity, flags) +
              " after all " + std::to_string(reader ? reader->size() : 0) + " recorded " +
              std::string(to_string(source)) + " requests were served";
  } else if (expected->requested_len != capacity || expected->flags != flags) {
    problem = "replay divergence at " + std::string(to_string(source)) + " seq " +
              std::to_string(expected->seq) + ": expected " +
              describe_request(source, expected->requested_len, expected->flags) + ", got " +
              describe_request(source, capacity, flags);
  }
  if (!problem.empty()) {
    if (config_.strictness == Strictness::Abort) fail(kDivergenceExitCode, problem);
    log_locked(problem + "; falling back to the real call");
    *fall_through = true;
    return -1;
  }
  const RandomRecord record = *reader->next();
  if (!record.bytes.empty()) std::memcpy(buf, record.bytes.data(), record.bytes.size());
  return static_cast<ssize_t>(record.bytes.size());
}

void Interposer::record_locked(EntropySource source, std::size_t capacity, std::uint32_t flags,
                               const void* buf, ssize_t result) {
  if (result < 0) return;
  auto& writer = source == EntropySource::Getrandom ? getrandom_writer_ : urandom_writer_;
  if (!writer) return;
  try {
    writer->append(capacity, flags,
                   std::span(static_cast<const std::uint8_t*>(buf), static_cast<std::size_t>(result)));
  } catch (const ProfileError& e) {
    fail(kConfigExitCode, std::string("recording failed: ") + e.what());
  }
}

ssize_t Interposer::on_getrandom(void* buf, std::size_t capacity, unsigned int flags,
                                 RealGetrandom real) {
  if (!active()) return real(buf, capacity, flags);
  std::lock_guard lock(mutex_);
  const bool hooked = intercepted(EntropySource::Getrandom) && !foreign_process_locked("getrandom");
  ssize_t result = -1;
  int err = 0;
  bool served = false;
  if (hooked && config_.mode == Mode::Replay) {
    bool fall_through = false;
    result = serve_replay_locked(EntropySource::Getrandom, buf, capacity, flags, &fall_through);
    served = !fall_through;
  }
  if (!served) {
    result = real(buf, capacity, flags);
    err = errno;
    if (hooked && config_.mode == Mode::Record)
      record_locked(EntropySource::Getrandom, capacity, flags, buf, result);
  }
  trace_locked("getrandom(" + (result > 0 ? escape_bytes(buf, static_cast<std::size_t>(result)) : "0x0") +
               ", " + std::to_string(capacity) + ", " + std::to_string(flags) +
               ") = " + result_text(result, err));
  errno = err;
  return result;
}

ssize_t Interposer::on_read(int fd, void* buf, std::size_t capacity, RealRead real) {
  if (!active()) return real(fd, buf, capacity);
  std::unique_lock lock(mutex_);
  if (tracked_fds_.count(fd) == 0) {
    lock.unlock();
    return real(fd, buf, capacity);
  }
  const bool hooked = intercepted(EntropySource::UrandomRead) && !foreign_process_locked("read");
  ssize_t result = -1;
  int err = 0;
  bool served = false;
  if (hooked && config_.mode == Mode::Replay) {
    bool fall_through = false;
    result = serve_replay_locked(EntropySource::UrandomRead, buf, capacity, 0, &fall_through);
    served = !fall_through;
  }
  if (!served) {
    result = real(fd, buf, capacity);
    err = errno;
    if (hooked && config_.mode == Mode::Record)
      record_locked(EntropySource::UrandomRead, capacity, 0, buf, result);
  }
  trace_locked("read(" + std::to_string(fd) + "<" + kUrandomPath + ">, " +
               (result > 0 ? escape_bytes(buf, static_cast<std::size_t>(result)) : "\"\"") + ", " +
               std::to_string(capacity) + ") = " + result_text(result, err));
  errno = err;
  return result;
}

void Interposer::on_open(std::string_view call, int dirfd, const char* path, int flags,
                         int result_fd) {
  if (!active()) return;
  const int err = errno;
  bool entropy_device = false;
  if (result_fd >= 0) {
    if (path && std::strcmp(path, kUrandomPath) == 0) {
      entropy_device = true;
    } else if (have_urandom_rdev_) {
      struct stat st {};
      entropy_device = ::fstat(result_fd, &st) == 0 && S_ISCHR(st.st_mode) && st.st_rdev == urandom_rdev_;
    }
  }
  {
    std::lock_guard lock(mutex_);
    if (result_fd >= 0) {
      if (entropy_device) {
        tracked_fds_.insert(result_fd);
      } else {
        tracked_fds_.erase(result_fd);
      }
    }
    if (trace_fd_ >= 0) {
      std::string dir = dirfd == AT_FDCWD ? "AT_FDCWD" : std::to_string(dirfd);
      char flag_text[16];
      std::snprintf(flag_text, sizeof(flag_text), "0x%x", static_cast<unsigned>(flags));
      trace_locked(std::string(call) + "(" + dir + ", \"" + (path ? path : "") + "\", " + flag_text +
                   ") = " + result_text(result_fd, err));
    }
  }
  errno = err;
}

void Interposer::on_close(int fd, int result) {
  if (!active()) return;
  const int err = errno;
  {
    std::lock_guard lock(mutex_);
    // The descriptor is gone whether or not close reported an error.
    const bool was_tracked = tracked_fds_.erase(fd) > 0;
    if (was_tracked)
      trace_locked("close(" + std::to_string(fd) + "<" + kUrandomPath + ">) = " + result_text(result, err));
  }
  errno = err;
}

}  // namespace repro::interposer
