// LD_PRELOAD shim. Exposes the entropy-related libc symbols and routes them
// through the process-wide repro::interposer::Interposer.
//
// Calls made while a hook is already running on the same thread (including
// the profile I/O done during start-up) go straight to the next provider.

#include <dlfcn.h>
#include <fcntl.h>
#include <pthread.h>
#include <sys/syscall.h>
#include <unistd.h>

#include <cstdarg>
#include <cstdlib>
#include <string>

#include "repro/interposer.hpp"

namespace {

using repro::interposer::Interposer;

using OpenFn = int (*)(const char*, int, ...);
using Open2Fn = int (*)(const char*, int);
using OpenatFn = int (*)(int, const char*, int, ...);
using Openat2Fn = int (*)(int, const char*, int);
using ReadFn = ssize_t (*)(int, void*, size_t);
using ReadChkFn = ssize_t (*)(int, void*, size_t, size_t);
using CloseFn = int (*)(int);
using GetrandomFn = ssize_t (*)(void*, size_t, unsigned int);

ssize_t getrandom_syscall(void* buf, size_t len, unsigned int flags) {
  return ::syscall(SYS_getrandom, buf, len, flags);
}

struct RealTable {
  GetrandomFn getrandom;
  OpenFn open;
  OpenFn open64;
  Open2Fn open_2;
  Open2Fn open64_2;
  OpenatFn openat;
  OpenatFn openat64;
  Openat2Fn openat_2;
  Openat2Fn openat64_2;
  ReadFn read;
  ReadChkFn read_chk;
  CloseFn close;
};

template <typename F>
F next_symbol(const char* name) {
  return reinterpret_cast<F>(::dlsym(RTLD_NEXT, name));
}

const RealTable& real() {
  static const RealTable table = [] {
    RealTable t{};
    t.getrandom = next_symbol<GetrandomFn>("getrandom");
    if (t.getrandom == nullptr) t.getrandom = &getrandom_syscall;
    t.open = next_symbol<OpenFn>("open");
    t.open64 = next_symbol<OpenFn>("open64");
    t.open_2 = next_symbol<Open2Fn>("__open_2");
    t.open64_2 = next_symbol<Open2Fn>("__open64_2");
    t.openat = next_symbol<OpenatFn>("openat");
    t.openat64 = next_symbol<OpenatFn>("openat64");
    t.openat_2 = next_symbol<Openat2Fn>("__openat_2");
    t.openat64_2 = next_symbol<Openat2Fn>("__openat64_2");
    t.read = next_symbol<ReadFn>("read");
    t.read_chk = next_symbol<ReadChkFn>("__read_chk");
    t.close = next_symbol<CloseFn>("close");
    return t;
  }();
  return table;
}

thread_local bool t_in_hook = false;

class HookScope {
 public:
  HookScope() { t_in_hook = true; }
  ~HookScope() { t_in_hook = false; }
};

pthread_once_t g_once = PTHREAD_ONCE_INIT;
Interposer* g_state = nullptr;

[[noreturn]] void die(int code, const std::string&) { ::_exit(code); }

void init_at_load() {
  repro::interposer::Config config;
  try {
    config = repro::interposer::config_from_env([](const char* name) { return std::getenv(name); });
  } catch (const repro::interposer::ConfigError& e) {
    const std::string line = std::string("rrr: ") + e.what() + "\n";
    [[maybe_unused]] auto n = ::write(STDERR_FILENO, line.data(), line.size());
    ::_exit(repro::interposer::kConfigExitCode);
  }
  // Intentionally never destroyed: hooks may run during exit handlers.
  auto* state = new Interposer(std::move(config), &die, ::getpid());
  state->start();
  g_state = state;
}

Interposer* state() {
  ::pthread_once(&g_once, &init_at_load);
  return g_state;
}

bool needs_mode(int flags) { return (flags & O_CREAT) != 0 || (flags & O_TMPFILE) == O_TMPFILE; }

int open_common(const char* call, OpenFn fn, const char* path, int flags, mode_t mode) {
  const int fd = fn(path, flags, mode);
  if (t_in_hook) return fd;
  HookScope scope;
  if (Interposer* s = state()) s->on_open(call, AT_FDCWD, path, flags, fd);
  return fd;
}

int openat_common(const char* call, OpenatFn fn, int dirfd, const char* path, int flags,
                  mode_t mode) {
  const int fd = fn(dirfd, path, flags, mode);
  if (t_in_hook) return fd;
  HookScope scope;
  if (Interposer* s = state()) s->on_open(call, dirfd, path, flags, fd);
  return fd;
}

template <typename Fn>
int fortified_open(const char* call, Fn fn, const char* path, int flags) {
  const int fd = fn(path, flags);
  if (t_in_hook) return fd;
  HookScope scope;
  if (Interposer* s = state()) s->on_open(call, AT_FDCWD, path, flags, fd);
  return fd;
}

template <typename Fn>
int fortified_openat(const char* call, Fn fn, int dirfd, const char* path, int flags) {
  const int fd = fn(dirfd, path, flags);
  if (t_in_hook) return fd;
  HookScope scope;
  if (Interposer* s = state()) s->on_open(call, dirfd, path, flags, fd);
  return fd;
}

__attribute__((constructor)) void rrr_constructor() {
  HookScope scope;
  state();
}

}  // namespace

extern "C" {

__attribute__((visibility("default"))) ssize_t getrandom(void* buf, size_t buflen, unsigned int flags) {
  const GetrandomFn fn = real().getrandom;
  if (t_in_hook) return fn(buf, buflen, flags);
  HookScope scope;
  Interposer* s = state();
  return s ? s->on_getrandom(buf, buflen, flags, fn) : fn(buf, buflen, flags);
}

__attribute__((visibility("default"))) int open(const char* path, int flags, ...) {
  mode_t mode = 0;
  if (needs_mode(flags)) {
    va_list ap;
    va_start(ap, flags);
    mode = va_arg(ap, mode_t);
    va_end(ap);
  }
  return open_common("open", real().open, path, flags, mode);
}

__attribute__((visibility("default"))) int open64(const char* path, int flags, ...) {
  mode_t mode = 0;
  if (needs_mode(flags)) {
    va_list ap;
    va_start(ap, flags);
    mode = va_arg(ap, mode_t);
    va_end(ap);
  }
  return open_common("open", real().open64, path, flags, mode);
}

__attribute__((visibility("default"))) int __open_2(const char* path, int flags) {
  return fortified_open("open", real().open_2, path, flags);
}

__attribute__((visibility("default"))) int __open64_2(const char* path, int flags) {
  return fortified_open("open", real().open64_2, path, flags);
}

__attribute__((visibility("default"))) int openat(int dirfd, const char* path, int flags, ...) {
  mode_t mode = 0;
  if (needs_mode(flags)) {
    va_list ap;
    va_start(ap, flags);
    mode = va_arg(ap, mode_t);
    va_end(ap);
  }
  return openat_common("openat", real().openat, dirfd, path, flags, mode);
}

__attribute__((visibility("default"))) int openat64(int dirfd, const char* path, int flags, ...) {
  mode_t mode = 0;
  if (needs_mode(flags)) {
    va_list ap;
    va_start(ap, flags);
    mode = va_arg(ap, mode_t);
    va_end(ap);
  }
  return openat_common("openat", real().openat64, dirfd, path, flags, mode);
}

__attribute__((visibility("default"))) int __openat_2(int dirfd, const char* path, int flags) {
  return fortified_openat("openat", real().openat_2, dirfd, path, flags);
}

__attribute__((visibility("default"))) int __openat64_2(int dirfd, const char* path, int flags) {
  return fortified_openat("openat", real().openat64_2, dirfd, path, flags);
}

__attribute__((visibility("default"))) ssize_t read(int fd, void* buf, size_t count) {
  const ReadFn fn = real().read;
  if (t_in_hook) return fn(fd, buf, count);
  HookScope scope;
  Interposer* s = state();
  return s ? s->on_read(fd, buf, count, fn) : fn(fd, buf, count);
}

__attribute__((visibility("default"))) ssize_t __read_chk(int fd, void* buf, size_t nbytes,
                                                          size_t buflen) {
  // Oversized requests go to the real checker, which terminates the process.
  if (t_in_hook || nbytes > buflen) return real().read_chk(fd, buf, nbytes, buflen);
  HookScope scope;
  Interposer* s = state();
  return s ? s->on_read(fd, buf, nbytes, real().read) : real().read(fd, buf, nbytes);
}

__attribute__((visibility("default"))) int close(int fd) {
  const int result = real().close(fd);
  if (t_in_hook) return result;
  HookScope scope;
  if (Interposer* s = state()) s->on_close(fd, result);
  return result;
}

}  // extern "C"
