#include <gtest/gtest.h>

#include <fcntl.h>

#include <cerrno>
#include <cstring>
#include <map>

#include "repro/interposer.hpp"
#include "test_util.hpp"

using namespace repro;
using namespace repro::interposer;

namespace {

struct Fatal {
  int code;
  std::string message;
};

[[noreturn]] void throw_fatal(int code, const std::string& message) { throw Fatal{code, message}; }

// Deterministic stand-ins for the real calls.
std::uint8_t g_next = 0;
int g_calls = 0;

ssize_t fake_getrandom(void* buf, std::size_t n, unsigned int) {
  ++g_calls;
  auto* p = static_cast<std::uint8_t*>(buf);
  for (std::size_t i = 0; i < n; ++i) p[i] = g_next++;
  return static_cast<ssize_t>(n);
}

ssize_t failing_getrandom(void*, std::size_t, unsigned int) {
  ++g_calls;
  errno = EAGAIN;
  return -1;
}

ssize_t fake_read(int, void* buf, std::size_t n) { return fake_getrandom(buf, n, 0); }

Config make_config(Mode mode, const std::filesystem::path& dir) {
  Config c;
  c.mode = mode;
  c.profile_dir = dir;
  return c;
}

std::unique_ptr<Interposer> started(Config c) {
  auto ip = std::make_unique<Interposer>(std::move(c), throw_fatal, 100);
  ip->set_pid_source([] { return 100; });
  ip->start();
  return ip;
}

class InterposerTest : public ::testing::Test {
 protected:
  void SetUp() override {
    g_next = 0;
    g_calls = 0;
  }
  TempDir dir;
};

}  // namespace

TEST_F(InterposerTest, RecordThenReplayServesIdenticalBytes) {
  std::vector<std::uint8_t> recorded(48);
  {
    auto ip = started(make_config(Mode::Record, dir.path()));
    ip->on_open("openat", AT_FDCWD, "/dev/urandom", O_RDONLY, 42);
    EXPECT_TRUE(ip->is_tracked(42));
    EXPECT_EQ(ip->on_getrandom(recorded.data(), 16, 0, fake_getrandom), 16);
    EXPECT_EQ(ip->on_read(42, recorded.data() + 16, 32, fake_read), 32);
    ip->on_close(42, 0);
    EXPECT_FALSE(ip->is_tracked(42));
  }
  EXPECT_EQ(ProfileReader::open(dir.path(), EntropySource::Getrandom).size(), 1u);
  EXPECT_EQ(ProfileReader::open(dir.path(), EntropySource::UrandomRead).size(), 1u);

  g_next = 200;
  g_calls = 0;
  std::vector<std::uint8_t> replayed(48);
  auto ip = started(make_config(Mode::Replay, dir.path()));
  ip->on_open("open", AT_FDCWD, "/dev/urandom", O_RDONLY, 7);
  EXPECT_EQ(ip->on_getrandom(replayed.data(), 16, 0, fake_getrandom), 16);
  EXPECT_EQ(ip->on_read(7, replayed.data() + 16, 32, fake_read), 32);
  EXPECT_EQ(replayed, recorded);
  EXPECT_EQ(g_calls, 0) << "replay must not touch the real source";
}

TEST_F(InterposerTest, ReplayLengthMismatchAborts) {
  {
    auto ip = started(make_config(Mode::Record, dir.path()));
    std::uint8_t buf[16];
    ip->on_getrandom(buf, 16, 0, fake_getrandom);
  }
  auto ip = started(make_config(Mode::Replay, dir.path()));
  std::uint8_t buf[32];
  try {
    ip->on_getrandom(buf, 32, 0, fake_getrandom);
    FAIL() << "divergence not reported";
  } catch (const Fatal& f) {
    EXPECT_EQ(f.code, kDivergenceExitCode);
    EXPECT_NE(f.message.find("len=16"), std::string::npos) << f.message;
    EXPECT_NE(f.message.find("len=32"), std::string::npos) << f.message;
  }
}

TEST_F(InterposerTest, ReplayFlagsMismatchAborts) {
  {
    auto ip = started(make_config(Mode::Record, dir.path()));
    std::uint8_t buf[8];
    ip->on_getrandom(buf, 8, 0, fake_getrandom);
  }
  auto ip = started(make_config(Mode::Replay, dir.path()));
  std::uint8_t buf[8];
  EXPECT_THROW(ip->on_getrandom(buf, 8, 1, fake_getrandom), Fatal);
}

TEST_F(InterposerTest, ReplayBeyondProfileAborts) {
  {
    auto ip = started(make_config(Mode::Record, dir.path()));
    std::uint8_t buf[8];
    ip->on_getrandom(buf, 8, 0, fake_getrandom);
  }
  auto ip = started(make_config(Mode::Replay, dir.path()));
  std::uint8_t buf[8];
  ip->on_getrandom(buf, 8, 0, fake_getrandom);
  try {
    ip->on_getrandom(buf, 8, 0, fake_getrandom);
    FAIL();
  } catch (const Fatal& f) {
    EXPECT_EQ(f.code, kDivergenceExitCode);
    EXPECT_NE(f.message.find("after all 1"), std::string::npos) << f.message;
  }
}

TEST_F(InterposerTest, WarnStrictnessFallsBackToRealCall) {
  {
    auto ip = started(make_config(Mode::Record, dir.path()));
    std::uint8_t buf[8];
    ip->on_getrandom(buf, 8, 0, fake_getrandom);
  }
  Config c = make_config(Mode::Replay, dir.path());
  c.strictness = Strictness::Warn;
  c.log_path = dir / "log.txt";
  auto ip = started(c);
  std::uint8_t buf[4];
  g_calls = 0;
  EXPECT_EQ(ip->on_getrandom(buf, 4, 0, fake_getrandom), 4);
  EXPECT_EQ(g_calls, 1);
  EXPECT_NE(slurp(dir / "log.txt").find("falling back"), std::string::npos);
}

TEST_F(InterposerTest, MissingReplayProfileIsFatal) {
  Interposer ip(make_config(Mode::Replay, dir / "absent"), throw_fatal, 100);
  try {
    ip.start();
    FAIL();
  } catch (const Fatal& f) {
    EXPECT_EQ(f.code, kDivergenceExitCode);
  }
}

TEST_F(InterposerTest, FailedCallsAreNotRecorded) {
  {
    auto ip = started(make_config(Mode::Record, dir.path()));
    std::uint8_t buf[8];
    errno = 0;
    EXPECT_EQ(ip->on_getrandom(buf, 8, 0, failing_getrandom), -1);
    EXPECT_EQ(errno, EAGAIN) << "errno must survive the hook";
  }
  EXPECT_EQ(ProfileReader::open(dir.path(), EntropySource::Getrandom).size(), 0u);
}

TEST_F(InterposerTest, UntrackedDescriptorsPassThrough) {
  auto ip = started(make_config(Mode::Record, dir.path()));
  ip->on_open("openat", AT_FDCWD, "/etc/hostname", O_RDONLY, 9);
  std::uint8_t buf[8];
  EXPECT_EQ(ip->on_read(9, buf, 8, fake_read), 8);
  EXPECT_EQ(ProfileReader::open(dir.path(), EntropySource::UrandomRead).size(), 0u);
}

TEST_F(InterposerTest, ReusedDescriptorIsUntracked) {
  auto ip = started(make_config(Mode::Record, dir.path()));
  ip->on_open("openat", AT_FDCWD, "/dev/urandom", O_RDONLY, 5);
  EXPECT_TRUE(ip->is_tracked(5));
  // The descriptor number comes back for an ordinary file without a close we saw.
  ip->on_open("openat", AT_FDCWD, "/tmp/x", O_RDONLY, 5);
  EXPECT_FALSE(ip->is_tracked(5));
  ip->on_open("openat", AT_FDCWD, "/dev/urandom", O_RDONLY, -1);
  EXPECT_EQ(ip->tracked_count(), 0u);
}

TEST_F(InterposerTest, NonInterceptedSourcePassesThrough) {
  Config c = make_config(Mode::Record, dir.path());
  c.intercepts = {EntropySource::UrandomRead};
  {
    auto ip = started(c);
    std::uint8_t buf[8];
    EXPECT_EQ(ip->on_getrandom(buf, 8, 0, fake_getrandom), 8);
  }
  EXPECT_FALSE(std::filesystem::exists(dir / "getrandom.conf"));
  EXPECT_TRUE(std::filesystem::exists(dir / "urandom.conf"));
}

TEST_F(InterposerTest, ForkedChildInRecordStopsRecording) {
  Config c = make_config(Mode::Record, dir.path());
  c.log_path = dir / "log.txt";
  int pid = 100;
  {
    Interposer ip(c, throw_fatal, 100);
    ip.set_pid_source([&] { return pid; });
    ip.start();
    std::uint8_t buf[8];
    ip.on_getrandom(buf, 8, 0, fake_getrandom);
    pid = 101;
    EXPECT_EQ(ip.on_getrandom(buf, 8, 0, fake_getrandom), 8);
  }
  EXPECT_EQ(ProfileReader::open(dir.path(), EntropySource::Getrandom).size(), 1u);
  EXPECT_NE(slurp(dir / "log.txt").find("forked process 101"), std::string::npos);
}

TEST_F(InterposerTest, ForkedChildInReplayIsFatal) {
  {
    auto ip = started(make_config(Mode::Record, dir.path()));
    std::uint8_t buf[8];
    ip->on_getrandom(buf, 8, 0, fake_getrandom);
  }
  int pid = 100;
  Interposer ip(make_config(Mode::Replay, dir.path()), throw_fatal, 100);
  ip.set_pid_source([&] { return pid; });
  ip.start();
  pid = 555;
  std::uint8_t buf[8];
  try {
    ip.on_getrandom(buf, 8, 0, fake_getrandom);
    FAIL();
  } catch (const Fatal& f) {
    EXPECT_EQ(f.code, kDivergenceExitCode);
  }
}

TEST_F(InterposerTest, OffModeWithoutTraceIsInert) {
  Interposer ip(Config{}, throw_fatal, 100);
  ip.start();
  EXPECT_FALSE(ip.active());
  ip.on_open("openat", AT_FDCWD, "/dev/urandom", O_RDONLY, 3);
  EXPECT_EQ(ip.tracked_count(), 0u);
}

TEST_F(InterposerTest, TraceLinesLookLikeStrace) {
  Config c;
  c.trace_path = dir / "trace.txt";
  {
    auto ip = started(c);
    std::uint8_t buf[4];
    ip->on_open("openat", AT_FDCWD, "/dev/urandom", O_RDONLY | O_CLOEXEC, 3);
    ip->on_read(3, buf, 4, fake_read);
    ip->on_getrandom(buf, 4, 0, fake_getrandom);
    ip->on_close(3, 0);
  }
  const std::string t = slurp(dir / "trace.txt");
  EXPECT_NE(t.find("openat(AT_FDCWD, \"/dev/urandom\", 0x80000) = 3"), std::string::npos) << t;
  EXPECT_NE(t.find("read(3</dev/urandom>, \"\\x00\\x01\\x02\\x03\", 4) = 4"), std::string::npos) << t;
  EXPECT_NE(t.find("getrandom(\"\\x04\\x05\\x06\\x07\", 4, 0) = 4"), std::string::npos) << t;
  EXPECT_NE(t.find("close(3</dev/urandom>) = 0"), std::string::npos) << t;
}

TEST(InterposerConfig, ParsesEnvironment) {
  std::map<std::string, std::string> env{{"RRR_MODE", "replay"},
                                         {"RRR_DIR", "/p"},
                                         {"RRR_STRICT", "warn"},
                                         {"RRR_INTERCEPT", "getrandom"}};
  auto lookup = [&](const char* name) -> const char* {
    auto it = env.find(name);
    return it == env.end() ? nullptr : it->second.c_str();
  };
  Config c = config_from_env(lookup);
  EXPECT_EQ(c.mode, Mode::Replay);
  EXPECT_EQ(c.profile_dir, "/p");
  EXPECT_EQ(c.strictness, Strictness::Warn);
  EXPECT_EQ(c.intercepts, std::set<EntropySource>{EntropySource::Getrandom});

  env.erase("RRR_INTERCEPT");
  EXPECT_EQ(config_from_env(lookup).intercepts.size(), 2u);
  env["RRR_INTERCEPT"] = "";
  EXPECT_TRUE(config_from_env(lookup).intercepts.empty());

  env["RRR_INTERCEPT"] = "rdrand";
  EXPECT_THROW(config_from_env(lookup), ConfigError);
  env.erase("RRR_INTERCEPT");
  env["RRR_MODE"] = "rewind";
  EXPECT_THROW(config_from_env(lookup), ConfigError);
  env["RRR_MODE"] = "record";
  env.erase("RRR_DIR");
  EXPECT_THROW(config_from_env(lookup), ConfigError);
  env.clear();
  EXPECT_EQ(config_from_env(lookup).mode, Mode::Off);
}

TEST(InterposerTrace, EscapeBytes) {
  const std::uint8_t data[] = {0, 0xff, 0x41};
  EXPECT_EQ(escape_bytes(data, 3), "\"\\x00\\xff\\x41\"");
  EXPECT_EQ(escape_bytes(data, 3, 2), "\"\\x00\\xff\"...");
}
