// Drives the repro binary end to end.

#include <gtest/gtest.h>

#include <json.hpp>

#include "repro/orchestrator.hpp"
#include "repro/profile_store.hpp"
#include "test_util.hpp"

using namespace repro::orchestrator;

namespace {

const std::filesystem::path kData = REPRO_TEST_DATA;
const std::string kRepro = REPRO_BIN;

struct Cli {
  int exit_code = -1;
  std::string out;
};

Cli repro_cli(std::vector<std::string> args) {
  SpawnOptions o;
  o.argv = {kRepro};
  o.argv.insert(o.argv.end(), args.begin(), args.end());
  o.capture_stdout = true;
  o.quiet_stderr = true;
  const auto r = spawn_and_wait(o);
  return {r.started ? r.exit_code : -1, r.stdout_text};
}

std::vector<std::string> consume(const std::string& bytes = "4096") {
  return {kRepro, "__consume", "--bytes", bytes};
}

Cli run_mode(const std::string& mode, const std::filesystem::path& profile, const std::filesystem::path& out,
             std::vector<std::string> command, std::vector<std::string> extra = {}) {
  std::vector<std::string> args{"run", "--mode", mode, "--out", out.string()};
  if (mode != "off") args.insert(args.end(), {"--dir", profile.string()});
  args.insert(args.end(), extra.begin(), extra.end());
  args.push_back("--");
  args.insert(args.end(), command.begin(), command.end());
  return repro_cli(args);
}

std::vector<std::string> manifest(const std::filesystem::path& dir) {
  const std::vector<std::filesystem::path> paths{dir};
  return hash_manifest(paths, DigestAlgo::Sha256);
}

}  // namespace

TEST(Cli, RunModesAndExitCodes) {
  TempDir t;
  const auto prof = t / "prof";
  const auto a = run_mode("off", prof, t / "a", consume());
  const auto b = run_mode("off", prof, t / "b", consume());
  ASSERT_EQ(a.exit_code, 0);
  ASSERT_EQ(b.exit_code, 0);
  EXPECT_NE(a.out, b.out);

  const auto rec = run_mode("record", prof, t / "rec", consume());
  ASSERT_EQ(rec.exit_code, 0);
  EXPECT_TRUE(std::filesystem::exists(prof / "urandom.conf"));
  EXPECT_TRUE(std::filesystem::exists(prof / "getrandom.conf"));
  const auto before = manifest(prof);
  const auto rep1 = run_mode("replay", prof, t / "rep1", consume());
  const auto rep2 = run_mode("replay", prof, t / "rep2", consume());
  ASSERT_EQ(rep1.exit_code, 0);
  EXPECT_EQ(rep1.out, rec.out);
  EXPECT_EQ(rep2.out, rec.out);
  EXPECT_EQ(manifest(prof), before);

  EXPECT_EQ(repro_cli({"verify", (t / "rec").string(), (t / "rep1").string()}).exit_code, 0);
  EXPECT_EQ(repro_cli({"verify", (t / "a").string(), (t / "b").string()}).exit_code, 1);
  EXPECT_EQ(repro_cli({"verify", (t / "a").string(), (t / "missing").string()}).exit_code, 2);

  // A longer run asks for more entropy than was recorded.
  EXPECT_EQ(run_mode("replay", prof, t / "long", consume("8192")).exit_code, 3);

  std::filesystem::remove(prof / "urandom.conf");
  std::filesystem::remove(prof / "getrandom.conf");
  EXPECT_EQ(run_mode("replay", prof, t / "gone", consume()).exit_code, 3);
  EXPECT_EQ(run_mode("replay", t / "nowhere", t / "gone2", consume()).exit_code, 3);

  EXPECT_EQ(run_mode("off", prof, t / "fail", {"sh", "-c", "exit 5"}).exit_code, 4);
  EXPECT_EQ(repro_cli({"run", "--mode", "record", "--", "true"}).exit_code, 2);
  EXPECT_EQ(repro_cli({"run", "--mode", "sideways", "--", "true"}).exit_code, 2);
}

TEST(Cli, ManifestRecordsTheRun) {
  TempDir t;
  ASSERT_EQ(run_mode("off", t / "p", t / "a", consume()).exit_code, 0);
  const auto m = nlohmann::json::parse(slurp(t / "a" / "manifest.json"));
  EXPECT_EQ(m["status"], "ok");
  EXPECT_EQ(m["task"], "classification");
  EXPECT_FALSE(m["started_at"].get<std::string>().empty());
  const auto p = nlohmann::json::parse(slurp(t / "a" / "process.json"));
  EXPECT_GT(std::stod(p["wall_seconds"].get<std::string>()), 0.0);
}

TEST(Cli, TamperedProfileIsDetectedAtReplay) {
  TempDir t;
  const auto prof = t / "prof";
  const auto rec = run_mode("record", prof, t / "rec", consume());
  ASSERT_EQ(rec.exit_code, 0);
  auto image = slurp(prof / "getrandom.conf");
  ASSERT_GT(image.size(), repro::kProfileHeaderSize + repro::kRecordPrefixSize);
  image[repro::kProfileHeaderSize + repro::kRecordPrefixSize] ^= 0x40;  // first payload byte
  spit(prof / "getrandom.conf", image);
  const auto rep = run_mode("replay", prof, t / "rep", consume());
  EXPECT_TRUE(rep.exit_code != 0 || rep.out != rec.out);
  spit(prof / "getrandom.conf", "RRPF");
  EXPECT_EQ(run_mode("replay", prof, t / "rep2", consume()).exit_code, 3);
}

TEST(Cli, TraceCountsMatchRecordedProfile) {
  TempDir t;
  const auto prof = t / "prof";
  const auto rec = run_mode("record", prof, t / "rec", consume("4096"), {"--trace"});
  ASSERT_EQ(rec.exit_code, 0);
  const auto trace = t / "rec" / "trace.txt";
  ASSERT_TRUE(std::filesystem::exists(trace));
  const auto d = repro_cli({"diagnose", "--trace", trace.string(), "--json"});
  ASSERT_EQ(d.exit_code, 0);
  const auto doc = nlohmann::json::parse(d.out);
  std::map<std::string, std::size_t> requests;
  for (const auto& f : doc["trace_findings"]) requests[f["matched_rule"]] = f["requests"].get<std::size_t>();
  const auto urandom = repro::ProfileReader::open(prof, repro::EntropySource::UrandomRead).size();
  const auto getrandom = repro::ProfileReader::open(prof, repro::EntropySource::Getrandom).size();
  EXPECT_EQ(urandom, 8u);
  EXPECT_EQ(getrandom, 8u);
  EXPECT_EQ(requests["urandom_read"], urandom);
  EXPECT_EQ(requests["getrandom"], getrandom);
}

TEST(Cli, InterceptListLimitsSources) {
  TempDir t;
  const auto prof = t / "prof";
  ASSERT_EQ(run_mode("record", prof, t / "rec", consume(), {"--intercept", "getrandom"}).exit_code, 0);
  EXPECT_FALSE(std::filesystem::exists(prof / "urandom.conf"));
  EXPECT_TRUE(std::filesystem::exists(prof / "getrandom.conf"));
}

TEST(Cli, DiagnoseTrainingRun) {
  const auto r = repro_cli({"diagnose", "--trace", (kData / "training_trace.txt").string(), "--prof",
                            (kData / "training_profile.txt").string()});
  EXPECT_EQ(r.exit_code, 0);
  EXPECT_NE(r.out.find("status: mitigable"), std::string::npos);
  EXPECT_NE(r.out.find("intercept urandom_read"), std::string::npos);
  EXPECT_NE(r.out.find("intercept getrandom"), std::string::npos);
  EXPECT_NE(r.out.find("patch bias_add [available]"), std::string::npos);

  const auto j = repro_cli({"diagnose", "--trace", (kData / "training_trace.txt").string(), "--intercepts",
                            "urandom_read,getrandom", "--json"});
  EXPECT_EQ(j.exit_code, 0);
  EXPECT_EQ(nlohmann::json::parse(j.out)["status"], "fully mitigated");
}

TEST(Cli, DiagnoseBlocker) {
  const auto r = repro_cli({"diagnose", "--trace", (kData / "training_trace.txt").string(), "--prof",
                            (kData / "blocker_profile.txt").string()});
  EXPECT_EQ(r.exit_code, 1);
  EXPECT_NE(r.out.find("unsupported sparse_dense_matmul"), std::string::npos);
  EXPECT_EQ(repro_cli({"diagnose", "--trace", "/nonexistent/trace"}).exit_code, 2);
}

TEST(Cli, Hash) {
  TempDir t;
  spit(t / "empty", "");
  const auto r = repro_cli({"hash", "--algo", "sha1", (t / "empty").string()});
  EXPECT_EQ(r.exit_code, 0);
  EXPECT_EQ(r.out.rfind("sha1:da39a3ee5e6b4b0d3255bfef95601890afd80709  ", 0), 0u);
  EXPECT_EQ(repro_cli({"hash", "--algo", "md5", (t / "empty").string()}).exit_code, 2);
}

TEST(Cli, SelftestAndTamper) {
  const auto r = repro_cli({"selftest", "--trials", "5"});
  EXPECT_EQ(r.exit_code, 0);
  EXPECT_NE(r.out.find("selftest: 5/5 trials passed"), std::string::npos);
  EXPECT_EQ(repro_cli({"selftest", "--trials", "5", "--tamper", "--seed", "3"}).exit_code, 0);
}

TEST(Cli, Timing) {
  const auto r = repro_cli({"timing", "--without", "1.0", "1.1", "0.9", "--with", "1.0", "1.1", "0.9", "--json"});
  ASSERT_EQ(r.exit_code, 0);
  const auto doc = nlohmann::json::parse(r.out);
  EXPECT_EQ(doc["cliffs_delta"], "0");
  EXPECT_EQ(repro_cli({"timing", "--without", "1.0", "--with", "1.0", "2.0"}).exit_code, 2);
}

TEST(Pipeline, EntropyConsumerBecomesReproducible) {
  TempDir t;
  auto cmd = consume();
  std::vector<std::string> args{"pipeline", "--dir", (t / "prof").string(), "--out", (t / "out").string(), "--"};
  args.insert(args.end(), cmd.begin(), cmd.end());
  const auto r = repro_cli(args);
  EXPECT_EQ(r.exit_code, 0);
  const auto report = nlohmann::json::parse(slurp(t / "out" / "pipeline_report.json"));
  EXPECT_EQ(report["verdict"], "reproducible");
  EXPECT_EQ(report["iterations"], 1);
  EXPECT_EQ(report["intercepts"], (nlohmann::json{"urandom_read", "getrandom"}));
}

TEST(Pipeline, AlreadyReproducibleStopsEarly) {
  TempDir t;
  std::vector<std::string> args{"pipeline", "--dir", (t / "prof").string(), "--out", (t / "out").string(),
                                "--", kRepro, "__consume", "--no-entropy"};
  EXPECT_EQ(repro_cli(args).exit_code, 0);
  const auto report = nlohmann::json::parse(slurp(t / "out" / "pipeline_report.json"));
  EXPECT_EQ(report["iterations"], 0);
}

TEST(Pipeline, BlockerStops) {
  TempDir t;
  std::vector<std::string> args{"pipeline", "--dir", (t / "prof").string(), "--out", (t / "out").string(),
                                "--prof", (kData / "blocker_profile.txt").string(), "--"};
  const auto cmd = consume();
  args.insert(args.end(), cmd.begin(), cmd.end());
  EXPECT_EQ(repro_cli(args).exit_code, 1);
  const auto report = nlohmann::json::parse(slurp(t / "out" / "pipeline_report.json"));
  EXPECT_EQ(report["verdict"], "blocked");
}

TEST(Pipeline, UncataloguedSourceIsNotReproducible) {
  TempDir t;
  std::vector<std::string> args{"pipeline", "--dir", (t / "prof").string(), "--out", (t / "out").string(),
                                "--", kRepro, "__consume", "--device", "/dev/random", "--no-getrandom"};
  EXPECT_EQ(repro_cli(args).exit_code, 1);
}

TEST(Pipeline, ChildFailure) {
  TempDir t;
  std::vector<std::string> args{"pipeline", "--dir", (t / "prof").string(), "--out", (t / "out").string(),
                                "--", "sh", "-c", "exit 9"};
  EXPECT_EQ(repro_cli(args).exit_code, 4);
}
