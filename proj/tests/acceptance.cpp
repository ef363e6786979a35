// Acceptance suite: one PASS/FAIL line per criterion, exit 1 if any fails.

#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "repro/diagnoser.hpp"
#include "repro/orchestrator.hpp"
#include "repro/profile_store.hpp"
#include "repro/verifier.hpp"
#include "test_util.hpp"

using namespace repro;
namespace orch = repro::orchestrator;
namespace diag = repro::diagnoser;
namespace ver = repro::verifier;

namespace {

const std::filesystem::path kData = REPRO_TEST_DATA;
const std::string kRepro = REPRO_BIN;

// Collects the first few failed checks of a criterion.
class Checks {
 public:
  void expect(bool ok, const std::string& what) {
    if (ok) return;
    if (failed_++ < 4) notes_ << (notes_.tellp() > 0 ? "; " : "") << what;
  }
  void note(const std::string& detail) { detail_ = detail; }
  bool ok() const { return failed_ == 0; }
  std::string text() const { return ok() ? detail_ : notes_.str(); }

 private:
  int failed_ = 0;
  std::ostringstream notes_;
  std::string detail_;
};

orch::SpawnResult repro_cli(std::vector<std::string> args, bool capture = true) {
  orch::SpawnOptions o;
  o.argv = {kRepro};
  o.argv.insert(o.argv.end(), args.begin(), args.end());
  o.capture_stdout = capture;
  o.quiet_stderr = true;
  return orch::spawn_and_wait(o);
}

bool rel_close(double a, double b, double rel) { return std::abs(a - b) <= std::abs(b) * rel; }

void selftest(Checks& c) {
  const auto r = repro_cli({"selftest", "--trials", "20"});
  c.expect(r.started && r.exit_code == 0, "selftest exit " + std::to_string(r.exit_code));
  c.expect(r.stdout_text.find("selftest: 20/20 trials passed") != std::string::npos, "not 20/20");
  c.expect(r.wall_seconds < 10.0, "took " + std::to_string(r.wall_seconds) + " s");
  char buf[64];
  std::snprintf(buf, sizeof buf, "20/20 trials in %.2f s", r.wall_seconds);
  c.note(buf);
}

ver::RunArtifact classification_run(std::size_t n, std::size_t wrong) {
  ver::RunArtifact a;
  a.task = a.manifest.task = ver::Task::Classification;
  for (std::size_t i = 0; i < n; ++i) {
    a.truths.push_back(std::to_string(i % 10));
    a.predictions.push_back(std::to_string(i < wrong ? (i + 1) % 10 : i % 10));
  }
  a.process.losses = {"0.5"};
  a.process.epochs = 1;
  return a;
}

void verifier_exactness(Checks& c) {
  const auto a = classification_run(2500, 21);
  const auto acc = ver::overall_accuracy(a.predictions, a.truths);
  c.expect(acc == ver::Ratio{2479, 2500} && acc.to_string() == "0.9916", "accuracy " + acc.to_string());
  const auto b = classification_run(2500, 34);
  c.expect(ver::overall_accuracy(b.predictions, b.truths).to_string() == "0.9864", "second accuracy");

  auto flipped = a;
  std::mt19937_64 rng(48);
  std::set<std::size_t> idx;
  while (idx.size() < 48) idx.insert(rng() % 2500);
  for (auto i : idx) flipped.predictions[i] = flipped.predictions[i] == "0" ? "1" : "0";
  const auto report = ver::compare_runs(a, flipped);
  c.expect(report.predictions.count == 48, "inconsistent " + std::to_string(report.predictions.count));

  // Per-class max diff against exact fractions counted by hand.
  std::size_t mismatches = 0;
  for (int round = 0; round < 20; ++round) {
    std::vector<std::string> truth, pa, pb;
    for (int i = 0; i < 1000; ++i) {
      truth.push_back(std::to_string(rng() % 7));
      pa.push_back(rng() % 4 ? truth.back() : std::to_string(rng() % 7));
      pb.push_back(rng() % 4 ? truth.back() : std::to_string(rng() % 7));
    }
    std::map<std::string, std::array<long long, 3>> counts;  // correct a, correct b, total
    for (std::size_t i = 0; i < truth.size(); ++i) {
      auto& k = counts[truth[i]];
      k[0] += pa[i] == truth[i];
      k[1] += pb[i] == truth[i];
      k[2] += 1;
    }
    long long best_num = 0, best_den = 1;
    for (const auto& [label, k] : counts) {
      const long long num = std::llabs(k[0] - k[1]), den = k[2];
      if (num * best_den > best_num * den) best_num = num, best_den = den;
    }
    const auto [diff, label] =
        ver::max_per_class_diff(ver::per_class_accuracy(pa, truth), ver::per_class_accuracy(pb, truth));
    if (static_cast<long long>(diff.num) * best_den != best_num * static_cast<long long>(diff.den)) ++mismatches;
  }
  c.expect(mismatches == 0, std::to_string(mismatches) + " per-class mismatches");
  c.note("accuracy 0.9916 / 0.9864, 48 inconsistent, per-class oracle 20x1000 exact");
}

void trace_diagnosis(Checks& c) {
  const auto trace = diag::parse_syscall_trace(slurp(kData / "training_trace.txt"), diag::SyscallCatalog::defaults());
  std::set<std::string> rules;
  for (const auto& f : trace.findings) rules.insert(f.matched_rule);
  c.expect(trace.findings.size() == 2 && rules == std::set<std::string>{"urandom_read", "getrandom"},
           std::to_string(trace.findings.size()) + " trace findings");
  const auto profile = diag::parse_function_profile(slurp(kData / "training_profile.txt"));
  const auto lib = diag::cross_check_nondeterminism(profile.stats, diag::NondetCatalog::defaults());
  const auto d = diag::build_diagnosis(trace.findings, lib, {});
  c.expect(d.plan.syscalls_to_intercept == std::vector<std::string>{"urandom_read", "getrandom"},
           "intercept plan");
  c.expect(d.plan.patches_to_apply.size() == 1 && d.plan.patches_to_apply[0].function_pattern == "bias_add",
           "patch plan");
  c.expect(d.plan.blockers.empty() && diag::exit_code(d) == 0, "unexpected blocker");

  const auto blocked = repro_cli({"diagnose", "--trace", (kData / "training_trace.txt").string(), "--prof",
                                  (kData / "blocker_profile.txt").string()});
  c.expect(blocked.exit_code == 1, "blocker exit " + std::to_string(blocked.exit_code));
  c.note("intercept urandom_read+getrandom, patch bias_add; sparse_dense_matmul exits 1");
}

void profile_format(Checks& c) {
  std::mt19937_64 rng(1000);
  auto make = [&](EntropySource source, std::size_t records, bool slack) {
    RandomProfile p;
    p.source = source;
    for (std::size_t i = 0; i < records; ++i) {
      RandomRecord r;
      r.seq = i;
      r.source = source;
      r.requested_len = slack ? 64 : rng() % 300;
      r.bytes.resize(slack ? 40 : (r.requested_len ? rng() % (r.requested_len + 1) : 0));
      for (auto& b : r.bytes) b = static_cast<std::uint8_t>(rng());
      r.flags = source == EntropySource::Getrandom ? static_cast<std::uint32_t>(rng() % 8) : 0;
      p.records.push_back(std::move(r));
    }
    return p;
  };

  std::size_t round_trip_failures = 0;
  for (int i = 0; i < 1000; ++i) {
    const auto source = i % 2 ? EntropySource::Getrandom : EntropySource::UrandomRead;
    const auto p = make(source, rng() % 12, false);
    const auto image = serialize_profile(p);
    if (!(deserialize_profile(image, source) == p) || serialize_profile(deserialize_profile(image)) != image)
      ++round_trip_failures;
  }
  c.expect(round_trip_failures == 0, std::to_string(round_trip_failures) + " round-trip failures");

  std::size_t cases = 0, accepted = 0;
  for (auto source : {EntropySource::UrandomRead, EntropySource::Getrandom}) {
    const auto p = make(source, 10, true);
    const auto image = serialize_profile(p);
    std::vector<std::size_t> framing;
    for (std::size_t i = 0; i < kProfileHeaderSize; ++i) framing.push_back(i);
    std::size_t offset = kProfileHeaderSize;
    for (const auto& r : p.records) {
      for (std::size_t i = 0; i < 8; ++i) framing.push_back(offset + i);
      for (std::size_t i = 16; i < 24; ++i) framing.push_back(offset + i);
      offset += kRecordPrefixSize + r.bytes.size();
    }
    for (auto pos : framing) {
      for (int mask = 1; mask < 256; ++mask) {
        auto corrupt = image;
        corrupt[pos] ^= static_cast<std::uint8_t>(mask);
        ++cases;
        try {
          deserialize_profile(corrupt, source);
          ++accepted;
        } catch (const ProfileError& e) {
          if (e.kind() != ProfileError::Kind::CorruptProfile) ++accepted;
        }
      }
    }
  }
  c.expect(accepted == 0, std::to_string(accepted) + " of " + std::to_string(cases) + " corruptions not flagged");
  c.note("1000 round trips, " + std::to_string(cases) + " framing corruptions rejected");
}

void variance_analysis(Checks& c) {
  std::vector<ver::ArtifactPair> same;
  for (int i = 0; i < 8; ++i) {
    const auto a = classification_run(2500, static_cast<std::size_t>(i));
    same.emplace_back(a, a);
  }
  const auto zero = ver::variance_analysis(same);
  for (const auto& m : zero.metrics)
    c.expect(m.max_abs_diff == 0 && m.sdev == 0 && ver::render_variance_cell(m) == "0 / 0", m.metric + " not zero");
  c.expect(zero.metrics.size() == 3, "metric count");

  const std::vector<int> wrong{48, 31, 12, 40, 27, 19, 44, 35};
  std::vector<ver::ArtifactPair> seeded;
  for (int k : wrong) seeded.emplace_back(classification_run(2500, 0), classification_run(2500, k));
  const auto s = ver::variance_analysis(seeded);
  const auto* pred = s.find("predictions");
  const auto* overall = s.find("overall_accuracy");
  c.expect(pred && pred->max_abs_diff == 48 && rel_close(pred->sdev, 12.351980754981307, 1e-12), "prediction sdev");
  c.expect(overall && rel_close(overall->sdev, 12.351980754981307 / 2500, 1e-12), "accuracy sdev");
  const auto m1 = ver::summarize_differences("overall_accuracy", true, {0.008, 0.002, 0.004});
  c.expect(rel_close(m1.sdev, 0.003055050463303893, 1e-12), "sdev of 3 diffs");
  const auto m2 =
      ver::summarize_differences("per_class", true, {0.017, 0.012, 0.009, 0.004, 0.011, 0.015, 0.002, 0.007});
  c.expect(rel_close(m2.sdev, 0.005180664601601393, 1e-12), "sdev of 8 diffs");
  c.note("8 identical pairs all zero; oracle sdevs within 1e-12 relative");
}

void overhead(Checks& c) {
  TempDir t;
  const std::vector<std::string> consume{kRepro, "__consume", "--bytes", "1048576", "--chunk", "4096"};
  std::vector<double> off, rec;
  for (int i = 0; i < 5; ++i) {
    for (bool record : {false, true}) {
      std::vector<std::string> args{"run", "--mode", record ? "record" : "off"};
      if (record) args.insert(args.end(), {"--dir", (t / ("p" + std::to_string(i))).string()});
      args.push_back("--");
      args.insert(args.end(), consume.begin(), consume.end());
      const auto r = repro_cli(args);
      c.expect(r.exit_code == 0, "run exit " + std::to_string(r.exit_code));
      (record ? rec : off).push_back(r.wall_seconds);
    }
  }
  const double ratio = orch::median(rec) / orch::median(off);
  c.expect(ratio < 2.0, "record/off median ratio " + std::to_string(ratio));

  const std::vector<double> a{1.00, 1.02, 0.98, 1.01, 0.99, 1.03}, lo{1, 1.1, 1.2, 1.3}, hi{2, 2.1, 2.2, 2.3};
  const auto same = orch::timing_report(a, a);
  c.expect(same.rank_sum.p_value > 0.05, "identical p " + std::to_string(same.rank_sum.p_value));
  c.expect(orch::timing_report(lo, hi).cliffs_delta == 1.0 && orch::timing_report(hi, lo).cliffs_delta == -1.0,
           "separated delta");
  char buf[96];
  std::snprintf(buf, sizeof buf, "record/off median wall ratio %.2f on 1 MiB; p=%.3f; delta=+-1", ratio,
                same.rank_sum.p_value);
  c.note(buf);
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<void(Checks&)>>> criteria = {
      {"record/replay bit-identity", selftest},  {"verifier exactness", verifier_exactness},
      {"trace diagnosis", trace_diagnosis},      {"profile format", profile_format},
      {"variance analysis", variance_analysis},  {"overhead", overhead},
  };
  int failures = 0;
  for (const auto& [name, fn] : criteria) {
    Checks c;
    try {
      fn(c);
    } catch (const std::exception& e) {
      c.expect(false, std::string("exception: ") + e.what());
    }
    failures += !c.ok();
    std::cout << (c.ok() ? "PASS" : "FAIL") << "  " << name << ": " << c.text() << std::endl;
  }
  return failures ? 1 : 0;
}
