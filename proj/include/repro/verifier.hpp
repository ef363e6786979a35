#pragma once

// Run artifacts, evaluation metrics and the reproducibility verdict.
//
// Two runs are reproducible when their evaluation metrics and their process
// metrics (per-epoch losses and epoch count, never wall time) are exactly
// identical. Accuracies are carried as exact ratios; real values travel as
// shortest round-trip decimal strings so "identical" means string equality.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace repro::verifier {

enum class Task { Classification, Regression };

std::string_view to_string(Task task);
std::optional<Task> parse_task(std::string_view name);

/// Non-negative exact fraction.
struct Ratio {
  std::uint64_t num = 0;
  std::uint64_t den = 1;

  double value() const { return static_cast<double>(num) / static_cast<double>(den); }
  std::string to_string() const;
  Ratio reduced() const;

  friend bool operator==(const Ratio& a, const Ratio& b);
  friend bool operator<(const Ratio& a, const Ratio& b);
};

/// |a - b| computed exactly.
Ratio abs_diff(const Ratio& a, const Ratio& b);

/// Orders class labels numerically when both are integers, otherwise
/// lexicographically (integers first).
struct LabelLess {
  bool operator()(const std::string& a, const std::string& b) const;
};

using PerClassAccuracy = std::map<std::string, Ratio, LabelLess>;

class MetricError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

Ratio overall_accuracy(std::span<const std::string> predictions, std::span<const std::string> labels);
PerClassAccuracy per_class_accuracy(std::span<const std::string> predictions,
                                    std::span<const std::string> labels);
double mean_absolute_error(std::span<const double> predictions, std::span<const double> truths);

struct ProcessMetrics {
  std::vector<std::string> losses;  // canonical decimal strings, one per epoch
  std::uint64_t epochs = 0;
  double wall_seconds = 0;
};

struct Manifest {
  int schema_version = 1;
  Task task = Task::Classification;
  std::string command;
  std::string started_at;
  std::string ended_at;
  std::string status = "ok";
};

/// Metrics as emitted by the run itself, checked against a recomputation on
/// load.
struct StoredEvaluation {
  std::optional<double> overall_accuracy;
  std::optional<std::map<std::string, double, LabelLess>> per_class_accuracy;
  std::optional<double> mae;
};

struct RunArtifact {
  Manifest manifest;
  Task task = Task::Classification;
  /// Ground truth: class labels, or canonical decimal strings for regression.
  std::vector<std::string> truths;
  std::vector<std::string> predictions;
  ProcessMetrics process;
  StoredEvaluation stored_eval;

  std::size_t n_test() const { return truths.size(); }
};

class ArtifactError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IntegrityError : public ArtifactError {
 public:
  using ArtifactError::ArtifactError;
};

class IncomparableError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr int kArtifactSchemaVersion = 1;

RunArtifact load_run_artifact(const std::filesystem::path& dir);

/// Writes manifest.json, process.json and eval.json. Evaluation metrics are
/// recomputed from the raw vectors.
void save_run_artifact(const std::filesystem::path& dir, const RunArtifact& artifact);

/// Regression vectors parsed back to doubles.
std::vector<double> as_reals(std::span<const std::string> values);

struct PredictionDiff {
  std::size_t count = 0;
  std::vector<std::size_t> indices;
};

PredictionDiff prediction_diff(const RunArtifact& a, const RunArtifact& b);

struct ComparisonReport {
  Task task = Task::Classification;
  std::size_t n_test = 0;
  bool eval_identical = false;
  bool process_identical = false;
  bool reproducible = false;

  PredictionDiff predictions;

  // Classification only.
  std::optional<Ratio> overall_a;
  std::optional<Ratio> overall_b;
  std::optional<Ratio> overall_diff;
  std::optional<Ratio> max_per_class_diff;
  std::optional<std::string> max_per_class_label;

  // Regression only.
  std::optional<double> mae_a;
  std::optional<double> mae_b;

  std::uint64_t epochs_a = 0;
  std::uint64_t epochs_b = 0;
  std::optional<std::size_t> loss_first_divergence;
  double wall_seconds_a = 0;
  double wall_seconds_b = 0;
};

ComparisonReport compare_runs(const RunArtifact& a, const RunArtifact& b);

/// Largest |acc_a - acc_b| over the classes of two comparable runs.
std::pair<Ratio, std::string> max_per_class_diff(const PerClassAccuracy& a, const PerClassAccuracy& b);

struct MetricVariance {
  std::string metric;
  bool is_ratio = true;  // rendered as a percentage
  std::vector<double> per_pair;
  double max_abs_diff = 0;
  double sdev = 0;  // sample standard deviation (n - 1) of per_pair
};

struct VarianceSummary {
  Task task = Task::Classification;
  std::size_t pair_count = 0;
  std::vector<MetricVariance> metrics;

  const MetricVariance* find(std::string_view metric) const;
};

using ArtifactPair = std::pair<RunArtifact, RunArtifact>;

VarianceSummary variance_analysis(std::span<const ArtifactPair> pairs);

/// Max and sample standard deviation of a list of per-pair differences.
MetricVariance summarize_differences(std::string metric, bool is_ratio, std::vector<double> diffs);

enum class ReportFormat { Text, Json };

std::string render_report(const ComparisonReport& report, ReportFormat format);
std::string render_summary(const VarianceSummary& summary, ReportFormat format);

/// "1.7% / 0.3%" for ratios, "48 / 14.1" for counts.
std::string render_variance_cell(const MetricVariance& metric);

/// 0 when reproducible, 1 otherwise.
int exit_code(const ComparisonReport& report);

}  // namespace repro::verifier
