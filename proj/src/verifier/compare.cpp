#include <algorithm>
#include <cmath>

#include "repro/verifier.hpp"

namespace repro::verifier {
namespace {

void require_comparable(const RunArtifact& a, const RunArtifact& b) {
  if (a.task != b.task)
    throw IncomparableError("runs solve different tasks (" + std::string(to_string(a.task)) + " vs " +
                            std::string(to_string(b.task)) + ")");
  if (a.n_test() != b.n_test())
    throw IncomparableError("runs evaluate different test sets (" + std::to_string(a.n_test()) + " vs " +
                            std::to_string(b.n_test()) + " instances)");
  if (a.n_test() == 0) throw IncomparableError("runs have no test instances");
  const auto mismatch = std::mismatch(a.truths.begin(), a.truths.end(), b.truths.begin());
  if (mismatch.first != a.truths.end())
    throw IncomparableError("ground truth differs at instance " +
                            std::to_string(mismatch.first - a.truths.begin()));
}

}  // namespace

PredictionDiff prediction_diff(const RunArtifact& a, const RunArtifact& b) {
  require_comparable(a, b);
  PredictionDiff diff;
  for (std::size_t i = 0; i < a.predictions.size(); ++i) {
    if (a.predictions[i] != b.predictions[i]) diff.indices.push_back(i);
  }
  diff.count = diff.indices.size();
  return diff;
}

ComparisonReport compare_runs(const RunArtifact& a, const RunArtifact& b) {
  ComparisonReport r;
  r.predictions = prediction_diff(a, b);
  r.task = a.task;
  r.n_test = a.n_test();

  bool metrics_equal = true;
  if (a.task == Task::Classification) {
    r.overall_a = overall_accuracy(a.predictions, a.truths);
    r.overall_b = overall_accuracy(b.predictions, b.truths);
    r.overall_diff = abs_diff(*r.overall_a, *r.overall_b);
    const PerClassAccuracy pa = per_class_accuracy(a.predictions, a.truths);
    const PerClassAccuracy pb = per_class_accuracy(b.predictions, b.truths);
    auto [diff, label] = max_per_class_diff(pa, pb);
    r.max_per_class_diff = diff;
    r.max_per_class_label = label;
    metrics_equal = r.overall_diff->num == 0 && diff.num == 0;
  } else {
    r.mae_a = mean_absolute_error(as_reals(a.predictions), as_reals(a.truths));
    r.mae_b = mean_absolute_error(as_reals(b.predictions), as_reals(b.truths));
    metrics_equal = *r.mae_a == *r.mae_b;
  }
  r.eval_identical = metrics_equal && r.predictions.count == 0;

  r.epochs_a = a.process.epochs;
  r.epochs_b = b.process.epochs;
  const auto& la = a.process.losses;
  const auto& lb = b.process.losses;
  const std::size_t common = std::min(la.size(), lb.size());
  for (std::size_t i = 0; i < common; ++i) {
    if (la[i] != lb[i]) {
      r.loss_first_divergence = i;
      break;
    }
  }
  if (!r.loss_first_divergence && la.size() != lb.size()) r.loss_first_divergence = common;
  r.process_identical = r.epochs_a == r.epochs_b && !r.loss_first_divergence;

  r.wall_seconds_a = a.process.wall_seconds;
  r.wall_seconds_b = b.process.wall_seconds;
  r.reproducible = r.eval_identical && r.process_identical;
  return r;
}

int exit_code(const ComparisonReport& report) { return report.reproducible ? 0 : 1; }

const MetricVariance* VarianceSummary::find(std::string_view metric) const {
  for (const auto& m : metrics)
    if (m.metric == metric) return &m;
  return nullptr;
}

VarianceSummary variance_analysis(std::span<const ArtifactPair> pairs) {
  if (pairs.empty()) throw std::invalid_argument("variance analysis needs at least one pair of runs");
  VarianceSummary summary;
  summary.task = pairs.front().first.task;
  summary.pair_count = pairs.size();

  std::vector<double> overall, per_class, mae, predictions;
  for (const auto& [a, b] : pairs) {
    if (a.task != summary.task || b.task != summary.task)
      throw IncomparableError("variance analysis mixes classification and regression runs");
    const ComparisonReport r = compare_runs(a, b);
    predictions.push_back(static_cast<double>(r.predictions.count));
    if (summary.task == Task::Classification) {
      overall.push_back(r.overall_diff->value());
      per_class.push_back(r.max_per_class_diff->value());
    } else {
      mae.push_back(std::abs(*r.mae_a - *r.mae_b));
    }
  }
  if (summary.task == Task::Classification) {
    summary.metrics.push_back(summarize_differences("overall_accuracy", true, std::move(overall)));
    summary.metrics.push_back(summarize_differences("per_class_accuracy", true, std::move(per_class)));
  } else {
    summary.metrics.push_back(summarize_differences("mae", false, std::move(mae)));
  }
  summary.metrics.push_back(summarize_differences("predictions", false, std::move(predictions)));
  return summary;
}

}  // namespace repro::verifier
