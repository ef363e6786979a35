#include <cstdio>
#include <sstream>

#include <json.hpp>

#include "repro/decimal.hpp"
#include "repro/verifier.hpp"

namespace repro::verifier {
namespace {

using nlohmann::json;

constexpr int kReportSchemaVersion = 1;
constexpr std::size_t kMaxListedIndices = 20;

std::string percent(double ratio) {
  if (ratio == 0) return "0";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.1f%%", ratio * 100.0);
  return buf;
}

std::string fixed1(double v) {
  if (v == 0) return "0";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.1f", v);
  return buf;
}

std::string list_indices(const std::vector<std::size_t>& indices) {
  std::string out;
  for (std::size_t i = 0; i < indices.size() && i < kMaxListedIndices; ++i) {
    if (i) out += ", ";
    out += std::to_string(indices[i]);
  }
  if (indices.size() > kMaxListedIndices)
    out += ", ... (" + std::to_string(indices.size() - kMaxListedIndices) + " more)";
  return out;
}

json report_json(const ComparisonReport& r) {
  json doc = {
      {"schema_version", kReportSchemaVersion},
      {"kind", "comparison"},
      {"task", std::string(to_string(r.task))},
      {"n_test", r.n_test},
      {"verdict", r.reproducible ? "reproducible" : "not_reproducible"},
      {"reproducible", r.reproducible},
      {"eval_identical", r.eval_identical},
      {"process_identical", r.process_identical},
      {"inconsistent_prediction_count", r.predictions.count},
      {"inconsistent_prediction_indices", r.predictions.indices},
      {"epochs", {std::to_string(r.epochs_a), std::to_string(r.epochs_b)}},
      {"loss_first_divergence", r.loss_first_divergence ? json(*r.loss_first_divergence) : json(nullptr)},
      {"wall_seconds", {format_decimal(r.wall_seconds_a), format_decimal(r.wall_seconds_b)}},
  };
  if (r.task == Task::Classification) {
    doc["overall_accuracy"] = {r.overall_a->to_string(), r.overall_b->to_string()};
    doc["overall_diff"] = r.overall_diff->to_string();
    doc["max_per_class_diff"] = r.max_per_class_diff->to_string();
    doc["max_per_class_label"] = *r.max_per_class_label;
  } else {
    doc["mae"] = {format_decimal(*r.mae_a), format_decimal(*r.mae_b)};
  }
  return doc;
}

std::string report_text(const ComparisonReport& r) {
  std::ostringstream out;
  out << "verdict: " << (r.reproducible ? "REPRODUCIBLE" : "NOT REPRODUCIBLE") << '\n';
  out << "task: " << to_string(r.task) << ", " << r.n_test << " test instances\n";
  out << "evaluation metrics: " << (r.eval_identical ? "identical" : "differ") << '\n';
  if (r.task == Task::Classification) {
    out << "  overall accuracy: " << r.overall_a->to_string() << " vs " << r.overall_b->to_string()
        << " (diff " << r.overall_diff->to_string() << ")\n";
    out << "  max per-class accuracy diff: " << r.max_per_class_diff->to_string();
    if (r.max_per_class_diff->num != 0) out << " (class " << *r.max_per_class_label << ")";
    out << '\n';
  } else {
    out << "  mae: " << format_decimal(*r.mae_a) << " vs " << format_decimal(*r.mae_b) << '\n';
  }
  out << "  inconsistent predictions: " << r.predictions.count << " of " << r.n_test << '\n';
  if (r.predictions.count > 0) out << "    at indices: " << list_indices(r.predictions.indices) << '\n';
  out << "process metrics: " << (r.process_identical ? "identical" : "differ")
      << " (training time excluded)\n";
  out << "  epochs: " << r.epochs_a << " vs " << r.epochs_b << '\n';
  out << "  first diverging loss epoch: "
      << (r.loss_first_divergence ? std::to_string(*r.loss_first_divergence) : std::string("none")) << '\n';
  out << "  wall seconds: " << format_decimal(r.wall_seconds_a) << " vs " << format_decimal(r.wall_seconds_b)
      << " (not compared)\n";
  return out.str();
}

}  // namespace

std::string render_variance_cell(const MetricVariance& m) {
  if (m.is_ratio) return percent(m.max_abs_diff) + " / " + percent(m.sdev);
  return fixed1(m.max_abs_diff) + " / " + fixed1(m.sdev);
}

std::string render_report(const ComparisonReport& report, ReportFormat format) {
  if (format == ReportFormat::Json) return report_json(report).dump(2) + "\n";
  return report_text(report);
}

std::string render_summary(const VarianceSummary& summary, ReportFormat format) {
  if (format == ReportFormat::Json) {
    json metrics = json::object();
    for (const auto& m : summary.metrics) {
      std::vector<std::string> per_pair;
      for (double d : m.per_pair) per_pair.push_back(format_decimal(d));
      metrics[m.metric] = {
          {"max_abs_diff", format_decimal(m.max_abs_diff)},
          {"sdev", format_decimal(m.sdev)},
          {"per_pair", per_pair},
      };
    }
    json doc = {
        {"schema_version", kReportSchemaVersion},
        {"kind", "variance"},
        {"task", std::string(to_string(summary.task))},
        {"pair_count", summary.pair_count},
        {"metrics", metrics},
    };
    return doc.dump(2) + "\n";
  }
  std::ostringstream out;
  out << "variance over " << summary.pair_count << " pairs (max diff / sdev)\n";
  for (const auto& m : summary.metrics) out << "  " << m.metric << ": " << render_variance_cell(m) << '\n';
  return out.str();
}

}  // namespace repro::verifier
