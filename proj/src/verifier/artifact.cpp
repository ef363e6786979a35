#include <charconv>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "repro/decimal.hpp"
#include "repro/verifier.hpp"

namespace repro::verifier {
namespace {

using nlohmann::json;

json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ArtifactError("cannot read " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ArtifactError(path.string() + ": malformed JSON: " + e.what());
  }
}

void write_json(const std::filesystem::path& path, const json& doc) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ArtifactError("cannot write " + path.string());
  out << doc.dump(2) << '\n';
  if (!out) throw ArtifactError("write failed for " + path.string());
}

[[noreturn]] void field_error(const std::filesystem::path& file, std::string_view field,
                              const std::string& problem) {
  throw ArtifactError(file.filename().string() + ": field '" + std::string(field) + "' " + problem);
}

const json& require(const json& doc, const std::filesystem::path& file, std::string_view field) {
  if (!doc.is_object()) throw ArtifactError(file.filename().string() + ": expected a JSON object");
  auto it = doc.find(field);
  if (it == doc.end()) field_error(file, field, "is missing");
  return *it;
}

double read_real(const json& value, const std::filesystem::path& file, std::string_view field) {
  if (value.is_number()) return value.get<double>();
  if (value.is_string()) {
    if (auto v = parse_decimal(value.get_ref<const std::string&>())) return *v;
  }
  field_error(file, field, "is not a decimal value");
}

std::uint64_t read_count(const json& value, const std::filesystem::path& file, std::string_view field) {
  if (value.is_number_unsigned()) return value.get<std::uint64_t>();
  if (value.is_string()) {
    const auto& s = value.get_ref<const std::string&>();
    std::uint64_t n = 0;
    auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), n);
    if (ec == std::errc() && end == s.data() + s.size() && !s.empty()) return n;
  }
  field_error(file, field, "is not a non-negative integer");
}

std::string read_label(const json& value, const std::filesystem::path& file, std::string_view field) {
  if (value.is_string()) return value.get<std::string>();
  if (value.is_number_integer()) return value.dump();
  field_error(file, field, "holds a value that is neither a string nor an integer label");
}

std::vector<std::string> read_labels(const json& doc, const std::filesystem::path& file,
                                     std::string_view field) {
  const json& arr = require(doc, file, field);
  if (!arr.is_array()) field_error(file, field, "is not an array");
  std::vector<std::string> out;
  out.reserve(arr.size());
  for (const auto& v : arr) out.push_back(read_label(v, file, field));
  return out;
}

std::vector<std::string> read_reals(const json& doc, const std::filesystem::path& file,
                                    std::string_view field) {
  const json& arr = require(doc, file, field);
  if (!arr.is_array()) field_error(file, field, "is not an array");
  std::vector<std::string> out;
  out.reserve(arr.size());
  for (const auto& v : arr) out.push_back(format_decimal(read_real(v, file, field)));
  return out;
}

std::optional<std::string> optional_string(const json& doc, std::string_view field) {
  auto it = doc.find(field);
  if (it == doc.end() || !it->is_string()) return std::nullopt;
  return it->get<std::string>();
}

void verify_integrity(const RunArtifact& a, const std::filesystem::path& eval_path) {
  const std::string file = eval_path.filename().string();
  if (a.task == Task::Classification) {
    const Ratio overall = overall_accuracy(a.predictions, a.truths);
    if (a.stored_eval.overall_accuracy && *a.stored_eval.overall_accuracy != overall.value())
      throw IntegrityError(file + ": overall_accuracy " + format_decimal(*a.stored_eval.overall_accuracy) +
                           " disagrees with " + overall.to_string() + " recomputed from labels/predictions");
    if (a.stored_eval.per_class_accuracy) {
      const PerClassAccuracy recomputed = per_class_accuracy(a.predictions, a.truths);
      const auto& stored = *a.stored_eval.per_class_accuracy;
      if (stored.size() != recomputed.size())
        throw IntegrityError(file + ": per_class_accuracy lists " + std::to_string(stored.size()) +
                             " classes, labels contain " + std::to_string(recomputed.size()));
      for (const auto& [label, ratio] : recomputed) {
        auto it = stored.find(label);
        if (it == stored.end())
          throw IntegrityError(file + ": per_class_accuracy lacks class " + label);
        if (it->second != ratio.value())
          throw IntegrityError(file + ": per_class_accuracy[" + label + "] " + format_decimal(it->second) +
                               " disagrees with recomputed " + ratio.to_string());
      }
    }
  } else if (a.stored_eval.mae) {
    const double mae = mean_absolute_error(as_reals(a.predictions), as_reals(a.truths));
    if (*a.stored_eval.mae != mae)
      throw IntegrityError(file + ": mae " + format_decimal(*a.stored_eval.mae) + " disagrees with " +
                           format_decimal(mae) + " recomputed from truths/predictions");
  }
}

}  // namespace

std::vector<double> as_reals(std::span<const std::string> values) {
  std::vector<double> out;
  out.reserve(values.size());
  for (const auto& s : values) {
    auto v = parse_decimal(s);
    if (!v) throw MetricError("not a decimal value: '" + s + "'");
    out.push_back(*v);
  }
  return out;
}

RunArtifact load_run_artifact(const std::filesystem::path& dir) {
  RunArtifact a;
  const auto manifest_path = dir / "manifest.json";
  const auto process_path = dir / "process.json";
  const auto eval_path = dir / "eval.json";

  const json manifest = read_json(manifest_path);
  const json& version = require(manifest, manifest_path, "schema_version");
  if (!version.is_number_integer() && !version.is_string())
    field_error(manifest_path, "schema_version", "is not an integer");
  a.manifest.schema_version = static_cast<int>(read_count(version, manifest_path, "schema_version"));
  if (a.manifest.schema_version != kArtifactSchemaVersion)
    field_error(manifest_path, "schema_version", "is unsupported: " + version.dump());
  const json& task = require(manifest, manifest_path, "task");
  auto parsed_task = task.is_string() ? parse_task(task.get<std::string>()) : std::nullopt;
  if (!parsed_task) field_error(manifest_path, "task", "must be classification or regression");
  a.task = a.manifest.task = *parsed_task;
  a.manifest.command = optional_string(manifest, "command").value_or("");
  a.manifest.started_at = optional_string(manifest, "started_at").value_or("");
  a.manifest.ended_at = optional_string(manifest, "ended_at").value_or("");
  a.manifest.status = optional_string(manifest, "status").value_or("ok");

  const json process = read_json(process_path);
  const json& losses = require(process, process_path, "losses");
  if (!losses.is_array()) field_error(process_path, "losses", "is not an array");
  for (const auto& l : losses) a.process.losses.push_back(format_decimal(read_real(l, process_path, "losses")));
  a.process.epochs = read_count(require(process, process_path, "epochs"), process_path, "epochs");
  a.process.wall_seconds = read_real(require(process, process_path, "wall_seconds"), process_path, "wall_seconds");
  if (a.process.epochs != a.process.losses.size())
    field_error(process_path, "epochs", "is " + std::to_string(a.process.epochs) + " but " +
                                            std::to_string(a.process.losses.size()) + " losses are listed");
  if (!(a.process.wall_seconds > 0)) field_error(process_path, "wall_seconds", "must be positive");

  const json eval = read_json(eval_path);
  if (a.task == Task::Classification) {
    a.truths = read_labels(eval, eval_path, "labels");
    a.predictions = read_labels(eval, eval_path, "predictions");
    if (auto it = eval.find("overall_accuracy"); it != eval.end())
      a.stored_eval.overall_accuracy = read_real(*it, eval_path, "overall_accuracy");
    if (auto it = eval.find("per_class_accuracy"); it != eval.end()) {
      if (!it->is_object()) field_error(eval_path, "per_class_accuracy", "is not an object");
      auto& stored = a.stored_eval.per_class_accuracy.emplace();
      for (const auto& [label, value] : it->items())
        stored[label] = read_real(value, eval_path, "per_class_accuracy");
    }
  } else {
    a.truths = read_reals(eval, eval_path, "truths");
    a.predictions = read_reals(eval, eval_path, "predictions");
    if (auto it = eval.find("mae"); it != eval.end()) a.stored_eval.mae = read_real(*it, eval_path, "mae");
  }
  if (a.truths.empty()) field_error(eval_path, "predictions", "is empty; at least one test instance is required");
  if (a.truths.size() != a.predictions.size())
    field_error(eval_path, "predictions", "has " + std::to_string(a.predictions.size()) +
                                              " entries for " + std::to_string(a.truths.size()) + " instances");
  try {
    verify_integrity(a, eval_path);
  } catch (const MetricError& e) {
    throw ArtifactError(eval_path.filename().string() + ": " + e.what());
  }
  return a;
}

void save_run_artifact(const std::filesystem::path& dir, const RunArtifact& a) {
  std::filesystem::create_directories(dir);
  json manifest = {
      {"schema_version", kArtifactSchemaVersion},
      {"task", std::string(to_string(a.task))},
      {"command", a.manifest.command},
      {"started_at", a.manifest.started_at},
      {"ended_at", a.manifest.ended_at},
  };
  if (a.manifest.status != "ok") manifest["status"] = a.manifest.status;
  write_json(dir / "manifest.json", manifest);

  json process = {
      {"losses", a.process.losses},
      {"epochs", std::to_string(a.process.epochs)},
      {"wall_seconds", format_decimal(a.process.wall_seconds)},
  };
  write_json(dir / "process.json", process);

  json eval;
  if (a.task == Task::Classification) {
    eval["labels"] = a.truths;
    eval["predictions"] = a.predictions;
    eval["overall_accuracy"] = overall_accuracy(a.predictions, a.truths).to_string();
    json per_class = json::object();
    for (const auto& [label, ratio] : per_class_accuracy(a.predictions, a.truths))
      per_class[label] = ratio.to_string();
    eval["per_class_accuracy"] = per_class;
  } else {
    eval["truths"] = a.truths;
    eval["predictions"] = a.predictions;
    eval["mae"] = format_decimal(mean_absolute_error(as_reals(a.predictions), as_reals(a.truths)));
  }
  write_json(dir / "eval.json", eval);
}

}  // namespace repro::verifier
