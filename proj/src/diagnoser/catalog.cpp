#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "repro/diagnoser.hpp"

namespace repro::diagnoser {
namespace {

using nlohmann::json;

// Kept identical to catalogs/syscalls.json and catalogs/nondet.json.
constexpr std::string_view kDefaultSyscallCatalog = R"({
  "schema_version": 1,
  "kind": "syscall",
  "entries": [
    {"name": "urandom_read", "match_kind": "path_argument", "path_pattern": "/dev/urandom"},
    {"name": "getrandom", "match_kind": "syscall_name", "min_kernel": "3.17"}
  ]
})";

constexpr std::string_view kDefaultNondetCatalog = R"({
  "schema_version": 1,
  "kind": "nondet",
  "entries": [
    {
      "function_pattern": "bias_add",
      "framework": "tensorflow",
      "affected_versions": "1.14",
      "cause": "atomic floating-point accumulation: the GPU kernel uses atomicAdd(), whose parallel summation order is undetermined",
      "patch_status": "available",
      "remediation": "tensorflow-determinism 0.3.0: add 'from tfdeterminism import patch' and 'patch()' to the training script; bias_add is replaced by _patch_bias_add",
      "patched_name": "_patch_bias_add"
    },
    {
      "function_pattern": "unsorted_segment_sum",
      "framework": "tensorflow",
      "affected_versions": "1.14, 2.1",
      "cause": "atomic floating-point accumulation in the GPU segment reduction",
      "patch_status": "experimental",
      "remediation": "not covered by the default patch; apply the experimental segment-reduction patch from the framework-determinism project"
    },
    {
      "function_pattern": "sparse_dense_matmul",
      "framework": "tensorflow",
      "affected_versions": "1.14, 2.1",
      "cause": "atomic floating-point accumulation in the GPU sparse-dense product",
      "patch_status": "none",
      "remediation": "no deterministic implementation has been released; document it as an unsupported nondeterministic operation"
    }
  ]
})";

json parse_document(std::string_view text, std::string_view kind) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw CatalogError("malformed catalog JSON: " + std::string(e.what()));
  }
  if (!doc.is_object()) throw CatalogError("catalog must be a JSON object");
  if (doc.value("schema_version", 0) != kCatalogSchemaVersion)
    throw CatalogError("unsupported catalog schema_version");
  if (auto it = doc.find("kind"); it != doc.end() && *it != kind)
    throw CatalogError("expected a '" + std::string(kind) + "' catalog, got '" + it->dump() + "'");
  if (!doc.contains("entries") || !doc["entries"].is_array())
    throw CatalogError("catalog has no 'entries' array");
  return doc;
}

std::string required_string(const json& entry, const char* field) {
  auto it = entry.find(field);
  if (it == entry.end() || !it->is_string() || it->get_ref<const std::string&>().empty())
    throw CatalogError(std::string("catalog entry lacks '") + field + "': " + entry.dump());
  return it->get<std::string>();
}

std::optional<std::string> optional_string(const json& entry, const char* field) {
  auto it = entry.find(field);
  if (it == entry.end() || it->is_null()) return std::nullopt;
  if (!it->is_string()) throw CatalogError(std::string("catalog field '") + field + "' must be a string");
  return it->get<std::string>();
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw CatalogError("cannot read catalog " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

std::string_view to_string(PatchStatus status) {
  switch (status) {
    case PatchStatus::Available:
      return "available";
    case PatchStatus::Experimental:
      return "experimental";
    case PatchStatus::None:
      return "none";
  }
  return "none";
}

SyscallCatalog SyscallCatalog::from_json(std::string_view text) {
  const json doc = parse_document(text, "syscall");
  SyscallCatalog catalog;
  std::set<std::string> names;
  for (const auto& e : doc["entries"]) {
    SyscallRule rule;
    rule.name = required_string(e, "name");
    const std::string kind = required_string(e, "match_kind");
    if (kind == "syscall_name") {
      rule.match_kind = MatchKind::SyscallName;
    } else if (kind == "path_argument") {
      rule.match_kind = MatchKind::PathArgument;
    } else {
      throw CatalogError("unknown match_kind '" + kind + "'");
    }
    rule.syscall = optional_string(e, "syscall").value_or(rule.name);
    rule.path_pattern = optional_string(e, "path_pattern");
    rule.min_kernel = optional_string(e, "min_kernel");
    if (rule.match_kind == MatchKind::PathArgument && (!rule.path_pattern || rule.path_pattern->empty()))
      throw CatalogError("path_argument rule '" + rule.name + "' needs a path_pattern");
    if (!names.insert(rule.name).second) throw CatalogError("duplicate syscall rule '" + rule.name + "'");
    catalog.entries.push_back(std::move(rule));
  }
  return catalog;
}

SyscallCatalog SyscallCatalog::defaults() { return from_json(kDefaultSyscallCatalog); }

SyscallCatalog SyscallCatalog::load(const std::filesystem::path& path) {
  try {
    return from_json(read_file(path));
  } catch (const CatalogError& e) {
    throw CatalogError(path.string() + ": " + e.what());
  }
}

NondetCatalog NondetCatalog::from_json(std::string_view text) {
  const json doc = parse_document(text, "nondet");
  NondetCatalog catalog;
  std::set<std::pair<std::string, std::string>> seen;
  for (const auto& e : doc["entries"]) {
    NondetEntry entry;
    entry.function_pattern = required_string(e, "function_pattern");
    entry.framework = required_string(e, "framework");
    entry.affected_versions = optional_string(e, "affected_versions").value_or("");
    entry.cause = optional_string(e, "cause").value_or("");
    entry.remediation = optional_string(e, "remediation").value_or("");
    entry.patched_name = optional_string(e, "patched_name");
    const std::string status = required_string(e, "patch_status");
    if (status == "available") {
      entry.patch_status = PatchStatus::Available;
    } else if (status == "experimental") {
      entry.patch_status = PatchStatus::Experimental;
    } else if (status == "none") {
      entry.patch_status = PatchStatus::None;
    } else {
      throw CatalogError("unknown patch_status '" + status + "'");
    }
    if (!seen.emplace(entry.framework, entry.function_pattern).second)
      throw CatalogError("duplicate pattern '" + entry.function_pattern + "' for framework " + entry.framework);
    catalog.entries.push_back(std::move(entry));
  }
  return catalog;
}

NondetCatalog NondetCatalog::defaults() { return from_json(kDefaultNondetCatalog); }

NondetCatalog NondetCatalog::load(const std::filesystem::path& path) {
  try {
    return from_json(read_file(path));
  } catch (const CatalogError& e) {
    throw CatalogError(path.string() + ": " + e.what());
  }
}

}  // namespace repro::diagnoser
