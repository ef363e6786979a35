#include <algorithm>
#include <cmath>
#include <numeric>

#include "repro/decimal.hpp"
#include "repro/verifier.hpp"

namespace repro::verifier {
namespace {

using u128 = unsigned __int128;

void require_lengths(std::size_t predictions, std::size_t truths) {
  if (predictions != truths)
    throw MetricError("length mismatch: " + std::to_string(predictions) + " predictions vs " +
                      std::to_string(truths) + " ground-truth values");
  if (predictions == 0) throw MetricError("no test instances");
}

std::optional<long long> as_integer(const std::string& s) {
  if (s.empty() || s.size() > 18) return std::nullopt;
  std::size_t i = s[0] == '-' ? 1 : 0;
  if (i == s.size()) return std::nullopt;
  for (std::size_t j = i; j < s.size(); ++j)
    if (s[j] < '0' || s[j] > '9') return std::nullopt;
  if (s.size() - i > 1 && s[i] == '0') return std::nullopt;
  return std::stoll(s);
}

}  // namespace

std::string_view to_string(Task task) {
  return task == Task::Classification ? "classification" : "regression";
}

std::optional<Task> parse_task(std::string_view name) {
  if (name == "classification") return Task::Classification;
  if (name == "regression") return Task::Regression;
  return std::nullopt;
}

std::string Ratio::to_string() const { return format_decimal(value()); }

Ratio Ratio::reduced() const {
  if (num == 0) return {0, 1};
  const std::uint64_t g = std::gcd(num, den);
  return {num / g, den / g};
}

bool operator==(const Ratio& a, const Ratio& b) {
  return static_cast<u128>(a.num) * b.den == static_cast<u128>(b.num) * a.den;
}

bool operator<(const Ratio& a, const Ratio& b) {
  return static_cast<u128>(a.num) * b.den < static_cast<u128>(b.num) * a.den;
}

Ratio abs_diff(const Ratio& a, const Ratio& b) {
  const Ratio x = a.reduced();
  const Ratio y = b.reduced();
  const u128 lhs = static_cast<u128>(x.num) * y.den;
  const u128 rhs = static_cast<u128>(y.num) * x.den;
  u128 num = lhs > rhs ? lhs - rhs : rhs - lhs;
  u128 den = static_cast<u128>(x.den) * y.den;
  if (num == 0) return {0, 1};
  u128 p = num, q = den;
  while (q != 0) {
    const u128 t = p % q;
    p = q;
    q = t;
  }
  num /= p;
  den /= p;
  return {static_cast<std::uint64_t>(num), static_cast<std::uint64_t>(den)};
}

bool LabelLess::operator()(const std::string& a, const std::string& b) const {
  const auto ia = as_integer(a);
  const auto ib = as_integer(b);
  if (ia && ib) return *ia < *ib;
  if (ia.has_value() != ib.has_value()) return ia.has_value();
  return a < b;
}

Ratio overall_accuracy(std::span<const std::string> predictions, std::span<const std::string> labels) {
  require_lengths(predictions.size(), labels.size());
  std::uint64_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (predictions[i] == labels[i]) ++correct;
  return {correct, labels.size()};
}

PerClassAccuracy per_class_accuracy(std::span<const std::string> predictions,
                                    std::span<const std::string> labels) {
  require_lengths(predictions.size(), labels.size());
  PerClassAccuracy result;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto [it, inserted] = result.try_emplace(labels[i], Ratio{0, 0});
    ++it->second.den;
    if (predictions[i] == labels[i]) ++it->second.num;
  }
  return result;
}

double mean_absolute_error(std::span<const double> predictions, std::span<const double> truths) {
  require_lengths(predictions.size(), truths.size());
  double sum = 0;
  for (std::size_t i = 0; i < truths.size(); ++i) {
    if (!std::isfinite(predictions[i]) || !std::isfinite(truths[i]))
      throw MetricError("non-finite value at instance " + std::to_string(i));
    sum += std::fabs(predictions[i] - truths[i]);
  }
  return sum / static_cast<double>(truths.size());
}

std::pair<Ratio, std::string> max_per_class_diff(const PerClassAccuracy& a, const PerClassAccuracy& b) {
  Ratio best{0, 1};
  std::string label;
  for (const auto& [cls, acc_a] : a) {
    auto it = b.find(cls);
    if (it == b.end()) throw IncomparableError("class " + cls + " missing from second run");
    const Ratio d = abs_diff(acc_a, it->second);
    if (label.empty() || best < d) {
      best = d;
      label = cls;
    }
  }
  if (a.size() != b.size()) throw IncomparableError("runs have different class sets");
  return {best, label};
}

MetricVariance summarize_differences(std::string metric, bool is_ratio, std::vector<double> diffs) {
  MetricVariance v;
  v.metric = std::move(metric);
  v.is_ratio = is_ratio;
  v.per_pair = std::move(diffs);
  if (v.per_pair.empty()) return v;
  v.max_abs_diff = 0;
  for (double d : v.per_pair) v.max_abs_diff = std::max(v.max_abs_diff, std::fabs(d));
  const auto n = static_cast<double>(v.per_pair.size());
  if (v.per_pair.size() < 2) {
    v.sdev = 0;
    return v;
  }
  double mean = 0;
  for (double d : v.per_pair) mean += d;
  mean /= n;
  double ss = 0;
  for (double d : v.per_pair) ss += (d - mean) * (d - mean);
  v.sdev = std::sqrt(ss / (n - 1));
  return v;
}

}  // namespace repro::verifier
