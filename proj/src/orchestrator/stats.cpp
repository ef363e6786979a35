#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>

#include "repro/orchestrator.hpp"

namespace repro::orchestrator {
namespace {

struct Ranked {
  std::vector<std::int64_t> doubled;  // 2 x midrank, integral
  double tie_term = 0;                // sum over tie groups of t^3 - t
};

// Midranks of the pooled sample, doubled so they stay integral.
Ranked pooled_ranks(std::span<const double> x, std::span<const double> y) {
  const std::size_t n = x.size() + y.size();
  std::vector<std::pair<double, std::size_t>> pooled;
  pooled.reserve(n);
  for (std::size_t i = 0; i < x.size(); ++i) pooled.emplace_back(x[i], i);
  for (std::size_t i = 0; i < y.size(); ++i) pooled.emplace_back(y[i], x.size() + i);
  std::sort(pooled.begin(), pooled.end());
  Ranked r;
  r.doubled.assign(n, 0);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && pooled[j + 1].first == pooled[i].first) ++j;
    const auto doubled = static_cast<std::int64_t>((i + 1) + (j + 1));
    for (std::size_t k = i; k <= j; ++k) r.doubled[pooled[k].second] = doubled;
    const double t = static_cast<double>(j - i + 1);
    r.tie_term += t * t * t - t;
    i = j + 1;
  }
  return r;
}

double exact_p_value(const Ranked& r, std::size_t n1, std::int64_t observed) {
  const std::size_t n = r.doubled.size();
  const std::int64_t max_sum = std::accumulate(r.doubled.begin(), r.doubled.end(), std::int64_t{0});
  // ways[k][s]: subsets of size k with doubled rank sum s.
  std::vector<std::vector<double>> ways(n1 + 1, std::vector<double>(static_cast<std::size_t>(max_sum) + 1, 0.0));
  ways[0][0] = 1;
  for (std::size_t item = 0; item < n; ++item) {
    const auto w = static_cast<std::size_t>(r.doubled[item]);
    for (std::size_t k = std::min(n1, item + 1); k >= 1; --k) {
      auto& dst = ways[k];
      const auto& src = ways[k - 1];
      for (std::size_t s = static_cast<std::size_t>(max_sum); s >= w; --s) {
        dst[s] += src[s - w];
        if (s == w) break;
      }
    }
  }
  const std::int64_t center = static_cast<std::int64_t>(n1) * static_cast<std::int64_t>(n + 1);
  const std::int64_t deviation = std::llabs(observed - center);
  double total = 0, extreme = 0;
  for (std::size_t s = 0; s < ways[n1].size(); ++s) {
    const double c = ways[n1][s];
    if (c == 0) continue;
    total += c;
    if (std::llabs(static_cast<std::int64_t>(s) - center) >= deviation) extreme += c;
  }
  return std::min(1.0, extreme / total);
}

}  // namespace

RankSumResult wilcoxon_rank_sum(std::span<const double> x, std::span<const double> y) {
  if (x.empty() || y.empty()) throw std::invalid_argument("rank-sum test needs two non-empty samples");
  const Ranked r = pooled_ranks(x, y);
  std::int64_t observed = 0;
  for (std::size_t i = 0; i < x.size(); ++i) observed += r.doubled[i];

  RankSumResult out;
  out.statistic = static_cast<double>(observed) / 2.0;
  if (x.size() <= kExactRankSumLimit && y.size() <= kExactRankSumLimit) {
    out.exact = true;
    out.p_value = exact_p_value(r, x.size(), observed);
    return out;
  }
  const double n1 = static_cast<double>(x.size());
  const double n2 = static_cast<double>(y.size());
  const double n = n1 + n2;
  const double mu = n1 * (n + 1) / 2;
  const double var = n1 * n2 / 12.0 * ((n + 1) - r.tie_term / (n * (n - 1)));
  if (!(var > 0)) {
    out.p_value = 1;
    return out;
  }
  const double z = std::max(0.0, std::abs(out.statistic - mu) - 0.5) / std::sqrt(var);
  out.p_value = std::min(1.0, std::erfc(z / std::sqrt(2.0)));
  return out;
}

double cliffs_delta(std::span<const double> x, std::span<const double> y) {
  if (x.empty() || y.empty()) throw std::invalid_argument("Cliff's delta needs two non-empty samples");
  long long dominance = 0;
  for (double a : x)
    for (double b : y) dominance += (a > b) - (a < b);
  return static_cast<double>(dominance) / (static_cast<double>(x.size()) * static_cast<double>(y.size()));
}

EffectMagnitude effect_magnitude(double delta) {
  const double d = std::abs(delta);
  if (d < 0.147) return EffectMagnitude::Negligible;
  if (d < 0.33) return EffectMagnitude::Small;
  if (d < 0.474) return EffectMagnitude::Medium;
  return EffectMagnitude::Large;
}

std::string_view to_string(EffectMagnitude magnitude) {
  switch (magnitude) {
    case EffectMagnitude::Negligible:
      return "negligible";
    case EffectMagnitude::Small:
      return "small";
    case EffectMagnitude::Medium:
      return "medium";
    case EffectMagnitude::Large:
      return "large";
  }
  return "negligible";
}

double mean(std::span<const double> values) {
  if (values.empty()) throw std::invalid_argument("mean of an empty sample");
  return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
}

double median(std::vector<double> values) {
  if (values.empty()) throw std::invalid_argument("median of an empty sample");
  std::sort(values.begin(), values.end());
  const std::size_t mid = values.size() / 2;
  return values.size() % 2 ? values[mid] : (values[mid - 1] + values[mid]) / 2;
}

}  // namespace repro::orchestrator
