#include <sstream>

#include <json.hpp>

#include "repro/decimal.hpp"
#include "repro/orchestrator.hpp"

namespace repro::orchestrator {

TimingReport timing_report(std::span<const double> without, std::span<const double> with) {
  if (without.size() < 2 || with.size() < 2)
    throw std::invalid_argument("timing report needs at least 2 samples per side (got " +
                                std::to_string(without.size()) + " and " + std::to_string(with.size()) + ")");
  TimingReport r;
  r.n_without = without.size();
  r.n_with = with.size();
  r.mean_without = mean(without);
  r.mean_with = mean(with);
  r.ratio = r.mean_without > 0 ? r.mean_with / r.mean_without : 0;
  r.rank_sum = wilcoxon_rank_sum(with, without);
  r.cliffs_delta = cliffs_delta(with, without);
  r.magnitude = effect_magnitude(r.cliffs_delta);
  return r;
}

std::string render_timing(const TimingReport& r, bool json) {
  if (json) {
    nlohmann::ordered_json doc = {
        {"schema_version", 1},
        {"kind", "timing"},
        {"n_without", r.n_without},
        {"n_with", r.n_with},
        {"mean_without", format_decimal(r.mean_without)},
        {"mean_with", format_decimal(r.mean_with)},
        {"ratio", format_decimal(r.ratio)},
        {"rank_sum_statistic", format_decimal(r.rank_sum.statistic)},
        {"p_value", format_decimal(r.rank_sum.p_value)},
        {"p_value_method", r.rank_sum.exact ? "exact" : "normal"},
        {"cliffs_delta", format_decimal(r.cliffs_delta)},
        {"effect_size", std::string(to_string(r.magnitude))},
        {"significant", r.rank_sum.p_value <= 0.05},
    };
    return doc.dump(2) + "\n";
  }
  std::ostringstream out;
  out << "runs: " << r.n_without << " without, " << r.n_with << " with\n";
  out << "mean wall seconds: " << format_decimal(r.mean_without) << " without, " << format_decimal(r.mean_with)
      << " with (ratio " << format_decimal(r.ratio) << ")\n";
  out << "Wilcoxon rank-sum p-value: " << format_decimal(r.rank_sum.p_value) << " ("
      << (r.rank_sum.exact ? "exact" : "normal approximation") << ")"
      << (r.rank_sum.p_value <= 0.05 ? ", significant at 0.05" : ", not significant at 0.05") << '\n';
  out << "Cliff's delta: " << format_decimal(r.cliffs_delta) << " (" << to_string(r.magnitude) << ")\n";
  return out.str();
}

}  // namespace repro::orchestrator
