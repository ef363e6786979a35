#pragma once

#include <optional>
#include <string>
#include <string_view>

namespace repro {

/// Shortest decimal string that parses back to exactly `value`.
std::string format_decimal(double value);

/// Parses a complete decimal string (also "nan", "inf", "-inf").
std::optional<double> parse_decimal(std::string_view text);

}  // namespace repro
