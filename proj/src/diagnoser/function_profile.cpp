#include <cctype>
#include <charconv>

#include "repro/diagnoser.hpp"

namespace repro::diagnoser {
namespace {

std::vector<std::string_view> split_ws(std::string_view s, std::size_t max_fields) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
    if (i >= s.size()) break;
    if (out.size() + 1 == max_fields) {
      std::string_view rest = s.substr(i);
      while (!rest.empty() && std::isspace(static_cast<unsigned char>(rest.back()))) rest.remove_suffix(1);
      out.push_back(rest);
      break;
    }
    std::size_t j = i;
    while (j < s.size() && !std::isspace(static_cast<unsigned char>(s[j]))) ++j;
    out.push_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

bool parse_count(std::string_view field, std::uint64_t* out) {
  // "a/b" is reported for recursive functions; a is taken.
  const auto slash = field.find('/');
  std::string_view first = field.substr(0, slash);
  if (slash != std::string_view::npos) {
    std::string_view second = field.substr(slash + 1);
    std::uint64_t ignored = 0;
    auto [p, ec] = std::from_chars(second.data(), second.data() + second.size(), ignored);
    if (ec != std::errc() || p != second.data() + second.size()) return false;
  }
  if (first.empty()) return false;
  auto [p, ec] = std::from_chars(first.data(), first.data() + first.size(), *out);
  return ec == std::errc() && p == first.data() + first.size();
}

bool is_number(std::string_view field) {
  double v = 0;
  auto [p, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
  return ec == std::errc() && p == field.data() + field.size();
}

}  // namespace

FunctionProfile parse_function_profile(std::string_view text) {
  FunctionProfile profile;
  std::size_t columns = 0;
  std::size_t count_column = 0;
  bool header_seen = false;
  std::size_t preamble = 0;

  while (!text.empty()) {
    const auto eol = text.find('\n');
    std::string_view line = text.substr(0, eol);
    text = eol == std::string_view::npos ? std::string_view() : text.substr(eol + 1);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    const auto fields = split_ws(line, 0);
    if (fields.empty()) continue;

    if (!header_seen) {
      for (std::size_t i = 0; i < fields.size(); ++i) {
        if (fields[i] == "ncalls") {
          header_seen = true;
          columns = fields.size();
          count_column = i;
        }
      }
      // Preamble lines of cProfile output ("123 function calls in ...").
      if (!header_seen) ++preamble;
      continue;
    }

    const auto row = split_ws(line, columns);
    if (row.size() != columns || count_column + 1 >= columns) {
      ++profile.malformed_rows;
      continue;
    }
    FunctionStat stat;
    bool ok = parse_count(row[count_column], &stat.call_count);
    for (std::size_t i = 0; ok && i + 1 < columns; ++i)
      if (i != count_column) ok = is_number(row[i]);
    if (!ok) {
      ++profile.malformed_rows;
      continue;
    }
    stat.name = std::string(row.back());
    profile.stats.push_back(std::move(stat));
  }
  // Without a header nothing could be interpreted.
  if (!header_seen) profile.malformed_rows = preamble;
  return profile;
}

}  // namespace repro::diagnoser
