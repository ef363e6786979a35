#include <cctype>
#include <map>
#include <set>

#include "repro/diagnoser.hpp"

namespace repro::diagnoser {
namespace {

constexpr std::size_t kEvidenceLimit = 200;

// Calls whose arguments may name the entropy device, and the subset that
// consumes bytes from an already-open descriptor.
const std::set<std::string_view> kPathCalls = {"open", "openat", "openat2", "creat", "open64", "openat64"};
const std::set<std::string_view> kReadCalls = {"read", "pread64", "readv", "preadv", "preadv2"};

struct Call {
  std::string name;
  std::string args;
  std::optional<long long> retval;
  std::size_t line_number = 0;
  std::string line;
  long long pid = 0;
};

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

bool is_ident_start(char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_'; }
bool is_ident(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }

bool consume_digits(std::string_view& s, long long* value = nullptr) {
  std::size_t i = 0;
  long long v = 0;
  while (i < s.size() && std::isdigit(static_cast<unsigned char>(s[i]))) {
    v = v * 10 + (s[i] - '0');
    ++i;
  }
  if (i == 0) return false;
  if (value) *value = v;
  s.remove_prefix(i);
  return true;
}

// Strips "[pid N]", a bare pid column and an optional timestamp.
std::string_view strip_prefix(std::string_view s, long long* pid) {
  *pid = 0;
  s = trim(s);
  if (s.starts_with("[pid")) {
    std::string_view rest = trim(s.substr(4));
    long long p = 0;
    if (consume_digits(rest, &p) && !rest.empty() && rest.front() == ']') {
      *pid = p;
      s = trim(rest.substr(1));
    }
  } else {
    std::string_view rest = s;
    long long p = 0;
    if (consume_digits(rest, &p) && !rest.empty() && std::isspace(static_cast<unsigned char>(rest.front()))) {
      *pid = p;
      s = trim(rest);
    }
  }
  // Timestamps: 12:34:56[.123456] or 1234567890.123456
  std::string_view rest = s;
  if (consume_digits(rest)) {
    bool stamp = false;
    while (!rest.empty() && (rest.front() == ':' || rest.front() == '.')) {
      rest.remove_prefix(1);
      if (!consume_digits(rest)) break;
      stamp = true;
    }
    if (stamp && !rest.empty() && std::isspace(static_cast<unsigned char>(rest.front()))) s = trim(rest);
  }
  return s;
}

// Index of the ')' closing the argument list that starts at `open`, honoring
// quoted strings and nested brackets. npos when absent.
std::size_t closing_paren(std::string_view s, std::size_t open) {
  int depth = 0;
  bool quoted = false;
  for (std::size_t i = open; i < s.size(); ++i) {
    const char c = s[i];
    if (quoted) {
      if (c == '\\') {
        ++i;
      } else if (c == '"') {
        quoted = false;
      }
      continue;
    }
    if (c == '"') {
      quoted = true;
    } else if (c == '(' || c == '[' || c == '{') {
      ++depth;
    } else if (c == ')' || c == ']' || c == '}') {
      --depth;
      if (depth == 0 && c == ')') return i;
    }
  }
  return std::string_view::npos;
}

std::optional<long long> parse_retval(std::string_view tail) {
  tail = trim(tail);
  if (!tail.starts_with("=")) return std::nullopt;
  tail = trim(tail.substr(1));
  bool negative = false;
  if (!tail.empty() && tail.front() == '-') {
    negative = true;
    tail.remove_prefix(1);
  }
  long long v = 0;
  if (tail.starts_with("0x")) {
    tail.remove_prefix(2);
    std::size_t n = 0;
    while (n < tail.size() && std::isxdigit(static_cast<unsigned char>(tail[n]))) {
      v = v * 16 + (std::isdigit(static_cast<unsigned char>(tail[n])) ? tail[n] - '0'
                                                                       : std::tolower(tail[n]) - 'a' + 10);
      ++n;
    }
    if (n == 0) return std::nullopt;
    return negative ? -v : v;
  }
  if (tail.starts_with("?")) return -1;
  if (!consume_digits(tail, &v)) return std::nullopt;
  return negative ? -v : v;
}

std::optional<int> leading_fd(std::string_view args) {
  args = trim(args);
  long long fd = 0;
  if (!consume_digits(args, &fd)) return std::nullopt;
  return static_cast<int>(fd);
}

enum class LineKind { Call, Unfinished, Resumed, Ignored, Unparseable };

struct ParsedLine {
  LineKind kind = LineKind::Unparseable;
  std::string name;
  std::string args;
  std::optional<long long> retval;
  long long pid = 0;
};

ParsedLine parse_line(std::string_view raw) {
  ParsedLine out;
  std::string_view s = strip_prefix(raw, &out.pid);
  if (s.starts_with("---") || s.starts_with("+++") || s.starts_with("strace:")) {
    out.kind = LineKind::Ignored;
    return out;
  }
  if (s.starts_with("<...")) {
    std::string_view rest = trim(s.substr(4));
    std::size_t n = 0;
    while (n < rest.size() && is_ident(rest[n])) ++n;
    if (n == 0) return out;
    out.name = std::string(rest.substr(0, n));
    rest = rest.substr(n);
    const auto marker = rest.find("resumed>");
    if (marker == std::string_view::npos) return out;
    rest = rest.substr(marker + 8);
    // The remaining arguments close the call opened on the unfinished line.
    std::string_view args = rest;
    std::size_t close = std::string_view::npos;
    int depth = 1;
    bool quoted = false;
    for (std::size_t i = 0; i < rest.size(); ++i) {
      const char c = rest[i];
      if (quoted) {
        if (c == '\\') ++i;
        else if (c == '"') quoted = false;
        continue;
      }
      if (c == '"') quoted = true;
      else if (c == '(' || c == '[' || c == '{') ++depth;
      else if (c == ')' || c == ']' || c == '}') {
        if (--depth == 0) {
          close = i;
          break;
        }
      }
    }
    if (close == std::string_view::npos) return out;
    out.args = std::string(args.substr(0, close));
    out.retval = parse_retval(rest.substr(close + 1));
    out.kind = LineKind::Resumed;
    return out;
  }
  if (s.empty() || !is_ident_start(s.front())) return out;
  std::size_t n = 0;
  while (n < s.size() && is_ident(s[n])) ++n;
  if (n >= s.size() || s[n] != '(') return out;
  out.name = std::string(s.substr(0, n));
  const std::size_t open = n;
  if (const auto unfinished = s.rfind("<unfinished ...>"); unfinished != std::string_view::npos) {
    out.args = std::string(trim(s.substr(open + 1, unfinished - open - 1)));
    out.kind = LineKind::Unfinished;
    return out;
  }
  const std::size_t close = closing_paren(s, open);
  if (close == std::string_view::npos) return out;
  out.args = std::string(s.substr(open + 1, close - open - 1));
  out.retval = parse_retval(s.substr(close + 1));
  if (!out.retval) return out;
  out.kind = LineKind::Call;
  return out;
}

std::string excerpt(std::string_view line) {
  line = trim(line);
  if (line.size() <= kEvidenceLimit) return std::string(line);
  return std::string(line.substr(0, kEvidenceLimit)) + "...";
}

class Matcher {
 public:
  explicit Matcher(const SyscallCatalog& catalog) : catalog_(catalog) {}

  void observe(const Call& call) {
    for (std::size_t r = 0; r < catalog_.entries.size(); ++r) {
      const SyscallRule& rule = catalog_.entries[r];
      bool matched = false;
      bool request = false;
      if (rule.match_kind == MatchKind::SyscallName) {
        matched = call.name == rule.syscall;
        request = matched;
      } else {
        matched = match_path(r, rule, call, &request);
      }
      if (!matched) continue;
      auto [it, inserted] = findings_.try_emplace(r);
      TraceFinding& f = it->second;
      if (inserted) {
        f.syscall = call.name;
        f.line_number = call.line_number;
        f.count = 0;
        f.requests = 0;
        f.evidence = excerpt(call.line);
        f.matched_rule = rule.name;
      }
      ++f.count;
      if (request) ++f.requests;
    }
    if (call.name == "close") {
      if (auto fd = leading_fd(call.args))
        for (auto& [rule, fds] : open_fds_) fds.erase({call.pid, *fd});
    }
  }

  std::vector<TraceFinding> findings() const {
    std::vector<TraceFinding> out;
    for (const auto& [rule, f] : findings_) out.push_back(f);
    return out;
  }

 private:
  bool match_path(std::size_t index, const SyscallRule& rule, const Call& call, bool* request) {
    const std::string& pattern = *rule.path_pattern;
    auto& fds = open_fds_[index];
    if (kPathCalls.count(call.name)) {
      if (call.args.find(pattern) == std::string::npos) {
        if (call.retval && *call.retval >= 0) fds.erase({call.pid, static_cast<int>(*call.retval)});
        return false;
      }
      if (call.retval && *call.retval >= 0) fds.insert({call.pid, static_cast<int>(*call.retval)});
      return true;
    }
    if (kReadCalls.count(call.name)) {
      const auto fd = leading_fd(call.args);
      // strace -y annotates descriptors as 3</dev/urandom>.
      const auto first_arg = call.args.substr(0, call.args.find(','));
      const bool annotated = first_arg.find(pattern) != std::string::npos;
      const bool tracked = fd && fds.count({call.pid, *fd}) > 0;
      *request = annotated || tracked;
      return *request;
    }
    return false;
  }

  const SyscallCatalog& catalog_;
  std::map<std::size_t, TraceFinding> findings_;
  std::map<std::size_t, std::set<std::pair<long long, int>>> open_fds_;
};

}  // namespace

TraceAnalysis parse_syscall_trace(std::string_view text, const SyscallCatalog& catalog) {
  TraceAnalysis analysis;
  Matcher matcher(catalog);
  std::map<std::pair<long long, std::string>, Call> pending;

  std::size_t line_number = 0;
  while (!text.empty()) {
    const auto eol = text.find('\n');
    std::string_view line = text.substr(0, eol);
    text = eol == std::string_view::npos ? std::string_view() : text.substr(eol + 1);
    ++line_number;
    ++analysis.lines;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (trim(line).empty()) continue;

    ParsedLine parsed = parse_line(line);
    switch (parsed.kind) {
      case LineKind::Ignored:
        break;
      case LineKind::Unparseable:
        ++analysis.unparseable;
        break;
      case LineKind::Unfinished: {
        Call call{parsed.name, parsed.args, std::nullopt, line_number, std::string(line), parsed.pid};
        pending[{parsed.pid, parsed.name}] = std::move(call);
        break;
      }
      case LineKind::Resumed: {
        auto it = pending.find({parsed.pid, parsed.name});
        Call call;
        if (it != pending.end()) {
          call = std::move(it->second);
          pending.erase(it);
          call.args += parsed.args;
        } else {
          call = Call{parsed.name, parsed.args, std::nullopt, line_number, std::string(line), parsed.pid};
        }
        call.retval = parsed.retval;
        ++analysis.calls;
        matcher.observe(call);
        break;
      }
      case LineKind::Call: {
        Call call{parsed.name, parsed.args, parsed.retval, line_number, std::string(line), parsed.pid};
        ++analysis.calls;
        matcher.observe(call);
        break;
      }
    }
  }
  // Calls still unfinished when the trace ends were nevertheless issued.
  std::vector<Call> leftovers;
  for (auto& [key, call] : pending) leftovers.push_back(std::move(call));
  std::sort(leftovers.begin(), leftovers.end(),
            [](const Call& a, const Call& b) { return a.line_number < b.line_number; });
  for (const auto& call : leftovers) {
    ++analysis.calls;
    matcher.observe(call);
  }
  analysis.findings = matcher.findings();
  return analysis;
}

}  // namespace repro::diagnoser
