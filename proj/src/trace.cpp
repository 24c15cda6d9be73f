#include "hsmlab/trace.hpp"

#include <charconv>
#include <sstream>

namespace hsmlab {

namespace {

bool is_binding(std::string_view s, char prefix) {
  if (s.size() < 2 || s[0] != prefix) return false;
  for (std::size_t i = 1; i < s.size(); ++i)
    if (s[i] < '0' || s[i] > '9') return false;
  return true;
}

std::optional<std::int32_t> binding_number(std::string_view s, char prefix) {
  if (!is_binding(s, prefix)) return std::nullopt;
  std::int32_t n = 0;
  auto [ptr, ec] = std::from_chars(s.data() + 1, s.data() + s.size(), n);
  if (ec != std::errc{} || ptr != s.data() + s.size()) return std::nullopt;
  return n;
}

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
    std::size_t start = i;
    while (i < line.size() && line[i] != ' ' && line[i] != '\t') ++i;
    if (i > start) out.push_back(line.substr(start, i - start));
  }
  return out;
}

struct StepParser {
  int line;
  std::vector<std::string_view> toks;
  std::size_t pos = 0;
  std::optional<ParseError> err;

  void fail(std::string msg) {
    if (!err) err = ParseError{line, std::move(msg)};
  }

  // Consumes "key=value" and returns value, or fails.
  std::string_view field(std::string_view key) {
    if (err) return {};
    if (pos >= toks.size()) {
      fail("missing " + std::string(key) + "=");
      return {};
    }
    auto tok = toks[pos];
    auto eq = tok.find('=');
    if (eq == std::string_view::npos || tok.substr(0, eq) != key) {
      fail("expected " + std::string(key) + "=, got '" + std::string(tok) + "'");
      return {};
    }
    ++pos;
    return tok.substr(eq + 1);
  }

  std::int32_t handle_field(std::string_view key) {
    auto v = field(key);
    if (err) return 0;
    auto n = binding_number(v, 'h');
    if (!n) {
      fail(std::string(key) + "= wants a handle h<N>, got '" + std::string(v) + "'");
      return 0;
    }
    return *n;
  }

  TermArg term_field(std::string_view key) {
    auto v = field(key);
    if (err) return {};
    if (is_binding(v, 'c')) return TermArg{std::string(v)};
    if (auto t = Term::parse(v)) return TermArg{*t};
    fail(std::string(key) + "= wants a term or c<N> binding, got '" + std::string(v) + "'");
    return {};
  }
};

std::optional<AttrSet> parse_attr_list(std::string_view s) {
  AttrSet out = 0;
  std::size_t i = 0;
  while (i <= s.size()) {
    auto comma = s.find(',', i);
    if (comma == std::string_view::npos) comma = s.size();
    auto piece = s.substr(i, comma - i);
    auto a = attr_from_name(piece);
    if (!a) return std::nullopt;
    out = with_attr(out, *a);
    i = comma + 1;
    if (comma == s.size()) break;
  }
  return out;
}

} // namespace

std::string_view op_name(OpTag op) {
  switch (op) {
  case OpTag::Wrap: return "wrap";
  case OpTag::Unwrap: return "unwrap";
  case OpTag::Encrypt: return "encrypt";
  case OpTag::Decrypt: return "decrypt";
  case OpTag::SetAttr: return "setattr";
  case OpTag::UnsetAttr: return "unsetattr";
  case OpTag::Import: return "import";
  case OpTag::Leaks: return "leaks";
  }
  return "?";
}

std::string TermArg::str() const {
  if (is_ref()) return ref();
  if (present()) return literal().str();
  return "?";
}

std::string format_trace(const std::vector<TraceStep>& steps) {
  std::ostringstream os;
  os << "trace v1\n";
  for (const auto& s : steps) {
    os << s.index << ". " << op_name(s.op) << " actor=" << s.actor;
    switch (s.op) {
    case OpTag::Wrap:
      os << " target=h" << s.handle_a << " wrapper=h" << s.handle_b;
      break;
    case OpTag::Unwrap:
      os << " ct=" << s.term.str() << " wrapper=h" << s.handle_a;
      if (s.tmpl != 0) os << " template=" << attrs_to_string(s.tmpl);
      break;
    case OpTag::Encrypt:
      os << " data=" << s.term.str() << " handle=h" << s.handle_a;
      break;
    case OpTag::Decrypt:
      os << " ct=" << s.term.str() << " handle=h" << s.handle_a;
      break;
    case OpTag::SetAttr:
    case OpTag::UnsetAttr:
      os << " handle=h" << s.handle_a << " attr=" << attr_name(s.attr);
      break;
    case OpTag::Import:
      os << " value=" << s.term.str();
      break;
    case OpTag::Leaks:
      break;
    }
    if (!s.result.empty()) os << " -> " << s.result;
    os << "\n";
  }
  return os.str();
}

Expected<std::vector<TraceStep>, ParseError> parse_trace(std::string_view text) {
  std::vector<TraceStep> steps;
  bool saw_header = false;
  int line_no = 0;
  std::size_t i = 0;
  while (i <= text.size()) {
    auto nl = text.find('\n', i);
    if (nl == std::string_view::npos) nl = text.size();
    auto line = text.substr(i, nl - i);
    ++line_no;
    i = nl + 1;
    auto hash = line.find('#');
    if (hash != std::string_view::npos) line = line.substr(0, hash);
    auto toks = split_ws(line);
    if (nl == text.size() && toks.empty()) break;
    if (toks.empty()) continue;

    if (!saw_header) {
      if (toks.size() != 2 || toks[0] != "trace" || toks[1] != "v1")
        return ParseError{line_no, "expected header 'trace v1'"};
      saw_header = true;
      continue;
    }

    // "<index>." then the operation.
    auto num = toks[0];
    if (num.empty() || num.back() != '.')
      return ParseError{line_no, "step must start with '<index>.'"};
    num.remove_suffix(1);
    int idx = 0;
    auto [ptr, ec] = std::from_chars(num.data(), num.data() + num.size(), idx);
    if (ec != std::errc{} || ptr != num.data() + num.size() || num.empty())
      return ParseError{line_no, "bad step index '" + std::string(toks[0]) + "'"};
    if (idx != static_cast<int>(steps.size()) + 1)
      return ParseError{line_no, "step index " + std::to_string(idx) + " out of order (expected " +
                                     std::to_string(steps.size() + 1) + ")"};
    if (toks.size() < 2) return ParseError{line_no, "missing operation"};

    TraceStep st;
    st.index = idx;
    auto opname = toks[1];
    bool known = false;
    for (int t = 0; t < 8; ++t) {
      if (op_name(static_cast<OpTag>(t)) == opname) {
        st.op = static_cast<OpTag>(t);
        known = true;
        break;
      }
    }
    if (!known) return ParseError{line_no, "unknown operation '" + std::string(opname) + "'"};

    StepParser p{line_no, std::move(toks), 2, std::nullopt};
    auto actor = p.field("actor");
    if (!p.err && actor.empty()) return ParseError{line_no, "actor= must name a user"};
    st.actor = std::string(actor);
    bool wants_result = false;
    char result_prefix = 'c';
    switch (st.op) {
    case OpTag::Wrap:
      st.handle_a = p.handle_field("target");
      st.handle_b = p.handle_field("wrapper");
      wants_result = true;
      break;
    case OpTag::Unwrap: {
      st.term = p.term_field("ct");
      st.handle_a = p.handle_field("wrapper");
      // Optional template= before the -> arrow.
      if (!p.err && p.pos < p.toks.size() && p.toks[p.pos].starts_with("template=")) {
        auto v = p.toks[p.pos].substr(9);
        auto set = parse_attr_list(v);
        if (!set || (*set & ~kUnwrapTemplateMask) != 0)
          return ParseError{line_no, "bad template '" + std::string(v) + "'"};
        st.tmpl = *set;
        ++p.pos;
      }
      wants_result = true;
      result_prefix = 'h';
      break;
    }
    case OpTag::Encrypt:
      st.term = p.term_field("data");
      st.handle_a = p.handle_field("handle");
      wants_result = true;
      break;
    case OpTag::Decrypt:
      st.term = p.term_field("ct");
      st.handle_a = p.handle_field("handle");
      wants_result = true;
      break;
    case OpTag::SetAttr:
    case OpTag::UnsetAttr: {
      st.handle_a = p.handle_field("handle");
      auto v = p.field("attr");
      if (!p.err) {
        auto a = attr_from_name(v);
        if (!a) return ParseError{line_no, "unknown attribute '" + std::string(v) + "'"};
        st.attr = *a;
      }
      break;
    }
    case OpTag::Import:
      st.term = p.term_field("value");
      wants_result = true;
      result_prefix = 'h';
      break;
    case OpTag::Leaks:
      break;
    }
    if (p.err) return *p.err;

    if (wants_result) {
      if (p.pos + 2 != p.toks.size() || p.toks[p.pos] != "->")
        return ParseError{line_no, std::string(op_name(st.op)) + " needs '-> <binding>'"};
      auto res = p.toks[p.pos + 1];
      if (!is_binding(res, result_prefix))
        return ParseError{line_no, "result binding must be " + std::string(1, result_prefix) +
                                       "<N>, got '" + std::string(res) + "'"};
      st.result = std::string(res);
    } else if (p.pos != p.toks.size()) {
      return ParseError{line_no, "unexpected trailing tokens after " + std::string(op_name(st.op))};
    }
    steps.push_back(std::move(st));
  }
  if (!saw_header) return ParseError{1, "expected header 'trace v1'"};
  return steps;
}

} // namespace hsmlab
