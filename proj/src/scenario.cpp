#include "hsmlab/scenario.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "hsmlab/knowledge.hpp"

namespace hsmlab {

namespace {

bool is_ident(std::string_view s) {
  if (s.empty()) return false;
  for (char c : s) {
    bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_';
    if (!ok) return false;
  }
  return true;
}

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    std::size_t start = i;
    while (i < line.size() && line[i] != ' ' && line[i] != '\t' && line[i] != '\r') ++i;
    if (i > start) out.push_back(line.substr(start, i - start));
  }
  return out;
}

// Attributes a scenario may grant post-creation.  extractable is birth-only
// and trusted has its own marker, so neither is grantable here.
constexpr AttrSet kGrantable = attr_bit(Attr::Wrap) | attr_bit(Attr::Unwrap) |
                               attr_bit(Attr::Encrypt) | attr_bit(Attr::Decrypt) |
                               attr_bit(Attr::WrapWithTrusted);

std::optional<AttrSet> parse_attrs(std::string_view s) {
  AttrSet out = 0;
  std::size_t i = 0;
  while (i <= s.size()) {
    auto comma = s.find(',', i);
    if (comma == std::string_view::npos) comma = s.size();
    auto a = attr_from_name(s.substr(i, comma - i));
    if (!a || !has_attr(kGrantable, *a)) return std::nullopt;
    out = with_attr(out, *a);
    i = comma + 1;
    if (comma == s.size()) break;
  }
  return out;
}

} // namespace

Expected<Scenario, ParseError> parse_scenario(std::string_view text) {
  Scenario scn;
  bool saw_so = false;
  int line_no = 0;
  std::size_t i = 0;
  while (i <= text.size()) {
    auto nl = text.find('\n', i);
    bool last = nl == std::string_view::npos;
    auto line = text.substr(i, (last ? text.size() : nl) - i);
    ++line_no;
    i = last ? text.size() + 1 : nl + 1;
    auto hash = line.find('#');
    if (hash != std::string_view::npos) line = line.substr(0, hash);
    auto toks = split_ws(line);
    if (toks.empty()) {
      if (last) break;
      continue;
    }
    auto fail = [&](std::string msg) { return ParseError{line_no, std::move(msg)}; };
    auto directive = toks[0];

    if (directive == "user") {
      if (toks.size() < 3 || toks.size() > 4) return fail("user wants: user <id> <role> [compromised]");
      if (!is_ident(toks[1])) return fail("bad user id '" + std::string(toks[1]) + "'");
      for (const auto& u : scn.users)
        if (u.id == toks[1]) return fail("duplicate user '" + std::string(toks[1]) + "'");
      auto role = role_from_name(toks[2]);
      if (!role) return fail("role must be NU, KM or SO");
      ScenarioUser u{std::string(toks[1]), *role, false, line_no};
      if (toks.size() == 4) {
        if (toks[3] != "compromised") return fail("unexpected '" + std::string(toks[3]) + "'");
        u.compromised = true;
      }
      if (*role == Role::SO) saw_so = true;
      scn.users.push_back(std::move(u));
    } else if (directive == "key" || directive == "importkey") {
      bool imported = directive == "importkey";
      if (toks.size() < 2 || !is_ident(toks[1]))
        return fail("bad key id");
      ScenarioKey k;
      k.id = std::string(toks[1]);
      k.imported = imported;
      k.line = line_no;
      for (const auto& other : scn.keys)
        if (other.id == k.id) return fail("duplicate key '" + k.id + "'");
      bool saw_owner = false, saw_template = false, saw_value = false;
      for (std::size_t t = 2; t < toks.size(); ++t) {
        auto tok = toks[t];
        if (tok.starts_with("owner=")) {
          auto owner = tok.substr(6);
          bool found = false;
          for (const auto& u : scn.users) found = found || u.id == owner;
          if (!found) return fail("owner '" + std::string(owner) + "' not declared");
          k.owner = std::string(owner);
          saw_owner = true;
        } else if (!imported && tok.starts_with("template=")) {
          auto v = tok.substr(9);
          if (v == "generic") k.tmpl = Template::Generic;
          else if (v == "wwt") k.tmpl = Template::WWT;
          else if (v == "ne") k.tmpl = Template::NonExtractable;
          else return fail("template must be generic, wwt or ne");
          saw_template = true;
        } else if (imported && tok.starts_with("value=")) {
          auto v = Term::parse(tok.substr(6));
          if (!v) return fail("bad term in value=");
          k.import_value = *v;
          saw_value = true;
        } else if (tok.starts_with("attrs=")) {
          auto set = parse_attrs(tok.substr(6));
          if (!set) return fail("attrs= takes wrap, unwrap, encrypt, decrypt, wrap_with_trusted");
          k.extra_attrs = *set;
        } else if (tok == "trusted") {
          if (!saw_so) return fail("trusted marker needs an SO declared first");
          k.trusted = true;
        } else if (tok == "sensitive") {
          k.sensitive = true;
        } else {
          return fail("unexpected '" + std::string(tok) + "'");
        }
      }
      if (!saw_owner) return fail("missing owner=");
      if (!imported && !saw_template) return fail("missing template=");
      if (imported && !saw_value) return fail("missing value=");
      scn.keys.push_back(std::move(k));
    } else if (directive == "know") {
      if (toks.size() != 2) return fail("know wants exactly one term");
      auto t = Term::parse(toks[1]);
      if (!t) return fail("bad term '" + std::string(toks[1]) + "'");
      scn.known.push_back(*t);
    } else if (directive == "policy") {
      if (toks.size() != 2 || (toks[1] != "on" && toks[1] != "off"))
        return fail("policy wants on or off");
      scn.policy_on = toks[1] == "on";
    } else if (directive == "mode") {
      if (toks.size() != 2 || (toks[1] != "full" && toks[1] != "paper"))
        return fail("mode wants full or paper");
      scn.mode = toks[1] == "full" ? Mode::Full : Mode::Paper;
    } else if (directive == "depth") {
      int d = 0;
      const char* first = toks.size() == 2 ? toks[1].data() : nullptr;
      auto ok = toks.size() == 2 &&
                std::from_chars(first, first + toks[1].size(), d).ptr == first + toks[1].size() &&
                d >= 0;
      if (!ok) return fail("depth wants a non-negative integer");
      scn.depth = d;
    } else {
      return fail("unknown directive '" + std::string(directive) + "'");
    }
  }
  return scn;
}

Expected<Scenario, ParseError> load_scenario_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return ParseError{0, "cannot read '" + path + "'"};
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_scenario(buf.str());
}

Expected<InitialState, BuildError> build_initial_state(const Scenario& scn, bool strict) {
  TokenState st;
  st.mode = scn.mode;
  st.policy_on = scn.policy_on;
  std::string so_id;
  for (const auto& u : scn.users) {
    auto r = new_user(st, u.id, u.role);
    if (!r.ok()) return BuildError{r.error(), u.id};
    st = std::move(r.value());
    if (u.role == Role::SO && so_id.empty()) so_id = u.id;
  }

  InitialState out;
  auto grant = [&](const ScenarioKey& k, const std::string& user, std::int32_t handle,
                   Attr a) -> std::optional<BuildError> {
    auto r = set_attribute(st, user, handle, a);
    if (r.ok()) {
      st = std::move(r.value());
      return std::nullopt;
    }
    if (!strict && r.error().code == TokenError::PolicyViolation) {
      out.dropped.push_back(k.id + ":" + std::string(attr_name(a)));
      return std::nullopt;
    }
    return BuildError{r.error(), k.id};
  };

  for (const auto& k : scn.keys) {
    std::int32_t handle = 0;
    if (k.imported) {
      auto r = import_key(st, k.owner, k.import_value, k.id);
      if (!r.ok()) return BuildError{r.error(), k.id};
      handle = r.value().handle;
      st = std::move(r.value().state);
      if (k.sensitive) {
        // Declarative mark, not a device operation.
        st.handles[static_cast<std::size_t>(st.handle_index(handle))].sensitive = true;
      }
    } else {
      auto r = create_key(st, k.owner, k.tmpl, k.sensitive, k.id);
      if (!r.ok()) return BuildError{r.error(), k.id};
      handle = r.value().handle;
      st = std::move(r.value().state);
    }
    for (int a = 0; a < 7; ++a) {
      if (!has_attr(k.extra_attrs, static_cast<Attr>(a))) continue;
      if (auto err = grant(k, k.owner, handle, static_cast<Attr>(a))) return *err;
    }
    if (k.trusted) {
      if (so_id.empty()) return BuildError{TokenFailure{TokenError::RoleForbidden}, k.id};
      if (auto err = grant(k, so_id, handle, Attr::Trusted)) return *err;
    }
  }

  KnowledgeBase kb;
  for (auto t : scn.known) kb.insert(t);
  for (auto t : st.emitted.terms()) kb.insert(t);
  out.kb = close_knowledge(kb);
  out.state = std::move(st);
  return out;
}

} // namespace hsmlab
