#include "hsmlab/term.hpp"

#include <cassert>
#include <deque>
#include <mutex>
#include <unordered_map>
#include <vector>

namespace hsmlab {

namespace {

struct TermNode {
  TermKind kind;
  std::int32_t label = -1; // Name: index into label table
  std::int32_t a = -1;     // Hash: inner; Senc: payload
  std::int32_t b = -1;     // Senc: key
};

struct NodeKey {
  TermKind kind;
  std::int32_t label, a, b;
  bool operator==(const NodeKey&) const = default;
};

struct NodeKeyHash {
  std::size_t operator()(const NodeKey& k) const {
    std::uint64_t h = 0x9e3779b97f4a7c15ull;
    auto mix = [&](std::uint64_t v) {
      h ^= v + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
    };
    mix(static_cast<std::uint64_t>(k.kind));
    mix(static_cast<std::uint64_t>(static_cast<std::uint32_t>(k.label)));
    mix(static_cast<std::uint64_t>(static_cast<std::uint32_t>(k.a)));
    mix(static_cast<std::uint64_t>(static_cast<std::uint32_t>(k.b)));
    return static_cast<std::size_t>(h);
  }
};

// Process-wide interner.  Guarded by a mutex: search workers intern new
// ciphertexts concurrently.  Nothing downstream depends on id order; all
// canonical comparisons are structural.
class TermTable {
public:
  static TermTable& instance() {
    static TermTable t;
    return t;
  }

  std::int32_t intern_name(std::string_view label) {
    std::scoped_lock lk(mu_);
    auto it = label_ids_.find(std::string(label));
    std::int32_t lid;
    if (it != label_ids_.end()) {
      lid = it->second;
    } else {
      lid = static_cast<std::int32_t>(labels_.size());
      labels_.emplace_back(label);
      label_ids_.emplace(labels_.back(), lid);
    }
    return intern_locked({TermKind::Name, lid, -1, -1});
  }

  std::int32_t intern_hash(std::int32_t inner) {
    std::scoped_lock lk(mu_);
    return intern_locked({TermKind::Hash, -1, inner, -1});
  }

  std::int32_t intern_senc(std::int32_t payload, std::int32_t key) {
    std::scoped_lock lk(mu_);
    return intern_locked({TermKind::Senc, -1, payload, key});
  }

  TermNode node(std::int32_t id) const {
    std::scoped_lock lk(mu_);
    return nodes_[static_cast<std::size_t>(id)];
  }

  // Deque elements are address-stable, so the view outlives the lock.
  std::string_view label(std::int32_t lid) const {
    std::scoped_lock lk(mu_);
    return labels_[static_cast<std::size_t>(lid)];
  }

private:
  std::int32_t intern_locked(const TermNode& n) {
    NodeKey key{n.kind, n.label, n.a, n.b};
    auto it = ids_.find(key);
    if (it != ids_.end()) return it->second;
    auto id = static_cast<std::int32_t>(nodes_.size());
    nodes_.push_back(n);
    ids_.emplace(key, id);
    return id;
  }

  mutable std::mutex mu_;
  std::deque<TermNode> nodes_;
  std::unordered_map<NodeKey, std::int32_t, NodeKeyHash> ids_;
  std::deque<std::string> labels_;
  std::unordered_map<std::string, std::int32_t> label_ids_;
};

TermNode node_of(const Term& t) {
  assert(t.valid());
  return TermTable::instance().node(t.id());
}

} // namespace

namespace detail {
Term term_from_id(std::int32_t id) { return Term(id); }
} // namespace detail

namespace {
Term from_id(std::int32_t id) { return detail::term_from_id(id); }
} // namespace

Term Term::name(std::string_view label) {
  return from_id(TermTable::instance().intern_name(label));
}

Term Term::hash(Term inner) {
  assert(inner.valid());
  return from_id(TermTable::instance().intern_hash(inner.id()));
}

Term Term::senc(Term payload, Term key) {
  assert(payload.valid() && key.valid());
  return from_id(TermTable::instance().intern_senc(payload.id(), key.id()));
}

TermKind Term::kind() const { return node_of(*this).kind; }

std::string_view Term::label() const {
  return TermTable::instance().label(node_of(*this).label);
}

Term Term::inner() const {
  auto n = node_of(*this);
  assert(n.kind == TermKind::Hash);
  return from_id(n.a);
}

Term Term::payload() const {
  auto n = node_of(*this);
  assert(n.kind == TermKind::Senc);
  return from_id(n.a);
}

Term Term::key_part() const {
  auto n = node_of(*this);
  assert(n.kind == TermKind::Senc);
  return from_id(n.b);
}

void Term::append_to(std::string& out) const {
  auto n = node_of(*this);
  switch (n.kind) {
  case TermKind::Name:
    out += "name:";
    out += TermTable::instance().label(n.label);
    break;
  case TermKind::Hash:
    out += "h(";
    from_id(n.a).append_to(out);
    out += ')';
    break;
  case TermKind::Senc:
    out += "senc(";
    from_id(n.a).append_to(out);
    out += ',';
    from_id(n.b).append_to(out);
    out += ')';
    break;
  }
}

std::string Term::str() const {
  std::string out;
  append_to(out);
  return out;
}

namespace {

bool ident_char(char c) {
  return (c >= 'A' && c <= 'Z') || (c >= 'a' && c <= 'z') ||
         (c >= '0' && c <= '9') || c == '_';
}

// Recursive descent over the fixed grammar; pos advances past the parsed term.
std::optional<Term> parse_at(std::string_view s, std::size_t& pos) {
  if (s.compare(pos, 5, "name:") == 0) {
    pos += 5;
    std::size_t start = pos;
    while (pos < s.size() && ident_char(s[pos])) ++pos;
    if (pos == start) return std::nullopt;
    return Term::name(s.substr(start, pos - start));
  }
  if (s.compare(pos, 2, "h(") == 0) {
    pos += 2;
    auto inner = parse_at(s, pos);
    if (!inner || pos >= s.size() || s[pos] != ')') return std::nullopt;
    ++pos;
    return Term::hash(*inner);
  }
  if (s.compare(pos, 5, "senc(") == 0) {
    pos += 5;
    auto payload = parse_at(s, pos);
    if (!payload || pos >= s.size() || s[pos] != ',') return std::nullopt;
    ++pos;
    auto key = parse_at(s, pos);
    if (!key || pos >= s.size() || s[pos] != ')') return std::nullopt;
    ++pos;
    return Term::senc(*payload, *key);
  }
  return std::nullopt;
}

} // namespace

std::optional<Term> Term::parse(std::string_view text) {
  std::size_t pos = 0;
  auto t = parse_at(text, pos);
  if (!t || pos != text.size()) return std::nullopt;
  return t;
}

int term_compare(Term a, Term b) {
  if (a == b) return 0;
  auto na = node_of(a);
  auto nb = node_of(b);
  if (na.kind != nb.kind)
    return static_cast<int>(na.kind) < static_cast<int>(nb.kind) ? -1 : 1;
  switch (na.kind) {
  case TermKind::Name: {
    std::string_view la = TermTable::instance().label(na.label);
    std::string_view lb = TermTable::instance().label(nb.label);
    return la.compare(lb) < 0 ? -1 : 1;
  }
  case TermKind::Hash:
    return term_compare(from_id(na.a), from_id(nb.a));
  case TermKind::Senc: {
    int c = term_compare(from_id(na.a), from_id(nb.a));
    if (c != 0) return c;
    return term_compare(from_id(na.b), from_id(nb.b));
  }
  }
  return 0;
}

bool term_less(Term a, Term b) { return term_compare(a, b) < 0; }

bool is_subterm(Term sub, Term t) {
  if (sub == t) return true;
  switch (t.kind()) {
  case TermKind::Name:
    return false;
  case TermKind::Hash:
    return is_subterm(sub, t.inner());
  case TermKind::Senc:
    return is_subterm(sub, t.payload()) || is_subterm(sub, t.key_part());
  }
  return false;
}

} // namespace hsmlab
