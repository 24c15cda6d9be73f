#include "hsmlab/search.hpp"

#include <algorithm>
#include <atomic>
#include <cassert>
#include <cstring>
#include <functional>
#include <optional>
#include <thread>
#include <unordered_map>

#include "hsmlab/policy.hpp"

namespace hsmlab {

namespace {

// ---------------------------------------------------------------------------
// Digest hashing: deterministic across runs (no pointers, no interning order).

std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

std::uint64_t hash_lane(const std::string& buf, std::uint64_t seed) {
  std::uint64_t h = mix64(seed ^ buf.size());
  std::size_t i = 0;
  while (i + 8 <= buf.size()) {
    std::uint64_t w;
    std::memcpy(&w, buf.data() + i, 8);
    h = mix64(h ^ w);
    i += 8;
  }
  std::uint64_t tail = 0;
  for (std::size_t j = 0; i + j < buf.size(); ++j)
    tail |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[i + j])) << (8 * j);
  return mix64(h ^ tail);
}

constexpr Digest kEmptySlot{0, 0};

// Open-addressing set of digests; load kept under 1/2.
class DigestSet {
public:
  DigestSet() : slots_(1u << 12, kEmptySlot) {}

  bool insert(Digest d) {
    auto mask = slots_.size() - 1;
    auto idx = static_cast<std::size_t>(d[0]) & mask;
    while (slots_[idx] != kEmptySlot) {
      if (slots_[idx] == d) return false;
      idx = (idx + 1) & mask;
    }
    slots_[idx] = d;
    ++count_;
    if (count_ * 2 >= slots_.size()) grow();
    return true;
  }

  std::uint64_t size() const { return count_; }

private:
  void grow() {
    std::vector<Digest> old(slots_.size() * 2, kEmptySlot);
    old.swap(slots_);
    auto mask = slots_.size() - 1;
    for (const auto& d : old) {
      if (d == kEmptySlot) continue;
      auto idx = static_cast<std::size_t>(d[0]) & mask;
      while (slots_[idx] != kEmptySlot) idx = (idx + 1) & mask;
      slots_[idx] = d;
    }
  }

  std::vector<Digest> slots_;
  std::uint64_t count_ = 0;
};

// Digest -> best remaining depth, for iterative deepening: a state is worth
// revisiting only with more remaining budget than any earlier visit had.
class DepthMap {
public:
  DepthMap() : slots_(1u << 12) {}

  bool visit(Digest d, std::uint8_t remaining) {
    auto mask = slots_.size() - 1;
    auto idx = static_cast<std::size_t>(d[0]) & mask;
    while (slots_[idx].dig != kEmptySlot) {
      if (slots_[idx].dig == d) {
        if (slots_[idx].remaining >= remaining) return false;
        slots_[idx].remaining = remaining;
        return true;
      }
      idx = (idx + 1) & mask;
    }
    slots_[idx] = {d, remaining};
    ++count_;
    if (count_ * 2 >= slots_.size()) grow();
    return true;
  }

  std::uint64_t size() const { return count_; }

private:
  struct Slot {
    Digest dig = kEmptySlot;
    std::uint8_t remaining = 0;
  };

  void grow() {
    std::vector<Slot> old(slots_.size() * 2);
    old.swap(slots_);
    auto mask = slots_.size() - 1;
    for (const auto& s : old) {
      if (s.dig == kEmptySlot) continue;
      auto idx = static_cast<std::size_t>(s.dig[0]) & mask;
      while (slots_[idx].dig != kEmptySlot) idx = (idx + 1) & mask;
      slots_[idx] = s;
    }
  }

  std::vector<Slot> slots_;
  std::uint64_t count_ = 0;
};

void append_u32(std::string& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

bool is_crypto(Role r) { return r == Role::NU || r == Role::KM; }

// Singleton unwrap templates plus the empty one; richer templates are unions
// of attribute grants the attacker can apply after the fact, so singletons
// lose no attacks while keeping the branching factor linear.
constexpr std::array<AttrSet, 7> kUnwrapTemplates = {
    0,
    attr_bit(Attr::Extractable),
    attr_bit(Attr::Wrap),
    attr_bit(Attr::Unwrap),
    attr_bit(Attr::Encrypt),
    attr_bit(Attr::Decrypt),
    attr_bit(Attr::WrapWithTrusted),
};

// Ciphertexts the attacker can feed a handle keyed by key_hash: every known
// senc under that key, plus constructed ones over known payloads when the
// key hash itself is derivable.
std::vector<Term> ciphertext_candidates(const KnowledgeBase& kb, Term key_hash) {
  std::vector<Term> out;
  for (auto t : kb.terms())
    if (t.kind() == TermKind::Senc && t.key_part() == key_hash) out.push_back(t);
  if (derives_closed(kb, key_hash))
    for (auto p : kb.terms()) out.push_back(Term::senc(p, key_hash));
  std::sort(out.begin(), out.end(), term_less);
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

std::vector<Term> derivable_atoms(const KnowledgeBase& kb) {
  std::vector<Term> out;
  for (auto t : kb.terms())
    if (t.kind() == TermKind::Name) out.push_back(t);
  return out;
}

int goal_hit(const std::vector<GoalKey>& goals, const KnowledgeBase& kb) {
  for (std::size_t i = 0; i < goals.size(); ++i)
    if (derives_closed(kb, goals[i].value)) return static_cast<int>(i);
  return -1;
}

} // namespace

std::vector<GoalKey> goal_keys(const Scenario& scn, const TokenState& st) {
  std::vector<GoalKey> out;
  for (const auto& k : scn.keys) {
    const HandleRecord* rec = nullptr;
    for (const auto& h : st.handles)
      if (st.key_of(h).key_id == k.id) {
        rec = &h;
        break;
      }
    if (!rec) continue;
    bool created_protected = !k.imported && (k.tmpl == Template::WWT || k.tmpl == Template::NonExtractable);
    if (k.sensitive || created_protected || has_attr(rec->attrs, Attr::Trusted))
      out.push_back(GoalKey{k.id, st.key_of(*rec).value});
  }
  return out;
}

ActorSets actor_sets(const Scenario& scn, const TokenState& st, bool honest) {
  ActorSets out;
  for (std::size_t i = 0; i < scn.users.size(); ++i) {
    const auto& u = scn.users[i];
    auto idx = st.user_index(u.id);
    if (idx < 0) continue;
    if (u.compromised && out.any < 0) out.any = idx;
    if (is_crypto(u.role)) {
      if (u.compromised) out.crypto.push_back(idx);
      else if (honest) out.honest_crypto.push_back(idx);
    } else if (u.role == Role::SO && u.compromised && out.so < 0) {
      out.so = idx;
    }
  }
  std::sort(out.crypto.begin(), out.crypto.end());
  std::sort(out.honest_crypto.begin(), out.honest_crypto.end());
  return out;
}

bool action_less(const Action& a, const Action& b) {
  if (a.op != b.op) return a.op < b.op;
  auto by_term = [&](int then_a1, int then_b1, int aux_a, int aux_b) {
    int c = term_compare(a.term, b.term);
    if (c != 0) return c < 0;
    if (then_a1 != then_b1) return then_a1 < then_b1;
    if (aux_a != aux_b) return aux_a < aux_b;
    return a.actor < b.actor;
  };
  switch (a.op) {
  case OpTag::Wrap:
    if (a.h1 != b.h1) return a.h1 < b.h1;
    if (a.h2 != b.h2) return a.h2 < b.h2;
    return a.actor < b.actor;
  case OpTag::Unwrap:
    return by_term(a.h1, b.h1, a.aux, b.aux);
  case OpTag::Encrypt:
  case OpTag::Decrypt:
    return by_term(a.h1, b.h1, 0, 0);
  case OpTag::SetAttr:
  case OpTag::UnsetAttr:
    if (a.h1 != b.h1) return a.h1 < b.h1;
    if (a.aux != b.aux) return a.aux < b.aux;
    return a.actor < b.actor;
  case OpTag::Import:
    return by_term(0, 0, 0, 0);
  case OpTag::Leaks:
    return a.actor < b.actor;
  }
  return false;
}

std::vector<Action> enumerate_actions(const TokenState& st, const KnowledgeBase& kb,
                                      const ActorSets& actors) {
  std::vector<Action> out;
  std::vector<std::int32_t> wrap_users = actors.crypto;
  wrap_users.insert(wrap_users.end(), actors.honest_crypto.begin(), actors.honest_crypto.end());
  std::sort(wrap_users.begin(), wrap_users.end());
  std::int32_t least_crypto = actors.crypto.empty() ? -1 : actors.crypto.front();
  std::int32_t least_wrapper = wrap_users.empty() ? -1 : wrap_users.front();

  // wrap: the result does not depend on who calls, so one (least) actor is
  // canonical for each handle pair.
  if (least_wrapper >= 0) {
    for (const auto& target : st.handles) {
      if (!has_attr(target.attrs, Attr::Extractable)) continue;
      for (const auto& wrapper : st.handles) {
        if (!has_attr(wrapper.attrs, Attr::Wrap)) continue;
        if (has_attr(target.attrs, Attr::WrapWithTrusted) && !has_attr(wrapper.attrs, Attr::Trusted))
          continue;
        auto ct = Term::senc(st.key_of(target).value, Term::hash(st.key_of(wrapper).value));
        if (kb.contains(ct)) continue; // nothing new would be learned
        out.push_back(Action{OpTag::Wrap, least_wrapper, target.id, wrapper.id, Term{}, 0});
      }
    }
  }

  // unwrap: the caller becomes the owner of the new handle, so every eligible
  // user counts.  Under a trusted wrapper the template is forced, so only the
  // empty request is enumerated.
  if (!wrap_users.empty()) {
    for (const auto& wrapper : st.handles) {
      if (!has_attr(wrapper.attrs, Attr::Unwrap)) continue;
      auto key_hash = Term::hash(st.key_of(wrapper).value);
      auto cts = ciphertext_candidates(kb, key_hash);
      bool forced = has_attr(wrapper.attrs, Attr::Trusted);
      for (auto ct : cts) {
        for (auto tmpl : kUnwrapTemplates) {
          if (forced && tmpl != 0) continue;
          for (auto u : wrap_users)
            out.push_back(Action{OpTag::Unwrap, u, wrapper.id, 0, ct, tmpl});
        }
      }
    }
  }

  if (st.mode == Mode::Full && least_crypto >= 0) {
    // encrypt: payloads are the derivable atoms; composite payloads add no
    // attack power (the attacker can already build senc terms offline).
    auto atoms = derivable_atoms(kb);
    for (const auto& h : st.handles) {
      if (!has_attr(h.attrs, Attr::Encrypt)) continue;
      auto key_hash = Term::hash(st.key_of(h).value);
      for (auto data : atoms) {
        if (kb.contains(Term::senc(data, key_hash))) continue;
        out.push_back(Action{OpTag::Encrypt, least_crypto, h.id, 0, data, 0});
      }
    }
    // decrypt
    for (const auto& h : st.handles) {
      if (!has_attr(h.attrs, Attr::Decrypt)) continue;
      auto key_hash = Term::hash(st.key_of(h).value);
      for (auto ct : ciphertext_candidates(kb, key_hash)) {
        if (kb.contains(ct.payload())) continue;
        out.push_back(Action{OpTag::Decrypt, least_crypto, h.id, 0, ct, 0});
      }
    }
  }

  // setattr / unsetattr: owners manage their own keys; a compromised SO
  // toggles trusted.  Only effective toggles are emitted, and grants a
  // policy-on device would refuse are filtered here rather than failed later.
  for (const auto& h : st.handles) {
    const auto& key = st.key_of(h);
    bool owner_attacker =
        std::binary_search(actors.crypto.begin(), actors.crypto.end(), key.owner);
    if (owner_attacker) {
      auto owner_id = st.users[static_cast<std::size_t>(key.owner)].id;
      bool km_owner = st.users[static_cast<std::size_t>(key.owner)].role == Role::KM;
      for (auto a : {Attr::Wrap, Attr::Unwrap, Attr::Encrypt, Attr::Decrypt, Attr::WrapWithTrusted}) {
        if (has_attr(h.attrs, a)) continue;
        if (st.policy_on && km_owner) {
          auto v = check_km_attr_change(st, owner_id, h.id, a);
          if (!v.ok() || !v.value().allowed) continue;
        }
        out.push_back(
            Action{OpTag::SetAttr, key.owner, h.id, 0, Term{}, static_cast<std::uint8_t>(a)});
      }
      for (auto a : {Attr::Extractable, Attr::Wrap, Attr::Unwrap, Attr::Encrypt, Attr::Decrypt}) {
        if (!has_attr(h.attrs, a)) continue;
        out.push_back(
            Action{OpTag::UnsetAttr, key.owner, h.id, 0, Term{}, static_cast<std::uint8_t>(a)});
      }
    }
    if (actors.so >= 0) {
      auto so_id = st.users[static_cast<std::size_t>(actors.so)].id;
      if (!has_attr(h.attrs, Attr::Trusted)) {
        bool allowed = true;
        if (st.policy_on) {
          auto v = check_set_trusted(st, so_id, h.id);
          allowed = v.ok() && v.value().allowed;
        }
        if (allowed)
          out.push_back(Action{OpTag::SetAttr, actors.so, h.id, 0, Term{},
                               static_cast<std::uint8_t>(Attr::Trusted)});
      } else {
        out.push_back(Action{OpTag::UnsetAttr, actors.so, h.id, 0, Term{},
                             static_cast<std::uint8_t>(Attr::Trusted)});
      }
    }
  }

  // import: derivable atoms only; importing a composite blob is equivalent to
  // importing material the attacker already controls.  The importer becomes
  // the owner, so each compromised user is a distinct action.
  if (least_crypto >= 0) {
    for (auto value : derivable_atoms(kb))
      for (auto u : actors.crypto)
        out.push_back(Action{OpTag::Import, u, 0, 0, value, 0});
  }

  // leaks: one action when it would teach the attacker anything.
  if (st.mode == Mode::Paper && actors.any >= 0) {
    bool effective = false;
    for (const auto& h : st.handles) {
      bool usage = has_attr(h.attrs, Attr::Encrypt) || has_attr(h.attrs, Attr::Decrypt);
      bool exposed =
          has_attr(h.attrs, Attr::Extractable) && !has_attr(h.attrs, Attr::WrapWithTrusted);
      if ((usage || exposed) && !kb.contains(Term::hash(st.key_of(h).value))) {
        effective = true;
        break;
      }
    }
    if (effective) out.push_back(Action{OpTag::Leaks, actors.any, 0, 0, Term{}, 0});
  }

  std::sort(out.begin(), out.end(), action_less);
  return out;
}

TokenResult<Successor> apply_action(const TokenState& st, const KnowledgeBase& kb,
                                    const Action& a) {
  if (a.actor < 0 || a.actor >= static_cast<std::int32_t>(st.users.size()))
    return TokenFailure{TokenError::NotAUser};
  auto actor = st.users[static_cast<std::size_t>(a.actor)].id;

  auto needs_term = a.op == OpTag::Unwrap || a.op == OpTag::Encrypt || a.op == OpTag::Decrypt ||
                    a.op == OpTag::Import;
  if (needs_term && !derives_closed(kb, a.term))
    return TokenFailure{TokenError::UnderivableTerm};

  auto learned = [&](TokenState state, std::initializer_list<Term> emitted) -> Successor {
    auto next = kb;
    bool grew = false;
    for (auto t : emitted) grew = next.insert(t) || grew;
    if (grew) next = close_knowledge(next);
    return Successor{std::move(state), std::move(next)};
  };

  switch (a.op) {
  case OpTag::Wrap: {
    auto r = wrap(st, actor, a.h1, a.h2);
    if (!r.ok()) return r.error();
    return learned(std::move(r.value().state), {r.value().term});
  }
  case OpTag::Unwrap: {
    auto r = unwrap(st, actor, a.term, a.h1, a.aux);
    if (!r.ok()) return r.error();
    return learned(std::move(r.value().state), {});
  }
  case OpTag::Encrypt: {
    auto r = encrypt(st, actor, a.term, a.h1);
    if (!r.ok()) return r.error();
    return learned(std::move(r.value().state), {r.value().term});
  }
  case OpTag::Decrypt: {
    auto r = decrypt(st, actor, a.term, a.h1);
    if (!r.ok()) return r.error();
    return learned(std::move(r.value().state), {r.value().term});
  }
  case OpTag::SetAttr: {
    auto r = set_attribute(st, actor, a.h1, static_cast<Attr>(a.aux));
    if (!r.ok()) return r.error();
    return learned(std::move(r.value()), {});
  }
  case OpTag::UnsetAttr: {
    auto r = unset_attribute(st, actor, a.h1, static_cast<Attr>(a.aux));
    if (!r.ok()) return r.error();
    return learned(std::move(r.value()), {});
  }
  case OpTag::Import: {
    auto r = import_key(st, actor, a.term);
    if (!r.ok()) return r.error();
    return learned(std::move(r.value().state), {});
  }
  case OpTag::Leaks: {
    auto r = emit_leaks(st);
    if (!r.ok()) return r.error();
    auto next = kb;
    bool grew = false;
    for (auto t : r.value().leaked) grew = next.insert(t) || grew;
    if (grew) next = close_knowledge(next);
    return Successor{std::move(r.value().state), std::move(next)};
  }
  }
  return TokenFailure{TokenError::UnknownHandle};
}

Digest canonical_fingerprint(const TokenState& st, const KnowledgeBase& kb) {
  std::string buf;
  buf.reserve(256);
  buf.push_back(static_cast<char>(st.mode));
  buf.push_back(st.policy_on ? 1 : 0);
  append_u32(buf, static_cast<std::uint32_t>(st.users.size()));
  for (const auto& u : st.users) {
    buf.push_back(static_cast<char>(u.role));
    buf += u.id;
    buf.push_back('\0');
  }
  // Handle records sorted by content; ids, counters and the emission log stay
  // out so interleavings that build the same objects meet in one state.
  std::vector<std::string> recs;
  recs.reserve(st.handles.size());
  for (const auto& h : st.handles) {
    const auto& key = st.key_of(h);
    std::string rec;
    rec.push_back(static_cast<char>(h.attrs));
    rec.push_back(h.sensitive ? 1 : 0);
    rec.push_back(static_cast<char>(key.origin));
    rec.push_back(static_cast<char>(key.created_with));
    append_u32(rec, static_cast<std::uint32_t>(key.owner));
    key.value.append_to(rec);
    recs.push_back(std::move(rec));
  }
  std::sort(recs.begin(), recs.end());
  append_u32(buf, static_cast<std::uint32_t>(recs.size()));
  for (const auto& r : recs) {
    buf += r;
    buf.push_back('\0');
  }
  append_u32(buf, static_cast<std::uint32_t>(kb.size()));
  for (auto t : kb.terms()) {
    t.append_to(buf);
    buf.push_back('\0');
  }
  Digest d{hash_lane(buf, 0x243f6a8885a308d3ull), hash_lane(buf, 0x13198a2e03707344ull)};
  if (d == kEmptySlot) d[1] = 1;
  return d;
}

std::vector<TraceStep> steps_from_actions(const Successor& root, const std::vector<Action>& path) {
  std::vector<TraceStep> steps;
  steps.reserve(path.size());
  Successor cur = root;
  int next_c = 1;
  std::unordered_map<std::int32_t, std::string> bound; // term id -> c<N>

  auto term_arg = [&](Term t) {
    if (t.kind() != TermKind::Name) {
      auto it = bound.find(t.id());
      if (it != bound.end()) return TermArg{it->second};
    }
    return TermArg{t};
  };
  auto bind_term = [&](Term t, TraceStep& s) {
    s.result = "c" + std::to_string(next_c++);
    bound.try_emplace(t.id(), s.result);
  };

  for (const auto& a : path) {
    TraceStep s;
    s.index = static_cast<int>(steps.size()) + 1;
    s.op = a.op;
    s.actor = cur.state.users[static_cast<std::size_t>(a.actor)].id;
    switch (a.op) {
    case OpTag::Wrap:
      s.handle_a = a.h1;
      s.handle_b = a.h2;
      break;
    case OpTag::Unwrap:
      s.term = term_arg(a.term);
      s.handle_a = a.h1;
      s.tmpl = a.aux;
      s.result = "h" + std::to_string(cur.state.next_handle);
      break;
    case OpTag::Encrypt:
    case OpTag::Decrypt:
      s.term = term_arg(a.term);
      s.handle_a = a.h1;
      break;
    case OpTag::SetAttr:
    case OpTag::UnsetAttr:
      s.handle_a = a.h1;
      s.attr = static_cast<Attr>(a.aux);
      break;
    case OpTag::Import:
      s.term = term_arg(a.term);
      s.result = "h" + std::to_string(cur.state.next_handle);
      break;
    case OpTag::Leaks:
      break;
    }
    auto r = apply_action(cur.state, cur.kb, a);
    assert(r.ok());
    auto next = std::move(r.value());
    switch (a.op) {
    case OpTag::Wrap: {
      auto ct = Term::senc(cur.state.key_of(*cur.state.find_handle(a.h1)).value,
                           Term::hash(cur.state.key_of(*cur.state.find_handle(a.h2)).value));
      bind_term(ct, s);
      break;
    }
    case OpTag::Encrypt:
      bind_term(Term::senc(a.term, Term::hash(cur.state.key_of(*cur.state.find_handle(a.h1)).value)),
                s);
      break;
    case OpTag::Decrypt:
      bind_term(a.term.payload(), s);
      break;
    default:
      break;
    }
    cur = std::move(next);
    steps.push_back(std::move(s));
  }
  return steps;
}

namespace {

struct Node {
  Action act;
  std::int32_t parent = -1;
};

std::vector<Action> path_actions(const std::vector<Node>& nodes, std::int32_t id) {
  std::vector<Action> path;
  while (id >= 0) {
    path.push_back(nodes[static_cast<std::size_t>(id)].act);
    id = nodes[static_cast<std::size_t>(id)].parent;
  }
  std::reverse(path.begin(), path.end());
  return path;
}

Successor rebuild(const Successor& root, const std::vector<Action>& path) {
  Successor cur = root;
  for (const auto& a : path) {
    auto r = apply_action(cur.state, cur.kb, a);
    assert(r.ok());
    cur = std::move(r.value());
  }
  return cur;
}

// Frontier levels wider than this are not kept in memory; their states are
// rebuilt from the action path on demand.
constexpr std::size_t kFrontierCacheLimit = std::size_t{1} << 18;

struct Rec {
  Action act;
  Digest dig{};
  std::int16_t goal = -1;
};

void run_sliced(std::size_t width, int workers, const std::function<void(std::size_t, std::size_t)>& fn) {
  auto n = static_cast<std::size_t>(std::max(1, workers));
  n = std::min(n, width == 0 ? std::size_t{1} : width);
  if (n <= 1) {
    fn(0, width);
    return;
  }
  std::vector<std::thread> threads;
  threads.reserve(n);
  for (std::size_t w = 0; w < n; ++w) {
    auto lo = width * w / n;
    auto hi = width * (w + 1) / n;
    threads.emplace_back([&fn, lo, hi] { fn(lo, hi); });
  }
  for (auto& t : threads) t.join();
}

SearchOutcome explore_bfs(const Successor& root, const std::vector<GoalKey>& goals,
                          const ActorSets& actors, const SearchConfig& cfg) {
  DigestSet visited;
  visited.insert(canonical_fingerprint(root.state, root.kb));
  std::uint64_t explored = 0;

  std::vector<Node> nodes;
  std::vector<std::int32_t> frontier{-1};
  std::vector<Successor> frontier_states{root};

  for (int depth = 1; depth <= cfg.max_depth; ++depth) {
    auto width = frontier.size();
    std::vector<std::vector<Rec>> recs(width);
    std::vector<std::uint64_t> counts(static_cast<std::size_t>(std::max(1, cfg.workers)), 0);
    std::atomic<std::size_t> chunk_id{0};

    run_sliced(width, cfg.workers, [&](std::size_t lo, std::size_t hi) {
      auto my = chunk_id.fetch_add(1);
      std::uint64_t local = 0;
      for (auto pos = lo; pos < hi; ++pos) {
        Successor scratch;
        if (frontier_states.empty()) scratch = rebuild(root, path_actions(nodes, frontier[pos]));
        const Successor& cur = frontier_states.empty() ? scratch : frontier_states[pos];
        auto actions = enumerate_actions(cur.state, cur.kb, actors);
        auto& list = recs[pos];
        list.reserve(actions.size());
        for (const auto& a : actions) {
          auto r = apply_action(cur.state, cur.kb, a);
          assert(r.ok());
          ++local;
          Rec rec{a, {}, -1};
          auto g = goal_hit(goals, r.value().kb);
          if (g >= 0)
            rec.goal = static_cast<std::int16_t>(g);
          else
            rec.dig = canonical_fingerprint(r.value().state, r.value().kb);
          list.push_back(rec);
        }
      }
      counts[my % counts.size()] += local;
    });
    for (auto c : counts) explored += c;

    // Deterministic merge in frontier order, then action order.
    std::vector<std::pair<std::size_t, Action>> accepted;
    for (std::size_t pos = 0; pos < width; ++pos) {
      for (const auto& rec : recs[pos]) {
        if (rec.goal >= 0) {
          auto path = path_actions(nodes, frontier[pos]);
          path.push_back(rec.act);
          return Attack{steps_from_actions(root, path), goals[static_cast<std::size_t>(rec.goal)].id,
                        explored, visited.size()};
        }
        if (!visited.insert(rec.dig)) continue;
        if (visited.size() > cfg.max_states)
          return BudgetExceeded{cfg.max_states, visited.size(), explored};
        nodes.push_back(Node{rec.act, frontier[pos]});
        accepted.emplace_back(pos, rec.act);
      }
    }
    if (accepted.empty()) return Exhausted{cfg.max_depth, explored, visited.size()};

    std::vector<std::int32_t> next(accepted.size());
    auto base = static_cast<std::int32_t>(nodes.size() - accepted.size());
    for (std::size_t i = 0; i < accepted.size(); ++i) next[i] = base + static_cast<std::int32_t>(i);

    std::vector<Successor> next_states;
    if (accepted.size() <= kFrontierCacheLimit && depth < cfg.max_depth) {
      next_states.resize(accepted.size());
      run_sliced(accepted.size(), cfg.workers, [&](std::size_t lo, std::size_t hi) {
        for (auto i = lo; i < hi; ++i) {
          Successor parent = frontier_states.empty()
                                 ? rebuild(root, path_actions(nodes, nodes[static_cast<std::size_t>(
                                                                          next[i])].parent))
                                 : frontier_states[accepted[i].first];
          auto r = apply_action(parent.state, parent.kb, accepted[i].second);
          assert(r.ok());
          next_states[i] = std::move(r.value());
        }
      });
    }
    frontier = std::move(next);
    frontier_states = std::move(next_states);
  }
  return Exhausted{cfg.max_depth, explored, visited.size()};
}

SearchOutcome explore_iddfs(const Successor& root, const std::vector<GoalKey>& goals,
                            const ActorSets& actors, const SearchConfig& cfg) {
  std::uint64_t explored = 0;
  std::uint64_t canonical = 1;
  for (int limit = 1; limit <= cfg.max_depth; ++limit) {
    DepthMap seen;
    seen.visit(canonical_fingerprint(root.state, root.kb), static_cast<std::uint8_t>(limit));
    std::vector<Action> path;
    std::optional<SearchOutcome> result;

    auto dfs = [&](auto&& self, const Successor& cur, int remaining) -> bool {
      auto actions = enumerate_actions(cur.state, cur.kb, actors);
      for (const auto& a : actions) {
        auto r = apply_action(cur.state, cur.kb, a);
        assert(r.ok());
        ++explored;
        auto& succ = r.value();
        auto g = goal_hit(goals, succ.kb);
        if (g >= 0) {
          path.push_back(a);
          result = Attack{steps_from_actions(root, path), goals[static_cast<std::size_t>(g)].id,
                          explored, seen.size()};
          return true;
        }
        if (remaining - 1 <= 0) continue;
        auto dig = canonical_fingerprint(succ.state, succ.kb);
        if (!seen.visit(dig, static_cast<std::uint8_t>(remaining - 1))) continue;
        if (seen.size() > cfg.max_states) {
          result = BudgetExceeded{cfg.max_states, seen.size(), explored};
          return true;
        }
        path.push_back(a);
        if (self(self, succ, remaining - 1)) return true;
        path.pop_back();
      }
      return false;
    };

    if (dfs(dfs, root, limit)) return *result;
    canonical = std::max(canonical, seen.size());
  }
  return Exhausted{cfg.max_depth, explored, canonical};
}

} // namespace

Expected<SearchOutcome, BuildError> explore(const Scenario& scn, const SearchConfig& cfg) {
  auto built = build_initial_state(scn, /*strict=*/false);
  if (!built.ok()) return built.error();
  Successor root{std::move(built.value().state), std::move(built.value().kb)};
  auto goals = goal_keys(scn, root.state);
  auto actors = actor_sets(scn, root.state, cfg.honest);

  if (auto g = goal_hit(goals, root.kb); g >= 0)
    return SearchOutcome{Attack{{}, goals[static_cast<std::size_t>(g)].id, 0, 1}};
  if (cfg.strategy == Strategy::IDDFS) return explore_iddfs(root, goals, actors, cfg);
  return explore_bfs(root, goals, actors, cfg);
}

Expected<ReplayVerdict, BuildError> replay(const Scenario& scn,
                                           const std::vector<TraceStep>& steps) {
  auto built = build_initial_state(scn, /*strict=*/false);
  if (!built.ok()) return built.error();
  TokenState st = std::move(built.value().state);
  KnowledgeBase kb = std::move(built.value().kb);
  auto goals = goal_keys(scn, st);

  std::unordered_map<std::string, Term> bindings; // c<N> -> term

  auto fail = [&](const TraceStep& s, std::string reason) {
    return ReplayVerdict{ReplayFails{s.index, std::move(reason)}};
  };
  auto fail_code = [&](const TraceStep& s, const TokenFailure& f) {
    std::string reason{token_error_name(f.code)};
    if (f.rule) reason += "(" + std::string(policy_rule_name(*f.rule)) + ")";
    return fail(s, std::move(reason));
  };

  for (const auto& s : steps) {
    // Resolve the term argument, then check the attacker could produce it.
    Term term;
    if (s.term.present()) {
      if (s.term.is_ref()) {
        auto it = bindings.find(s.term.ref());
        if (it == bindings.end()) return fail(s, "UnknownBinding");
        term = it->second;
      } else {
        term = s.term.literal();
      }
      if (!derives_closed(kb, term)) return fail(s, "UnderivableTerm");
    }

    auto learn = [&](std::initializer_list<Term> emitted) {
      bool grew = false;
      for (auto t : emitted) grew = kb.insert(t) || grew;
      if (grew) kb = close_knowledge(kb);
    };
    auto bind_handle = [&](const TraceStep& step, std::int32_t handle) -> bool {
      // Engine traces name new handles by their real id; hold foreign traces
      // to the same rule so later references stay meaningful.
      return step.result == "h" + std::to_string(handle);
    };

    switch (s.op) {
    case OpTag::Wrap: {
      auto r = wrap(st, s.actor, s.handle_a, s.handle_b);
      if (!r.ok()) return fail_code(s, r.error());
      st = std::move(r.value().state);
      if (!s.result.empty()) bindings[s.result] = r.value().term;
      learn({r.value().term});
      break;
    }
    case OpTag::Unwrap: {
      auto r = unwrap(st, s.actor, term, s.handle_a, s.tmpl);
      if (!r.ok()) return fail_code(s, r.error());
      if (!bind_handle(s, r.value().handle)) return fail(s, "BindingMismatch");
      st = std::move(r.value().state);
      break;
    }
    case OpTag::Encrypt: {
      auto r = encrypt(st, s.actor, term, s.handle_a);
      if (!r.ok()) return fail_code(s, r.error());
      st = std::move(r.value().state);
      if (!s.result.empty()) bindings[s.result] = r.value().term;
      learn({r.value().term});
      break;
    }
    case OpTag::Decrypt: {
      auto r = decrypt(st, s.actor, term, s.handle_a);
      if (!r.ok()) return fail_code(s, r.error());
      st = std::move(r.value().state);
      if (!s.result.empty()) bindings[s.result] = r.value().term;
      learn({r.value().term});
      break;
    }
    case OpTag::SetAttr: {
      auto r = set_attribute(st, s.actor, s.handle_a, s.attr);
      if (!r.ok()) return fail_code(s, r.error());
      st = std::move(r.value());
      break;
    }
    case OpTag::UnsetAttr: {
      auto r = unset_attribute(st, s.actor, s.handle_a, s.attr);
      if (!r.ok()) return fail_code(s, r.error());
      st = std::move(r.value());
      break;
    }
    case OpTag::Import: {
      auto r = import_key(st, s.actor, term);
      if (!r.ok()) return fail_code(s, r.error());
      if (!bind_handle(s, r.value().handle)) return fail(s, "BindingMismatch");
      st = std::move(r.value().state);
      break;
    }
    case OpTag::Leaks: {
      auto r = emit_leaks(st);
      if (!r.ok()) return fail_code(s, r.error());
      st = std::move(r.value().state);
      bool grew = false;
      for (auto t : r.value().leaked) grew = kb.insert(t) || grew;
      if (grew) kb = close_knowledge(kb);
      break;
    }
    }
  }

  for (const auto& g : goals)
    if (derives_closed(kb, g.value)) return ReplayVerdict{ReplayReproduces{g.id}};
  return ReplayVerdict{ReplayFails{static_cast<int>(steps.size()), "NoLeak"}};
}

} // namespace hsmlab
