#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <bit>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "generators.hpp"
#include "hsmlab/policy.hpp"
#include "hsmlab/token.hpp"

using namespace hsmlab;
using namespace hsmlab::testgen;

namespace {

// One SO, one KM, two normal users: enough shapes for every rule to fire.
TokenState lab_state(bool policy_on = false, Mode mode = Mode::Full) {
  TokenState st;
  st.policy_on = policy_on;
  st.mode = mode;
  st = new_user(st, "SO1", Role::SO).value();
  st = new_user(st, "KM1", Role::KM).value();
  st = new_user(st, "U1", Role::NU).value();
  st = new_user(st, "U2", Role::NU).value();
  return st;
}

Term ct_under(const TokenState& st, std::int32_t wrapper, Term payload) {
  return Term::senc(payload, Term::hash(st.key_of(*st.find_handle(wrapper)).value));
}

AttrSet handle_attrs(const TokenState& st, std::int32_t id) {
  return st.find_handle(id)->attrs;
}

} // namespace

// ---------------------------------------------------------------------------
// Witnesses: one reachable run per capability the model is supposed to have.
// ---------------------------------------------------------------------------

TEST_CASE("users of all three roles can be registered and ids are unique") {
  TokenState st = lab_state();
  REQUIRE(st.users.size() == 4);
  CHECK(st.users[0].role == Role::SO);
  CHECK(st.users[1].role == Role::KM);
  CHECK(st.users[2].role == Role::NU);

  auto dup = new_user(st, "U1", Role::KM);
  REQUIRE_FALSE(dup.ok());
  CHECK(dup.error().code == TokenError::DuplicateUser);
}

TEST_CASE("keys are born four ways: three creation templates plus import") {
  TokenState st = lab_state();

  auto g = create_key(st, "U1", Template::Generic, false, "kg");
  REQUIRE(g.ok());
  st = g->state;
  CHECK(handle_attrs(st, g->handle) == attr_bit(Attr::Extractable));
  CHECK(st.key_of(*st.find_handle(g->handle)).origin == Origin::Fresh);
  CHECK(st.key_of(*st.find_handle(g->handle)).created_with == Template::Generic);
  CHECK(st.key_of(*st.find_handle(g->handle)).value == Term::name("kg"));

  auto w = create_key(st, "U1", Template::WWT, false, "kw");
  REQUIRE(w.ok());
  st = w->state;
  CHECK(handle_attrs(st, w->handle) ==
        (attr_bit(Attr::WrapWithTrusted) | attr_bit(Attr::Extractable)));

  auto n = create_key(st, "KM1", Template::NonExtractable, false, "kn");
  REQUIRE(n.ok());
  st = n->state;
  CHECK(handle_attrs(st, n->handle) == kNoAttrs);

  auto imp = import_key(st, "U2", Term::hash(Term::name("x")));
  REQUIRE(imp.ok());
  st = imp->state;
  CHECK(handle_attrs(st, imp->handle) == attr_bit(Attr::Extractable));
  CHECK(st.key_of(*st.find_handle(imp->handle)).origin == Origin::Imported);
  CHECK(st.key_of(*st.find_handle(imp->handle)).value == Term::hash(Term::name("x")));

  // Handles are numbered 1.. in creation order.
  CHECK(g->handle == 1);
  CHECK(imp->handle == 4);

  // The security officer administers but never holds keys.
  auto so_create = create_key(st, "SO1", Template::Generic, false);
  REQUIRE_FALSE(so_create.ok());
  CHECK(so_create.error().code == TokenError::SOCannotCreateKeys);
  auto so_import = import_key(st, "SO1", Term::name("y"));
  REQUIRE_FALSE(so_import.ok());
  CHECK(so_import.error().code == TokenError::SOCannotCreateKeys);
}

TEST_CASE("anonymous keys take counter labels that never collide") {
  TokenState st = lab_state();
  auto a = create_key(st, "U1", Template::Generic, false);
  REQUIRE(a.ok());
  auto b = import_key(a->state, "U1", Term::name("v"));
  REQUIRE(b.ok());
  auto c = create_key(b->state, "U1", Template::Generic, false);
  REQUIRE(c.ok());
  st = c->state;
  CHECK(st.key_of(*st.find_handle(a->handle)).value == Term::name("k1"));
  CHECK(st.key_of(*st.find_handle(a->handle)).key_id == "k1");
  CHECK(st.key_of(*st.find_handle(b->handle)).key_id == "k2"); // label consumed, value imported
  CHECK(st.key_of(*st.find_handle(c->handle)).value == Term::name("k3"));
}

TEST_CASE("wrap, unwrap, encrypt and decrypt rights toggle on and off") {
  TokenState st = lab_state();
  auto k = create_key(st, "U1", Template::Generic, false, "k");
  REQUIRE(k.ok());
  st = k->state;

  for (Attr a : {Attr::Wrap, Attr::Unwrap, Attr::Encrypt, Attr::Decrypt}) {
    CAPTURE(attr_name(a));
    auto on = set_attribute(st, "U1", k->handle, a);
    REQUIRE(on.ok());
    CHECK(has_attr(handle_attrs(*on, k->handle), a));
    auto off = unset_attribute(*on, "U1", k->handle, a);
    REQUIRE(off.ok());
    CHECK_FALSE(has_attr(handle_attrs(*off, k->handle), a));

    auto foreign = set_attribute(st, "U2", k->handle, a);
    REQUIRE_FALSE(foreign.ok());
    CHECK(foreign.error().code == TokenError::NotOwner);
  }
}

TEST_CASE("the security officer can grant trusted and also revoke it") {
  TokenState st = lab_state();
  auto k = create_key(st, "U1", Template::Generic, false, "k");
  REQUIRE(k.ok());
  st = k->state;

  auto granted = set_attribute(st, "SO1", k->handle, Attr::Trusted);
  REQUIRE(granted.ok());
  CHECK(has_attr(handle_attrs(*granted, k->handle), Attr::Trusted));

  auto revoked = unset_attribute(*granted, "SO1", k->handle, Attr::Trusted);
  REQUIRE(revoked.ok());
  CHECK_FALSE(has_attr(handle_attrs(*revoked, k->handle), Attr::Trusted));

  for (const char* who : {"KM1", "U1"}) {
    CAPTURE(who);
    auto set_fail = set_attribute(st, who, k->handle, Attr::Trusted);
    REQUIRE_FALSE(set_fail.ok());
    CHECK(set_fail.error().code == TokenError::RoleForbidden);
    auto unset_fail = unset_attribute(*granted, who, k->handle, Attr::Trusted);
    REQUIRE_FALSE(unset_fail.ok());
    CHECK(unset_fail.error().code == TokenError::RoleForbidden);
  }
}

TEST_CASE("extractable can be revoked by the owner but never granted after birth") {
  TokenState st = lab_state();
  auto g = create_key(st, "U1", Template::Generic, false, "kg");
  REQUIRE(g.ok());
  auto n = create_key(g->state, "U1", Template::NonExtractable, false, "kn");
  REQUIRE(n.ok());
  st = n->state;

  auto dropped = unset_attribute(st, "U1", g->handle, Attr::Extractable);
  REQUIRE(dropped.ok());
  CHECK_FALSE(has_attr(handle_attrs(*dropped, g->handle), Attr::Extractable));

  for (std::int32_t h : {g->handle, n->handle}) {
    auto raise = set_attribute(*dropped, "U1", h, Attr::Extractable);
    REQUIRE_FALSE(raise.ok());
    CHECK(raise.error().code == TokenError::AttributeImmutable);
  }
}

TEST_CASE("wrap_with_trusted can be granted late but never revoked") {
  TokenState st = lab_state();
  auto k = create_key(st, "U1", Template::Generic, false, "k");
  REQUIRE(k.ok());
  st = k->state;

  auto late = set_attribute(st, "U1", k->handle, Attr::WrapWithTrusted);
  REQUIRE(late.ok());
  CHECK(has_attr(handle_attrs(*late, k->handle), Attr::WrapWithTrusted));

  auto weaken = unset_attribute(*late, "U1", k->handle, Attr::WrapWithTrusted);
  REQUIRE_FALSE(weaken.ok());
  CHECK(weaken.error().code == TokenError::AttributeImmutable);
}

TEST_CASE("wrapping emits the target key encrypted under the hash of the wrapper key") {
  TokenState st = lab_state();
  auto t = create_key(st, "U1", Template::Generic, false, "kt");
  REQUIRE(t.ok());
  auto w = create_key(t->state, "U2", Template::Generic, false, "kww");
  REQUIRE(w.ok());
  st = set_attribute(w->state, "U2", w->handle, Attr::Wrap).value();

  auto out = wrap(st, "U1", t->handle, w->handle);
  REQUIRE(out.ok());
  CHECK(out->term == Term::senc(Term::name("kt"), Term::hash(Term::name("kww"))));
  CHECK(out->state.emitted.contains(out->term));

  // Guards, one by one.
  auto ne = create_key(st, "U1", Template::NonExtractable, false, "kn");
  REQUIRE(ne.ok());
  auto not_extractable = wrap(ne->state, "U1", ne->handle, w->handle);
  REQUIRE_FALSE(not_extractable.ok());
  CHECK(not_extractable.error().code == TokenError::NotExtractable);

  auto not_wrap_key = wrap(st, "U1", w->handle, t->handle);
  REQUIRE_FALSE(not_wrap_key.ok());
  CHECK(not_wrap_key.error().code == TokenError::NotWrapKey);

  auto missing = wrap(st, "U1", 99, w->handle);
  REQUIRE_FALSE(missing.ok());
  CHECK(missing.error().code == TokenError::UnknownHandle);

  auto as_so = wrap(st, "SO1", t->handle, w->handle);
  REQUIRE_FALSE(as_so.ok());
  CHECK(as_so.error().code == TokenError::NotAUser);
}

TEST_CASE("keys under wrap_with_trusted leave the device only under a trusted wrapper") {
  TokenState st = lab_state();
  auto t = create_key(st, "U1", Template::WWT, false, "kw");
  REQUIRE(t.ok());
  auto w = create_key(t->state, "KM1", Template::NonExtractable, false, "kc");
  REQUIRE(w.ok());
  st = set_attribute(w->state, "KM1", w->handle, Attr::Wrap).value();

  auto untrusted = wrap(st, "U1", t->handle, w->handle);
  REQUIRE_FALSE(untrusted.ok());
  CHECK(untrusted.error().code == TokenError::TrustedRequired);

  st = set_attribute(st, "SO1", w->handle, Attr::Trusted).value();
  auto trusted = wrap(st, "U1", t->handle, w->handle);
  REQUIRE(trusted.ok());
  CHECK(trusted->term == Term::senc(Term::name("kw"), Term::hash(Term::name("kc"))));
}

TEST_CASE("unwrapping imports the payload with exactly the requested template") {
  TokenState st = lab_state();
  auto w = create_key(st, "U1", Template::Generic, false, "kww");
  REQUIRE(w.ok());
  st = set_attribute(w->state, "U1", w->handle, Attr::Unwrap).value();

  Term ct = ct_under(st, w->handle, Term::name("payload"));
  AttrSet want = attr_bit(Attr::Wrap) | attr_bit(Attr::Decrypt);
  auto got = unwrap(st, "U2", ct, w->handle, want);
  REQUIRE(got.ok());
  const auto& h = *got->state.find_handle(got->handle);
  CHECK(h.attrs == want);
  CHECK(got->state.key_of(h).value == Term::name("payload"));
  CHECK(got->state.key_of(h).origin == Origin::Unwrapped);
  CHECK(got->state.users[static_cast<std::size_t>(got->state.key_of(h).owner)].id == "U2");

  auto with_right = unwrap(st, "U2", ct, w->handle, kNoAttrs);
  REQUIRE(with_right.ok());
  // drop the wrapper's unwrap right to see the guard
  auto stripped = unset_attribute(st, "U1", w->handle, Attr::Unwrap).value();
  auto denied = unwrap(stripped, "U2", ct, w->handle, kNoAttrs);
  REQUIRE_FALSE(denied.ok());
  CHECK(denied.error().code == TokenError::NotUnwrapKey);

  auto bad_ct = unwrap(st, "U2", Term::name("payload"), w->handle, kNoAttrs);
  REQUIRE_FALSE(bad_ct.ok());
  CHECK(bad_ct.error().code == TokenError::MalformedCiphertext);

  auto wrong_key = unwrap(st, "U2", Term::senc(Term::name("p"), Term::name("kww")), w->handle, kNoAttrs);
  REQUIRE_FALSE(wrong_key.ok());
  CHECK(wrong_key.error().code == TokenError::MalformedCiphertext);

  auto trusted_req = unwrap(st, "U2", ct, w->handle, attr_bit(Attr::Trusted));
  REQUIRE_FALSE(trusted_req.ok());
  CHECK(trusted_req.error().code == TokenError::InvalidTemplate);
}

TEST_CASE("a trusted wrapper dictates the unwrap template regardless of the request") {
  TokenState st = lab_state();
  auto w = create_key(st, "KM1", Template::NonExtractable, false, "kc");
  REQUIRE(w.ok());
  st = set_attribute(w->state, "KM1", w->handle, Attr::Unwrap).value();
  st = set_attribute(st, "SO1", w->handle, Attr::Trusted).value();

  Term ct = ct_under(st, w->handle, Term::name("k"));
  auto got = unwrap(st, "U1", ct, w->handle, attr_bit(Attr::Decrypt));
  REQUIRE(got.ok());
  CHECK(got->state.find_handle(got->handle)->attrs ==
        (attr_bit(Attr::WrapWithTrusted) | attr_bit(Attr::Extractable)));
}

TEST_CASE("encrypt and decrypt work only with the matching attribute and key") {
  TokenState st = lab_state();
  auto k = create_key(st, "U1", Template::Generic, false, "k");
  REQUIRE(k.ok());
  st = set_attribute(k->state, "U1", k->handle, Attr::Encrypt).value();
  st = set_attribute(st, "U1", k->handle, Attr::Decrypt).value();

  Term data = Term::name("data");
  auto ct = encrypt(st, "U2", data, k->handle); // usage is not owner-restricted
  REQUIRE(ct.ok());
  CHECK(ct->term == Term::senc(data, Term::hash(Term::name("k"))));

  auto pt = decrypt(ct->state, "U2", ct->term, k->handle);
  REQUIRE(pt.ok());
  CHECK(pt->term == data);
  CHECK(pt->state.emitted.contains(data)); // decryption outputs are public

  auto other = create_key(st, "U1", Template::Generic, false, "other");
  REQUIRE(other.ok());
  auto no_enc = encrypt(other->state, "U1", data, other->handle);
  REQUIRE_FALSE(no_enc.ok());
  CHECK(no_enc.error().code == TokenError::NotEncryptKey);
  auto no_dec = decrypt(other->state, "U1", ct->term, other->handle);
  REQUIRE_FALSE(no_dec.ok());
  CHECK(no_dec.error().code == TokenError::NotDecryptKey);

  auto mismatched = decrypt(st, "U1", Term::senc(data, Term::hash(Term::name("q"))), k->handle);
  REQUIRE_FALSE(mismatched.ok());
  CHECK(mismatched.error().code == TokenError::MalformedCiphertext);
}

TEST_CASE("paper mode disables encryption and decryption entirely") {
  TokenState st = lab_state(false, Mode::Paper);
  auto k = create_key(st, "U1", Template::Generic, false, "k");
  REQUIRE(k.ok());
  st = set_attribute(k->state, "U1", k->handle, Attr::Encrypt).value();
  st = set_attribute(st, "U1", k->handle, Attr::Decrypt).value();

  auto enc = encrypt(st, "U1", Term::name("d"), k->handle);
  REQUIRE_FALSE(enc.ok());
  CHECK(enc.error().code == TokenError::ModeForbidden);
  auto dec = decrypt(st, "U1", Term::senc(Term::name("d"), Term::hash(Term::name("k"))), k->handle);
  REQUIRE_FALSE(dec.ok());
  CHECK(dec.error().code == TokenError::ModeForbidden);
}

TEST_CASE("leak emission publishes hashes of usable or exposed keys, paper mode only") {
  TokenState full = lab_state(false, Mode::Full);
  auto blocked = emit_leaks(full);
  REQUIRE_FALSE(blocked.ok());
  CHECK(blocked.error().code == TokenError::ModeForbidden);

  TokenState st = lab_state(false, Mode::Paper);
  // encrypt-capable, non-extractable: leaks through usage
  auto ke = create_key(st, "U1", Template::NonExtractable, false, "ke");
  st = set_attribute(ke->state, "U1", ke->handle, Attr::Encrypt).value();
  // decrypt-capable: leaks through usage
  auto kd = create_key(st, "U1", Template::Generic, false, "kd");
  st = set_attribute(kd->state, "U1", kd->handle, Attr::Decrypt).value();
  // plain generic: extractable without wrap_with_trusted, leaks as exposed
  auto kx = create_key(st, "U1", Template::Generic, false, "kx");
  st = kx->state;
  // wwt template: extractable but protected, silent
  auto kw = create_key(st, "U1", Template::WWT, false, "kw");
  st = kw->state;
  // bare non-extractable: silent
  auto kn = create_key(st, "U1", Template::NonExtractable, false, "kn");
  st = kn->state;

  auto out = emit_leaks(st);
  REQUIRE(out.ok());
  std::vector<Term> expect = {Term::hash(Term::name("ke")), Term::hash(Term::name("kd")),
                              Term::hash(Term::name("kx"))};
  std::sort(expect.begin(), expect.end(), term_less);
  CHECK(out->leaked == expect);
  for (Term t : expect) CHECK(out->state.emitted.contains(t));
}

TEST_CASE("with policy on the trusted grant admits only device-generated key-manager keys") {
  TokenState st = lab_state(true);
  auto cand = create_key(st, "KM1", Template::NonExtractable, false, "kc");
  REQUIRE(cand.ok());
  st = cand->state;
  auto nu_key = create_key(st, "U1", Template::NonExtractable, false, "knu");
  REQUIRE(nu_key.ok());
  st = nu_key->state;
  auto imported = import_key(st, "KM1", Term::name("ext"));
  REQUIRE(imported.ok());
  st = imported->state;
  auto generic = create_key(st, "KM1", Template::Generic, false, "kg");
  REQUIRE(generic.ok());
  st = generic->state;

  auto ok = set_attribute(st, "SO1", cand->handle, Attr::Trusted);
  REQUIRE(ok.ok());

  auto r2 = set_attribute(st, "SO1", nu_key->handle, Attr::Trusted);
  REQUIRE_FALSE(r2.ok());
  CHECK(r2.error().code == TokenError::PolicyViolation);
  CHECK(r2.error().rule == PolicyRule::R2);

  auto r5 = set_attribute(st, "SO1", imported->handle, Attr::Trusted);
  REQUIRE_FALSE(r5.ok());
  CHECK(r5.error().rule == PolicyRule::R5);

  auto r4 = set_attribute(st, "SO1", generic->handle, Attr::Trusted);
  REQUIRE_FALSE(r4.ok());
  CHECK(r4.error().rule == PolicyRule::R4);
}

TEST_CASE("with policy on candidate keys accept only wrap and unwrap grants") {
  TokenState st = lab_state(true);
  auto cand = create_key(st, "KM1", Template::NonExtractable, false, "kc");
  REQUIRE(cand.ok());
  st = cand->state;

  REQUIRE(set_attribute(st, "KM1", cand->handle, Attr::Wrap).ok());
  REQUIRE(set_attribute(st, "KM1", cand->handle, Attr::Unwrap).ok());

  for (Attr a : {Attr::Encrypt, Attr::Decrypt, Attr::WrapWithTrusted}) {
    CAPTURE(attr_name(a));
    auto denied = set_attribute(st, "KM1", cand->handle, a);
    REQUIRE_FALSE(denied.ok());
    CHECK(denied.error().code == TokenError::PolicyViolation);
    CHECK(denied.error().rule == PolicyRule::R3);
  }

  // Non-candidate keys are not restricted, even for a KM owner.
  auto generic = create_key(st, "KM1", Template::Generic, false, "kg");
  REQUIRE(generic.ok());
  CHECK(set_attribute(generic->state, "KM1", generic->handle, Attr::Encrypt).ok());
  // Normal users are never restricted by R3.
  auto nu_key = create_key(st, "U1", Template::NonExtractable, false, "knu");
  REQUIRE(nu_key.ok());
  CHECK(set_attribute(nu_key->state, "U1", nu_key->handle, Attr::Encrypt).ok());
}

// ---------------------------------------------------------------------------
// Properties over random operation sequences.
// ---------------------------------------------------------------------------

namespace {

struct OpDesc {
  enum Kind { Create, Import, Set, Unset, Wrap, Unwrap, Encrypt, Decrypt, Leaks } kind;
  std::string actor;
  std::int32_t h1 = 0;
  std::int32_t h2 = 0;
  Attr attr = Attr::Wrap;
};

const char* kActors[] = {"SO1", "KM1", "U1", "U2"};

OpDesc random_op(Rng& rng, const TokenState& st) {
  OpDesc op;
  op.kind = static_cast<OpDesc::Kind>(pick(rng, 0, 8));
  op.actor = kActors[pick(rng, 0, 3)];
  int hmax = std::max(1, st.next_handle); // next_handle itself is unknown -> guard coverage
  op.h1 = pick(rng, 1, hmax);
  op.h2 = pick(rng, 1, hmax);
  op.attr = static_cast<Attr>(pick(rng, 0, 6));
  return op;
}

std::optional<TokenState> apply_op(const TokenState& st, const OpDesc& op, Rng& rng) {
  auto keep = [](auto&& r) -> std::optional<TokenState> {
    if (!r.ok()) return std::nullopt;
    return std::move(r->state);
  };
  switch (op.kind) {
  case OpDesc::Create:
    return keep(create_key(st, op.actor, static_cast<Template>(pick(rng, 0, 2)), chance(rng, 0.3)));
  case OpDesc::Import:
    return keep(import_key(st, op.actor, random_term(rng, 2)));
  case OpDesc::Set: {
    auto r = set_attribute(st, op.actor, op.h1, op.attr);
    if (!r.ok()) return std::nullopt;
    return *r;
  }
  case OpDesc::Unset: {
    auto r = unset_attribute(st, op.actor, op.h1, op.attr);
    if (!r.ok()) return std::nullopt;
    return *r;
  }
  case OpDesc::Wrap:
    return keep(wrap(st, op.actor, op.h1, op.h2));
  case OpDesc::Unwrap: {
    Term ct = random_term(rng, 2);
    if (const auto* hw = st.find_handle(op.h1); hw && chance(rng, 0.6))
      ct = Term::senc(random_term(rng, 1), Term::hash(st.key_of(*hw).value));
    auto tmpl = static_cast<AttrSet>(pick(rng, 0, 127));
    return keep(unwrap(st, op.actor, ct, op.h1, tmpl));
  }
  case OpDesc::Encrypt:
    return keep(encrypt(st, op.actor, random_term(rng, 1), op.h1));
  case OpDesc::Decrypt: {
    Term ct = random_term(rng, 2);
    if (const auto* h = st.find_handle(op.h1); h && chance(rng, 0.6))
      ct = Term::senc(random_term(rng, 1), Term::hash(st.key_of(*h).value));
    return keep(decrypt(st, op.actor, ct, op.h1));
  }
  case OpDesc::Leaks:
    return keep(emit_leaks(st));
  }
  return std::nullopt;
}

Role role_of(const TokenState& st, const std::string& id) {
  return st.users[static_cast<std::size_t>(st.user_index(id))].role;
}

void check_transition(const TokenState& prev, const TokenState& next, const OpDesc& op) {
  // Users, key objects and handles are append-only; established facts persist.
  REQUIRE(next.users.size() >= prev.users.size());
  REQUIRE(next.keys.size() >= prev.keys.size());
  REQUIRE(next.handles.size() >= prev.handles.size());
  for (std::size_t i = 0; i < prev.users.size(); ++i) REQUIRE(next.users[i] == prev.users[i]);
  for (std::size_t i = 0; i < prev.keys.size(); ++i) REQUIRE(next.keys[i] == prev.keys[i]);

  for (std::size_t i = 0; i < prev.handles.size(); ++i) {
    const auto& a = prev.handles[i];
    const auto& b = next.handles[i];
    REQUIRE(a.id == b.id);
    REQUIRE(a.key == b.key);
    REQUIRE(a.sensitive == b.sensitive);

    // extractable never rises after birth; wrap_with_trusted never falls
    if (!has_attr(a.attrs, Attr::Extractable)) REQUIRE_FALSE(has_attr(b.attrs, Attr::Extractable));
    if (has_attr(a.attrs, Attr::WrapWithTrusted)) REQUIRE(has_attr(b.attrs, Attr::WrapWithTrusted));

    if (a.attrs != b.attrs) {
      // only an attribute call touches attributes, one bit at a time, on the
      // named handle, by the right principal
      REQUIRE((op.kind == OpDesc::Set || op.kind == OpDesc::Unset));
      REQUIRE(op.h1 == a.id);
      AttrSet diff = static_cast<AttrSet>(a.attrs ^ b.attrs);
      REQUIRE(std::popcount(diff) == 1);
      if (diff == attr_bit(Attr::Trusted)) {
        REQUIRE(role_of(prev, op.actor) == Role::SO);
      } else {
        const auto& key = prev.key_of(a);
        REQUIRE(prev.users[static_cast<std::size_t>(key.owner)].id == op.actor);
      }
    }
  }

  for (Term t : prev.emitted.terms()) REQUIRE(next.emitted.contains(t));
  REQUIRE(next.next_handle >= prev.next_handle);
  REQUIRE(next.mode == prev.mode);
  REQUIRE(next.policy_on == prev.policy_on);

  if (next.policy_on) {
    for (const auto& h : next.handles) {
      if (!has_attr(h.attrs, Attr::Trusted)) continue;
      const auto& key = next.key_of(h);
      // R2/R4/R5 at grant time plus R3/immutability afterwards pin the shape.
      REQUIRE(next.users[static_cast<std::size_t>(key.owner)].role == Role::KM);
      REQUIRE(key.origin == Origin::Fresh);
      REQUIRE(key.created_with == Template::NonExtractable);
      REQUIRE_FALSE(has_attr(h.attrs, Attr::Extractable));
      constexpr AttrSet admissible =
          attr_bit(Attr::Wrap) | attr_bit(Attr::Unwrap) | attr_bit(Attr::Trusted);
      REQUIRE((h.attrs & ~admissible) == 0);
    }
  }
}

} // namespace

TEST_CASE("random operation sequences preserve the structural invariants") {
  Rng rng(0x746f6b656e696e76ull);
  for (int run = 0; run < 12000; ++run) {
    bool policy = chance(rng, 0.5);
    Mode mode = chance(rng, 0.25) ? Mode::Paper : Mode::Full;
    TokenState st = lab_state(policy, mode);

    int seeds = pick(rng, 2, 4);
    for (int i = 0; i < seeds; ++i) {
      const char* owner = kActors[pick(rng, 1, 3)]; // KM1/U1/U2
      auto r = create_key(st, owner, static_cast<Template>(pick(rng, 0, 2)), chance(rng, 0.3));
      REQUIRE(r.ok());
      st = r->state;
    }

    for (int i = 0; i < 8; ++i) {
      OpDesc op = random_op(rng, st);
      auto next = apply_op(st, op, rng);
      if (!next) continue; // rejected; rejection legality has its own suite
      check_transition(st, *next, op);
      st = *next;
    }
  }
}

// An independent model of the attribute-change rules, transcribed from the
// documented precedence rather than from the code: user exists, handle exists,
// then per-attribute role/ownership/policy checks in order.
namespace {

struct Prediction {
  bool ok;
  TokenError err = TokenError::NotAUser;
  std::optional<PolicyRule> rule = std::nullopt;
};

Prediction predict_change(const TokenState& st, const std::string& actor, std::int32_t handle,
                          Attr a, bool setting) {
  auto u = st.user_index(actor);
  if (u < 0) return {false, TokenError::NotAUser};
  const auto* h = st.find_handle(handle);
  if (!h) return {false, TokenError::UnknownHandle};
  Role role = st.users[static_cast<std::size_t>(u)].role;
  const auto& key = st.key_of(*h);
  Role owner_role = st.users[static_cast<std::size_t>(key.owner)].role;

  if (!setting && a == Attr::WrapWithTrusted) return {false, TokenError::AttributeImmutable};
  if (a == Attr::Trusted) {
    if (role != Role::SO) return {false, TokenError::RoleForbidden};
    if (setting && st.policy_on) {
      if (owner_role != Role::KM) return {false, TokenError::PolicyViolation, PolicyRule::R2};
      if (key.origin != Origin::Fresh) return {false, TokenError::PolicyViolation, PolicyRule::R5};
      if (key.created_with != Template::NonExtractable)
        return {false, TokenError::PolicyViolation, PolicyRule::R4};
    }
    return {true};
  }
  if (setting && a == Attr::Extractable) return {false, TokenError::AttributeImmutable};
  if (key.owner != u) return {false, TokenError::NotOwner};
  if (setting && st.policy_on && role == Role::KM) {
    bool candidate = key.origin == Origin::Fresh &&
                     key.created_with == Template::NonExtractable && owner_role == Role::KM;
    if (candidate && a != Attr::Wrap && a != Attr::Unwrap)
      return {false, TokenError::PolicyViolation, PolicyRule::R3};
  }
  return {true};
}

} // namespace

TEST_CASE("attribute changes succeed or fail exactly as the documented rules predict") {
  Rng rng(0x6174747273706563ull);
  for (int run = 0; run < 10000; ++run) {
    TokenState st = lab_state(chance(rng, 0.5));
    int seeds = pick(rng, 2, 4);
    for (int i = 0; i < seeds; ++i) {
      const char* owner = kActors[pick(rng, 1, 3)];
      if (chance(rng, 0.25)) {
        auto r = import_key(st, owner, random_term(rng, 1));
        REQUIRE(r.ok());
        st = r->state;
      } else {
        auto r = create_key(st, owner, static_cast<Template>(pick(rng, 0, 2)), false);
        REQUIRE(r.ok());
        st = r->state;
      }
    }

    for (int i = 0; i < 6; ++i) {
      std::string actor = chance(rng, 0.05) ? "ghost" : kActors[pick(rng, 0, 3)];
      std::int32_t handle = pick(rng, 1, st.next_handle);
      Attr a = static_cast<Attr>(pick(rng, 0, 6));
      bool setting = chance(rng, 0.6);

      Prediction want = predict_change(st, actor, handle, a, setting);
      auto got = setting ? set_attribute(st, actor, handle, a)
                         : unset_attribute(st, actor, handle, a);
      CAPTURE(run);
      CAPTURE(actor);
      CAPTURE(handle);
      CAPTURE(attr_name(a));
      CAPTURE(setting);
      REQUIRE(got.ok() == want.ok);
      if (!want.ok) {
        REQUIRE(got.error().code == want.err);
        REQUIRE(got.error().rule == want.rule);
      } else {
        REQUIRE(has_attr(got->find_handle(handle)->attrs, a) == setting);
        st = *got;
      }
    }
  }
}

TEST_CASE("user registration behaves like a write-once map from id to role") {
  Rng rng(0x757365726d617073ull);
  static const char* ids[] = {"a", "b", "c", "d"};
  for (int run = 0; run < 4000; ++run) {
    TokenState st;
    std::map<std::string, Role> model;
    for (int i = 0; i < 8; ++i) {
      std::string id = ids[pick(rng, 0, 3)];
      Role role = static_cast<Role>(pick(rng, 0, 2));
      auto r = new_user(st, id, role);
      if (model.count(id)) {
        REQUIRE_FALSE(r.ok());
        REQUIRE(r.error().code == TokenError::DuplicateUser);
      } else {
        REQUIRE(r.ok());
        model[id] = role;
        st = *r;
      }
    }
    REQUIRE(st.users.size() == model.size());
    for (const auto& u : st.users) REQUIRE(model.at(u.id) == u.role);
  }
}

TEST_CASE("unwrapping an emitted wrap always reproduces the original key value") {
  Rng rng(0x756e777261707274ull);
  for (int run = 0; run < 10000; ++run) {
    TokenState st = lab_state();
    auto t = create_key(st, kActors[pick(rng, 1, 3)], static_cast<Template>(pick(rng, 0, 1)),
                        chance(rng, 0.5), "target");
    REQUIRE(t.ok());
    st = t->state;
    auto w = create_key(st, kActors[pick(rng, 1, 3)], Template::NonExtractable, false, "wrapper");
    REQUIRE(w.ok());
    st = w->state;
    const auto& wrapper_owner =
        st.users[static_cast<std::size_t>(st.key_of(*st.find_handle(w->handle)).owner)].id;
    st = set_attribute(st, wrapper_owner, w->handle, Attr::Wrap).value();
    st = set_attribute(st, wrapper_owner, w->handle, Attr::Unwrap).value();
    if (has_attr(st.find_handle(t->handle)->attrs, Attr::WrapWithTrusted))
      st = set_attribute(st, "SO1", w->handle, Attr::Trusted).value();

    auto ct = wrap(st, "U1", t->handle, w->handle);
    REQUIRE(ct.ok());
    st = ct->state;

    AttrSet tmpl = static_cast<AttrSet>(pick(rng, 0, 63)); // any template minus trusted
    auto back = unwrap(st, kActors[pick(rng, 1, 3)], ct->term, w->handle, tmpl);
    REQUIRE(back.ok());
    const auto& h = *back->state.find_handle(back->handle);
    REQUIRE(back->state.key_of(h).value == Term::name("target"));
    bool trusted_wrapper = has_attr(st.find_handle(w->handle)->attrs, Attr::Trusted);
    REQUIRE(h.attrs == (trusted_wrapper ? kTrustedUnwrapTemplate : tmpl));
  }
}
