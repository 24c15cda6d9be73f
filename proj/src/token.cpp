#include "hsmlab/token.hpp"

#include <array>

#include "hsmlab/policy.hpp"

namespace hsmlab {

namespace {

constexpr std::array<std::string_view, 7> kAttrNames = {
    "extractable", "wrap", "unwrap", "encrypt", "decrypt", "wrap_with_trusted", "trusted"};

bool is_crypto_user(Role r) { return r == Role::NU || r == Role::KM; }

} // namespace

std::string_view attr_name(Attr a) { return kAttrNames[static_cast<std::size_t>(a)]; }

std::optional<Attr> attr_from_name(std::string_view s) {
  for (std::size_t i = 0; i < kAttrNames.size(); ++i)
    if (kAttrNames[i] == s) return static_cast<Attr>(i);
  return std::nullopt;
}

std::string attrs_to_string(AttrSet s) {
  std::string out;
  for (std::size_t i = 0; i < kAttrNames.size(); ++i) {
    if (!has_attr(s, static_cast<Attr>(i))) continue;
    if (!out.empty()) out += ',';
    out += kAttrNames[i];
  }
  return out;
}

std::string_view role_name(Role r) {
  switch (r) {
  case Role::NU: return "NU";
  case Role::KM: return "KM";
  case Role::SO: return "SO";
  }
  return "?";
}

std::optional<Role> role_from_name(std::string_view s) {
  if (s == "NU") return Role::NU;
  if (s == "KM") return Role::KM;
  if (s == "SO") return Role::SO;
  return std::nullopt;
}

std::string_view policy_rule_name(PolicyRule r) {
  switch (r) {
  case PolicyRule::R1: return "R1";
  case PolicyRule::R2: return "R2";
  case PolicyRule::R3: return "R3";
  case PolicyRule::R4: return "R4";
  case PolicyRule::R5: return "R5";
  case PolicyRule::Ownership: return "OWNERSHIP";
  }
  return "?";
}

std::string_view token_error_name(TokenError e) {
  switch (e) {
  case TokenError::DuplicateUser: return "DuplicateUser";
  case TokenError::NotAUser: return "NotAUser";
  case TokenError::SOCannotCreateKeys: return "SOCannotCreateKeys";
  case TokenError::UnknownHandle: return "UnknownHandle";
  case TokenError::NotOwner: return "NotOwner";
  case TokenError::RoleForbidden: return "RoleForbidden";
  case TokenError::AttributeImmutable: return "AttributeImmutable";
  case TokenError::PolicyViolation: return "PolicyViolation";
  case TokenError::NotExtractable: return "NotExtractable";
  case TokenError::NotWrapKey: return "NotWrapKey";
  case TokenError::TrustedRequired: return "TrustedRequired";
  case TokenError::NotUnwrapKey: return "NotUnwrapKey";
  case TokenError::NotEncryptKey: return "NotEncryptKey";
  case TokenError::NotDecryptKey: return "NotDecryptKey";
  case TokenError::MalformedCiphertext: return "MalformedCiphertext";
  case TokenError::InvalidTemplate: return "InvalidTemplate";
  case TokenError::ModeForbidden: return "ModeForbidden";
  case TokenError::UnderivableTerm: return "UnderivableTerm";
  }
  return "?";
}

std::int32_t TokenState::user_index(std::string_view id) const {
  for (std::size_t i = 0; i < users.size(); ++i)
    if (users[i].id == id) return static_cast<std::int32_t>(i);
  return -1;
}

std::int32_t TokenState::handle_index(std::int32_t handle_id) const {
  // Handles are created with sequential 1-based ids and never destroyed, so
  // position follows from the id; the scan is a safety net.
  auto guess = static_cast<std::size_t>(handle_id) - 1;
  if (guess < handles.size() && handles[guess].id == handle_id)
    return static_cast<std::int32_t>(guess);
  for (std::size_t i = 0; i < handles.size(); ++i)
    if (handles[i].id == handle_id) return static_cast<std::int32_t>(i);
  return -1;
}

const HandleRecord* TokenState::find_handle(std::int32_t handle_id) const {
  auto idx = handle_index(handle_id);
  return idx < 0 ? nullptr : &handles[static_cast<std::size_t>(idx)];
}

TokenResult<TokenState> new_user(const TokenState& st, std::string_view id, Role role) {
  if (st.user_index(id) >= 0) return TokenFailure{TokenError::DuplicateUser};
  TokenState out = st;
  out.users.push_back({std::string(id), role});
  return out;
}

namespace {

AttrSet birth_attrs(Template t) {
  switch (t) {
  case Template::Generic: return kGenericBirth;
  case Template::WWT: return kWwtBirth;
  case Template::NonExtractable: return kNonExtractableBirth;
  }
  return 0;
}

TokenResult<HandleOutput> add_key(TokenState out, std::string key_id, Term value,
                                  std::int32_t owner, Origin origin, Template tmpl,
                                  AttrSet attrs, bool sensitive) {
  KeyObject k;
  k.key_id = std::move(key_id);
  k.value = value;
  k.owner = owner;
  k.origin = origin;
  k.created_with = tmpl;
  out.keys.push_back(std::move(k));

  HandleRecord h;
  h.id = out.next_handle++;
  h.key = static_cast<std::int32_t>(out.keys.size() - 1);
  h.attrs = attrs;
  h.sensitive = sensitive;
  out.handles.push_back(h);
  auto id = h.id;
  return HandleOutput{std::move(out), id};
}

} // namespace

TokenResult<HandleOutput> create_key(const TokenState& st, std::string_view user, Template tmpl,
                                     bool sensitive_mark, std::string_view key_label) {
  auto u = st.user_index(user);
  if (u < 0) return TokenFailure{TokenError::NotAUser};
  if (st.users[static_cast<std::size_t>(u)].role == Role::SO)
    return TokenFailure{TokenError::SOCannotCreateKeys};
  TokenState out = st;
  std::string label(key_label);
  if (label.empty()) label = "k" + std::to_string(out.next_key_label++);
  return add_key(std::move(out), label, Term::name(label), u, Origin::Fresh, tmpl,
                 birth_attrs(tmpl), sensitive_mark);
}

TokenResult<HandleOutput> import_key(const TokenState& st, std::string_view user, Term value,
                                     std::string_view key_label) {
  auto u = st.user_index(user);
  if (u < 0) return TokenFailure{TokenError::NotAUser};
  if (st.users[static_cast<std::size_t>(u)].role == Role::SO)
    return TokenFailure{TokenError::SOCannotCreateKeys};
  TokenState out = st;
  std::string label(key_label);
  if (label.empty()) label = "k" + std::to_string(out.next_key_label++);
  return add_key(std::move(out), label, value, u, Origin::Imported, Template::Generic,
                 attr_bit(Attr::Extractable), false);
}

TokenResult<TokenState> set_attribute(const TokenState& st, std::string_view user,
                                      std::int32_t handle, Attr a) {
  auto u = st.user_index(user);
  if (u < 0) return TokenFailure{TokenError::NotAUser};
  auto hi = st.handle_index(handle);
  if (hi < 0) return TokenFailure{TokenError::UnknownHandle};
  const auto& h = st.handles[static_cast<std::size_t>(hi)];
  const auto& role = st.users[static_cast<std::size_t>(u)].role;

  if (a == Attr::Trusted) {
    if (role != Role::SO) return TokenFailure{TokenError::RoleForbidden};
    if (st.policy_on) {
      auto verdict = check_set_trusted(st, user, handle);
      if (!verdict.ok()) return verdict.error();
      if (!verdict->allowed)
        return TokenFailure{TokenError::PolicyViolation, verdict->rule};
    }
  } else if (a == Attr::Extractable) {
    // extractable is decided at creation and only ever drops
    return TokenFailure{TokenError::AttributeImmutable};
  } else {
    if (st.key_of(h).owner != u) return TokenFailure{TokenError::NotOwner};
    if (st.policy_on && role == Role::KM) {
      auto verdict = check_km_attr_change(st, user, handle, a);
      if (!verdict.ok()) return verdict.error();
      if (!verdict->allowed)
        return TokenFailure{TokenError::PolicyViolation, verdict->rule};
    }
  }

  TokenState out = st;
  out.handles[static_cast<std::size_t>(hi)].attrs = with_attr(h.attrs, a);
  return out;
}

TokenResult<TokenState> unset_attribute(const TokenState& st, std::string_view user,
                                        std::int32_t handle, Attr a) {
  auto u = st.user_index(user);
  if (u < 0) return TokenFailure{TokenError::NotAUser};
  auto hi = st.handle_index(handle);
  if (hi < 0) return TokenFailure{TokenError::UnknownHandle};
  const auto& h = st.handles[static_cast<std::size_t>(hi)];
  const auto& role = st.users[static_cast<std::size_t>(u)].role;

  if (a == Attr::WrapWithTrusted)
    return TokenFailure{TokenError::AttributeImmutable}; // never weakened
  if (a == Attr::Trusted) {
    if (role != Role::SO) return TokenFailure{TokenError::RoleForbidden};
  } else {
    if (st.key_of(h).owner != u) return TokenFailure{TokenError::NotOwner};
  }

  TokenState out = st;
  out.handles[static_cast<std::size_t>(hi)].attrs = without_attr(h.attrs, a);
  return out;
}

TokenResult<TermOutput> wrap(const TokenState& st, std::string_view user, std::int32_t target,
                             std::int32_t wrapper) {
  auto u = st.user_index(user);
  if (u < 0 || !is_crypto_user(st.users[static_cast<std::size_t>(u)].role))
    return TokenFailure{TokenError::NotAUser};
  const auto* ht = st.find_handle(target);
  const auto* hw = st.find_handle(wrapper);
  if (!ht || !hw) return TokenFailure{TokenError::UnknownHandle};
  if (!has_attr(ht->attrs, Attr::Extractable)) return TokenFailure{TokenError::NotExtractable};
  if (!has_attr(hw->attrs, Attr::Wrap)) return TokenFailure{TokenError::NotWrapKey};
  if (has_attr(ht->attrs, Attr::WrapWithTrusted) && !has_attr(hw->attrs, Attr::Trusted))
    return TokenFailure{TokenError::TrustedRequired};

  Term ct = Term::senc(st.key_of(*ht).value, Term::hash(st.key_of(*hw).value));
  TokenState out = st;
  out.emitted.insert(ct);
  return TermOutput{std::move(out), ct};
}

TokenResult<HandleOutput> unwrap(const TokenState& st, std::string_view user, Term ct,
                                 std::int32_t wrapper, AttrSet tmpl) {
  auto u = st.user_index(user);
  if (u < 0 || !is_crypto_user(st.users[static_cast<std::size_t>(u)].role))
    return TokenFailure{TokenError::NotAUser};
  const auto* hw = st.find_handle(wrapper);
  if (!hw) return TokenFailure{TokenError::UnknownHandle};
  if (!has_attr(hw->attrs, Attr::Unwrap)) return TokenFailure{TokenError::NotUnwrapKey};
  if ((tmpl & ~kUnwrapTemplateMask) != 0) return TokenFailure{TokenError::InvalidTemplate};
  if (ct.kind() != TermKind::Senc || ct.key_part() != Term::hash(st.key_of(*hw).value))
    return TokenFailure{TokenError::MalformedCiphertext};

  // A trusted wrapper dictates the template; the caller's request is ignored.
  AttrSet attrs = has_attr(hw->attrs, Attr::Trusted) ? kTrustedUnwrapTemplate : tmpl;
  TokenState out = st;
  std::string label = "k" + std::to_string(out.next_key_label++);
  return add_key(std::move(out), label, ct.payload(), u, Origin::Unwrapped, Template::Generic,
                 attrs, false);
}

TokenResult<TermOutput> encrypt(const TokenState& st, std::string_view user, Term data,
                                std::int32_t handle) {
  if (st.mode != Mode::Full) return TokenFailure{TokenError::ModeForbidden};
  auto u = st.user_index(user);
  if (u < 0 || !is_crypto_user(st.users[static_cast<std::size_t>(u)].role))
    return TokenFailure{TokenError::NotAUser};
  const auto* h = st.find_handle(handle);
  if (!h) return TokenFailure{TokenError::UnknownHandle};
  if (!has_attr(h->attrs, Attr::Encrypt)) return TokenFailure{TokenError::NotEncryptKey};

  Term ct = Term::senc(data, Term::hash(st.key_of(*h).value));
  TokenState out = st;
  out.emitted.insert(ct);
  return TermOutput{std::move(out), ct};
}

TokenResult<TermOutput> decrypt(const TokenState& st, std::string_view user, Term ct,
                                std::int32_t handle) {
  if (st.mode != Mode::Full) return TokenFailure{TokenError::ModeForbidden};
  auto u = st.user_index(user);
  if (u < 0 || !is_crypto_user(st.users[static_cast<std::size_t>(u)].role))
    return TokenFailure{TokenError::NotAUser};
  const auto* h = st.find_handle(handle);
  if (!h) return TokenFailure{TokenError::UnknownHandle};
  if (!has_attr(h->attrs, Attr::Decrypt)) return TokenFailure{TokenError::NotDecryptKey};
  if (ct.kind() != TermKind::Senc || ct.key_part() != Term::hash(st.key_of(*h).value))
    return TokenFailure{TokenError::MalformedCiphertext};

  Term plain = ct.payload();
  TokenState out = st;
  out.emitted.insert(plain);
  return TermOutput{std::move(out), plain};
}

TokenResult<LeakOutput> emit_leaks(const TokenState& st) {
  if (st.mode != Mode::Paper) return TokenFailure{TokenError::ModeForbidden};
  KnowledgeBase leaks;
  for (const auto& h : st.handles) {
    bool usage = has_attr(h.attrs, Attr::Encrypt) || has_attr(h.attrs, Attr::Decrypt);
    bool exposed = has_attr(h.attrs, Attr::Extractable) && !has_attr(h.attrs, Attr::WrapWithTrusted);
    if (usage || exposed) leaks.insert(Term::hash(st.key_of(h).value));
  }
  TokenState out = st;
  for (Term t : leaks.terms()) out.emitted.insert(t);
  return LeakOutput{std::move(out), leaks.terms()};
}

} // namespace hsmlab
