#include "hsmlab/policy.hpp"

namespace hsmlab {

namespace {

constexpr AttrSet kCandidateAdmissible = attr_bit(Attr::Wrap) | attr_bit(Attr::Unwrap);

const ScenarioUser* scenario_user(const Scenario& scn, std::string_view id) {
  for (const auto& u : scn.users)
    if (u.id == id) return &u;
  return nullptr;
}

} // namespace

TokenResult<bool> is_candidate(const TokenState& st, std::int32_t handle) {
  const auto* h = st.find_handle(handle);
  if (!h) return TokenFailure{TokenError::UnknownHandle};
  const auto& key = st.key_of(*h);
  if (key.origin != Origin::Fresh) return false;
  if (key.created_with != Template::NonExtractable) return false;
  return st.users[static_cast<std::size_t>(key.owner)].role == Role::KM;
}

TokenResult<PolicyVerdict> check_set_trusted(const TokenState& st, std::string_view so_user,
                                             std::int32_t handle) {
  auto u = st.user_index(so_user);
  if (u < 0) return TokenFailure{TokenError::NotAUser};
  if (st.users[static_cast<std::size_t>(u)].role != Role::SO)
    return TokenFailure{TokenError::RoleForbidden};
  const auto* h = st.find_handle(handle);
  if (!h) return TokenFailure{TokenError::UnknownHandle};

  const auto& key = st.key_of(*h);
  // Rule attribution mirrors how the candidate test fails: wrong owner role
  // first, then origin, then the creation template.
  if (st.users[static_cast<std::size_t>(key.owner)].role != Role::KM)
    return PolicyVerdict{false, PolicyRule::R2, "trusted key must be owned by a key manager"};
  if (key.origin != Origin::Fresh)
    return PolicyVerdict{false, PolicyRule::R5, "trusted key must be generated in the device"};
  if (key.created_with != Template::NonExtractable)
    return PolicyVerdict{false, PolicyRule::R4, "trusted key must be created non-extractable"};
  return PolicyVerdict{true, std::nullopt, ""};
}

TokenResult<PolicyVerdict> check_km_attr_change(const TokenState& st, std::string_view km_user,
                                                std::int32_t handle, Attr a) {
  auto u = st.user_index(km_user);
  if (u < 0) return TokenFailure{TokenError::NotAUser};
  if (st.users[static_cast<std::size_t>(u)].role != Role::KM)
    return TokenFailure{TokenError::RoleForbidden};
  auto cand = is_candidate(st, handle);
  if (!cand.ok()) return cand.error();

  const auto* h = st.find_handle(handle);
  bool own_candidate = *cand && st.key_of(*h).owner == u;
  if (own_candidate && (attr_bit(a) & kCandidateAdmissible) == 0)
    return PolicyVerdict{false, PolicyRule::R3,
                         "candidate keys admit only wrap and unwrap"};
  return PolicyVerdict{true, std::nullopt, ""};
}

LintReport lint(const Scenario& scn) {
  LintReport report;
  auto add = [&](PolicyRule rule, const ScenarioKey& k, std::string msg) {
    report.push_back({rule, k.id, std::move(msg), k.line});
  };

  for (const auto& k : scn.keys) {
    const auto* owner = scenario_user(scn, k.owner);

    if (k.sensitive && (k.imported || k.tmpl == Template::Generic))
      add(PolicyRule::R1, k,
          k.imported ? "sensitive key imported in the clear"
                     : "sensitive key created extractable without wrap_with_trusted");

    bool candidate_shape = owner && owner->role == Role::KM && !k.imported &&
                           k.tmpl == Template::NonExtractable;

    if (k.trusted && !candidate_shape) {
      // Same attribution order as the runtime guard.
      if (!owner || owner->role != Role::KM)
        add(PolicyRule::R2, k, "trusted key not owned by a key manager");
      else if (k.imported)
        add(PolicyRule::R5, k, "trusted key imported instead of generated");
      else
        add(PolicyRule::R4, k, "trusted key created extractable");
    }

    if ((k.trusted || candidate_shape) && (k.extra_attrs & ~kCandidateAdmissible) != 0)
      add(PolicyRule::R3, k, "trusted key carries attributes beyond wrap/unwrap: " +
                                 attrs_to_string(k.extra_attrs & ~kCandidateAdmissible));
  }
  return report;
}

} // namespace hsmlab
