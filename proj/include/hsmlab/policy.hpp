// The five-rule secure configuration, split into runtime guards (consulted by
// the token when policy is on) and a static linter over scenarios.
//
//   R1  sensitive keys live under wrap_with_trusted or are not extractable
//   R2  the SO marks trusted only candidate keys (KM-owned, fresh,
//       created non-extractable)
//   R3  candidate keys carry only wrap/unwrap for their whole lifetime
//   R4  candidate keys are created with extractable unset
//   R5  candidate keys are generated inside the device, never imported

#pragma once

#include <optional>
#include <string>
#include <vector>

#include "hsmlab/scenario.hpp"
#include "hsmlab/token.hpp"

namespace hsmlab {

struct PolicyVerdict {
  bool allowed = false;
  std::optional<PolicyRule> rule = std::nullopt; // set when denied
  std::string detail;
};

// Candidate trusted key: generated fresh in the device, created with the
// non-extractable template, owned by a KM.
TokenResult<bool> is_candidate(const TokenState& st, std::int32_t handle);

// Guard for the SO granting trusted.  Denials carry the rule: R2 when the
// owner is not a KM, R5 when the key was not generated in the device, R4 when
// it was created extractable.
TokenResult<PolicyVerdict> check_set_trusted(const TokenState& st, std::string_view so_user,
                                             std::int32_t handle);

// Guard for a KM changing attributes on one of their candidate keys: only
// wrap and unwrap may ever be admitted (R3).  Non-candidate keys are not
// constrained.
TokenResult<PolicyVerdict> check_km_attr_change(const TokenState& st, std::string_view km_user,
                                                std::int32_t handle, Attr a);

struct LintViolation {
  PolicyRule rule;
  std::string subject; // key id
  std::string message;
  int line = 0;
};
using LintReport = std::vector<LintViolation>;

// Static rule check over a scenario; empty report means clean.
LintReport lint(const Scenario& scn);

} // namespace hsmlab
