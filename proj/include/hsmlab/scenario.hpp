// Scenario files: one directive per line.
//
//   user <id> <NU|KM|SO> [compromised]
//   key <id> owner=<user> template=<generic|wwt|ne> [attrs=<a,...>] [trusted] [sensitive]
//   importkey <id> owner=<user> value=<term> [attrs=<a,...>] [trusted] [sensitive]
//   know <term>
//   policy <on|off>
//   mode <full|paper>
//   depth <n>
//
// '#' starts a comment; blank lines are ignored.  Users must be declared
// before keys that reference them.  attrs lists post-creation grants applied
// by the owner; extractable and trusted are not grantable that way (trusted
// has its own marker, applied by the first declared SO).

#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "hsmlab/expected.hpp"
#include "hsmlab/token.hpp"

namespace hsmlab {

struct ScenarioUser {
  std::string id;
  Role role = Role::NU;
  bool compromised = false;
  int line = 0;
};

struct ScenarioKey {
  std::string id;
  std::string owner;
  bool imported = false;
  Template tmpl = Template::Generic; // created keys only
  Term import_value;                 // imported keys only
  AttrSet extra_attrs = 0;           // granted by the owner after creation
  bool trusted = false;              // granted by the first declared SO
  bool sensitive = false;
  int line = 0;
};

struct Scenario {
  std::vector<ScenarioUser> users;
  std::vector<ScenarioKey> keys;
  std::vector<Term> known; // attacker's initial knowledge
  bool policy_on = false;
  Mode mode = Mode::Full;
  int depth = 5;
};

struct ParseError {
  int line = 0;
  std::string message;
};

Expected<Scenario, ParseError> parse_scenario(std::string_view text);
Expected<Scenario, ParseError> load_scenario_file(const std::string& path);

struct BuildError {
  TokenFailure failure;
  std::string subject; // key or user id the failing directive concerns
};

struct InitialState {
  TokenState state;
  KnowledgeBase kb;                 // known terms plus setup emissions, closed
  std::vector<std::string> dropped; // permissive mode: directives policy denied
};

// Executes the declarations in order.  strict: a policy-denied grant is an
// error.  Permissive (what explore/replay use): the device refuses the grant,
// the run continues, and the refusal is recorded.
Expected<InitialState, BuildError> build_initial_state(const Scenario& scn, bool strict = true);

} // namespace hsmlab
