// Bounded attack search: a Dolev-Yao attacker drives the token API from a
// scenario's initial state and wins when the knowledge base derives a goal
// key's raw value.
//
// The state graph is explored level by level (BFS, default) or by iterative
// deepening.  States reached by different action orders collapse through a
// canonical fingerprint, actions are expanded in a fixed canonical order, and
// multi-worker expansion merges results in that same order, so the reported
// attack is always the lexicographically least among the shortest - whatever
// the worker count.

#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "hsmlab/scenario.hpp"
#include "hsmlab/trace.hpp"

namespace hsmlab {

enum class Strategy : std::uint8_t { BFS, IDDFS };

struct SearchConfig {
  int max_depth = 5;
  Strategy strategy = Strategy::BFS;
  int workers = 1;                       // BFS only; IDDFS runs single-threaded
  std::uint64_t max_states = 10'000'000; // canonical-state budget
  bool honest = false; // let honest users join wrap/unwrap interleavings
};

// A key whose secrecy the search tests: created under wwt or ne, marked
// sensitive, or holding trusted once setup finished.
struct GoalKey {
  std::string id;
  Term value;
};
std::vector<GoalKey> goal_keys(const Scenario& scn, const TokenState& st);

// Which users may act: compromised NU/KM perform the crypto and key
// management calls, a compromised SO toggles trusted, and honest NU/KM join
// wrap/unwrap only when the honest flag is on.
struct ActorSets {
  std::vector<std::int32_t> crypto;
  std::vector<std::int32_t> honest_crypto;
  std::int32_t so = -1;
  std::int32_t any = -1;
};
ActorSets actor_sets(const Scenario& scn, const TokenState& st, bool honest);

// One attacker move.  h1/h2 carry handle ids (wrap: target/wrapper; the other
// operations use h1 alone); aux carries the unwrap template or the attribute.
struct Action {
  OpTag op = OpTag::Wrap;
  std::int32_t actor = -1; // index into state users
  std::int32_t h1 = 0;
  std::int32_t h2 = 0;
  Term term;
  std::uint8_t aux = 0;

  bool operator==(const Action&) const = default;
};

// Canonical order: op tag, then the arguments in trace-line order, then actor.
bool action_less(const Action& a, const Action& b);

struct Successor {
  TokenState state;
  KnowledgeBase kb; // closed
};

// Applies one action, extending the knowledge base with whatever the device
// emits.  Terms an attacker supplies (ciphertexts, plaintexts, imports) must
// be derivable from kb.
TokenResult<Successor> apply_action(const TokenState& st, const KnowledgeBase& kb, const Action& a);

// All guard-passing, state-changing actions, canonically sorted.
std::vector<Action> enumerate_actions(const TokenState& st, const KnowledgeBase& kb,
                                      const ActorSets& actors);

// Identifies (state, kb) up to handle numbering: handle records are sorted by
// content and ids, counters and the emission log are left out, so action
// orders that build the same objects meet in one canonical state.
using Digest = std::array<std::uint64_t, 2>;
Digest canonical_fingerprint(const TokenState& st, const KnowledgeBase& kb);

// Replays a root-to-leaf action path into presentable trace steps, numbering
// ciphertext bindings c1, c2, ... in step order.
std::vector<TraceStep> steps_from_actions(const Successor& root, const std::vector<Action>& path);

struct Attack {
  std::vector<TraceStep> trace;
  std::string key; // first goal key, in declaration order, the final kb derives
  std::uint64_t states_explored = 0;
  std::uint64_t canonical_states = 0;
};
struct Exhausted {
  int depth = 0;
  std::uint64_t states_explored = 0;
  std::uint64_t canonical_states = 0;
};
struct BudgetExceeded {
  std::uint64_t max_states = 0;
  std::uint64_t canonical_states = 0;
  std::uint64_t states_explored = 0;
};
using SearchOutcome = std::variant<Attack, Exhausted, BudgetExceeded>;

Expected<SearchOutcome, BuildError> explore(const Scenario& scn, const SearchConfig& cfg);

// Replays a parsed trace against a scenario.  Reproduces when every step's
// guards pass and the final knowledge derives some goal key; otherwise Fails
// carries the first offending step (or steps.size() when nothing leaked).
struct ReplayReproduces {
  std::string key;
};
struct ReplayFails {
  int step = 0;
  std::string reason;
};
using ReplayVerdict = std::variant<ReplayReproduces, ReplayFails>;

Expected<ReplayVerdict, BuildError> replay(const Scenario& scn, const std::vector<TraceStep>& steps);

} // namespace hsmlab
