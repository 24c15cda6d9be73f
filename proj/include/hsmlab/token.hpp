// The soft-token: users, key objects, handles, and the key-management API.
//
// Every operation is a pure transition: it takes a state by const reference
// and returns a fresh state (plus any output) or a typed error.  States are
// plain values and safe to copy across threads.
//
// Two execution modes:
//   Full  - encrypt/decrypt are real operations on the device.
//   Paper - encrypt/decrypt are disabled; instead emit_leaks publishes h(k)
//           for every key usable for encryption or decryption, and for every
//           extractable key not under wrap_with_trusted.  That trades the
//           encrypt/decrypt attack surface for an explicit leak action.

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "hsmlab/expected.hpp"
#include "hsmlab/knowledge.hpp"
#include "hsmlab/term.hpp"

namespace hsmlab {

enum class Role : std::uint8_t { NU, KM, SO };
enum class Template : std::uint8_t { Generic, WWT, NonExtractable };
enum class Origin : std::uint8_t { Fresh, Imported, Unwrapped };
enum class Mode : std::uint8_t { Full, Paper };

// Bit order doubles as the canonical attribute order for templates, trace
// output and action enumeration.
enum class Attr : std::uint8_t {
  Extractable = 0,
  Wrap = 1,
  Unwrap = 2,
  Encrypt = 3,
  Decrypt = 4,
  WrapWithTrusted = 5,
  Trusted = 6,
};

using AttrSet = std::uint8_t;

constexpr AttrSet attr_bit(Attr a) { return static_cast<AttrSet>(1u << static_cast<unsigned>(a)); }
constexpr bool has_attr(AttrSet s, Attr a) { return (s & attr_bit(a)) != 0; }
constexpr AttrSet with_attr(AttrSet s, Attr a) { return static_cast<AttrSet>(s | attr_bit(a)); }
constexpr AttrSet without_attr(AttrSet s, Attr a) { return static_cast<AttrSet>(s & ~attr_bit(a)); }

constexpr AttrSet kNoAttrs = 0;
// Attribute sets granted at creation per template.
constexpr AttrSet kGenericBirth = attr_bit(Attr::Extractable);
constexpr AttrSet kWwtBirth = attr_bit(Attr::WrapWithTrusted) | attr_bit(Attr::Extractable);
constexpr AttrSet kNonExtractableBirth = 0;
// Forced template when unwrapping under a trusted key.
constexpr AttrSet kTrustedUnwrapTemplate = kWwtBirth;
// Attributes an unwrap template may request (everything except trusted).
constexpr AttrSet kUnwrapTemplateMask =
    attr_bit(Attr::Extractable) | attr_bit(Attr::Wrap) | attr_bit(Attr::Unwrap) |
    attr_bit(Attr::Encrypt) | attr_bit(Attr::Decrypt) | attr_bit(Attr::WrapWithTrusted);

std::string_view attr_name(Attr a);
std::optional<Attr> attr_from_name(std::string_view s);
std::string attrs_to_string(AttrSet s); // comma-joined in canonical order
std::string_view role_name(Role r);
std::optional<Role> role_from_name(std::string_view s);

enum class PolicyRule : std::uint8_t { R1, R2, R3, R4, R5, Ownership };
std::string_view policy_rule_name(PolicyRule r);

enum class TokenError : std::uint8_t {
  DuplicateUser,
  NotAUser,           // unknown user id, or an SO where NU/KM is required
  SOCannotCreateKeys,
  UnknownHandle,
  NotOwner,
  RoleForbidden,      // trusted toggled by someone who is not an SO
  AttributeImmutable, // extractable set late, or wrap_with_trusted unset
  PolicyViolation,
  NotExtractable,
  NotWrapKey,
  TrustedRequired,
  NotUnwrapKey,
  NotEncryptKey,
  NotDecryptKey,
  MalformedCiphertext,
  InvalidTemplate,
  ModeForbidden,
  UnderivableTerm, // attacker-executed step uses a term outside their knowledge
};
std::string_view token_error_name(TokenError e);

struct TokenFailure {
  TokenError code;
  std::optional<PolicyRule> rule = std::nullopt; // set for PolicyViolation
  bool operator==(const TokenFailure&) const = default;
};

template <class T>
using TokenResult = Expected<T, TokenFailure>;

struct UserRecord {
  std::string id;
  Role role = Role::NU;
  bool operator==(const UserRecord&) const = default;
};

// One stored key.  Handles reference key objects 1:1; reimporting a wrapped
// key makes a new object with an equal value term.
struct KeyObject {
  std::string key_id;          // declared id for scenario keys, else synthetic
  Term value;
  std::int32_t owner = -1;     // index into users
  Origin origin = Origin::Fresh;
  Template created_with = Template::Generic;
  bool operator==(const KeyObject&) const = default;
};

struct HandleRecord {
  std::int32_t id = 0;   // external identifier; printed as h<id>
  std::int32_t key = -1; // index into keys
  AttrSet attrs = 0;
  bool sensitive = false;
  bool operator==(const HandleRecord&) const = default;
};

struct TokenState {
  std::vector<UserRecord> users;
  std::vector<KeyObject> keys;
  std::vector<HandleRecord> handles;
  KnowledgeBase emitted; // every term the device ever output
  Mode mode = Mode::Full;
  bool policy_on = false;
  std::int32_t next_handle = 1;
  std::int32_t next_key_label = 1;

  std::int32_t user_index(std::string_view id) const;
  std::int32_t handle_index(std::int32_t handle_id) const;
  const HandleRecord* find_handle(std::int32_t handle_id) const;
  const KeyObject& key_of(const HandleRecord& h) const { return keys[static_cast<std::size_t>(h.key)]; }

  bool operator==(const TokenState&) const = default;
};

struct HandleOutput {
  TokenState state;
  std::int32_t handle;
};
struct TermOutput {
  TokenState state;
  Term term;
};
struct LeakOutput {
  TokenState state;
  std::vector<Term> leaked; // full leak set, structurally sorted
};

TokenResult<TokenState> new_user(const TokenState& st, std::string_view id, Role role);

// Creates a fresh key for an NU/KM user.  key_label, when given, names the
// fresh value (scenario keys use their declared id); otherwise a counter name
// k1, k2, ... is taken.
TokenResult<HandleOutput> create_key(const TokenState& st, std::string_view user, Template tmpl,
                                     bool sensitive_mark, std::string_view key_label = {});

// Imports an arbitrary term as a key value; the new handle starts with
// {extractable} and belongs to the importer.
TokenResult<HandleOutput> import_key(const TokenState& st, std::string_view user, Term value,
                                     std::string_view key_label = {});

TokenResult<TokenState> set_attribute(const TokenState& st, std::string_view user,
                                      std::int32_t handle, Attr a);
TokenResult<TokenState> unset_attribute(const TokenState& st, std::string_view user,
                                        std::int32_t handle, Attr a);

// Emits senc(value(target), h(value(wrapper))).
TokenResult<TermOutput> wrap(const TokenState& st, std::string_view user, std::int32_t target,
                             std::int32_t wrapper);

// Imports the payload of ct under the wrapper's key.  Under a trusted wrapper
// the requested template is ignored and {wrap_with_trusted, extractable} is
// installed instead.
TokenResult<HandleOutput> unwrap(const TokenState& st, std::string_view user, Term ct,
                                 std::int32_t wrapper, AttrSet tmpl);

TokenResult<TermOutput> encrypt(const TokenState& st, std::string_view user, Term data,
                                std::int32_t handle);
TokenResult<TermOutput> decrypt(const TokenState& st, std::string_view user, Term ct,
                                std::int32_t handle);

// Paper mode only: publishes h(k) for every handle with encrypt or decrypt
// set, and for every extractable handle without wrap_with_trusted.
TokenResult<LeakOutput> emit_leaks(const TokenState& st);

} // namespace hsmlab
