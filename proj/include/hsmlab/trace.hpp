// Attack traces: a versioned header plus one numbered step per line.
//
//   trace v1
//   1. wrap actor=U1 target=h1 wrapper=h2 -> c1
//   2. decrypt actor=U1 ct=c1 handle=h2 -> c2
//
// Steps bind their outputs: c<N> names a term, h<N> names a handle.  Term
// arguments are either a previously bound c<N> or a literal term.  Handle
// arguments are h<N>, resolving to a setup handle or a bound result.
// setattr/unsetattr/leaks bind nothing; all other operations must bind.

#pragma once

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "hsmlab/expected.hpp"
#include "hsmlab/scenario.hpp" // ParseError
#include "hsmlab/token.hpp"

namespace hsmlab {

// Canonical operation order; doubles as the tag order for action enumeration
// and trace comparison (cryptographic operations first, then attribute
// management, then import, then the paper-mode leak step).
enum class OpTag : std::uint8_t {
  Wrap = 0,
  Unwrap = 1,
  Encrypt = 2,
  Decrypt = 3,
  SetAttr = 4,
  UnsetAttr = 5,
  Import = 6,
  Leaks = 7,
};
std::string_view op_name(OpTag op);

// A term argument as written: literal term or reference to a c<N> binding.
struct TermArg {
  std::variant<std::monostate, Term, std::string> v;

  TermArg() = default;
  explicit TermArg(Term t) : v(t) {}
  explicit TermArg(std::string ref) : v(std::move(ref)) {}

  bool present() const { return v.index() != 0; }
  bool is_ref() const { return v.index() == 2; }
  Term literal() const { return std::get<Term>(v); }
  const std::string& ref() const { return std::get<std::string>(v); }
  std::string str() const;

  bool operator==(const TermArg&) const = default;
};

struct TraceStep {
  int index = 0;
  OpTag op = OpTag::Wrap;
  std::string actor;
  std::int32_t handle_a = 0; // wrap: target; unwrap: wrapper; others: handle
  std::int32_t handle_b = 0; // wrap: wrapper
  TermArg term;              // unwrap/decrypt: ct; encrypt: data; import: value
  AttrSet tmpl = 0;          // unwrap template
  Attr attr = Attr::Extractable; // setattr/unsetattr
  std::string result;        // binding name; empty for setattr/unsetattr/leaks

  bool operator==(const TraceStep&) const = default;
};

std::string format_trace(const std::vector<TraceStep>& steps);
Expected<std::vector<TraceStep>, ParseError> parse_trace(std::string_view text);

} // namespace hsmlab
