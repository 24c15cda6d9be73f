// Symbolic terms: names, one-way hashes, and symmetric encryptions.
// Terms are hash-consed into a process-wide table, so copies are cheap and
// equality is an id comparison.  The text syntax is fixed:
//
//   name:<ident>          ident matches [A-Za-z0-9_]+
//   h(<term>)
//   senc(<payload>,<key>)
//
// with no interior whitespace.

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

namespace hsmlab {

enum class TermKind : std::uint8_t { Name, Hash, Senc };

class Term;
namespace detail {
Term term_from_id(std::int32_t id);
}

class Term {
public:
  Term() = default; // invalid sentinel; valid() is false

  static Term name(std::string_view label);
  static Term hash(Term inner);
  static Term senc(Term payload, Term key);

  // Parses a complete term; rejects trailing input and bad syntax.
  static std::optional<Term> parse(std::string_view text);

  bool valid() const { return id_ >= 0; }
  TermKind kind() const;
  std::string_view label() const;  // Name only
  Term inner() const;              // Hash only
  Term payload() const;            // Senc only
  Term key_part() const;           // Senc only

  std::string str() const;
  void append_to(std::string& out) const;

  bool operator==(const Term&) const = default;
  std::int32_t id() const { return id_; }
  std::size_t hash_value() const { return static_cast<std::size_t>(id_) * 0x9e3779b97f4a7c15ull; }

private:
  explicit Term(std::int32_t id) : id_(id) {}
  friend Term detail::term_from_id(std::int32_t);
  std::int32_t id_ = -1;
};

// Structural total order: Name < Hash < Senc, then labels lexicographically,
// then components left to right.  Independent of interning order, so it is
// stable across runs and thread interleavings.
bool term_less(Term a, Term b);
int term_compare(Term a, Term b);

// True if sub occurs in t (including t itself).
bool is_subterm(Term sub, Term t);

} // namespace hsmlab
