// Attacker knowledge and the deduction relation.
//
// Three rules, nothing else:
//   H1  t known            => h(t) derivable            (one-way; no inverse)
//   C1  p, k known         => senc(p,k) derivable
//   D1  senc(p,k) known and k derivable => p known
//
// close_knowledge materializes only D1 results (the payloads), which keeps the
// closed set finite; H1/C1 constructions are decided on demand by derives.

#pragma once

#include <vector>

#include "hsmlab/term.hpp"

namespace hsmlab {

// A set of terms kept in structural order, so iteration and serialization are
// deterministic regardless of interning order.
class KnowledgeBase {
public:
  bool contains(Term t) const;
  bool insert(Term t); // true if newly added
  bool empty() const { return terms_.empty(); }
  std::size_t size() const { return terms_.size(); }
  const std::vector<Term>& terms() const { return terms_; }

  bool operator==(const KnowledgeBase&) const = default;

private:
  std::vector<Term> terms_;
};

// Least fixpoint under D1 (with derivable keys); contains kb itself plus every
// decryptable payload, transitively.
KnowledgeBase close_knowledge(const KnowledgeBase& kb);

// True iff target is in close_knowledge(kb) or constructible from it via
// H1/C1.  kb need not be closed already.
bool derives(const KnowledgeBase& kb, Term target);

// Same check against a kb the caller knows is already closed; skips the
// redundant fixpoint.  The search keeps its kb closed at every step.
bool derives_closed(const KnowledgeBase& closed_kb, Term target);

} // namespace hsmlab
