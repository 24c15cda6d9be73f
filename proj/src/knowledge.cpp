#include "hsmlab/knowledge.hpp"

#include <algorithm>

namespace hsmlab {

bool KnowledgeBase::contains(Term t) const {
  return std::binary_search(terms_.begin(), terms_.end(), t, term_less);
}

bool KnowledgeBase::insert(Term t) {
  auto it = std::lower_bound(terms_.begin(), terms_.end(), t, term_less);
  if (it != terms_.end() && *it == t) return false;
  terms_.insert(it, t);
  return true;
}

namespace {

// Constructibility against a fixed set: membership, or build via H1/C1.
// Sound for the closure fixpoint because it is monotone in `set`.
bool constructible(const KnowledgeBase& set, Term t) {
  if (set.contains(t)) return true;
  switch (t.kind()) {
  case TermKind::Name:
    return false;
  case TermKind::Hash:
    return constructible(set, t.inner());
  case TermKind::Senc:
    return constructible(set, t.payload()) && constructible(set, t.key_part());
  }
  return false;
}

} // namespace

KnowledgeBase close_knowledge(const KnowledgeBase& kb) {
  KnowledgeBase out = kb;
  bool changed = true;
  while (changed) {
    changed = false;
    // Snapshot: insertion during the scan would invalidate iterators.
    std::vector<Term> pending;
    for (Term t : out.terms()) {
      if (t.kind() != TermKind::Senc) continue;
      if (out.contains(t.payload())) continue;
      if (constructible(out, t.key_part())) pending.push_back(t.payload());
    }
    for (Term p : pending) changed |= out.insert(p);
  }
  return out;
}

bool derives(const KnowledgeBase& kb, Term target) {
  return constructible(close_knowledge(kb), target);
}

bool derives_closed(const KnowledgeBase& closed_kb, Term target) {
  return constructible(closed_kb, target);
}

} // namespace hsmlab
