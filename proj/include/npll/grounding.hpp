#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "npll/knowledge_graph.hpp"
#include "npll/rules.hpp"

namespace npll {

using AtomId = std::int32_t;
using GroundRuleId = std::uint32_t;

/// Read-only view of one grounding. `atoms` holds the body atoms in rule
/// order followed by the head atom; an atom may repeat. `latent` lists the
/// distinct latent atoms of the grounding.
struct GroundRuleView {
  std::int32_t rule = 0;  // index into the rule list the store was grounded from
  std::span<const AtomId> atoms;
  std::span<const AtomId> latent;

  AtomId head() const { return atoms.back(); }
};

/// Membership of a latent atom in a grounding: ground rule and atom position.
struct BlanketEntry {
  GroundRuleId ground_rule = 0;
  std::uint32_t position = 0;
};

struct GroundingOptions {
  int depth = 1;
  std::size_t max_ground_rules = 5'000'000;
};

/// Atom table, ground rules and Markov-blanket index. Immutable once built.
class GroundingStore {
 public:
  class Builder {
   public:
    explicit Builder(std::size_t num_rules) : num_rules_(num_rules) {}
    /// Seeds a builder with the full contents of an existing store.
    explicit Builder(const GroundingStore& store);

    /// Returns the id of `t`, inserting it if needed. An atom keeps the
    /// observed flag it was first inserted with.
    AtomId add_atom(const Triple& t, bool observed, bool query = false);
    AtomId find_atom(const Triple& t) const;
    void add_ground_rule(std::int32_t rule, std::span<const AtomId> atoms);
    std::size_t num_ground_rules() const { return rule_of_.size(); }
    GroundingStore build() &&;

   private:
    std::size_t num_rules_;
    std::vector<Triple> triples_;
    std::vector<std::uint8_t> observed_;
    std::vector<std::uint8_t> query_;
    std::unordered_map<Triple, AtomId, TripleHash> lookup_;
    std::vector<std::int32_t> rule_of_;
    std::vector<std::uint32_t> offsets_{0};
    std::vector<AtomId> atoms_;
  };

  std::size_t num_rules() const { return num_rules_; }
  std::size_t num_atoms() const { return triples_.size(); }
  std::size_t num_ground_rules() const { return rule_of_.size(); }
  std::size_t num_latent() const { return latent_atoms_.size(); }
  bool empty() const { return rule_of_.empty(); }

  const Triple& triple(AtomId a) const { return triples_[static_cast<std::size_t>(a)]; }
  bool is_observed(AtomId a) const { return observed_[static_cast<std::size_t>(a)] != 0; }
  /// Atoms injected for evaluation queries; never part of training.
  bool is_query(AtomId a) const { return query_[static_cast<std::size_t>(a)] != 0; }
  AtomId find_atom(const Triple& t) const;  // -1 if absent

  /// Latent atoms in ascending atom-id order, and the inverse map
  /// (-1 for observed atoms).
  std::span<const AtomId> latent_atoms() const { return latent_atoms_; }
  std::int32_t latent_index(AtomId a) const { return latent_index_[static_cast<std::size_t>(a)]; }

  GroundRuleView ground_rule(GroundRuleId g) const;
  std::span<const BlanketEntry> blanket(AtomId a) const;

  /// Groundings per rule index.
  std::vector<std::size_t> groundings_per_rule() const;

 private:
  std::size_t num_rules_ = 0;
  std::vector<Triple> triples_;
  std::vector<std::uint8_t> observed_;
  std::vector<std::uint8_t> query_;
  std::unordered_map<Triple, AtomId, TripleHash> lookup_;
  std::vector<std::int32_t> rule_of_;
  std::vector<std::uint32_t> offsets_;
  std::vector<AtomId> atoms_;
  std::vector<std::uint32_t> latent_offsets_;
  std::vector<AtomId> latent_of_rule_;
  std::vector<AtomId> latent_atoms_;
  std::vector<std::int32_t> latent_index_;
  std::vector<std::uint32_t> blanket_offsets_;
  std::vector<BlanketEntry> blanket_;
};

/// Forward-chaining grounding. Round 1 enumerates every substitution whose
/// body atoms are all in F; each later round (up to `depth`) also matches
/// bodies against the latent atoms derived so far. A head outside F becomes
/// a latent atom.
GroundingStore ground_rules(std::span<const Rule> rules, const KnowledgeGraph& kg,
                            const GroundingOptions& options = {});

/// Adds each query triple that is not yet an atom as a latent query atom,
/// together with the groundings that derive it from bodies in F.
GroundingStore inject_queries(const GroundingStore& store, std::span<const Triple> queries,
                              std::span<const Rule> rules, const KnowledgeGraph& kg);

/// Uniform sample of `batch_size` distinct ground rules. A batch at least as
/// large as the store is the whole store, shuffled.
std::vector<GroundRuleId> sample_batch(const GroundingStore& store, std::size_t batch_size, Rng& rng);

/// Per rule, the number of groundings whose atoms are all true under
/// `assignment` (indexed by atom id).
std::vector<std::int64_t> count_satisfied(const GroundingStore& store, std::span<const std::uint8_t> assignment);

}  // namespace npll
