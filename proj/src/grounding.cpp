#include "npll/grounding.hpp"

#include <algorithm>
#include <functional>
#include <numeric>
#include <unordered_set>

#include "npll/error.hpp"

namespace npll {

GroundingStore::Builder::Builder(const GroundingStore& store)
    : num_rules_(store.num_rules_),
      triples_(store.triples_),
      observed_(store.observed_),
      query_(store.query_),
      lookup_(store.lookup_),
      rule_of_(store.rule_of_),
      offsets_(store.offsets_),
      atoms_(store.atoms_) {}

AtomId GroundingStore::Builder::add_atom(const Triple& t, bool observed, bool query) {
  auto [it, inserted] = lookup_.try_emplace(t, static_cast<AtomId>(triples_.size()));
  if (inserted) {
    triples_.push_back(t);
    observed_.push_back(observed ? 1 : 0);
    query_.push_back(query ? 1 : 0);
  }
  return it->second;
}

AtomId GroundingStore::Builder::find_atom(const Triple& t) const {
  auto it = lookup_.find(t);
  return it == lookup_.end() ? -1 : it->second;
}

void GroundingStore::Builder::add_ground_rule(std::int32_t rule, std::span<const AtomId> atoms) {
  if (rule < 0 || static_cast<std::size_t>(rule) >= num_rules_) throw ContractViolation("rule index out of range");
  if (atoms.size() < 2) throw ContractViolation("a ground rule needs at least one body atom and a head");
  for (AtomId a : atoms) {
    if (a < 0 || static_cast<std::size_t>(a) >= triples_.size()) throw ContractViolation("unknown atom id");
  }
  rule_of_.push_back(rule);
  atoms_.insert(atoms_.end(), atoms.begin(), atoms.end());
  offsets_.push_back(static_cast<std::uint32_t>(atoms_.size()));
}

GroundingStore GroundingStore::Builder::build() && {
  GroundingStore s;
  s.num_rules_ = num_rules_;
  s.triples_ = std::move(triples_);
  s.observed_ = std::move(observed_);
  s.query_ = std::move(query_);
  s.lookup_ = std::move(lookup_);
  s.rule_of_ = std::move(rule_of_);
  s.offsets_ = std::move(offsets_);
  s.atoms_ = std::move(atoms_);

  const std::size_t n_atoms = s.triples_.size();
  const std::size_t n_ground = s.rule_of_.size();

  s.latent_index_.assign(n_atoms, -1);
  for (std::size_t a = 0; a < n_atoms; ++a) {
    if (!s.observed_[a]) {
      s.latent_index_[a] = static_cast<std::int32_t>(s.latent_atoms_.size());
      s.latent_atoms_.push_back(static_cast<AtomId>(a));
    }
  }

  s.latent_offsets_.reserve(n_ground + 1);
  s.latent_offsets_.push_back(0);
  std::vector<std::uint32_t> blanket_count(n_atoms, 0);
  for (std::size_t g = 0; g < n_ground; ++g) {
    auto begin = s.atoms_.begin() + s.offsets_[g];
    auto end = s.atoms_.begin() + s.offsets_[g + 1];
    for (auto it = begin; it != end; ++it) {
      auto a = static_cast<std::size_t>(*it);
      if (s.observed_[a]) continue;
      ++blanket_count[a];
      if (std::find(begin, it, *it) == it) s.latent_of_rule_.push_back(*it);
    }
    s.latent_offsets_.push_back(static_cast<std::uint32_t>(s.latent_of_rule_.size()));
  }

  s.blanket_offsets_.assign(n_atoms + 1, 0);
  for (std::size_t a = 0; a < n_atoms; ++a) s.blanket_offsets_[a + 1] = s.blanket_offsets_[a] + blanket_count[a];
  s.blanket_.resize(s.blanket_offsets_.back());
  std::vector<std::uint32_t> cursor(s.blanket_offsets_.begin(), s.blanket_offsets_.end() - 1);
  for (std::size_t g = 0; g < n_ground; ++g) {
    for (std::uint32_t i = s.offsets_[g]; i < s.offsets_[g + 1]; ++i) {
      auto a = static_cast<std::size_t>(s.atoms_[i]);
      if (s.observed_[a]) continue;
      s.blanket_[cursor[a]++] = BlanketEntry{static_cast<GroundRuleId>(g), i - s.offsets_[g]};
    }
  }
  return s;
}

AtomId GroundingStore::find_atom(const Triple& t) const {
  auto it = lookup_.find(t);
  return it == lookup_.end() ? -1 : it->second;
}

GroundRuleView GroundingStore::ground_rule(GroundRuleId g) const {
  GroundRuleView v;
  v.rule = rule_of_[g];
  v.atoms = std::span<const AtomId>(atoms_.data() + offsets_[g], offsets_[g + 1] - offsets_[g]);
  v.latent = std::span<const AtomId>(latent_of_rule_.data() + latent_offsets_[g],
                                     latent_offsets_[g + 1] - latent_offsets_[g]);
  return v;
}

std::span<const BlanketEntry> GroundingStore::blanket(AtomId a) const {
  auto i = static_cast<std::size_t>(a);
  return std::span<const BlanketEntry>(blanket_.data() + blanket_offsets_[i],
                                       blanket_offsets_[i + 1] - blanket_offsets_[i]);
}

std::vector<std::size_t> GroundingStore::groundings_per_rule() const {
  std::vector<std::size_t> counts(num_rules_, 0);
  for (auto r : rule_of_) ++counts[static_cast<std::size_t>(r)];
  return counts;
}

namespace {

using Bindings = std::vector<EntityId>;
constexpr EntityId kUnbound = -1;

EntityId resolve(const Term& t, const Bindings& b) {
  return t.is_variable ? b[static_cast<std::size_t>(t.value)] : t.value;
}

Triple bind(const Atom& a, const Bindings& b) { return Triple{resolve(a.arg1, b), a.pred, resolve(a.arg2, b)}; }

/// Enumerates substitutions for a rule body against a matchable triple set.
class BodyMatcher {
 public:
  BodyMatcher(const Rule& rule, const TripleIndex& index) : rule_(rule), index_(index) {}

  /// Calls `emit` once per complete binding extending `initial`.
  void run(Bindings initial, const std::function<void(const Bindings&)>& emit) {
    bindings_ = std::move(initial);
    plan(bindings_);
    emit_ = &emit;
    step(0);
  }

 private:
  // Greedy join order: next the atom with the most bound arguments.
  void plan(const Bindings& initial) {
    std::vector<bool> bound(initial.size());
    for (std::size_t v = 0; v < initial.size(); ++v) bound[v] = initial[v] != kUnbound;
    auto is_bound = [&](const Term& t) { return !t.is_variable || bound[static_cast<std::size_t>(t.value)]; };
    order_.clear();
    std::vector<bool> used(rule_.body.size(), false);
    for (std::size_t n = 0; n < rule_.body.size(); ++n) {
      int best = -1;
      int best_score = -1;
      for (std::size_t i = 0; i < rule_.body.size(); ++i) {
        if (used[i]) continue;
        int score = int(is_bound(rule_.body[i].arg1)) + int(is_bound(rule_.body[i].arg2));
        if (score > best_score) {
          best = static_cast<int>(i);
          best_score = score;
        }
      }
      used[static_cast<std::size_t>(best)] = true;
      order_.push_back(static_cast<std::size_t>(best));
      for (const Term& t : {rule_.body[static_cast<std::size_t>(best)].arg1, rule_.body[static_cast<std::size_t>(best)].arg2}) {
        if (t.is_variable) bound[static_cast<std::size_t>(t.value)] = true;
      }
    }
  }

  bool try_bind(const Term& t, EntityId e, std::vector<std::size_t>& undo) {
    if (!t.is_variable) return t.value == e;
    auto& slot = bindings_[static_cast<std::size_t>(t.value)];
    if (slot == kUnbound) {
      slot = e;
      undo.push_back(static_cast<std::size_t>(t.value));
      return true;
    }
    return slot == e;
  }

  void descend(std::size_t depth, const Atom& a, EntityId h, EntityId t) {
    std::vector<std::size_t> undo;
    if (try_bind(a.arg1, h, undo) && try_bind(a.arg2, t, undo)) step(depth + 1);
    for (auto v : undo) bindings_[v] = kUnbound;
  }

  void step(std::size_t depth) {
    if (depth == order_.size()) {
      (*emit_)(bindings_);
      return;
    }
    const Atom& a = rule_.body[order_[depth]];
    EntityId h = resolve(a.arg1, bindings_);
    EntityId t = resolve(a.arg2, bindings_);
    if (h != kUnbound && t != kUnbound) {
      if (index_.contains(Triple{h, a.pred, t})) step(depth + 1);
    } else if (h != kUnbound) {
      for (EntityId cand : index_.tails(h, a.pred)) descend(depth, a, h, cand);
    } else if (t != kUnbound) {
      for (EntityId cand : index_.heads(a.pred, t)) descend(depth, a, cand, t);
    } else {
      for (const Triple& tr : index_.with_relation(a.pred)) descend(depth, a, tr.head, tr.tail);
    }
  }

  const Rule& rule_;
  const TripleIndex& index_;
  Bindings bindings_;
  std::vector<std::size_t> order_;
  const std::function<void(const Bindings&)>* emit_ = nullptr;
};

[[noreturn]] void explode(std::span<const Rule> rules, const std::vector<std::size_t>& per_rule, std::size_t cap,
                          const KnowledgeGraph& kg) {
  auto worst = static_cast<std::size_t>(std::max_element(per_rule.begin(), per_rule.end()) - per_rule.begin());
  throw GroundingExplosionError("ground rule count exceeds cap " + std::to_string(cap) + "; worst rule #" +
                                std::to_string(rules[worst].id) + " (" + format_rule(rules[worst], kg) +
                                ") has " + std::to_string(per_rule[worst]) + " groundings");
}

}  // namespace

GroundingStore ground_rules(std::span<const Rule> rules, const KnowledgeGraph& kg, const GroundingOptions& options) {
  if (options.depth < 1) throw ContractViolation("grounding depth must be >= 1");
  GroundingStore::Builder builder(rules.size());
  std::vector<std::size_t> per_rule(rules.size(), 0);

  std::vector<Triple> matchable(kg.observed().begin(), kg.observed().end());
  TripleSet matchable_set(matchable.begin(), matchable.end());
  TripleSet fresh;  // atoms that became matchable in the previous round

  std::vector<AtomId> ids;
  for (int round = 1; round <= options.depth; ++round) {
    TripleIndex index(matchable);
    std::vector<Triple> derived;
    TripleSet derived_set;
    for (std::size_t r = 0; r < rules.size(); ++r) {
      const Rule& rule = rules[r];
      BodyMatcher matcher(rule, index);
      matcher.run(Bindings(static_cast<std::size_t>(rule.num_variables()), kUnbound), [&](const Bindings& b) {
        if (round > 1) {
          bool uses_fresh = std::any_of(rule.body.begin(), rule.body.end(),
                                        [&](const Atom& a) { return fresh.count(bind(a, b)) != 0; });
          if (!uses_fresh) return;  // already grounded in an earlier round
        }
        ids.clear();
        for (const Atom& a : rule.body) {
          Triple t = bind(a, b);
          ids.push_back(builder.add_atom(t, kg.is_observed(t)));
        }
        Triple head = bind(rule.head, b);
        bool observed = kg.is_observed(head);
        ids.push_back(builder.add_atom(head, observed));
        if (!observed && !matchable_set.count(head) && derived_set.insert(head).second) derived.push_back(head);
        builder.add_ground_rule(static_cast<std::int32_t>(r), ids);
        ++per_rule[r];
        if (builder.num_ground_rules() > options.max_ground_rules) {
          explode(rules, per_rule, options.max_ground_rules, kg);
        }
      });
    }
    if (derived.empty()) break;
    fresh = std::move(derived_set);
    matchable.insert(matchable.end(), derived.begin(), derived.end());
    matchable_set.insert(derived.begin(), derived.end());
  }
  return std::move(builder).build();
}

GroundingStore inject_queries(const GroundingStore& store, std::span<const Triple> queries,
                              std::span<const Rule> rules, const KnowledgeGraph& kg) {
  GroundingStore::Builder builder(store);
  const TripleIndex& index = kg.observed_index();
  std::vector<AtomId> ids;
  for (const Triple& q : queries) {
    if (kg.is_observed(q) || builder.find_atom(q) >= 0) continue;
    AtomId qa = builder.add_atom(q, false, true);
    for (std::size_t r = 0; r < rules.size(); ++r) {
      const Rule& rule = rules[r];
      if (rule.head.pred != q.rel) continue;
      Bindings init(static_cast<std::size_t>(rule.num_variables()), kUnbound);
      auto bind_head = [&](const Term& t, EntityId e) {
        if (!t.is_variable) return t.value == e;
        auto& slot = init[static_cast<std::size_t>(t.value)];
        if (slot != kUnbound && slot != e) return false;
        slot = e;
        return true;
      };
      if (!bind_head(rule.head.arg1, q.head) || !bind_head(rule.head.arg2, q.tail)) continue;
      BodyMatcher matcher(rule, index);
      matcher.run(init, [&](const Bindings& b) {
        ids.clear();
        for (const Atom& a : rule.body) ids.push_back(builder.add_atom(bind(a, b), true));
        ids.push_back(qa);
        builder.add_ground_rule(static_cast<std::int32_t>(r), ids);
      });
    }
  }
  return std::move(builder).build();
}

std::vector<GroundRuleId> sample_batch(const GroundingStore& store, std::size_t batch_size, Rng& rng) {
  const std::size_t n = store.num_ground_rules();
  if (n == 0) throw ContractViolation("sample_batch on an empty grounding store");
  std::vector<GroundRuleId> out;
  if (batch_size * 4 < n) {
    // Sparse draw: rejection against the ids already taken.
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    std::unordered_set<GroundRuleId> taken;
    out.reserve(batch_size);
    while (out.size() < batch_size) {
      auto g = static_cast<GroundRuleId>(pick(rng));
      if (taken.insert(g).second) out.push_back(g);
    }
    return out;
  }
  out.resize(n);
  std::iota(out.begin(), out.end(), GroundRuleId{0});
  std::size_t k = std::min(batch_size, n);
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(out[i], out[pick(rng)]);
  }
  out.resize(k);
  return out;
}

std::vector<std::int64_t> count_satisfied(const GroundingStore& store, std::span<const std::uint8_t> assignment) {
  if (assignment.size() != store.num_atoms()) {
    throw ContractViolation("assignment covers " + std::to_string(assignment.size()) + " atoms, store has " +
                            std::to_string(store.num_atoms()));
  }
  std::vector<std::int64_t> counts(store.num_rules(), 0);
  for (GroundRuleId g = 0; g < store.num_ground_rules(); ++g) {
    auto gr = store.ground_rule(g);
    bool all = std::all_of(gr.atoms.begin(), gr.atoms.end(),
                           [&](AtomId a) { return assignment[static_cast<std::size_t>(a)] != 0; });
    if (all) ++counts[static_cast<std::size_t>(gr.rule)];
  }
  return counts;
}

}  // namespace npll
