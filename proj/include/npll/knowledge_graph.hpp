#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace npll {

using EntityId = std::int32_t;
using RelationId = std::int32_t;
using Rng = std::mt19937_64;

/// A directed fact rel(head, tail).
struct Triple {
  EntityId head = 0;
  RelationId rel = 0;
  EntityId tail = 0;

  friend auto operator<=>(const Triple&, const Triple&) = default;
};

struct TripleHash {
  std::size_t operator()(const Triple& t) const noexcept {
    std::uint64_t h = static_cast<std::uint32_t>(t.head);
    h = h * 0x9E3779B97F4A7C15ULL + static_cast<std::uint32_t>(t.rel);
    h = h * 0x9E3779B97F4A7C15ULL + static_cast<std::uint32_t>(t.tail);
    return static_cast<std::size_t>(h ^ (h >> 29));
  }
};

using TripleSet = std::unordered_set<Triple, TripleHash>;

enum class Side { head, tail };

enum class Split { facts = 0, train = 1, valid = 2, test = 3 };
inline constexpr std::array<Split, 4> kAllSplits{Split::facts, Split::train, Split::valid, Split::test};
const char* split_name(Split split);

/// Bidirectional string <-> dense id map. Ids are assigned in insertion order.
class Dictionary {
 public:
  std::int32_t add(std::string_view name);
  std::int32_t find(std::string_view name) const;  // -1 if absent
  const std::string& name(std::int32_t id) const { return names_.at(static_cast<std::size_t>(id)); }
  std::size_t size() const { return names_.size(); }
  const std::vector<std::string>& names() const { return names_; }

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, std::int32_t> ids_;
};

/// Lookup structure over a triple set: (head,rel)->tails, (rel,tail)->heads,
/// rel->triples. Adjacency lists are sorted ascending.
class TripleIndex {
 public:
  TripleIndex() = default;
  explicit TripleIndex(std::span<const Triple> triples);

  bool contains(const Triple& t) const { return set_.count(t) != 0; }
  std::span<const EntityId> tails(EntityId head, RelationId rel) const;
  std::span<const EntityId> heads(RelationId rel, EntityId tail) const;
  std::span<const Triple> with_relation(RelationId rel) const;
  std::size_t size() const { return set_.size(); }

 private:
  static std::uint64_t key(std::int32_t a, std::int32_t b) {
    return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) | static_cast<std::uint32_t>(b);
  }

  TripleSet set_;
  std::unordered_map<std::uint64_t, std::vector<EntityId>> tails_;
  std::unordered_map<std::uint64_t, std::vector<EntityId>> heads_;
  std::unordered_map<RelationId, std::vector<Triple>> by_rel_;
};

/// Immutable store of entities, relations and the four named splits.
///
/// The observed set F is facts ∪ train; valid and test are held out and only
/// take part in filtered ranking through `contains`.
class KnowledgeGraph {
 public:
  /// Incremental construction used by the loader and by tests.
  class Builder {
   public:
    /// Adds a triple to `split`; returns false if it duplicates an earlier
    /// line of the same split.
    bool add(Split split, std::string_view head, std::string_view rel, std::string_view tail);
    KnowledgeGraph build() &&;

   private:
    Dictionary entities_;
    Dictionary relations_;
    std::array<std::vector<Triple>, 4> splits_;
    std::array<TripleSet, 4> seen_;
    std::array<std::size_t, 4> duplicates_{};
  };

  const Dictionary& entities() const { return entities_; }
  const Dictionary& relations() const { return relations_; }
  std::size_t num_entities() const { return entities_.size(); }
  std::size_t num_relations() const { return relations_.size(); }

  std::span<const Triple> split(Split s) const { return splits_[static_cast<std::size_t>(s)]; }
  std::size_t duplicates_dropped(Split s) const { return duplicates_[static_cast<std::size_t>(s)]; }

  /// F = facts ∪ train, deduplicated, in first-appearance order.
  std::span<const Triple> observed() const { return observed_; }
  const TripleIndex& observed_index() const { return observed_index_; }
  bool is_observed(const Triple& t) const { return observed_index_.contains(t); }

  /// True iff t is in any of the four splits.
  bool contains(const Triple& t) const { return known_index_.contains(t); }
  const TripleIndex& known_index() const { return known_index_; }

  bool valid_triple(const Triple& t) const;
  std::string to_string(const Triple& t) const;

  /// FNV-1a over the entity and relation names in id order.
  std::uint64_t dictionary_hash() const;

 private:
  Dictionary entities_;
  Dictionary relations_;
  std::array<std::vector<Triple>, 4> splits_;
  std::array<std::size_t, 4> duplicates_{};
  std::vector<Triple> observed_;
  TripleIndex observed_index_;
  TripleIndex known_index_;
};

/// Loads facts.txt, train.txt, valid.txt and test.txt from `dir`.
/// Ids are assigned by first appearance scanning facts, train, valid, test.
KnowledgeGraph load_dataset(const std::filesystem::path& dir);

/// Replaces one side of `t` by a uniformly drawn entity so that the result is
/// not in F. Throws SamplingExhaustedError when no such entity exists.
Triple corrupt(const Triple& t, Side side, Rng& rng, const KnowledgeGraph& kg);

inline constexpr int kCorruptRetries = 64;

}  // namespace npll
