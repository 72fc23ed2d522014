#include "npll/knowledge_graph.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "npll/error.hpp"

namespace npll {

const char* split_name(Split split) {
  switch (split) {
    case Split::facts: return "facts";
    case Split::train: return "train";
    case Split::valid: return "valid";
    case Split::test: return "test";
  }
  return "?";
}

std::int32_t Dictionary::add(std::string_view name) {
  auto it = ids_.find(std::string(name));
  if (it != ids_.end()) return it->second;
  auto id = static_cast<std::int32_t>(names_.size());
  names_.emplace_back(name);
  ids_.emplace(names_.back(), id);
  return id;
}

std::int32_t Dictionary::find(std::string_view name) const {
  auto it = ids_.find(std::string(name));
  return it == ids_.end() ? -1 : it->second;
}

TripleIndex::TripleIndex(std::span<const Triple> triples) {
  set_.reserve(triples.size() * 2);
  for (const auto& t : triples) {
    if (!set_.insert(t).second) continue;
    tails_[key(t.head, t.rel)].push_back(t.tail);
    heads_[key(t.rel, t.tail)].push_back(t.head);
    by_rel_[t.rel].push_back(t);
  }
  for (auto& [_, v] : tails_) std::sort(v.begin(), v.end());
  for (auto& [_, v] : heads_) std::sort(v.begin(), v.end());
}

std::span<const EntityId> TripleIndex::tails(EntityId head, RelationId rel) const {
  auto it = tails_.find(key(head, rel));
  if (it == tails_.end()) return {};
  return it->second;
}

std::span<const EntityId> TripleIndex::heads(RelationId rel, EntityId tail) const {
  auto it = heads_.find(key(rel, tail));
  if (it == heads_.end()) return {};
  return it->second;
}

std::span<const Triple> TripleIndex::with_relation(RelationId rel) const {
  auto it = by_rel_.find(rel);
  if (it == by_rel_.end()) return {};
  return it->second;
}

bool KnowledgeGraph::Builder::add(Split split, std::string_view head, std::string_view rel,
                                  std::string_view tail) {
  auto s = static_cast<std::size_t>(split);
  Triple t;
  t.head = entities_.add(head);
  t.rel = relations_.add(rel);
  t.tail = entities_.add(tail);
  if (!seen_[s].insert(t).second) {
    ++duplicates_[s];
    return false;
  }
  splits_[s].push_back(t);
  return true;
}

KnowledgeGraph KnowledgeGraph::Builder::build() && {
  KnowledgeGraph kg;
  kg.entities_ = std::move(entities_);
  kg.relations_ = std::move(relations_);
  kg.splits_ = std::move(splits_);
  kg.duplicates_ = duplicates_;

  TripleSet seen;
  for (Split s : {Split::facts, Split::train}) {
    for (const auto& t : kg.split(s)) {
      if (seen.insert(t).second) kg.observed_.push_back(t);
    }
  }
  kg.observed_index_ = TripleIndex(kg.observed_);

  std::vector<Triple> all;
  for (Split s : kAllSplits) all.insert(all.end(), kg.split(s).begin(), kg.split(s).end());
  kg.known_index_ = TripleIndex(all);
  return kg;
}

bool KnowledgeGraph::valid_triple(const Triple& t) const {
  auto ne = static_cast<EntityId>(num_entities());
  auto nr = static_cast<RelationId>(num_relations());
  return t.head >= 0 && t.head < ne && t.tail >= 0 && t.tail < ne && t.rel >= 0 && t.rel < nr;
}

std::string KnowledgeGraph::to_string(const Triple& t) const {
  if (!valid_triple(t)) {
    return "(" + std::to_string(t.head) + "," + std::to_string(t.rel) + "," + std::to_string(t.tail) + ")";
  }
  return relations_.name(t.rel) + "(" + entities_.name(t.head) + "," + entities_.name(t.tail) + ")";
}

std::uint64_t KnowledgeGraph::dictionary_hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](std::string_view s) {
    for (unsigned char c : s) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
    h ^= 0xff;  // separator, not valid UTF-8
    h *= 0x100000001b3ULL;
  };
  for (const auto& n : entities_.names()) mix(n);
  mix("\x01relations");
  for (const auto& n : relations_.names()) mix(n);
  return h;
}

namespace {

std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find('\t', start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

}  // namespace

KnowledgeGraph load_dataset(const std::filesystem::path& dir) {
  KnowledgeGraph::Builder builder;
  for (Split split : kAllSplits) {
    auto path = dir / (std::string(split_name(split)) + ".txt");
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DatasetFormatError("missing dataset file: " + path.string());
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      auto fields = split_tabs(line);
      if (fields.size() != 3) {
        throw ParseError(path.string(), lineno,
                         "expected 3 tab-separated fields, got " + std::to_string(fields.size()));
      }
      if (fields[0].empty() || fields[1].empty() || fields[2].empty()) {
        throw ParseError(path.string(), lineno, "empty field");
      }
      builder.add(split, fields[0], fields[1], fields[2]);
    }
  }
  return std::move(builder).build();
}

Triple corrupt(const Triple& t, Side side, Rng& rng, const KnowledgeGraph& kg) {
  auto n = static_cast<EntityId>(kg.num_entities());
  if (n < 2) throw SamplingExhaustedError("cannot corrupt " + kg.to_string(t) + ": fewer than 2 entities");
  auto with = [&](EntityId e) {
    Triple c = t;
    (side == Side::head ? c.head : c.tail) = e;
    return c;
  };
  std::uniform_int_distribution<EntityId> pick(0, n - 1);
  for (int attempt = 0; attempt < kCorruptRetries; ++attempt) {
    Triple c = with(pick(rng));
    if (!kg.is_observed(c)) return c;
  }
  // Dense neighbourhood: draw uniformly among the remaining candidates.
  std::vector<EntityId> free;
  for (EntityId e = 0; e < n; ++e) {
    if (!kg.is_observed(with(e))) free.push_back(e);
  }
  if (free.empty()) {
    throw SamplingExhaustedError("no unobserved " + std::string(side == Side::head ? "head" : "tail") +
                                 " corruption exists for " + kg.to_string(t));
  }
  std::uniform_int_distribution<std::size_t> pick_free(0, free.size() - 1);
  return with(free[pick_free(rng)]);
}

}  // namespace npll
