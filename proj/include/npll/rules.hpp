#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "npll/knowledge_graph.hpp"

namespace npll {

/// A rule argument: either a variable slot of the owning rule or an entity.
struct Term {
  bool is_variable = true;
  std::int32_t value = 0;  // variable index or EntityId

  static Term variable(std::int32_t index) { return {true, index}; }
  static Term constant(EntityId e) { return {false, e}; }
  friend bool operator==(const Term&, const Term&) = default;
  friend auto operator<=>(const Term&, const Term&) = default;
};

/// A binary literal pred(arg1, arg2); `negated` is its sign inside a clause.
struct Atom {
  RelationId pred = 0;
  Term arg1;
  Term arg2;
  bool negated = false;

  friend bool operator==(const Atom&, const Atom&) = default;
  friend auto operator<=>(const Atom&, const Atom&) = default;
};

/// Weighted Horn rule body[0] ∧ ... ∧ body[n-1] ⇒ head.
struct Rule {
  int id = 0;  // position in the parsed file after cleaning
  Atom head;
  std::vector<Atom> body;
  double weight = 0.0;
  double confidence = 0.0;
  /// ¬body[0] ∨ ... ∨ ¬body[n-1] ∨ head.
  std::vector<Atom> clause;
  std::vector<std::string> variables;

  int num_variables() const { return static_cast<int>(variables.size()); }
};

struct RuleParseStats {
  std::size_t lines = 0;  // rule lines read (comments and blanks excluded)
  std::size_t self_reflective = 0;
  std::size_t duplicates = 0;
};

inline constexpr double kMinInitialWeight = 0.1;
inline constexpr double kMaxInitialWeight = 5.0;

/// Rule file syntax, one rule per line:
///   <confidence>\t<Head>(x,z) <- <B1>(x,y) & <B2>(y,z)
/// Variables are lowercase identifiers; constants are double-quoted entity
/// names. '#' starts a comment line.
std::vector<Rule> parse_rules(const std::filesystem::path& path, const KnowledgeGraph& kg,
                              RuleParseStats* stats = nullptr);
std::vector<Rule> parse_rules_text(std::string_view text, const KnowledgeGraph& kg,
                                   const std::string& source = "<rules>", RuleParseStats* stats = nullptr);

/// Rules with confidence strictly greater than alpha, in input order.
std::vector<Rule> filter_by_confidence(std::span<const Rule> rules, double alpha);

/// Serialises a rule back into the input syntax (confidence, tab, rule).
std::string format_rule(const Rule& rule, const KnowledgeGraph& kg);

/// Truth of body ⇒ head for the given atom truth values.
bool implication_holds(std::span<const bool> body, bool head);
/// Truth of the rule's CNF clause for the same atom truth values.
bool clause_holds(const Rule& rule, std::span<const bool> body, bool head);

}  // namespace npll
