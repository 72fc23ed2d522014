#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "npll/error.hpp"
#include "npll/grounding.hpp"
#include "npll/knowledge_graph.hpp"

namespace npll {

// Brute-force MLN reference for instances small enough to enumerate.

inline constexpr int kMaxEnumeratedAtoms = 20;

/// Thrown when an instance is too large to enumerate.
class OracleRefusedError : public Error {
 public:
  explicit OracleRefusedError(const std::string& what) : Error(ErrorKind::config, what) {}
};

enum class CountMode { product, clause };

struct ToyGroundRule {
  int rule = 0;  // groundings of the same rule share its weight
  double weight = 0.0;
  std::vector<int> body;
  int head = 0;
};

/// Atoms are 0..num_atoms-1; observed atoms are fixed true.
struct ToyMln {
  int num_atoms = 0;
  std::vector<std::uint8_t> observed;
  std::vector<ToyGroundRule> groundings;
  CountMode mode = CountMode::product;

  std::vector<int> latent() const;
  int num_rules() const;
  /// Throws ContractViolation on out-of-range atoms, non-finite weights or
  /// groundings of one rule with different weights.
  void validate() const;
};

/// Schema: {"atoms": n or [names], "observed": [i...],
///          "rules": [{"weight": w, "atom_indices": [body...], "head_index": h, "rule": r?}],
///          "mode": "product" | "clause"}
ToyMln toy_from_json(const nlohmann::json& j);
ToyMln load_toy(const std::filesystem::path& path);
nlohmann::json toy_to_json(const ToyMln& toy);

struct ToyOptions {
  int min_latent = 1;
  int max_latent = 12;
  int max_observed = 4;
  int max_groundings = 12;
  int max_body = 3;
  int num_rules = 4;
  double min_weight = -2.0;
  double max_weight = 3.0;
  CountMode mode = CountMode::product;
};

ToyMln random_toy(Rng& rng, const ToyOptions& options = {});

bool grounding_satisfied(const ToyGroundRule& g, std::span<const std::uint8_t> assignment, CountMode mode);

/// Σ_g ω_g · sat_g(assignment) over a full assignment indexed by atom.
double log_weight(const ToyMln& toy, std::span<const std::uint8_t> assignment);

/// Per rule, satisfied groundings under the toy's counting mode.
std::vector<std::int64_t> count_by_rule(const ToyMln& toy, std::span<const std::uint8_t> assignment);

/// Z = Σ over latent assignments (observed atoms true) of exp(Σ ω N).
double exact_partition(const ToyMln& toy);
double exact_log_partition(const ToyMln& toy);
/// The same sum with every atom free, normalising the joint over F and U.
double exact_joint_log_partition(const ToyMln& toy);

/// P(u = 1 | F, ω) per latent atom, aligned with toy.latent().
std::vector<double> exact_posterior(const ToyMln& toy);

/// P(u_k = 1 | every other atom as in `assignment`).
double exact_conditional(const ToyMln& toy, int atom, std::span<const std::uint8_t> assignment);

struct ExactElbo {
  double elbo = 0.0;
  double kl = 0.0;
  double log_evidence = 0.0;       // log P(F | ω)
  double expected_log_weight = 0.0;  // E_q[Σ ω N]
  double entropy = 0.0;            // H(q)
};

/// q is aligned with toy.latent(); each value must lie in [0, 1].
ExactElbo exact_elbo_and_kl(const ToyMln& toy, std::span<const double> q);

/// KL(q ‖ exact posterior) by enumeration.
double exact_kl(const ToyMln& toy, std::span<const double> q);

/// The toy as a grounding store: atom i becomes triple (i, 0, 0), each
/// grounding keeps its rule index. Requires product mode semantics to match.
GroundingStore toy_to_store(const ToyMln& toy);
/// Per-rule weights of the toy, indexed like the store's rules.
std::vector<double> toy_rule_weights(const ToyMln& toy);

}  // namespace npll
