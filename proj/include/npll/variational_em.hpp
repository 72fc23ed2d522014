#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "npll/grounding.hpp"
#include "npll/knowledge_graph.hpp"
#include "npll/scoring.hpp"

namespace npll {

struct TrainConfig {
  double lr0 = 5e-4;
  int patience = 10;       // epochs without valid-MRR improvement before halving lr
  int epochs = 10;
  std::size_t batch_size = 512;       // ground rules per E-step batch
  std::size_t fact_batch_size = 128;  // positives from F per E-step batch
  int n_neg = 4;
  double lambda_sup = 1.0;
  int e_steps_per_m_step = 1;  // E-step epochs between M-steps
  int m_steps = 10;            // gradient steps per M-step
  double m_lr = 0.0;           // M-step rate; 0 = use the current E-step rate
  double weight_decay = 0.0;   // L2 coefficient on the scoring parameters
  bool map_blanket = false;    // hard 0/1 blanket values instead of p
  bool entropy_per_occurrence = false;
  int workers = 1;
  std::uint64_t seed = 0;

  /// Throws ConfigError naming the first invalid field.
  void validate() const;
};

/// Rule weights indexed like the rule list the store was grounded from.
using RuleWeights = std::vector<double>;

RuleWeights initial_weights(std::span<const Rule> rules);

/// Mean-field probabilities of the latent atoms of a store.
class PosteriorTable {
 public:
  PosteriorTable() = default;
  explicit PosteriorTable(const GroundingStore& store, double init = 0.5);

  /// Throws ContractViolation for an observed atom.
  double get(AtomId a) const;
  void set(AtomId a, double p);
  std::size_t size() const { return probs_.size(); }
  std::span<const double> values() const { return probs_; }

 private:
  const GroundingStore* store_ = nullptr;
  std::vector<double> probs_;  // by latent index
};

/// Scores every latent atom of the store.
void refresh_posteriors(const ScoringParams& params, const GroundingStore& store, PosteriorTable& table);

struct ElboOptions {
  /// Count an atom's entropy once per grounding it occurs in rather than
  /// once per batch.
  bool entropy_per_occurrence = false;
};

/// Σ_g ω_r(g) Π_{k∈g} p_k + H over the batch's latent atoms; observed atoms
/// enter products as 1. Throws ContractViolation if a latent p is outside (0,1).
double elbo_batch(const GroundingStore& store, std::span<const GroundRuleId> batch, const PosteriorTable& probs,
                  const RuleWeights& weights, const ElboOptions& options = {});

/// The batch objective and its derivative w.r.t. each latent atom's logit,
/// evaluated from logits so saturated probabilities stay finite.
struct ElboTerms {
  double value = 0.0;
  double weighted_products = 0.0;
  double entropy = 0.0;
  std::vector<AtomId> atoms;     // distinct latent atoms in batch order
  std::vector<double> d_logit;   // dValue/dlogit, aligned with atoms
};

ElboTerms elbo_terms(const GroundingStore& store, std::span<const GroundRuleId> batch,
                     const std::function<double(AtomId)>& logit_of, const RuleWeights& weights,
                     const ElboOptions& options = {});

/// Distinct latent atoms of a batch in first-occurrence order.
std::vector<AtomId> batch_latent_atoms(const GroundingStore& store, std::span<const GroundRuleId> batch);

/// Filtered negatives, n_neg per positive, laid out contiguously.
std::vector<Triple> sample_negatives(std::span<const Triple> positives, const KnowledgeGraph& kg, int n_neg, Rng& rng);

/// d_fact = -(1/|P|) Σ_pos [log p_pos + Σ_j log(1 - p_neg_j)]. If `grad` is
/// given, adds scale * d(d_fact)/dθ into it.
double supervised_loss(const ScoringParams& params, std::span<const Triple> positives,
                       std::span<const Triple> negatives, int n_neg, GradientBuffer* grad = nullptr,
                       double scale = 1.0);
double supervised_loss(const ScoringParams& params, std::span<const Triple> positives, const KnowledgeGraph& kg,
                       int n_neg, Rng& rng);

/// One E-step batch: loss = -elbo_batch + lambda_sup * d_fact.
struct BatchLoss {
  double total = 0.0;
  double elbo = 0.0;
  double supervised = 0.0;
};

/// Loss of a fixed batch and, if `grad` is given, its gradient.
BatchLoss e_step_loss(const ScoringParams& params, const GroundingStore& store, std::span<const GroundRuleId> batch,
                      std::span<const Triple> positives, std::span<const Triple> negatives,
                      const RuleWeights& weights, const TrainConfig& config, GradientBuffer* grad = nullptr,
                      PosteriorTable* probs = nullptr);

struct EpochReport {
  double mean_loss = 0.0;
  std::size_t batches = 0;
};

/// One pass over F in shuffled fact batches, each paired with a sampled
/// ground-rule batch; plain gradient descent with learning rate `lr`.
EpochReport e_step_epoch(ScoringParams& params, const GroundingStore& store, const KnowledgeGraph& kg,
                         const RuleWeights& weights, const TrainConfig& config, double lr, Rng& rng,
                         PosteriorTable* probs = nullptr);

/// P(u_k = 1 | MB_k) = σ(Σ_{g∋k} ω_r(g) Π_{j∈g, j≠k} p̃_j).
double pseudo_likelihood(AtomId atom, const GroundingStore& store, const PosteriorTable& probs,
                         const RuleWeights& weights, bool map_blanket = false);

/// Sum over non-query latent atoms of p_k log P_k + (1 - p_k) log(1 - P_k).
double pseudo_log_likelihood(const GroundingStore& store, const PosteriorTable& probs, const RuleWeights& weights,
                             bool map_blanket = false);
std::vector<double> pseudo_log_likelihood_gradient(const GroundingStore& store, const PosteriorTable& probs,
                                                   const RuleWeights& weights, bool map_blanket = false);

/// `config.m_steps` ascent steps on pseudo_log_likelihood with rate `lr`.
RuleWeights m_step(const GroundingStore& store, const PosteriorTable& probs, const RuleWeights& weights,
                   const TrainConfig& config, double lr);

/// Free-logit mean-field fit of the store's latent atoms by full-batch ascent
/// on the ELBO. Used on small instances where Q need not come from scoring.
std::vector<double> fit_mean_field(const GroundingStore& store, const RuleWeights& weights,
                                   std::vector<double> logits, int steps, double lr, const ElboOptions& options = {});

struct EpochRecord {
  int epoch = 0;
  double loss = 0.0;
  double valid_mrr = 0.0;
  double lr = 0.0;
  double wall_seconds = 0.0;
};

nlohmann::json epoch_record_json(const EpochRecord& r);

struct TrainResult {
  ScoringParams params;   // best-valid parameters
  RuleWeights weights;    // weights paired with the best-valid parameters
  std::vector<EpochRecord> history;
  int best_epoch = 0;     // 0 = the initialisation
  double best_valid_mrr = 0.0;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Alternates E-step epochs and M-steps, tracking valid MRR for lr decay and
/// best-model selection.
TrainResult train(const KnowledgeGraph& kg, const GroundingStore& store, const RuleWeights& initial,
                  const ScoringParams& init, const TrainConfig& config, const EpochCallback& on_epoch = {});

}  // namespace npll
