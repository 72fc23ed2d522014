#include "npll/variational_em.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <unordered_map>

#include "npll/error.hpp"
#include "npll/evaluator.hpp"

namespace npll {

void TrainConfig::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw ConfigError(std::string("invalid training config: ") + what);
  };
  require(std::isfinite(lr0) && lr0 >= 0.0, "lr0 must be finite and >= 0");
  require(std::isfinite(m_lr) && m_lr >= 0.0, "m_lr must be finite and >= 0");
  require(std::isfinite(weight_decay) && weight_decay >= 0.0, "weight_decay must be finite and >= 0");
  require(patience >= 1, "patience must be >= 1");
  require(epochs >= 0, "epochs must be >= 0");
  require(batch_size >= 1, "batch_size must be >= 1");
  require(fact_batch_size >= 1, "fact_batch_size must be >= 1");
  require(n_neg >= 0, "n_neg must be >= 0");
  require(std::isfinite(lambda_sup) && lambda_sup >= 0.0, "lambda_sup must be finite and >= 0");
  require(e_steps_per_m_step >= 1, "e_steps_per_m_step must be >= 1");
  require(m_steps >= 0, "m_steps must be >= 0");
  require(workers >= 1, "workers must be >= 1");
}

RuleWeights initial_weights(std::span<const Rule> rules) {
  RuleWeights w;
  w.reserve(rules.size());
  for (const auto& r : rules) w.push_back(r.weight);
  return w;
}

PosteriorTable::PosteriorTable(const GroundingStore& store, double init)
    : store_(&store), probs_(store.num_latent(), init) {}

double PosteriorTable::get(AtomId a) const {
  auto i = store_->latent_index(a);
  if (i < 0) throw ContractViolation("atom " + std::to_string(a) + " is observed and has no posterior");
  return probs_[static_cast<std::size_t>(i)];
}

void PosteriorTable::set(AtomId a, double p) {
  auto i = store_->latent_index(a);
  if (i < 0) throw ContractViolation("atom " + std::to_string(a) + " is observed and has no posterior");
  probs_[static_cast<std::size_t>(i)] = p;
}

void refresh_posteriors(const ScoringParams& params, const GroundingStore& store, PosteriorTable& table) {
  std::vector<Triple> triples;
  triples.reserve(store.num_latent());
  for (AtomId a : store.latent_atoms()) triples.push_back(store.triple(a));
  auto probs = posterior_probs(params, triples);
  for (std::size_t i = 0; i < probs.size(); ++i) table.set(store.latent_atoms()[i], probs[i]);
}

std::vector<AtomId> batch_latent_atoms(const GroundingStore& store, std::span<const GroundRuleId> batch) {
  std::vector<AtomId> out;
  std::unordered_map<AtomId, std::size_t> seen;
  for (auto g : batch) {
    for (AtomId a : store.ground_rule(g).latent) {
      if (seen.emplace(a, out.size()).second) out.push_back(a);
    }
  }
  return out;
}

ElboTerms elbo_terms(const GroundingStore& store, std::span<const GroundRuleId> batch,
                     const std::function<double(AtomId)>& logit_of, const RuleWeights& weights,
                     const ElboOptions& options) {
  if (weights.size() != store.num_rules()) throw ContractViolation("rule weight count does not match the store");
  ElboTerms out;
  std::unordered_map<AtomId, std::size_t> local;
  for (auto g : batch) {
    for (AtomId a : store.ground_rule(g).latent) {
      if (local.emplace(a, out.atoms.size()).second) out.atoms.push_back(a);
    }
  }
  const std::size_t n = out.atoms.size();
  std::vector<double> x(n), p(n), d_prob(n, 0.0), entropy_count(n, options.entropy_per_occurrence ? 0.0 : 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    x[i] = logit_of(out.atoms[i]);
    p[i] = logistic(x[i]);
  }

  std::vector<double> vals, prefix, suffix;
  for (auto g : batch) {
    auto gr = store.ground_rule(g);
    const double w = weights[static_cast<std::size_t>(gr.rule)];
    const std::size_t m = gr.atoms.size();
    vals.resize(m);
    for (std::size_t j = 0; j < m; ++j) {
      AtomId a = gr.atoms[j];
      vals[j] = store.is_observed(a) ? 1.0 : p[local.at(a)];
    }
    prefix.assign(m + 1, 1.0);
    suffix.assign(m + 1, 1.0);
    for (std::size_t j = 0; j < m; ++j) prefix[j + 1] = prefix[j] * vals[j];
    for (std::size_t j = m; j-- > 0;) suffix[j] = suffix[j + 1] * vals[j];
    out.weighted_products += w * prefix[m];
    for (std::size_t j = 0; j < m; ++j) {
      AtomId a = gr.atoms[j];
      if (store.is_observed(a)) continue;
      d_prob[local.at(a)] += w * prefix[j] * suffix[j + 1];
    }
    if (options.entropy_per_occurrence) {
      for (AtomId a : gr.latent) entropy_count[local.at(a)] += 1.0;
    }
  }

  out.d_logit.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    // H(σ(x)) = p softplus(-x) + (1-p) softplus(x);  dH/dx = -x p (1-p).
    double h = p[i] * softplus(-x[i]) + (1.0 - p[i]) * softplus(x[i]);
    double slope = p[i] * (1.0 - p[i]);
    out.entropy += entropy_count[i] * h;
    out.d_logit[i] = d_prob[i] * slope - entropy_count[i] * x[i] * slope;
  }
  out.value = out.weighted_products + out.entropy;
  return out;
}

double elbo_batch(const GroundingStore& store, std::span<const GroundRuleId> batch, const PosteriorTable& probs,
                  const RuleWeights& weights, const ElboOptions& options) {
  auto logit = [&](AtomId a) {
    double p = probs.get(a);
    if (!(p > 0.0 && p < 1.0)) {
      throw ContractViolation("latent atom " + std::to_string(a) + " has probability " + std::to_string(p) +
                              " outside (0,1)");
    }
    return std::log(p) - std::log1p(-p);
  };
  return elbo_terms(store, batch, logit, weights, options).value;
}

std::vector<Triple> sample_negatives(std::span<const Triple> positives, const KnowledgeGraph& kg, int n_neg, Rng& rng) {
  std::vector<Triple> out;
  out.reserve(positives.size() * static_cast<std::size_t>(std::max(n_neg, 0)));
  std::bernoulli_distribution coin(0.5);
  for (const Triple& t : positives) {
    for (int j = 0; j < n_neg; ++j) out.push_back(corrupt(t, coin(rng) ? Side::head : Side::tail, rng, kg));
  }
  return out;
}

double supervised_loss(const ScoringParams& params, std::span<const Triple> positives,
                       std::span<const Triple> negatives, int n_neg, GradientBuffer* grad, double scale) {
  if (positives.empty()) return 0.0;
  if (negatives.size() != positives.size() * static_cast<std::size_t>(std::max(n_neg, 0))) {
    throw ContractViolation("expected n_neg negatives per positive");
  }
  const double inv = 1.0 / static_cast<double>(positives.size());
  double total = 0.0;
  auto term = [&](const Triple& t, bool positive) {
    double raw = score(params, t).raw;
    // -log σ(raw) for positives, -log(1 - σ(raw)) for negatives.
    total += positive ? softplus(-raw) : softplus(raw);
    if (grad) {
      double d = positive ? -(1.0 - logistic(raw)) : logistic(raw);
      score_gradients(params, t, scale * inv * d, *grad);
    }
  };
  for (const Triple& t : positives) term(t, true);
  for (const Triple& t : negatives) term(t, false);
  return total * inv;
}

double supervised_loss(const ScoringParams& params, std::span<const Triple> positives, const KnowledgeGraph& kg,
                       int n_neg, Rng& rng) {
  for (const Triple& t : positives) {
    if (!kg.is_observed(t)) throw ContractViolation("supervised positive " + kg.to_string(t) + " is not in F");
  }
  auto negatives = sample_negatives(positives, kg, n_neg, rng);
  return supervised_loss(params, positives, negatives, n_neg);
}

BatchLoss e_step_loss(const ScoringParams& params, const GroundingStore& store, std::span<const GroundRuleId> batch,
                      std::span<const Triple> positives, std::span<const Triple> negatives,
                      const RuleWeights& weights, const TrainConfig& config, GradientBuffer* grad,
                      PosteriorTable* probs) {
  BatchLoss loss;
  if (!batch.empty()) {
    auto atoms = batch_latent_atoms(store, batch);
    std::vector<Triple> triples;
    triples.reserve(atoms.size());
    for (AtomId a : atoms) triples.push_back(store.triple(a));
    auto raw = raw_scores(params, triples);
    std::unordered_map<AtomId, double> logit;
    for (std::size_t i = 0; i < atoms.size(); ++i) logit.emplace(atoms[i], raw[i]);
    ElboOptions opts{config.entropy_per_occurrence};
    auto terms = elbo_terms(store, batch, [&](AtomId a) { return logit.at(a); }, weights, opts);
    loss.elbo = terms.value;
    if (probs) {
      for (std::size_t i = 0; i < atoms.size(); ++i) probs->set(atoms[i], logistic(raw[i]));
    }
    if (grad) {
      for (std::size_t i = 0; i < terms.atoms.size(); ++i) {
        if (terms.d_logit[i] != 0.0) score_gradients(params, store.triple(terms.atoms[i]), -terms.d_logit[i], *grad);
      }
    }
  }
  loss.supervised = supervised_loss(params, positives, negatives, config.n_neg, grad, config.lambda_sup);
  loss.total = -loss.elbo + config.lambda_sup * loss.supervised;
  return loss;
}

EpochReport e_step_epoch(ScoringParams& params, const GroundingStore& store, const KnowledgeGraph& kg,
                         const RuleWeights& weights, const TrainConfig& config, double lr, Rng& rng,
                         PosteriorTable* probs) {
  std::vector<Triple> facts(kg.observed().begin(), kg.observed().end());
  std::shuffle(facts.begin(), facts.end(), rng);
  const std::size_t n_batches = std::max<std::size_t>(1, (facts.size() + config.fact_batch_size - 1) / config.fact_batch_size);

  GradientBuffer grad(params.layout());
  EpochReport report;
  double sum = 0.0;
  for (std::size_t b = 0; b < n_batches; ++b) {
    std::size_t begin = std::min(facts.size(), b * config.fact_batch_size);
    std::size_t end = std::min(facts.size(), begin + config.fact_batch_size);
    std::span<const Triple> positives(facts.data() + begin, end - begin);
    auto negatives = sample_negatives(positives, kg, config.n_neg, rng);
    std::vector<GroundRuleId> batch;
    if (!store.empty()) batch = sample_batch(store, config.batch_size, rng);

    grad.clear();
    auto loss = e_step_loss(params, store, batch, positives, negatives, weights, config, &grad, probs);
    if (!std::isfinite(loss.total)) {
      std::string term = !std::isfinite(loss.elbo) ? "elbo" : "supervised";
      throw NumericError("non-finite E-step loss in batch " + std::to_string(b) + " (" + term + " term: elbo=" +
                         std::to_string(loss.elbo) + ", supervised=" + std::to_string(loss.supervised) + ")");
    }
    if (config.weight_decay > 0.0) {
      const double shrink = 1.0 - lr * config.weight_decay;
      for (double& x : params.data()) x *= shrink;
    }
    apply_gradient(params, grad, lr);
    sum += loss.total;
    ++report.batches;
  }
  report.mean_loss = sum / static_cast<double>(report.batches);
  return report;
}

namespace {

double blanket_value(const GroundingStore& store, const PosteriorTable& probs, AtomId a, bool map_blanket) {
  if (store.is_observed(a)) return 1.0;
  double p = probs.get(a);
  return map_blanket ? (p >= 0.5 ? 1.0 : 0.0) : p;
}

/// For a latent atom: Σ over its distinct groundings of Δ_g(k), grouped by rule.
void blanket_deltas(AtomId k, const GroundingStore& store, const PosteriorTable& probs, bool map_blanket,
                    std::vector<std::pair<std::int32_t, double>>& out) {
  out.clear();
  GroundRuleId last = std::numeric_limits<GroundRuleId>::max();
  for (const auto& entry : store.blanket(k)) {
    if (entry.ground_rule == last) continue;  // atom repeated within one grounding
    last = entry.ground_rule;
    auto gr = store.ground_rule(entry.ground_rule);
    double delta = 1.0;
    for (AtomId a : gr.atoms) {
      if (a != k) delta *= blanket_value(store, probs, a, map_blanket);
    }
    auto it = std::find_if(out.begin(), out.end(), [&](const auto& e) { return e.first == gr.rule; });
    if (it == out.end()) {
      out.emplace_back(gr.rule, delta);
    } else {
      it->second += delta;
    }
  }
}

struct BlanketSummary {
  std::vector<double> target;                      // p_k per counted atom
  std::vector<std::uint32_t> offsets{0};
  std::vector<std::pair<std::int32_t, double>> deltas;  // (rule, ΣΔ) per atom
};

BlanketSummary summarize_blankets(const GroundingStore& store, const PosteriorTable& probs, bool map_blanket) {
  BlanketSummary s;
  std::vector<std::pair<std::int32_t, double>> tmp;
  for (AtomId k : store.latent_atoms()) {
    if (store.is_query(k) || store.blanket(k).empty()) continue;
    blanket_deltas(k, store, probs, map_blanket, tmp);
    s.target.push_back(probs.get(k));
    s.deltas.insert(s.deltas.end(), tmp.begin(), tmp.end());
    s.offsets.push_back(static_cast<std::uint32_t>(s.deltas.size()));
  }
  return s;
}

double log_sigmoid(double x) { return -softplus(-x); }

}  // namespace

double pseudo_likelihood(AtomId atom, const GroundingStore& store, const PosteriorTable& probs,
                         const RuleWeights& weights, bool map_blanket) {
  if (atom < 0 || static_cast<std::size_t>(atom) >= store.num_atoms() || store.is_observed(atom)) {
    throw ContractViolation("pseudo_likelihood needs a latent atom, got " + std::to_string(atom));
  }
  if (store.blanket(atom).empty()) throw ContractViolation("latent atom " + std::to_string(atom) + " has an empty Markov blanket");
  std::vector<std::pair<std::int32_t, double>> deltas;
  blanket_deltas(atom, store, probs, map_blanket, deltas);
  double s = 0.0;
  for (auto [rule, delta] : deltas) s += weights[static_cast<std::size_t>(rule)] * delta;
  return logistic(s);
}

double pseudo_log_likelihood(const GroundingStore& store, const PosteriorTable& probs, const RuleWeights& weights,
                             bool map_blanket) {
  auto s = summarize_blankets(store, probs, map_blanket);
  double total = 0.0;
  for (std::size_t i = 0; i < s.target.size(); ++i) {
    double z = 0.0;
    for (auto j = s.offsets[i]; j < s.offsets[i + 1]; ++j) z += weights[static_cast<std::size_t>(s.deltas[j].first)] * s.deltas[j].second;
    total += s.target[i] * log_sigmoid(z) + (1.0 - s.target[i]) * log_sigmoid(-z);
  }
  return total;
}

namespace {

std::vector<double> pll_gradient(const BlanketSummary& s, const RuleWeights& weights) {
  std::vector<double> g(weights.size(), 0.0);
  for (std::size_t i = 0; i < s.target.size(); ++i) {
    double z = 0.0;
    for (auto j = s.offsets[i]; j < s.offsets[i + 1]; ++j) z += weights[static_cast<std::size_t>(s.deltas[j].first)] * s.deltas[j].second;
    double residual = s.target[i] - logistic(z);
    for (auto j = s.offsets[i]; j < s.offsets[i + 1]; ++j) g[static_cast<std::size_t>(s.deltas[j].first)] += residual * s.deltas[j].second;
  }
  return g;
}

}  // namespace

std::vector<double> pseudo_log_likelihood_gradient(const GroundingStore& store, const PosteriorTable& probs,
                                                   const RuleWeights& weights, bool map_blanket) {
  return pll_gradient(summarize_blankets(store, probs, map_blanket), weights);
}

RuleWeights m_step(const GroundingStore& store, const PosteriorTable& probs, const RuleWeights& weights,
                   const TrainConfig& config, double lr) {
  if (weights.size() != store.num_rules()) throw ContractViolation("rule weight count does not match the store");
  auto summary = summarize_blankets(store, probs, config.map_blanket);
  RuleWeights w = weights;
  for (int step = 0; step < config.m_steps; ++step) {
    auto g = pll_gradient(summary, w);
    for (std::size_t r = 0; r < w.size(); ++r) {
      double next = w[r] + lr * g[r];
      if (!std::isfinite(g[r]) || !std::isfinite(next)) {
        throw NumericError("non-finite M-step gradient for rule index " + std::to_string(r));
      }
      w[r] = next;
    }
  }
  return w;
}

std::vector<double> fit_mean_field(const GroundingStore& store, const RuleWeights& weights, std::vector<double> logits,
                                   int steps, double lr, const ElboOptions& options) {
  if (logits.size() != store.num_latent()) throw ContractViolation("one logit per latent atom expected");
  std::vector<GroundRuleId> all(store.num_ground_rules());
  std::iota(all.begin(), all.end(), GroundRuleId{0});
  for (int s = 0; s < steps; ++s) {
    auto terms = elbo_terms(
        store, all, [&](AtomId a) { return logits[static_cast<std::size_t>(store.latent_index(a))]; }, weights,
        options);
    for (std::size_t i = 0; i < terms.atoms.size(); ++i) {
      logits[static_cast<std::size_t>(store.latent_index(terms.atoms[i]))] += lr * terms.d_logit[i];
    }
  }
  return logits;
}

nlohmann::json epoch_record_json(const EpochRecord& r) {
  return {{"epoch", r.epoch}, {"loss", r.loss}, {"valid_mrr", r.valid_mrr}, {"lr", r.lr}, {"wall_seconds", r.wall_seconds}};
}

TrainResult train(const KnowledgeGraph& kg, const GroundingStore& store, const RuleWeights& initial,
                  const ScoringParams& init, const TrainConfig& config, const EpochCallback& on_epoch) {
  config.validate();
  if (initial.size() != store.num_rules()) throw ContractViolation("rule weight count does not match the store");
  Rng rng(config.seed);
  ScoringParams params = init;
  RuleWeights weights = initial;
  PosteriorTable probs(store);

  auto valid_mrr = [&] {
    if (kg.split(Split::valid).empty()) return 0.0;
    return evaluate(params, kg, Split::valid, config.workers).mrr;
  };

  TrainResult result;
  result.params = params;
  result.weights = weights;
  result.best_valid_mrr = config.epochs > 0 ? valid_mrr() : 0.0;

  double lr = config.lr0;
  int since_best = 0;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    auto start = std::chrono::steady_clock::now();
    auto rep = e_step_epoch(params, store, kg, weights, config, lr, rng, &probs);
    if (epoch % config.e_steps_per_m_step == 0 && store.num_latent() > 0 && config.m_steps > 0) {
      refresh_posteriors(params, store, probs);
      weights = m_step(store, probs, weights, config, config.m_lr > 0.0 ? config.m_lr : lr);
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.loss = rep.mean_loss;
    rec.valid_mrr = valid_mrr();
    rec.lr = lr;
    rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.history.push_back(rec);

    if (rec.valid_mrr > result.best_valid_mrr) {
      result.best_valid_mrr = rec.valid_mrr;
      result.best_epoch = epoch;
      result.params = params;
      result.weights = weights;
      since_best = 0;
    } else if (++since_best >= config.patience) {
      lr *= 0.5;
      since_best = 0;
    }
    if (on_epoch) on_epoch(rec);
  }
  if (config.epochs == 0) {
    result.params = params;
    result.weights = weights;
  }
  return result;
}

}  // namespace npll
