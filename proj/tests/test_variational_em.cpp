#include <numeric>

#include "doctest.h"
#include "npll/error.hpp"
#include "npll/evaluator.hpp"
#include "npll/oracle.hpp"
#include "npll/variational_em.hpp"
#include "support.hpp"

using namespace npll;

namespace {

std::vector<GroundRuleId> all_groundings(const GroundingStore& store) {
  std::vector<GroundRuleId> ids(store.num_ground_rules());
  std::iota(ids.begin(), ids.end(), GroundRuleId{0});
  return ids;
}

/// One grounding `body -> head` over atoms 0..n-1 with the listed atoms observed.
GroundingStore single_grounding(int n, std::vector<int> observed) {
  ToyMln toy;
  toy.num_atoms = n;
  toy.observed.assign(static_cast<std::size_t>(n), 0);
  for (int i : observed) toy.observed[static_cast<std::size_t>(i)] = 1;
  ToyGroundRule g;
  for (int i = 0; i + 1 < n; ++i) g.body.push_back(i);
  g.head = n - 1;
  toy.groundings.push_back(g);
  return toy_to_store(toy);
}

double bernoulli_entropy(double p) { return -(p * std::log(p) + (1 - p) * std::log1p(-p)); }

std::vector<double> random_q(Rng& rng, std::size_t n) {
  std::uniform_real_distribution<double> u(0.02, 0.98);
  std::vector<double> q(n);
  for (double& x : q) x = u(rng);
  return q;
}

PosteriorTable table_from(const GroundingStore& store, std::span<const double> q) {
  PosteriorTable t(store);
  for (std::size_t i = 0; i < q.size(); ++i) t.set(store.latent_atoms()[i], q[i]);
  return t;
}

}  // namespace

TEST_CASE("elbo_batch: fully observed grounding gives its weight") {
  auto store = single_grounding(3, {0, 1, 2});
  PosteriorTable probs(store);
  RuleWeights w{1.7};
  CHECK(elbo_batch(store, all_groundings(store), probs, w) == 1.7);
}

TEST_CASE("elbo_batch: one latent atom at one half with weight 2") {
  auto store = single_grounding(2, {0});
  PosteriorTable probs(store);
  probs.set(1, 0.5);
  CHECK(elbo_batch(store, all_groundings(store), probs, RuleWeights{2.0}) == doctest::Approx(1.0 + std::log(2.0)).epsilon(1e-15));
}

TEST_CASE("elbo_batch rejects probabilities at the boundary") {
  auto store = single_grounding(2, {0});
  PosteriorTable probs(store);
  probs.set(1, 1.0);
  CHECK_THROWS_AS(elbo_batch(store, all_groundings(store), probs, RuleWeights{1.0}), ContractViolation);
  probs.set(1, 0.0);
  CHECK_THROWS_AS(elbo_batch(store, all_groundings(store), probs, RuleWeights{1.0}), ContractViolation);
}

TEST_CASE("elbo_batch equals the enumerated expectation plus entropy on toys") {
  Rng rng(101);
  for (int trial = 0; trial < 50; ++trial) {
    ToyOptions opts;
    opts.max_latent = 10;
    auto toy = random_toy(rng, opts);
    auto store = toy_to_store(toy);
    auto q = random_q(rng, store.num_latent());
    auto probs = table_from(store, q);
    auto batch = all_groundings(store);
    double value = elbo_batch(store, batch, probs, toy_rule_weights(toy));

    // Atoms outside every grounding carry entropy in the oracle but are not in the batch.
    auto in_batch = batch_latent_atoms(store, batch);
    for (std::size_t i = 0; i < q.size(); ++i) {
      AtomId a = store.latent_atoms()[i];
      if (std::find(in_batch.begin(), in_batch.end(), a) == in_batch.end()) value += bernoulli_entropy(q[i]);
    }
    auto exact = exact_elbo_and_kl(toy, q);
    CHECK(std::abs(value - (exact.elbo + exact_joint_log_partition(toy))) < 1e-9);
    CHECK(std::abs(value - (exact.expected_log_weight + exact.entropy)) < 1e-9);
  }
}

TEST_CASE("elbo_terms: entropy is nonnegative and the split is exact") {
  Rng rng(5);
  for (int trial = 0; trial < 30; ++trial) {
    auto toy = random_toy(rng);
    auto store = toy_to_store(toy);
    auto q = random_q(rng, store.num_latent());
    std::vector<double> logit(q.size());
    for (std::size_t i = 0; i < q.size(); ++i) logit[i] = std::log(q[i] / (1 - q[i]));
    auto t = elbo_terms(
        store, all_groundings(store), [&](AtomId a) { return logit[static_cast<std::size_t>(store.latent_index(a))]; },
        toy_rule_weights(toy));
    CHECK(t.entropy >= 0.0);
    CHECK(t.value - t.weighted_products == doctest::Approx(t.entropy).epsilon(1e-14));
  }
}

TEST_CASE("elbo_batch with observed atoms only counts true groundings") {
  // Three groundings of two rules, all atoms observed.
  ToyMln toy;
  toy.num_atoms = 4;
  toy.observed = {1, 1, 1, 1};
  toy.groundings = {{0, 0.5, {0}, 1}, {0, 0.5, {1}, 2}, {1, -1.25, {0, 2}, 3}};
  auto store = toy_to_store(toy);
  PosteriorTable probs(store);
  CHECK(elbo_batch(store, all_groundings(store), probs, toy_rule_weights(toy)) == 0.5 + 0.5 - 1.25);
}

TEST_CASE("entropy counting conventions") {
  // Atom 1 is latent and occurs in two groundings.
  ToyMln toy;
  toy.num_atoms = 3;
  toy.observed = {1, 0, 1};
  toy.groundings = {{0, 1.0, {0}, 1}, {0, 1.0, {1}, 2}};
  auto store = toy_to_store(toy);
  PosteriorTable probs(store);
  probs.set(1, 0.3);
  auto batch = all_groundings(store);
  const double h = bernoulli_entropy(0.3);
  CHECK(elbo_batch(store, batch, probs, RuleWeights{1.0}) == doctest::Approx(0.6 + h));
  CHECK(elbo_batch(store, batch, probs, RuleWeights{1.0}, ElboOptions{true}) == doctest::Approx(0.6 + 2 * h));
}

TEST_CASE("supervised_loss limits") {
  ScoringParams p(3, 1, 1, 1);
  std::vector<Triple> pos{{0, 0, 1}};
  // raw = 0 gives p = 1/2.
  CHECK(supervised_loss(p, pos, std::vector<Triple>{}, 0) == doctest::Approx(std::log(2.0)).epsilon(1e-15));

  // Large positive raw for the positive, large negative for the negative.
  ScoringParams q(3, 2, 1, 1);
  q.b(0)[0] = 40.0;
  q.u(0)[0] = 30.0;
  q.b(1)[0] = 40.0;
  q.u(1)[0] = -30.0;
  std::vector<Triple> neg{{0, 1, 1}};
  double l = supervised_loss(q, pos, neg, 1);
  CHECK(l >= 0.0);
  CHECK(l < 1e-12);
  CHECK_THROWS_AS(supervised_loss(q, pos, std::vector<Triple>{}, 1), ContractViolation);
}

TEST_CASE("supervised negatives are filtered and one per side draw") {
  auto kg = test::make_kg({{"a", "r", "b"}, {"b", "r", "c"}, {"c", "r", "d"}}, {}, {{"a", "r", "c"}});
  Rng rng(3);
  std::vector<Triple> pos(kg.observed().begin(), kg.observed().end());
  auto neg = sample_negatives(pos, kg, 5, rng);
  REQUIRE(neg.size() == 15);
  for (std::size_t i = 0; i < neg.size(); ++i) {
    const Triple& t = pos[i / 5];
    CHECK_FALSE(kg.is_observed(neg[i]));
    CHECK(neg[i].rel == t.rel);
    CHECK(((neg[i].head == t.head) != (neg[i].tail == t.tail)));
  }
  Rng again(3);
  CHECK(sample_negatives(pos, kg, 5, again) == neg);
}

namespace {

struct EStepCase {
  ToyMln toy;
  GroundingStore store;
  ScoringParams params;
  std::vector<Triple> positives, negatives;
  TrainConfig config;
};

EStepCase random_estep_case(Rng& rng) {
  EStepCase c;
  ToyOptions opts;
  opts.max_latent = 6;
  opts.max_groundings = 6;
  c.toy = random_toy(rng, opts);
  c.store = toy_to_store(c.toy);
  std::uniform_int_distribution<std::size_t> dim(1, 8), slices(1, 8);
  const auto n = static_cast<std::size_t>(c.toy.num_atoms);
  c.params = init_params(n, 1, dim(rng), slices(rng), rng);
  for (double& x : c.params.data()) x *= 3.0;
  c.config.n_neg = 2;
  c.config.lambda_sup = std::uniform_real_distribution<double>(0.1, 5.0)(rng);
  std::uniform_int_distribution<EntityId> ent(0, static_cast<EntityId>(n) - 1);
  for (int i = 0; i < 3; ++i) {
    c.positives.push_back({ent(rng), 0, ent(rng)});
    for (int j = 0; j < c.config.n_neg; ++j) c.negatives.push_back({ent(rng), 0, ent(rng)});
  }
  return c;
}

}  // namespace

TEST_CASE("E-step loss gradient matches central differences") {
  Rng rng(404);
  double worst = 0.0;
  for (int trial = 0; trial < 40; ++trial) {
    auto c = random_estep_case(rng);
    c.config.entropy_per_occurrence = trial % 2 == 1;
    auto batch = all_groundings(c.store);
    GradientBuffer g(c.params.layout());
    e_step_loss(c.params, c.store, batch, c.positives, c.negatives, toy_rule_weights(c.toy), c.config, &g);
    auto f = [&] {
      return e_step_loss(c.params, c.store, batch, c.positives, c.negatives, toy_rule_weights(c.toy), c.config).total;
    };
    auto numeric = test::numeric_gradient(c.params.data(), f);
    std::vector<double> a(g.data().begin(), g.data().end());
    worst = std::max(worst, test::max_relative_error(a, numeric));
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("supervised gradient matches central differences") {
  Rng rng(99);
  for (int trial = 0; trial < 20; ++trial) {
    auto c = random_estep_case(rng);
    GradientBuffer g(c.params.layout());
    supervised_loss(c.params, c.positives, c.negatives, c.config.n_neg, &g);
    auto numeric = test::numeric_gradient(
        c.params.data(), [&] { return supervised_loss(c.params, c.positives, c.negatives, c.config.n_neg); });
    std::vector<double> a(g.data().begin(), g.data().end());
    CHECK(test::max_relative_error(a, numeric) < 1e-4);
  }
}

TEST_CASE("fixed-batch descent does not increase the loss") {
  Rng rng(8);
  for (int trial = 0; trial < 5; ++trial) {
    auto c = random_estep_case(rng);
    for (double& x : c.params.data()) x /= 3.0;
    auto batch = all_groundings(c.store);
    auto w = toy_rule_weights(c.toy);
    double prev = std::numeric_limits<double>::infinity();
    for (int step = 0; step < 50; ++step) {
      GradientBuffer g(c.params.layout());
      double loss = e_step_loss(c.params, c.store, batch, c.positives, c.negatives, w, c.config, &g).total;
      CHECK(loss <= prev + 1e-6);
      prev = loss;
      apply_gradient(c.params, g, 1e-3);
    }
  }
}

TEST_CASE("e_step_epoch: zero learning rate and determinism") {
  auto kg = load_dataset(std::filesystem::path(NPLL_SOURCE_DIR) / "data" / "umls");
  auto rules = filter_by_confidence(parse_rules(std::filesystem::path(NPLL_SOURCE_DIR) / "data" / "umls" / "rules.txt", kg), 0.9);
  auto store = ground_rules(rules, kg);
  auto weights = initial_weights(rules);
  TrainConfig config;
  config.fact_batch_size = 1024;
  config.batch_size = 16;

  Rng init(1);
  auto params = init_params(kg, 8, 2, init);
  auto before = params;
  Rng rng(7);
  auto rep = e_step_epoch(params, store, kg, weights, config, 0.0, rng);
  CHECK(params == before);
  CHECK(rep.batches == (kg.observed().size() + 1023) / 1024);
  CHECK(std::isfinite(rep.mean_loss));

  auto run = [&] {
    ScoringParams p = before;
    Rng r(11);
    std::vector<double> losses;
    for (int e = 0; e < 3; ++e) losses.push_back(e_step_epoch(p, store, kg, weights, config, 0.01, r).mean_loss);
    return std::make_pair(losses, p);
  };
  auto a = run();
  auto b = run();
  CHECK(a.first == b.first);
  CHECK(a.second == b.second);
  CHECK_FALSE(a.second == before);
}

TEST_CASE("e_step_epoch: weight decay alone shrinks every parameter") {
  auto kg = load_dataset(std::filesystem::path(NPLL_SOURCE_DIR) / "data" / "umls");
  auto store = ground_rules(std::vector<Rule>{}, kg);
  TrainConfig config;
  config.fact_batch_size = 2048;
  config.lambda_sup = 0.0;
  config.weight_decay = 0.5;

  Rng init(3);
  auto params = init_params(kg, 4, 2, init);
  auto expect = params;
  Rng rng(5);
  auto rep = e_step_epoch(params, store, kg, RuleWeights{}, config, 0.1, rng);
  REQUIRE(rep.batches == 3);
  for (std::size_t b = 0; b < rep.batches; ++b) {
    for (double& x : expect.data()) x *= 1.0 - 0.1 * 0.5;
  }
  CHECK(params == expect);
}

TEST_CASE("pseudo_likelihood: single grounding with zero weight") {
  auto store = single_grounding(3, {0, 1});
  PosteriorTable probs(store);
  CHECK(pseudo_likelihood(2, store, probs, RuleWeights{0.0}) == 0.5);
  CHECK(pseudo_likelihood(2, store, probs, RuleWeights{1.5}) == doctest::Approx(logistic(1.5)));
  CHECK_THROWS_AS(pseudo_likelihood(0, store, probs, RuleWeights{0.0}), ContractViolation);
}

TEST_CASE("pseudo_likelihood: empty blanket is a contract violation") {
  ToyMln toy;
  toy.num_atoms = 3;
  toy.observed = {1, 0, 0};
  toy.groundings = {{0, 1.0, {0}, 1}};  // atom 2 is in no grounding
  auto store = toy_to_store(toy);
  PosteriorTable probs(store);
  CHECK_THROWS_AS(pseudo_likelihood(2, store, probs, RuleWeights{1.0}), ContractViolation);
  CHECK_NOTHROW(pseudo_likelihood(1, store, probs, RuleWeights{1.0}));
}

TEST_CASE("pseudo_likelihood equals the exact conditional") {
  Rng rng(61);
  for (int trial = 0; trial < 40; ++trial) {
    auto toy = random_toy(rng);
    auto store = toy_to_store(toy);
    auto q = random_q(rng, store.num_latent());
    auto probs = table_from(store, q);
    auto w = toy_rule_weights(toy);

    // Other atoms at the MAP of q; observed atoms true.
    std::vector<std::uint8_t> assignment(toy.observed.begin(), toy.observed.end());
    for (std::size_t i = 0; i < q.size(); ++i) assignment[static_cast<std::size_t>(store.latent_atoms()[i])] = q[i] >= 0.5;
    for (AtomId k : store.latent_atoms()) {
      if (store.blanket(k).empty()) continue;
      double pl = pseudo_likelihood(k, store, probs, w, true);
      CHECK(pl == doctest::Approx(exact_conditional(toy, k, assignment)).epsilon(1e-12));
    }

    // With every other atom observed, soft and hard blankets coincide.
    for (AtomId k : store.latent_atoms()) {
      if (store.blanket(k).empty()) continue;
      ToyMln alone = toy;
      for (int i = 0; i < alone.num_atoms; ++i) alone.observed[static_cast<std::size_t>(i)] = i != k;
      auto s1 = toy_to_store(alone);
      PosteriorTable p1(s1);
      std::vector<std::uint8_t> all_true(static_cast<std::size_t>(alone.num_atoms), 1);
      CHECK(pseudo_likelihood(k, s1, p1, w) == doctest::Approx(exact_conditional(alone, k, all_true)).epsilon(1e-12));
    }
  }
}

TEST_CASE("m_step: stationary point") {
  auto store = single_grounding(2, {0});
  PosteriorTable probs(store);
  probs.set(1, logistic(0.7));
  TrainConfig config;
  auto w = m_step(store, probs, RuleWeights{0.7}, config, 0.5);
  CHECK(std::abs(w[0] - 0.7) < 1e-8);
}

TEST_CASE("m_step: one atom with p = 0.9 drives the weight to log 9") {
  auto store = single_grounding(3, {0, 1});
  PosteriorTable probs(store);
  probs.set(2, 0.9);
  TrainConfig config;
  config.m_steps = 2000;
  auto w = m_step(store, probs, RuleWeights{0.1}, config, 1.0);
  CHECK(w[0] == doctest::Approx(std::log(9.0)).epsilon(1e-8));
  // A few default steps move toward the fixed point.
  config.m_steps = 10;
  auto few = m_step(store, probs, RuleWeights{0.1}, config, 0.1);
  CHECK(few[0] > 0.1);
  CHECK(few[0] < std::log(9.0));
}

TEST_CASE("pseudo-log-likelihood gradient matches central differences") {
  Rng rng(17);
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    auto toy = random_toy(rng);
    auto store = toy_to_store(toy);
    auto probs = table_from(store, random_q(rng, store.num_latent()));
    auto w = toy_rule_weights(toy);
    const bool map = trial % 3 == 0;
    auto analytic = pseudo_log_likelihood_gradient(store, probs, w, map);
    auto numeric = test::numeric_gradient(w, [&] { return pseudo_log_likelihood(store, probs, w, map); });
    worst = std::max(worst, test::max_relative_error(analytic, numeric));
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("m_step raises the pseudo-log-likelihood and leaves weights finite") {
  Rng rng(23);
  for (int trial = 0; trial < 20; ++trial) {
    auto toy = random_toy(rng);
    auto store = toy_to_store(toy);
    auto probs = table_from(store, random_q(rng, store.num_latent()));
    auto w = toy_rule_weights(toy);
    TrainConfig config;
    auto next = m_step(store, probs, w, config, 0.01);
    for (double x : next) CHECK(std::isfinite(x));
    CHECK(pseudo_log_likelihood(store, probs, next) >= pseudo_log_likelihood(store, probs, w) - 1e-12);
  }
}

TEST_CASE("free-logit mean field lowers KL to the exact posterior") {
  Rng rng(2718);
  for (int trial = 0; trial < 20; ++trial) {
    auto toy = random_toy(rng);
    auto store = toy_to_store(toy);
    std::vector<double> logits(store.num_latent(), 0.0);
    auto q_of = [](const std::vector<double>& x) {
      std::vector<double> q;
      for (double v : x) q.push_back(logistic(v));
      return q;
    };
    double start = exact_kl(toy, q_of(logits));
    auto fitted = fit_mean_field(store, toy_rule_weights(toy), logits, 500, 0.2);
    double end = exact_kl(toy, q_of(fitted));
    CHECK(end >= -1e-12);
    CHECK(end <= start + 1e-12);
  }
}

TEST_CASE("train with zero epochs returns the initialisation") {
  auto kg = test::make_kg({{"a", "r", "b"}, {"b", "r", "c"}}, {}, {{"a", "r", "c"}}, {{"c", "r", "a"}});
  auto rules = parse_rules_text("0.9\tr(x,z) <- r(x,y) & r(y,z)\n", kg);
  auto store = ground_rules(rules, kg);
  Rng rng(1);
  auto init = init_params(kg, 4, 2, rng);
  TrainConfig config;
  config.epochs = 0;
  auto result = train(kg, store, initial_weights(rules), init, config);
  CHECK(result.history.empty());
  CHECK(result.params == init);
  CHECK(result.weights == initial_weights(rules));
  CHECK(result.best_epoch == 0);
}

TEST_CASE("train is deterministic and keeps the best-valid model") {
  auto kg = test::make_kg({{"a", "r", "b"}, {"b", "r", "c"}, {"c", "s", "d"}, {"d", "r", "a"}}, {},
                          {{"a", "r", "c"}}, {{"b", "s", "a"}});
  auto rules = parse_rules_text("0.9\tr(x,z) <- r(x,y) & r(y,z)\n0.4\ts(x,y) <- r(y,x)\n", kg);
  auto store = ground_rules(rules, kg);
  Rng rng(1);
  auto init = init_params(kg, 4, 2, rng);
  TrainConfig config;
  config.epochs = 6;
  config.lr0 = 0.05;
  config.patience = 2;
  config.fact_batch_size = 2;
  auto a = train(kg, store, initial_weights(rules), init, config);
  auto b = train(kg, store, initial_weights(rules), init, config);
  REQUIRE(a.history.size() == 6);
  for (std::size_t i = 0; i < a.history.size(); ++i) {
    CHECK(a.history[i].loss == b.history[i].loss);
    CHECK(a.history[i].valid_mrr == b.history[i].valid_mrr);
    CHECK(a.history[i].lr == b.history[i].lr);
  }
  CHECK(a.params == b.params);
  CHECK(a.weights == b.weights);
  double best = 0.0;
  for (const auto& r : a.history) best = std::max(best, r.valid_mrr);
  CHECK(a.best_valid_mrr >= best);
  CHECK(evaluate(a.params, kg, Split::valid).mrr == a.best_valid_mrr);
  // lr never increases and only halves.
  for (std::size_t i = 1; i < a.history.size(); ++i) {
    CHECK((a.history[i].lr == a.history[i - 1].lr || a.history[i].lr == a.history[i - 1].lr / 2));
  }
}

TEST_CASE("training config validation") {
  TrainConfig c;
  CHECK_NOTHROW(c.validate());
  c.lr0 = -1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.batch_size = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.e_steps_per_m_step = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.weight_decay = -0.1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}
