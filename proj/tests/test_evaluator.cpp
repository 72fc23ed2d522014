#include <map>

#include "doctest.h"
#include "npll/error.hpp"
#include "npll/evaluator.hpp"
#include "support.hpp"

using namespace npll;
using npll::test::make_kg;

namespace {

/// Scores looked up from a (head, tail) table; one relation.
CandidateScorer table_scorer(const std::vector<std::vector<double>>& s,
                             const std::function<double(double)>& transform = [](double x) { return x; }) {
  return [s, transform](const Triple& q, Side side, std::span<double> out) {
    for (std::size_t e = 0; e < out.size(); ++e) {
      out[e] = transform(side == Side::tail ? s[static_cast<std::size_t>(q.head)][e]
                                            : s[e][static_cast<std::size_t>(q.tail)]);
    }
  };
}

// The two `s` facts fix the ids a, b, c, d = 0..3; they never filter `r` queries.
const test::Rows kPrefix = {{"a", "s", "b"}, {"c", "s", "d"}};

test::Rows with_prefix(test::Rows rows) {
  rows.insert(rows.begin(), kPrefix.begin(), kPrefix.end());
  return rows;
}

KnowledgeGraph fixture() {
  return make_kg(with_prefix({{"a", "r", "c"}, {"c", "r", "d"}, {"b", "r", "b"}}), {}, {}, {{"a", "r", "b"}});
}

//          a    b    c    d   (tail)
const std::vector<std::vector<double>> kScores = {
    {0.1, 0.5, 0.9, 0.5},   // a
    {0.3, 0.7, 0.2, 0.0},   // b
    {0.6, 0.7, 0.4, 0.8},   // c
    {0.0, 0.2, 0.1, 0.3}};  // d

}  // namespace

TEST_CASE("filtered_rank basics") {
  std::vector<double> s{0.2, 0.9, 0.1};
  CHECK(filtered_rank(s, 1, {}) == 1.0);
  CHECK(filtered_rank(s, 0, {}) == 2.0);
  std::vector<EntityId> ex{1};
  CHECK(filtered_rank(s, 0, ex) == 1.0);
  // The truth is never filtered out.
  std::vector<EntityId> self{0, 1};
  CHECK(filtered_rank(s, 0, self) == 1.0);
  std::vector<double> flat(7, 0.25);
  CHECK(filtered_rank(flat, 3, {}) == 4.0);  // (N + 1) / 2
  std::vector<double> four(4, 1.0);
  CHECK(filtered_rank(four, 0, {}) == 2.5);
  CHECK_THROWS_AS(filtered_rank(s, 3, {}), ContractViolation);
}

TEST_CASE("4-entity fixture: hand-computed ranks with ties and filtering") {
  auto kg = fixture();
  auto test_split = kg.split(Split::test);
  auto report = evaluate_queries(table_scorer(kScores), kg, test_split);
  REQUIRE(report.ranks.size() == 2);

  // Head side (?, r, b): column b = {0.5, 0.7, 0.7, 0.2}. The true head a
  // (0.5) is beaten by b and c; (b, r, b) is known and filtered, leaving c.
  CHECK(report.ranks[0].side == Side::head);
  CHECK(report.ranks[0].rank == 2.0);
  // Tail side (a, r, ?): row a = {0.1, 0.5, 0.9, 0.5}. c is filtered by
  // (a, r, c); d ties with the truth.
  CHECK(report.ranks[1].side == Side::tail);
  CHECK(report.ranks[1].rank == 1.5);
  CHECK(report.ranks[1].reported() == 2);

  CHECK(report.mrr == (1.0 / 2.0 + 1.0 / 1.5) / 2.0);
  CHECK(report.hits1 == 0.0);
  CHECK(report.hits3 == 100.0);
  CHECK(report.hits10 == 100.0);
  CHECK(report.head.mrr == 0.5);
  CHECK(report.tail.mrr == 1.0 / 1.5);

  // The same queries without the filtering facts.
  auto raw = make_kg(with_prefix({{"c", "r", "d"}, {"d", "r", "a"}}), {}, {}, {{"a", "r", "b"}});
  auto unfiltered = evaluate_queries(table_scorer(kScores), raw, raw.split(Split::test));
  CHECK(unfiltered.ranks[0].rank == 3.0);
  CHECK(unfiltered.ranks[1].rank == 2.5);
  CHECK(unfiltered.ranks[1].reported() == 3);
}

TEST_CASE("4-entity fixture: several test triples") {
  auto kg = make_kg(with_prefix({{"a", "r", "c"}, {"c", "r", "d"}, {"b", "r", "b"}}), {}, {{"d", "r", "d"}},
                    {{"a", "r", "b"}, {"c", "r", "a"}, {"d", "r", "b"}});
  auto report = evaluate_queries(table_scorer(kScores), kg, kg.split(Split::test));
  // (c,r,a) head: column a = {0.1,0.3,0.6,0.0}, c highest -> 1.
  //           tail: row c = {0.6,0.7,0.4,0.8}, d is known (c,r,d), b beats a -> 2.
  // (d,r,b) head: column b = {0.5,0.7,0.7,0.2}, b and the test triple
  //           (a,r,b) filtered, c beats d -> 2.
  //           tail: row d = {0.0,0.2,0.1,0.3}, d filtered by valid (d,r,d) -> 1.
  std::vector<double> expect{2.0, 1.5, 1.0, 2.0, 2.0, 1.0};
  REQUIRE(report.ranks.size() == expect.size());
  for (std::size_t i = 0; i < expect.size(); ++i) CHECK(report.ranks[i].rank == expect[i]);
  double mrr = 0.0;
  for (double r : expect) mrr += 1.0 / r;
  CHECK(report.mrr == doctest::Approx(mrr / 6.0).epsilon(1e-15));
  CHECK(report.hits1 == doctest::Approx(200.0 / 6.0));
  CHECK(report.hits3 == 100.0);
}

TEST_CASE("reciprocal ranks 1, 1/2, 1/4, 1/10") {
  std::vector<QueryRank> ranks;
  for (double r : {1.0, 2.0, 4.0, 10.0}) ranks.push_back({Triple{0, 0, 0}, Side::tail, r});
  auto report = summarize(ranks);
  CHECK(report.mrr == doctest::Approx(0.4625).epsilon(1e-15));
  CHECK(report.hits1 == 25.0);
  CHECK(report.hits3 == 50.0);  // ranks 1 and 2
  CHECK(report.hits10 == 100.0);
  CHECK(report.defined);
}

TEST_CASE("perfect model gives MRR 1") {
  auto kg = fixture();
  std::vector<std::vector<double>> s(4, std::vector<double>(4, 0.0));
  s[0][1] = 1.0;
  auto report = evaluate_queries(table_scorer(s), kg, kg.split(Split::test));
  CHECK(report.mrr == 1.0);
  CHECK(report.hits1 == 100.0);
  CHECK(report.hits10 == 100.0);
}

TEST_CASE("empty split gives an undefined report") {
  auto kg = make_kg({{"a", "r", "b"}});
  Rng rng(1);
  auto p = init_params(kg, 4, 2, rng);
  auto report = evaluate(p, kg, Split::test);
  CHECK(report.queries == 0);
  CHECK_FALSE(report.defined);
  CHECK(report_to_json(report)["mrr"].is_null());
}

TEST_CASE("query outside every split is rejected") {
  auto kg = fixture();
  Rng rng(1);
  auto p = init_params(kg, 4, 2, rng);
  CHECK_THROWS_AS(rank_query(p, Triple{3, 1, 0}, Side::tail, kg), ContractViolation);
  CHECK_NOTHROW(rank_query(p, Triple{0, 1, 1}, Side::tail, kg));
}

namespace {

KnowledgeGraph random_graph(Rng& rng, int entities, int relations, int n_facts, int n_test) {
  std::uniform_int_distribution<int> e(0, entities - 1), r(0, relations - 1);
  test::Rows facts, tests;
  auto row = [&] {
    return std::make_tuple("e" + std::to_string(e(rng)), "r" + std::to_string(r(rng)), "e" + std::to_string(e(rng)));
  };
  for (int i = 0; i < entities; ++i) facts.emplace_back("e" + std::to_string(i), "r0", "e" + std::to_string((i + 1) % entities));
  for (int i = 0; i < n_facts; ++i) facts.push_back(row());
  for (int i = 0; i < n_test; ++i) tests.push_back(row());
  return make_kg(facts, {}, {}, tests);
}

}  // namespace

TEST_CASE("strictly increasing score transforms leave the report unchanged") {
  Rng rng(55);
  for (int trial = 0; trial < 10; ++trial) {
    auto kg = random_graph(rng, 12, 3, 40, 15);
    // Scores on a coarse grid so ties occur and no transform can merge values.
    std::uniform_int_distribution<int> level(0, 6);
    std::vector<std::vector<double>> s(12, std::vector<double>(12));
    for (auto& row : s) {
      for (double& x : row) x = 0.25 * level(rng);
    }
    auto base = evaluate_queries(table_scorer(s), kg, kg.split(Split::test));
    for (const auto& f : std::vector<std::function<double(double)>>{
             [](double x) { return std::exp(3 * x); }, [](double x) { return 2 * x - 7; },
             [](double x) { return logistic(x); }, [](double x) { return x * x * x; }}) {
      auto t = evaluate_queries(table_scorer(s, f), kg, kg.split(Split::test));
      REQUIRE(t.ranks.size() == base.ranks.size());
      for (std::size_t i = 0; i < t.ranks.size(); ++i) CHECK(t.ranks[i].rank == base.ranks[i].rank);
      CHECK(t.mrr == base.mrr);
      CHECK(t.hits1 == base.hits1);
      CHECK(t.hits3 == base.hits3);
      CHECK(t.hits10 == base.hits10);
    }
  }
}

TEST_CASE("model ranks: raw scores and probabilities agree") {
  auto kg = load_dataset(std::filesystem::path(NPLL_SOURCE_DIR) / "data" / "umls");
  Rng rng(3);
  auto p = init_params(kg, 16, 4, rng);
  std::vector<Triple> some(kg.split(Split::test).begin(), kg.split(Split::test).begin() + 50);
  auto raw = evaluate_queries(model_scorer(p), kg, some);
  auto prob = evaluate_queries(
      [&](const Triple& q, Side side, std::span<double> out) {
        model_scorer(p)(q, side, out);
        for (double& x : out) x = logistic(x);
      },
      kg, some);
  for (std::size_t i = 0; i < raw.ranks.size(); ++i) CHECK(raw.ranks[i].rank == prob.ranks[i].rank);
  for (std::size_t i = 0; i < some.size(); ++i) {
    CHECK(raw.ranks[2 * i + 1].rank == rank_query(p, some[i], Side::tail, kg));
  }
}

TEST_CASE("test-file line order does not change the report") {
  Rng rng(8);
  auto kg = random_graph(rng, 10, 2, 30, 20);
  std::vector<std::vector<double>> s(10, std::vector<double>(10));
  std::uniform_real_distribution<double> u;
  for (auto& row : s) {
    for (double& x : row) x = u(rng);
  }
  std::vector<Triple> q(kg.split(Split::test).begin(), kg.split(Split::test).end());
  auto a = evaluate_queries(table_scorer(s), kg, q);
  std::reverse(q.begin(), q.end());
  std::shuffle(q.begin(), q.end(), rng);
  auto b = evaluate_queries(table_scorer(s), kg, q);
  CHECK(a.mrr == doctest::Approx(b.mrr).epsilon(1e-14));
  CHECK(a.hits1 == b.hits1);
  CHECK(a.hits3 == b.hits3);
  CHECK(a.hits10 == b.hits10);
  std::vector<double> ra, rb;
  for (const auto& r : a.ranks) ra.push_back(r.rank);
  for (const auto& r : b.ranks) rb.push_back(r.rank);
  std::sort(ra.begin(), ra.end());
  std::sort(rb.begin(), rb.end());
  CHECK(ra == rb);
}

TEST_CASE("a known-true competitor can only improve a rank") {
  Rng rng(19);
  for (int trial = 0; trial < 20; ++trial) {
    auto kg = random_graph(rng, 8, 2, 10, 5);
    std::vector<std::vector<double>> s(8, std::vector<double>(8));
    std::uniform_real_distribution<double> u;
    for (auto& row : s) {
      for (double& x : row) x = u(rng);
    }
    auto before = evaluate_queries(table_scorer(s), kg, kg.split(Split::test));

    // Add one more fact to a copy of the graph and rank the same queries.
    KnowledgeGraph::Builder b;
    for (Split sp : kAllSplits) {
      for (const Triple& t : kg.split(sp)) b.add(sp, kg.entities().name(t.head), kg.relations().name(t.rel), kg.entities().name(t.tail));
    }
    std::uniform_int_distribution<int> e(0, 7);
    b.add(Split::facts, "e" + std::to_string(e(rng)), "r0", "e" + std::to_string(e(rng)));
    auto bigger = std::move(b).build();
    REQUIRE(bigger.entities().names() == kg.entities().names());
    auto after = evaluate_queries(table_scorer(s), bigger, kg.split(Split::test));
    for (std::size_t i = 0; i < before.ranks.size(); ++i) CHECK(after.ranks[i].rank <= before.ranks[i].rank);
  }
}

TEST_CASE("threaded evaluation equals serial") {
  auto kg = load_dataset(std::filesystem::path(NPLL_SOURCE_DIR) / "data" / "umls");
  Rng rng(4);
  auto p = init_params(kg, 8, 2, rng);
  auto serial = evaluate(p, kg, Split::valid, 1);
  auto threaded = evaluate(p, kg, Split::valid, 3);
  CHECK(serial.mrr == threaded.mrr);
  CHECK(serial.hits10 == threaded.hits10);
  REQUIRE(serial.ranks.size() == threaded.ranks.size());
  for (std::size_t i = 0; i < serial.ranks.size(); ++i) CHECK(serial.ranks[i].rank == threaded.ranks[i].rank);
  CHECK(serial.queries == 2 * kg.split(Split::valid).size());
  CHECK(serial.hits1 <= serial.hits3);
  CHECK(serial.hits3 <= serial.hits10);
  CHECK(serial.mrr > 0.0);
  CHECK(serial.mrr <= 1.0);
}
