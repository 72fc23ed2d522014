#include "npll/evaluator.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <thread>

#include "npll/error.hpp"

namespace npll {

long QueryRank::reported() const { return static_cast<long>(std::floor(rank + 0.5)); }

double filtered_rank(std::span<const double> scores, EntityId truth, std::span<const EntityId> excluded) {
  auto ti = static_cast<std::size_t>(truth);
  if (ti >= scores.size()) throw ContractViolation("true entity out of range");
  std::vector<std::uint8_t> skip(scores.size(), 0);
  for (EntityId e : excluded) {
    if (e != truth) skip[static_cast<std::size_t>(e)] = 1;
  }
  const double target = scores[ti];
  std::size_t greater = 0, equal = 0;
  for (std::size_t e = 0; e < scores.size(); ++e) {
    if (e == ti || skip[e]) continue;
    if (scores[e] > target) {
      ++greater;
    } else if (scores[e] == target) {
      ++equal;
    }
  }
  return 1.0 + static_cast<double>(greater) + static_cast<double>(equal) / 2.0;
}

CandidateScorer model_scorer(const ScoringParams& params) {
  return [&params](const Triple& q, Side side, std::span<double> out) {
    if (side == Side::tail) {
      score_all_tails(params, q.head, q.rel, out);
    } else {
      score_all_heads(params, q.rel, q.tail, out);
    }
  };
}

namespace {

double rank_with(const CandidateScorer& scorer, const Triple& q, Side side, const KnowledgeGraph& kg,
                 std::vector<double>& scores) {
  if (!kg.valid_triple(q) || !kg.contains(q)) {
    throw ContractViolation("ranking query " + kg.to_string(q) + " is not in any split");
  }
  scores.assign(kg.num_entities(), 0.0);
  scorer(q, side, scores);
  for (double s : scores) {
    if (!std::isfinite(s)) throw NumericError("non-finite candidate score for query " + kg.to_string(q));
  }
  if (side == Side::tail) return filtered_rank(scores, q.tail, kg.known_index().tails(q.head, q.rel));
  return filtered_rank(scores, q.head, kg.known_index().heads(q.rel, q.tail));
}

void accumulate(SideMetrics& m, double rank) {
  ++m.queries;
  m.mrr += 1.0 / rank;
  m.hits1 += rank <= 1.0 ? 1.0 : 0.0;
  m.hits3 += rank <= 3.0 ? 1.0 : 0.0;
  m.hits10 += rank <= 10.0 ? 1.0 : 0.0;
}

void finalize(SideMetrics& m) {
  if (m.queries == 0) return;
  auto n = static_cast<double>(m.queries);
  m.mrr /= n;
  m.hits1 = 100.0 * m.hits1 / n;
  m.hits3 = 100.0 * m.hits3 / n;
  m.hits10 = 100.0 * m.hits10 / n;
}

}  // namespace

double rank_query(const ScoringParams& params, const Triple& query, Side side, const KnowledgeGraph& kg) {
  std::vector<double> scores;
  return rank_with(model_scorer(params), query, side, kg, scores);
}

RankingReport summarize(std::vector<QueryRank> ranks) {
  RankingReport r;
  SideMetrics all;
  // Sums run in query order so the result does not depend on threading.
  for (const auto& q : ranks) {
    accumulate(all, q.rank);
    accumulate(q.side == Side::head ? r.head : r.tail, q.rank);
  }
  finalize(all);
  finalize(r.head);
  finalize(r.tail);
  r.queries = all.queries;
  r.defined = all.queries > 0;
  r.mrr = all.mrr;
  r.hits1 = all.hits1;
  r.hits3 = all.hits3;
  r.hits10 = all.hits10;
  r.ranks = std::move(ranks);
  return r;
}

RankingReport evaluate_queries(const CandidateScorer& scorer, const KnowledgeGraph& kg,
                               std::span<const Triple> queries, int workers) {
  std::vector<QueryRank> ranks(queries.size() * 2);
  auto run = [&](std::size_t begin, std::size_t end) {
    std::vector<double> scores;
    for (std::size_t i = begin; i < end; ++i) {
      const Triple& q = queries[i];
      ranks[2 * i] = {q, Side::head, rank_with(scorer, q, Side::head, kg, scores)};
      ranks[2 * i + 1] = {q, Side::tail, rank_with(scorer, q, Side::tail, kg, scores)};
    }
  };
  std::size_t n_workers = std::clamp<std::size_t>(static_cast<std::size_t>(std::max(workers, 1)), 1, queries.size() ? queries.size() : 1);
  if (n_workers == 1) {
    run(0, queries.size());
  } else {
    std::vector<std::thread> threads;
    std::vector<std::exception_ptr> errors(n_workers);
    std::size_t chunk = (queries.size() + n_workers - 1) / n_workers;
    for (std::size_t w = 0; w < n_workers; ++w) {
      std::size_t begin = std::min(queries.size(), w * chunk);
      std::size_t end = std::min(queries.size(), begin + chunk);
      threads.emplace_back([&, w, begin, end] {
        try {
          run(begin, end);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    for (auto& t : threads) t.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }
  return summarize(std::move(ranks));
}

RankingReport evaluate(const ScoringParams& params, const KnowledgeGraph& kg, Split split, int workers) {
  return evaluate_queries(model_scorer(params), kg, kg.split(split), workers);
}

nlohmann::json report_to_json(const RankingReport& r) {
  auto metric = [&](double v) { return r.defined ? nlohmann::json(v) : nlohmann::json(nullptr); };
  auto side = [](const SideMetrics& m) {
    if (m.queries == 0) return nlohmann::json{{"queries", 0}};
    return nlohmann::json{{"queries", m.queries}, {"mrr", m.mrr}, {"hits1", m.hits1}, {"hits3", m.hits3},
                          {"hits10", m.hits10}};
  };
  return {
      {"queries", r.queries}, {"defined", r.defined},  {"mrr", metric(r.mrr)},
      {"hits1", metric(r.hits1)}, {"hits3", metric(r.hits3)}, {"hits10", metric(r.hits10)},
      {"head", side(r.head)}, {"tail", side(r.tail)},
  };
}

std::string format_report_table(const RankingReport& r, const std::string& title) {
  std::ostringstream os;
  char line[160];
  os << title << " (" << r.queries << " queries)\n";
  if (!r.defined) {
    os << "  no queries: metrics undefined\n";
    return os.str();
  }
  std::snprintf(line, sizeof line, "  %-6s %8s %8s %8s %8s\n", "side", "MRR", "Hit@10", "Hit@3", "Hit@1");
  os << line;
  auto row = [&](const char* name, double mrr, double h10, double h3, double h1) {
    std::snprintf(line, sizeof line, "  %-6s %8.4f %8.2f %8.2f %8.2f\n", name, mrr, h10, h3, h1);
    os << line;
  };
  row("both", r.mrr, r.hits10, r.hits3, r.hits1);
  if (r.head.queries) row("head", r.head.mrr, r.head.hits10, r.head.hits3, r.head.hits1);
  if (r.tail.queries) row("tail", r.tail.mrr, r.tail.hits10, r.tail.hits3, r.tail.hits1);
  return os.str();
}

}  // namespace npll
