#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "npll/knowledge_graph.hpp"
#include "npll/scoring.hpp"

namespace npll {

struct QueryRank {
  Triple triple;
  Side side = Side::tail;
  double rank = 0.0;  // mean-tie rank, a multiple of 0.5

  /// Rank rounded half-up, for display.
  long reported() const;
};

struct SideMetrics {
  std::size_t queries = 0;
  double mrr = 0.0;
  double hits1 = 0.0;  // percentages
  double hits3 = 0.0;
  double hits10 = 0.0;
};

/// Filtered link-prediction metrics over both corruption sides.
struct RankingReport {
  std::size_t queries = 0;
  bool defined = false;  // false for an empty split
  double mrr = 0.0;
  double hits1 = 0.0;
  double hits3 = 0.0;
  double hits10 = 0.0;
  SideMetrics head;
  SideMetrics tail;
  std::vector<QueryRank> ranks;  // query order: per triple, head side then tail side
};

/// Mean-tie rank of `truth` among candidates not listed in `excluded`:
/// 1 + #{strictly greater} + #{equal, other than truth} / 2.
double filtered_rank(std::span<const double> scores, EntityId truth, std::span<const EntityId> excluded);

/// Fills the raw score of every entity as the missing side of the query.
using CandidateScorer = std::function<void(const Triple& query, Side side, std::span<double> out)>;

CandidateScorer model_scorer(const ScoringParams& params);

/// Rank of the true entity of `query` on `side`, filtering every other
/// triple known in any split.
double rank_query(const ScoringParams& params, const Triple& query, Side side, const KnowledgeGraph& kg);

RankingReport evaluate(const ScoringParams& params, const KnowledgeGraph& kg, Split split, int workers = 1);
RankingReport evaluate_queries(const CandidateScorer& scorer, const KnowledgeGraph& kg,
                               std::span<const Triple> queries, int workers = 1);

/// Aggregates query ranks into a report (order preserved).
RankingReport summarize(std::vector<QueryRank> ranks);

nlohmann::json report_to_json(const RankingReport& report);
std::string format_report_table(const RankingReport& report, const std::string& title);

}  // namespace npll
