#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>

#include "json.hpp"
#include "npll/config.hpp"
#include "npll/error.hpp"
#include "npll/evaluator.hpp"
#include "npll/variational_em.hpp"

namespace npll {

// Pipeline entry points behind the command-line subcommands. Human-readable
// output goes to `out`; machine-readable results are returned and written to
// the output directory.

struct FilterSummary {
  std::size_t read = 0;
  std::size_t self_reflective = 0;
  std::size_t duplicates = 0;
  std::size_t retained = 0;
  std::size_t dropped = 0;  // below the confidence threshold
};

/// Writes the retained rules, in input syntax, to `destination`.
FilterSummary cmd_filter_rules(const RunConfig& config, const std::filesystem::path& destination, std::ostream& out);

/// {num_ground_rules, num_latent_atoms, per_rule_grounding_counts}
nlohmann::json cmd_ground(const RunConfig& config, std::ostream& out);

struct TrainOutcome {
  TrainResult result;
  RankingReport valid;
  RankingReport test;
  double grounding_seconds = 0.0;
  double training_seconds = 0.0;
};

/// Grounds, trains and evaluates. Writes into config.output: config.toml
/// (effective config), checkpoint.npll, rule_weights.tsv, history.jsonl,
/// timings.jsonl, valid_report.json, test_report.json.
TrainOutcome cmd_train(const RunConfig& config, std::ostream& out);

/// Refuses (IntegrityError) when the checkpoint was trained on a different
/// dictionary. Optionally writes per-query ranks as TSV.
RankingReport cmd_eval(const std::filesystem::path& checkpoint, const std::filesystem::path& dataset, Split split,
                       int workers, const std::optional<std::filesystem::path>& ranks_tsv, std::ostream& out);

/// Exact quantities of a toy MLN file: log Z, posterior marginals, and the
/// ELBO and KL of the uniform q.
nlohmann::json cmd_oracle(const std::filesystem::path& toy, std::ostream& out);

nlohmann::json error_json(const Error& e);

Split parse_split(const std::string& name);

}  // namespace npll
