#include "npll/commands.hpp"

#include <chrono>
#include <fstream>
#include <ostream>

#include "npll/checkpoint.hpp"
#include "npll/grounding.hpp"
#include "npll/oracle.hpp"
#include "npll/rules.hpp"
#include "npll/scoring.hpp"

namespace npll {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::ofstream open_output(const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw Error(ErrorKind::data, "cannot write " + path.string());
  return f;
}

void write_json(const std::filesystem::path& path, const nlohmann::json& j) { open_output(path) << j.dump(2) << '\n'; }

std::vector<Rule> load_filtered_rules(const RunConfig& config, const KnowledgeGraph& kg, RuleParseStats* stats) {
  if (config.rules.empty()) throw ConfigError("config key 'rules' is required");
  auto all = parse_rules(config.rules, kg, stats);
  return filter_by_confidence(all, config.alpha);
}

KnowledgeGraph load_configured_dataset(const RunConfig& config) {
  if (config.dataset.empty()) throw ConfigError("config key 'dataset' is required");
  return load_dataset(config.dataset);
}

// Offset keeps the initialisation stream apart from the training stream.
constexpr std::uint64_t kInitSeedOffset = 0x9e3779b97f4a7c15ULL;

}  // namespace

Split parse_split(const std::string& name) {
  for (Split s : kAllSplits) {
    if (name == split_name(s)) return s;
  }
  throw ConfigError("unknown split '" + name + "' (expected facts, train, valid or test)");
}

FilterSummary cmd_filter_rules(const RunConfig& config, const std::filesystem::path& destination, std::ostream& out) {
  auto kg = load_configured_dataset(config);
  RuleParseStats stats;
  auto all = parse_rules(config.rules, kg, &stats);
  auto kept = filter_by_confidence(all, config.alpha);

  FilterSummary s;
  s.read = stats.lines;
  s.self_reflective = stats.self_reflective;
  s.duplicates = stats.duplicates;
  s.retained = kept.size();
  s.dropped = all.size() - kept.size();

  auto f = open_output(destination);
  f << "# rules with confidence > " << config.alpha << '\n';
  for (const auto& r : kept) f << format_rule(r, kg) << '\n';

  out << "read " << s.read << " rules: " << s.self_reflective << " self-reflective, " << s.duplicates
      << " duplicates removed\n";
  out << "alpha " << config.alpha << ": retained " << s.retained << ", dropped " << s.dropped << '\n';
  if (s.retained == 0) out << "warning: no rule passes the confidence threshold\n";
  return s;
}

nlohmann::json cmd_ground(const RunConfig& config, std::ostream& out) {
  auto kg = load_configured_dataset(config);
  auto rules = load_filtered_rules(config, kg, nullptr);
  auto start = Clock::now();
  auto store = ground_rules(rules, kg, config.grounding);
  nlohmann::json j = {
      {"num_ground_rules", store.num_ground_rules()},
      {"num_latent_atoms", store.num_latent()},
      {"per_rule_grounding_counts", store.groundings_per_rule()},
  };
  out << "grounded " << rules.size() << " rules: " << store.num_ground_rules() << " ground rules, "
      << store.num_latent() << " latent atoms (" << seconds_since(start) << " s)\n";
  std::filesystem::create_directories(config.output);
  write_json(config.output / "grounding.json", j);
  return j;
}

TrainOutcome cmd_train(const RunConfig& config, std::ostream& out) {
  config.validate();
  auto kg = load_configured_dataset(config);
  auto rules = load_filtered_rules(config, kg, nullptr);
  std::filesystem::create_directories(config.output);
  open_output(config.output / "config.toml") << config.to_text();

  TrainOutcome outcome;
  auto start = Clock::now();
  auto store = ground_rules(rules, kg, config.grounding);
  outcome.grounding_seconds = seconds_since(start);
  out << "entities " << kg.num_entities() << ", relations " << kg.num_relations() << ", rules " << rules.size()
      << ", ground rules " << store.num_ground_rules() << ", latent atoms " << store.num_latent() << '\n';

  Rng init_rng(config.seed() ^ kInitSeedOffset);
  auto init = init_params(kg, config.dim, config.slices, init_rng);

  auto history = open_output(config.output / "history.jsonl");
  auto timings = open_output(config.output / "timings.jsonl");
  start = Clock::now();
  outcome.result = train(kg, store, initial_weights(rules), init, config.train, [&](const EpochRecord& r) {
    // Wall time lives in its own file so the history is reproducible byte for byte.
    auto rec = epoch_record_json(r);
    rec.erase("wall_seconds");
    history << rec.dump() << '\n' << std::flush;
    timings << nlohmann::json{{"epoch", r.epoch}, {"wall_seconds", r.wall_seconds}}.dump() << '\n' << std::flush;
    char line[160];
    std::snprintf(line, sizeof line, "epoch %4d  loss %.6f  valid MRR %.4f  lr %.3g  %.1fs\n", r.epoch, r.loss,
                  r.valid_mrr, r.lr, r.wall_seconds);
    out << line << std::flush;
  });
  outcome.training_seconds = seconds_since(start);

  const auto& params = outcome.result.params;
  save_checkpoint(config.output / "checkpoint.npll", params, kg.dictionary_hash());
  {
    auto f = open_output(config.output / "rule_weights.tsv");
    f << "rule_id\tweight\tconfidence\trule\n";
    for (std::size_t i = 0; i < rules.size(); ++i) {
      auto text = format_rule(rules[i], kg);
      f << rules[i].id << '\t' << nlohmann::json(outcome.result.weights[i]).dump() << '\t'
        << nlohmann::json(rules[i].confidence).dump() << '\t' << text.substr(text.find('\t') + 1) << '\n';
    }
  }

  outcome.valid = evaluate(params, kg, Split::valid, config.train.workers);
  outcome.test = evaluate(params, kg, Split::test, config.train.workers);
  write_json(config.output / "valid_report.json", report_to_json(outcome.valid));
  write_json(config.output / "test_report.json", report_to_json(outcome.test));
  out << "best epoch " << outcome.result.best_epoch << '\n';
  out << format_report_table(outcome.valid, "valid") << format_report_table(outcome.test, "test");
  return outcome;
}

RankingReport cmd_eval(const std::filesystem::path& checkpoint, const std::filesystem::path& dataset, Split split,
                       int workers, const std::optional<std::filesystem::path>& ranks_tsv, std::ostream& out) {
  auto ck = load_checkpoint(checkpoint);
  auto kg = load_dataset(dataset);
  if (ck.dictionary_hash != kg.dictionary_hash()) {
    throw IntegrityError("checkpoint dictionary hash " + hash_hex(ck.dictionary_hash) +
                         " does not match dataset dictionary hash " + hash_hex(kg.dictionary_hash()));
  }
  if (ck.params.num_entities() != kg.num_entities() || ck.params.num_relations() != kg.num_relations()) {
    throw IntegrityError("checkpoint shape does not match the dataset");
  }
  auto report = evaluate(ck.params, kg, split, workers);
  out << format_report_table(report, split_name(split));
  if (ranks_tsv) {
    auto f = open_output(*ranks_tsv);
    f << "head\trelation\ttail\tside\trank\n";
    for (const auto& q : report.ranks) {
      f << kg.entities().name(q.triple.head) << '\t' << kg.relations().name(q.triple.rel) << '\t'
        << kg.entities().name(q.triple.tail) << '\t' << (q.side == Side::head ? "head" : "tail") << '\t' << q.rank << '\n';
    }
  }
  return report;
}

nlohmann::json cmd_oracle(const std::filesystem::path& toy_path, std::ostream& out) {
  auto toy = load_toy(toy_path);
  auto latent = toy.latent();
  auto posterior = exact_posterior(toy);
  std::vector<double> uniform(latent.size(), 0.5);
  auto bound = exact_elbo_and_kl(toy, uniform);
  nlohmann::json marginals = nlohmann::json::object();
  for (std::size_t i = 0; i < latent.size(); ++i) marginals[std::to_string(latent[i])] = posterior[i];
  nlohmann::json j = {
      {"latent_atoms", latent.size()},
      {"log_partition", exact_log_partition(toy)},
      {"joint_log_partition", exact_joint_log_partition(toy)},
      {"posterior", marginals},
      {"uniform_q", {{"elbo", bound.elbo}, {"kl", bound.kl}, {"log_evidence", bound.log_evidence}}},
  };
  out << "latent atoms " << latent.size() << ", log Z " << j["log_partition"].get<double>() << '\n';
  for (std::size_t i = 0; i < latent.size(); ++i) out << "  P(atom " << latent[i] << ") = " << posterior[i] << '\n';
  return j;
}

nlohmann::json error_json(const Error& e) {
  nlohmann::json j = {{"error", to_string(e.kind())}, {"message", e.what()}, {"exit_code", e.exit_code()}};
  if (const auto* p = dynamic_cast<const ParseError*>(&e)) j["line"] = p->line();
  return j;
}

}  // namespace npll
