// npll: rule filtering, grounding, training, evaluation and toy-oracle runs.

#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "npll/commands.hpp"

namespace {

struct ConfigFlags {
  std::string file;
  std::vector<std::string> sets;
  std::map<std::string, std::string> keys;
};

// Every config key doubles as a --key flag; --set key=value works too.
void add_config_flags(CLI::App* cmd, ConfigFlags& flags) {
  cmd->add_option("-c,--config", flags.file, "config file (key = value lines)");
  cmd->add_option("--set", flags.sets, "override, key=value (repeatable)");
  for (const auto& key : npll::config_keys()) {
    cmd->add_option("--" + key, flags.keys[key], "config key '" + key + "'");
  }
}

npll::RunConfig resolve(CLI::App* cmd, const ConfigFlags& flags) {
  std::vector<std::string> overrides;
  for (const auto& key : npll::config_keys()) {
    if (cmd->count("--" + key) > 0) overrides.push_back(key + "=" + flags.keys.at(key));
  }
  overrides.insert(overrides.end(), flags.sets.begin(), flags.sets.end());
  return npll::load_config(flags.file, overrides);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Neural-scored Markov logic for knowledge graph completion"};
  app.require_subcommand(1);

  ConfigFlags filter_flags, ground_flags, train_flags;
  std::string filtered_out;
  auto* filter = app.add_subcommand("filter-rules", "drop rules at or below the confidence threshold");
  add_config_flags(filter, filter_flags);
  filter->add_option("--out", filtered_out, "destination rule file (default <output>/rules.filtered.txt)");

  auto* ground = app.add_subcommand("ground", "ground the rules and report store sizes");
  add_config_flags(ground, ground_flags);

  auto* train = app.add_subcommand("train", "ground, train and evaluate");
  add_config_flags(train, train_flags);

  std::string checkpoint, dataset, split = "test", ranks_tsv, report_path;
  int workers = 1;
  auto* eval = app.add_subcommand("eval", "filtered ranking evaluation of a checkpoint");
  eval->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  eval->add_option("--dataset", dataset, "dataset directory")->required();
  eval->add_option("--split", split, "facts, train, valid or test");
  eval->add_option("--workers", workers, "evaluation threads");
  eval->add_option("--ranks-tsv", ranks_tsv, "write per-query ranks");
  eval->add_option("--report", report_path, "write the JSON report here instead of stdout");

  std::string toy;
  auto* oracle = app.add_subcommand("oracle", "exact enumeration of a toy MLN");
  oracle->add_option("--toy", toy, "toy MLN JSON file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : static_cast<int>(npll::ErrorKind::config);
  }

  try {
    if (*filter) {
      auto cfg = resolve(filter, filter_flags);
      std::filesystem::path dest = filtered_out.empty() ? cfg.output / "rules.filtered.txt" : std::filesystem::path(filtered_out);
      if (dest.has_parent_path()) std::filesystem::create_directories(dest.parent_path());
      npll::cmd_filter_rules(cfg, dest, std::cout);
    } else if (*ground) {
      auto j = npll::cmd_ground(resolve(ground, ground_flags), std::cerr);
      std::cout << j.dump() << '\n';
    } else if (*train) {
      npll::cmd_train(resolve(train, train_flags), std::cout);
    } else if (*eval) {
      std::optional<std::filesystem::path> tsv;
      if (!ranks_tsv.empty()) tsv = ranks_tsv;
      auto report = npll::cmd_eval(checkpoint, dataset, npll::parse_split(split), workers, tsv, std::cout);
      auto j = npll::report_to_json(report).dump(2);
      if (report_path.empty()) {
        std::cout << j << '\n';
      } else {
        std::ofstream(report_path) << j << '\n';
      }
    } else if (*oracle) {
      auto j = npll::cmd_oracle(toy, std::cerr);
      std::cout << j.dump(2) << '\n';
    }
  } catch (const npll::Error& e) {
    std::cerr << npll::error_json(e).dump() << '\n';
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << nlohmann::json{{"error", "internal"}, {"message", e.what()}, {"exit_code", 1}}.dump() << '\n';
    return 1;
  }
  return 0;
}
