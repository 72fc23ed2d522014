#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "npll/grounding.hpp"
#include "npll/variational_em.hpp"

namespace npll {

/// Everything a pipeline run depends on. File format is flat `key = value`
/// lines; '#' starts a comment; strings may be double-quoted.
struct RunConfig {
  std::filesystem::path dataset;
  std::filesystem::path rules;
  double alpha = 0.0;
  std::size_t dim = 128;
  std::size_t slices = 8;
  GroundingOptions grounding;
  TrainConfig train;
  std::filesystem::path output = "out";

  std::uint64_t seed() const { return train.seed; }

  /// Throws ConfigError naming the offending key.
  void set(std::string_view key, std::string_view value);
  void validate() const;
  /// Round-trips through parse_config.
  std::string to_text() const;
};

/// Key/value pairs of a config file in file order. Throws ConfigError with
/// the line number on malformed lines or repeated keys.
std::vector<std::pair<std::string, std::string>> parse_config_text(std::string_view text,
                                                                   const std::string& source = "<config>");

/// Defaults, then the file (if any), then `overrides` ("key=value").
RunConfig load_config(const std::filesystem::path& file, const std::vector<std::string>& overrides);

/// Every accepted key.
const std::vector<std::string>& config_keys();

}  // namespace npll
