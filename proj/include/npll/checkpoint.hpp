#pragma once

#include <cstdint>
#include <filesystem>

#include "npll/scoring.hpp"

namespace npll {

struct Checkpoint {
  ScoringParams params;
  std::uint64_t dictionary_hash = 0;
};

/// File layout:
///   line 1  "NPLL-CHECKPOINT 1"
///   line 2  JSON header {dim, slices, num_entities, num_relations,
///           dictionary_hash, payload_doubles, payload_fnv1a}
///   rest    the parameter vector as raw little-endian float64
void save_checkpoint(const std::filesystem::path& path, const ScoringParams& params, std::uint64_t dictionary_hash);

/// Throws IntegrityError on a bad magic line, header, size or checksum.
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::string hash_hex(std::uint64_t h);

}  // namespace npll
