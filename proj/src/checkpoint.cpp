#include "npll/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include "json.hpp"

#include "npll/error.hpp"

namespace npll {

namespace {

constexpr const char* kMagic = "NPLL-CHECKPOINT 1";

static_assert(std::endian::native == std::endian::little, "checkpoint payload is written in host order");

std::uint64_t fnv1a(const void* bytes, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(bytes);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t parse_hex(const std::string& s) {
  std::size_t used = 0;
  auto v = std::stoull(s, &used, 16);
  if (used != s.size()) throw std::invalid_argument("bad hex");
  return v;
}

}  // namespace

std::string hash_hex(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void save_checkpoint(const std::filesystem::path& path, const ScoringParams& params, std::uint64_t dictionary_hash) {
  auto data = params.data();
  nlohmann::json header = {
      {"dim", params.dim()},
      {"slices", params.slices()},
      {"num_entities", params.num_entities()},
      {"num_relations", params.num_relations()},
      {"dictionary_hash", hash_hex(dictionary_hash)},
      {"payload_doubles", data.size()},
      {"payload_fnv1a", hash_hex(fnv1a(data.data(), data.size_bytes()))},
  };
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::data, "cannot write checkpoint " + path.string());
  out << kMagic << '\n' << header.dump() << '\n';
  out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size_bytes()));
  if (!out) throw Error(ErrorKind::data, "failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IntegrityError("cannot open checkpoint " + path.string());
  std::string magic, header_line;
  if (!std::getline(in, magic) || magic != kMagic) throw IntegrityError(path.string() + ": not a checkpoint file");
  if (!std::getline(in, header_line)) throw IntegrityError(path.string() + ": truncated header");

  Checkpoint ck;
  std::size_t n = 0;
  std::uint64_t checksum = 0;
  try {
    auto h = nlohmann::json::parse(header_line);
    ck.params = ScoringParams(h.at("num_entities").get<std::size_t>(), h.at("num_relations").get<std::size_t>(),
                              h.at("dim").get<std::size_t>(), h.at("slices").get<std::size_t>());
    ck.dictionary_hash = parse_hex(h.at("dictionary_hash").get<std::string>());
    n = h.at("payload_doubles").get<std::size_t>();
    checksum = parse_hex(h.at("payload_fnv1a").get<std::string>());
  } catch (const Error&) {
    throw IntegrityError(path.string() + ": invalid header");
  } catch (const std::exception& e) {
    throw IntegrityError(path.string() + ": invalid header (" + e.what() + ")");
  }
  auto data = ck.params.data();
  if (n != data.size()) throw IntegrityError(path.string() + ": payload size does not match header shape");
  in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size_bytes()));
  if (in.gcount() != static_cast<std::streamsize>(data.size_bytes())) {
    throw IntegrityError(path.string() + ": truncated payload");
  }
  if (in.peek() != std::char_traits<char>::eof()) throw IntegrityError(path.string() + ": trailing bytes");
  if (fnv1a(data.data(), data.size_bytes()) != checksum) throw IntegrityError(path.string() + ": checksum mismatch");
  return ck;
}

}  // namespace npll
