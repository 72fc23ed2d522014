#include "npll/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <thread>

#include "npll/error.hpp"

namespace npll {

namespace {

std::string_view trim(std::string_view s) {
  auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(std::string_view key, std::string_view v) {
  T out{};
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError("config key '" + std::string(key) + "': cannot parse '" + std::string(v) + "'");
  }
  return out;
}

bool parse_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config key '" + std::string(key) + "': expected true or false, got '" + std::string(v) + "'");
}

std::string unquote(std::string_view v) {
  if (v.size() >= 2 && v.front() == '"' && v.back() == '"') return std::string(v.substr(1, v.size() - 2));
  return std::string(v);
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

std::string quote(const std::filesystem::path& p) { return "\"" + p.string() + "\""; }

}  // namespace

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = {
      "dataset",   "rules",      "alpha",           "dim",        "slices",
      "depth",     "max_ground_rules", "output",    "lr0",        "patience",
      "epochs",    "batch_size", "fact_batch_size", "n_neg",      "lambda_sup",
      "e_steps_per_m_step",      "m_steps",         "m_lr",       "weight_decay", "map_blanket",
      "entropy_per_occurrence",  "workers",         "seed",
  };
  return keys;
}

void RunConfig::set(std::string_view key, std::string_view raw) {
  const std::string v = unquote(trim(raw));
  auto sz = [&] { return parse_number<std::size_t>(key, v); };
  auto i = [&] { return parse_number<int>(key, v); };
  auto d = [&] { return parse_number<double>(key, v); };
  auto b = [&] { return parse_bool(key, v); };

  if (key == "dataset") dataset = v;
  else if (key == "rules") rules = v;
  else if (key == "alpha") alpha = d();
  else if (key == "dim") dim = sz();
  else if (key == "slices") slices = sz();
  else if (key == "depth") grounding.depth = i();
  else if (key == "max_ground_rules") grounding.max_ground_rules = sz();
  else if (key == "output") output = v;
  else if (key == "lr0") train.lr0 = d();
  else if (key == "patience") train.patience = i();
  else if (key == "epochs") train.epochs = i();
  else if (key == "batch_size") train.batch_size = sz();
  else if (key == "fact_batch_size") train.fact_batch_size = sz();
  else if (key == "n_neg") train.n_neg = i();
  else if (key == "lambda_sup") train.lambda_sup = d();
  else if (key == "e_steps_per_m_step") train.e_steps_per_m_step = i();
  else if (key == "m_steps") train.m_steps = i();
  else if (key == "m_lr") train.m_lr = d();
  else if (key == "weight_decay") train.weight_decay = d();
  else if (key == "map_blanket") train.map_blanket = b();
  else if (key == "entropy_per_occurrence") train.entropy_per_occurrence = b();
  else if (key == "workers") train.workers = i();
  else if (key == "seed") train.seed = parse_number<std::uint64_t>(key, v);
  else throw ConfigError("unknown config key '" + std::string(key) + "'");
}

void RunConfig::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("invalid config: alpha must lie in [0,1]");
  if (dim < 1) throw ConfigError("invalid config: dim must be >= 1");
  if (slices < 1) throw ConfigError("invalid config: slices must be >= 1");
  if (grounding.depth < 1) throw ConfigError("invalid config: depth must be >= 1");
  if (grounding.max_ground_rules < 1) throw ConfigError("invalid config: max_ground_rules must be >= 1");
  train.validate();
}

std::string RunConfig::to_text() const {
  std::ostringstream os;
  os << "dataset = " << quote(dataset) << '\n';
  os << "rules = " << quote(rules) << '\n';
  os << "alpha = " << format_double(alpha) << '\n';
  os << "dim = " << dim << '\n';
  os << "slices = " << slices << '\n';
  os << "depth = " << grounding.depth << '\n';
  os << "max_ground_rules = " << grounding.max_ground_rules << '\n';
  os << "output = " << quote(output) << '\n';
  os << "lr0 = " << format_double(train.lr0) << '\n';
  os << "patience = " << train.patience << '\n';
  os << "epochs = " << train.epochs << '\n';
  os << "batch_size = " << train.batch_size << '\n';
  os << "fact_batch_size = " << train.fact_batch_size << '\n';
  os << "n_neg = " << train.n_neg << '\n';
  os << "lambda_sup = " << format_double(train.lambda_sup) << '\n';
  os << "e_steps_per_m_step = " << train.e_steps_per_m_step << '\n';
  os << "m_steps = " << train.m_steps << '\n';
  os << "m_lr = " << format_double(train.m_lr) << '\n';
  os << "weight_decay = " << format_double(train.weight_decay) << '\n';
  os << "map_blanket = " << (train.map_blanket ? "true" : "false") << '\n';
  os << "entropy_per_occurrence = " << (train.entropy_per_occurrence ? "true" : "false") << '\n';
  os << "workers = " << train.workers << '\n';
  os << "seed = " << train.seed << '\n';
  return os.str();
}

std::vector<std::pair<std::string, std::string>> parse_config_text(std::string_view text, const std::string& source) {
  std::vector<std::pair<std::string, std::string>> out;
  std::set<std::string> seen;
  std::size_t line_no = 0;
  while (!text.empty()) {
    auto nl = text.find('\n');
    auto line = trim(text.substr(0, nl));
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (line.empty() || line.front() == '#') continue;
    auto eq = line.find('=');
    auto where = source + ":" + std::to_string(line_no);
    if (eq == std::string_view::npos) throw ConfigError(where + ": expected key = value");
    std::string key(trim(line.substr(0, eq)));
    if (key.empty()) throw ConfigError(where + ": empty key");
    if (!seen.insert(key).second) throw ConfigError(where + ": key '" + key + "' repeated");
    out.emplace_back(key, std::string(trim(line.substr(eq + 1))));
  }
  return out;
}

RunConfig load_config(const std::filesystem::path& file, const std::vector<std::string>& overrides) {
  RunConfig cfg;
  cfg.train.workers = static_cast<int>(std::max(1U, std::thread::hardware_concurrency()));
  if (!file.empty()) {
    std::ifstream in(file);
    if (!in) throw ConfigError("cannot open config file " + file.string());
    std::stringstream ss;
    ss << in.rdbuf();
    for (const auto& [k, v] : parse_config_text(ss.str(), file.string())) cfg.set(k, v);
  }
  for (const auto& o : overrides) {
    auto eq = o.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + o + "' is not key=value");
    cfg.set(trim(std::string_view(o).substr(0, eq)), std::string_view(o).substr(eq + 1));
  }
  cfg.validate();
  return cfg;
}

}  // namespace npll
