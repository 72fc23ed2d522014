#include "npll/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

namespace npll {

std::vector<int> ToyMln::latent() const {
  std::vector<int> out;
  for (int i = 0; i < num_atoms; ++i) {
    if (!observed[static_cast<std::size_t>(i)]) out.push_back(i);
  }
  return out;
}

int ToyMln::num_rules() const {
  int n = 0;
  for (const auto& g : groundings) n = std::max(n, g.rule + 1);
  return n;
}

void ToyMln::validate() const {
  if (num_atoms < 0 || observed.size() != static_cast<std::size_t>(num_atoms)) {
    throw ContractViolation("toy MLN: observed mask does not match atom count");
  }
  std::vector<double> weight(static_cast<std::size_t>(num_rules()), NAN);
  auto check_atom = [&](int a) {
    if (a < 0 || a >= num_atoms) throw ContractViolation("toy MLN: atom index " + std::to_string(a) + " out of range");
  };
  for (const auto& g : groundings) {
    if (g.rule < 0) throw ContractViolation("toy MLN: negative rule index");
    if (!std::isfinite(g.weight)) throw ContractViolation("toy MLN: non-finite weight");
    for (int a : g.body) check_atom(a);
    check_atom(g.head);
    double& w = weight[static_cast<std::size_t>(g.rule)];
    if (std::isnan(w)) {
      w = g.weight;
    } else if (w != g.weight) {
      throw ContractViolation("toy MLN: groundings of rule " + std::to_string(g.rule) + " disagree on weight");
    }
  }
}

ToyMln toy_from_json(const nlohmann::json& j) {
  ToyMln toy;
  try {
    const auto& atoms = j.at("atoms");
    toy.num_atoms = atoms.is_array() ? static_cast<int>(atoms.size()) : atoms.get<int>();
    toy.observed.assign(static_cast<std::size_t>(std::max(toy.num_atoms, 0)), 0);
    for (int i : j.value("observed", std::vector<int>{})) {
      if (i < 0 || i >= toy.num_atoms) throw DatasetFormatError("toy MLN: observed index out of range");
      toy.observed[static_cast<std::size_t>(i)] = 1;
    }
    int index = 0;
    for (const auto& r : j.at("rules")) {
      ToyGroundRule g;
      g.rule = r.value("rule", index);
      g.weight = r.at("weight").get<double>();
      g.body = r.at("atom_indices").get<std::vector<int>>();
      g.head = r.at("head_index").get<int>();
      toy.groundings.push_back(std::move(g));
      ++index;
    }
    auto mode = j.value("mode", std::string("product"));
    if (mode == "product") {
      toy.mode = CountMode::product;
    } else if (mode == "clause") {
      toy.mode = CountMode::clause;
    } else {
      throw DatasetFormatError("toy MLN: unknown mode '" + mode + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw DatasetFormatError(std::string("toy MLN: ") + e.what());
  }
  try {
    toy.validate();
  } catch (const ContractViolation& e) {
    throw DatasetFormatError(e.what());
  }
  return toy;
}

ToyMln load_toy(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DatasetFormatError("cannot open toy MLN file " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DatasetFormatError(path.string() + ": " + e.what());
  }
  return toy_from_json(j);
}

nlohmann::json toy_to_json(const ToyMln& toy) {
  nlohmann::json j;
  j["atoms"] = toy.num_atoms;
  std::vector<int> observed;
  for (int i = 0; i < toy.num_atoms; ++i) {
    if (toy.observed[static_cast<std::size_t>(i)]) observed.push_back(i);
  }
  j["observed"] = observed;
  j["rules"] = nlohmann::json::array();
  for (const auto& g : toy.groundings) {
    j["rules"].push_back({{"rule", g.rule}, {"weight", g.weight}, {"atom_indices", g.body}, {"head_index", g.head}});
  }
  j["mode"] = toy.mode == CountMode::product ? "product" : "clause";
  return j;
}

ToyMln random_toy(Rng& rng, const ToyOptions& o) {
  auto uniform_int = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  ToyMln toy;
  toy.mode = o.mode;
  int latent = uniform_int(o.min_latent, o.max_latent);
  int observed = uniform_int(0, o.max_observed);
  if (latent + observed < 2) observed = 1;  // a grounding needs a body atom and a head
  toy.num_atoms = latent + observed;
  toy.observed.assign(static_cast<std::size_t>(toy.num_atoms), 0);
  std::vector<int> order(static_cast<std::size_t>(toy.num_atoms));
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  for (int i = 0; i < observed; ++i) toy.observed[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = 1;

  std::uniform_real_distribution<double> weight(o.min_weight, o.max_weight);
  std::vector<double> rule_weight(static_cast<std::size_t>(o.num_rules));
  for (double& w : rule_weight) w = weight(rng);

  int n_groundings = uniform_int(1, o.max_groundings);
  for (int g = 0; g < n_groundings; ++g) {
    ToyGroundRule gr;
    gr.rule = uniform_int(0, o.num_rules - 1);
    gr.weight = rule_weight[static_cast<std::size_t>(gr.rule)];
    int body = toy.num_atoms > 1 ? uniform_int(1, std::min(o.max_body, toy.num_atoms - 1)) : 0;
    std::shuffle(order.begin(), order.end(), rng);
    gr.body.assign(order.begin(), order.begin() + body);
    gr.head = order[static_cast<std::size_t>(body)];
    toy.groundings.push_back(std::move(gr));
  }
  return toy;
}

bool grounding_satisfied(const ToyGroundRule& g, std::span<const std::uint8_t> a, CountMode mode) {
  bool body = std::all_of(g.body.begin(), g.body.end(), [&](int i) { return a[static_cast<std::size_t>(i)] != 0; });
  bool head = a[static_cast<std::size_t>(g.head)] != 0;
  return mode == CountMode::product ? (body && head) : (!body || head);
}

double log_weight(const ToyMln& toy, std::span<const std::uint8_t> assignment) {
  double s = 0.0;
  for (const auto& g : toy.groundings) {
    if (grounding_satisfied(g, assignment, toy.mode)) s += g.weight;
  }
  return s;
}

std::vector<std::int64_t> count_by_rule(const ToyMln& toy, std::span<const std::uint8_t> assignment) {
  std::vector<std::int64_t> counts(static_cast<std::size_t>(toy.num_rules()), 0);
  for (const auto& g : toy.groundings) {
    if (grounding_satisfied(g, assignment, toy.mode)) ++counts[static_cast<std::size_t>(g.rule)];
  }
  return counts;
}

namespace {

void require_enumerable(std::size_t free_atoms) {
  if (free_atoms > static_cast<std::size_t>(kMaxEnumeratedAtoms)) {
    throw OracleRefusedError("refusing to enumerate 2^" + std::to_string(free_atoms) + " assignments (limit 2^" +
                             std::to_string(kMaxEnumeratedAtoms) + ")");
  }
}

/// Calls f(assignment) for every assignment of `free` (others as in `base`),
/// in increasing mask order.
template <typename F>
void enumerate(std::vector<std::uint8_t> base, std::span<const int> free, F&& f) {
  require_enumerable(free.size());
  const std::uint64_t n = std::uint64_t{1} << free.size();
  for (std::uint64_t mask = 0; mask < n; ++mask) {
    for (std::size_t i = 0; i < free.size(); ++i) base[static_cast<std::size_t>(free[i])] = (mask >> i) & 1U;
    f(static_cast<const std::vector<std::uint8_t>&>(base));
  }
}

/// Streaming log-sum-exp.
struct LogSum {
  double max = -INFINITY;
  double sum = 0.0;

  void add(double x) {
    if (x <= max) {
      sum += std::exp(x - max);
    } else {
      sum = sum * std::exp(max - x) + 1.0;
      max = x;
    }
  }
  double value() const { return max + std::log(sum); }
};

std::vector<std::uint8_t> observed_base(const ToyMln& toy) { return toy.observed; }

double log_q(std::span<const double> q, std::span<const int> latent, std::span<const std::uint8_t> a) {
  double s = 0.0;
  for (std::size_t i = 0; i < latent.size(); ++i) {
    double p = a[static_cast<std::size_t>(latent[i])] ? q[i] : 1.0 - q[i];
    if (p == 0.0) return -INFINITY;
    s += std::log(p);
  }
  return s;
}

void check_q(const ToyMln& toy, std::span<const double> q) {
  if (q.size() != toy.latent().size()) throw ContractViolation("q must have one value per latent atom");
  for (double v : q) {
    if (!(v >= 0.0 && v <= 1.0)) throw ContractViolation("q value " + std::to_string(v) + " outside [0,1]");
  }
}

double bernoulli_entropy(double p) {
  double h = 0.0;
  if (p > 0.0) h -= p * std::log(p);
  if (p < 1.0) h -= (1.0 - p) * std::log1p(-p);
  return h;
}

}  // namespace

double exact_log_partition(const ToyMln& toy) {
  toy.validate();
  auto latent = toy.latent();
  LogSum z;
  enumerate(observed_base(toy), latent, [&](const auto& a) { z.add(log_weight(toy, a)); });
  return z.value();
}

double exact_partition(const ToyMln& toy) { return std::exp(exact_log_partition(toy)); }

double exact_joint_log_partition(const ToyMln& toy) {
  toy.validate();
  std::vector<int> all(static_cast<std::size_t>(toy.num_atoms));
  std::iota(all.begin(), all.end(), 0);
  LogSum z;
  enumerate(std::vector<std::uint8_t>(all.size(), 0), all, [&](const auto& a) { z.add(log_weight(toy, a)); });
  return z.value();
}

std::vector<double> exact_posterior(const ToyMln& toy) {
  auto latent = toy.latent();
  const double log_z = exact_log_partition(toy);
  std::vector<double> marginal(latent.size(), 0.0);
  enumerate(observed_base(toy), latent, [&](const auto& a) {
    double p = std::exp(log_weight(toy, a) - log_z);
    for (std::size_t i = 0; i < latent.size(); ++i) {
      if (a[static_cast<std::size_t>(latent[i])]) marginal[i] += p;
    }
  });
  return marginal;
}

double exact_conditional(const ToyMln& toy, int atom, std::span<const std::uint8_t> assignment) {
  toy.validate();
  if (atom < 0 || atom >= toy.num_atoms) throw ContractViolation("atom index out of range");
  std::vector<std::uint8_t> a(assignment.begin(), assignment.end());
  a[static_cast<std::size_t>(atom)] = 1;
  double on = log_weight(toy, a);
  a[static_cast<std::size_t>(atom)] = 0;
  double off = log_weight(toy, a);
  return 1.0 / (1.0 + std::exp(off - on));
}

double exact_kl(const ToyMln& toy, std::span<const double> q) {
  check_q(toy, q);
  auto latent = toy.latent();
  const double log_z = exact_log_partition(toy);
  double kl = 0.0;
  enumerate(observed_base(toy), latent, [&](const auto& a) {
    double lq = log_q(q, latent, a);
    if (lq == -INFINITY) return;
    double log_post = log_weight(toy, a) - log_z;
    kl += std::exp(lq) * (lq - log_post);
  });
  return kl;
}

ExactElbo exact_elbo_and_kl(const ToyMln& toy, std::span<const double> q) {
  check_q(toy, q);
  auto latent = toy.latent();
  ExactElbo out;
  enumerate(observed_base(toy), latent, [&](const auto& a) {
    double lq = log_q(q, latent, a);
    if (lq == -INFINITY) return;
    out.expected_log_weight += std::exp(lq) * log_weight(toy, a);
  });
  for (double p : q) out.entropy += bernoulli_entropy(p);
  const double log_joint_z = exact_joint_log_partition(toy);
  out.log_evidence = exact_log_partition(toy) - log_joint_z;
  out.elbo = out.expected_log_weight + out.entropy - log_joint_z;
  out.kl = exact_kl(toy, q);
  return out;
}

GroundingStore toy_to_store(const ToyMln& toy) {
  toy.validate();
  GroundingStore::Builder b(static_cast<std::size_t>(toy.num_rules()));
  for (int i = 0; i < toy.num_atoms; ++i) b.add_atom(Triple{i, 0, 0}, toy.observed[static_cast<std::size_t>(i)] != 0);
  std::vector<AtomId> atoms;
  for (const auto& g : toy.groundings) {
    atoms.assign(g.body.begin(), g.body.end());
    atoms.push_back(g.head);
    b.add_ground_rule(g.rule, atoms);
  }
  return std::move(b).build();
}

std::vector<double> toy_rule_weights(const ToyMln& toy) {
  toy.validate();
  std::vector<double> w(static_cast<std::size_t>(toy.num_rules()), 0.0);
  for (const auto& g : toy.groundings) w[static_cast<std::size_t>(g.rule)] = g.weight;
  return w;
}

}  // namespace npll
