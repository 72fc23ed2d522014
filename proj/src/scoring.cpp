#include "npll/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "npll/error.hpp"

namespace npll {

ScoringParams::ScoringParams(std::size_t num_entities, std::size_t num_relations, std::size_t dim, std::size_t slices)
    : layout_{num_entities, num_relations, dim, slices} {
  if (dim == 0 || slices == 0) throw ConfigError("embedding size and slice count must be >= 1");
  data_.assign(layout_.total(), 0.0);
}

GradientBuffer::GradientBuffer(const ParamLayout& layout)
    : layout_(layout),
      data_(layout.total(), 0.0),
      entity_flag_(layout.num_entities, 0),
      relation_flag_(layout.num_relations, 0) {}

std::span<double> GradientBuffer::entity(EntityId e) {
  auto i = static_cast<std::size_t>(e);
  if (!entity_flag_[i]) {
    entity_flag_[i] = 1;
    entities_.push_back(e);
  }
  return {data_.data() + layout_.entity_offset(e), layout_.dim};
}

std::span<double> GradientBuffer::relation(RelationId r) {
  auto i = static_cast<std::size_t>(r);
  if (!relation_flag_[i]) {
    relation_flag_[i] = 1;
    relations_.push_back(r);
  }
  return {data_.data() + layout_.relation_offset(r), layout_.relation_block()};
}

void GradientBuffer::clear() {
  for (EntityId e : entities_) {
    std::fill_n(data_.data() + layout_.entity_offset(e), layout_.dim, 0.0);
    entity_flag_[static_cast<std::size_t>(e)] = 0;
  }
  for (RelationId r : relations_) {
    std::fill_n(data_.data() + layout_.relation_offset(r), layout_.relation_block(), 0.0);
    relation_flag_[static_cast<std::size_t>(r)] = 0;
  }
  entities_.clear();
  relations_.clear();
}

double logistic(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

ScoringParams init_params(std::size_t num_entities, std::size_t num_relations, std::size_t dim, std::size_t slices,
                          Rng& rng) {
  ScoringParams p(num_entities, num_relations, dim, slices);
  double bound = 1.0 / std::sqrt(static_cast<double>(dim));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (double& x : p.data()) x = dist(rng);
  return p;
}

ScoringParams init_params(const KnowledgeGraph& kg, std::size_t dim, std::size_t slices, Rng& rng) {
  return init_params(kg.num_entities(), kg.num_relations(), dim, slices, rng);
}

namespace {

// With the head fixed, pre_s = q_s · e_t + c_s where
//   q_s = W_s^T e_h + V_s[d:2d],  c_s = V_s[0:d] · e_h + b_s.
// Every path that scores a triple goes through this split so batched and
// single scores agree bit for bit.
struct HeadContext {
  RowMatrix q;
  Eigen::VectorXd c;
};

void head_context(const ScoringParams& p, EntityId h, RelationId r, HeadContext& ctx) {
  const auto d = static_cast<Eigen::Index>(p.dim());
  const auto k = static_cast<Eigen::Index>(p.slices());
  auto eh = p.entity(h);
  auto v = p.v(r);
  ctx.q.resize(k, d);
  for (Eigen::Index s = 0; s < k; ++s) {
    ctx.q.row(s).noalias() = (p.w(r, static_cast<std::size_t>(s)).transpose() * eh).transpose();
  }
  ctx.q += v.rightCols(d);
  ctx.c.noalias() = v.leftCols(d) * eh;
  ctx.c += p.b(r);
}

// Same split with the tail fixed: pre_s = q_s · e_h + c_s where
//   q_s = W_s e_t + V_s[0:d],  c_s = V_s[d:2d] · e_t + b_s.
void tail_context(const ScoringParams& p, RelationId r, EntityId t, HeadContext& ctx) {
  const auto d = static_cast<Eigen::Index>(p.dim());
  const auto k = static_cast<Eigen::Index>(p.slices());
  auto et = p.entity(t);
  auto v = p.v(r);
  ctx.q.resize(k, d);
  for (Eigen::Index s = 0; s < k; ++s) {
    ctx.q.row(s).noalias() = (p.w(r, static_cast<std::size_t>(s)) * et).transpose();
  }
  ctx.q += v.leftCols(d);
  ctx.c.noalias() = v.rightCols(d) * et;
  ctx.c += p.b(r);
}

double finish(const ScoringParams& p, RelationId r, const HeadContext& ctx, EntityId other, Eigen::VectorXd& act) {
  act.noalias() = ctx.q * p.entity(other);
  act += ctx.c;
  act = act.array().tanh().matrix();
  return p.u(r).dot(act);
}

[[noreturn]] void non_finite(const Triple& t, double raw) {
  throw NumericError("non-finite score " + std::to_string(raw) + " for triple (" + std::to_string(t.head) + "," +
                     std::to_string(t.rel) + "," + std::to_string(t.tail) + ")");
}

}  // namespace

FactScore score(const ScoringParams& params, const Triple& t) {
  HeadContext ctx;
  Eigen::VectorXd act;
  head_context(params, t.head, t.rel, ctx);
  double raw = finish(params, t.rel, ctx, t.tail, act);
  if (!std::isfinite(raw)) non_finite(t, raw);
  return {raw, logistic(raw)};
}

FactScore score_gradients(const ScoringParams& params, const Triple& t, double upstream, GradientBuffer& grad) {
  const auto d = static_cast<Eigen::Index>(params.dim());
  const auto k = static_cast<Eigen::Index>(params.slices());
  const auto& L = params.layout();
  HeadContext ctx;
  Eigen::VectorXd act;
  head_context(params, t.head, t.rel, ctx);
  double raw = finish(params, t.rel, ctx, t.tail, act);
  if (!std::isfinite(raw)) non_finite(t, raw);
  if (upstream == 0.0) return {raw, logistic(raw)};

  auto u = params.u(t.rel);
  Eigen::VectorXd delta = upstream * u.cwiseProduct((1.0 - act.array().square()).matrix());
  auto eh = params.entity(t.head);
  auto et = params.entity(t.tail);

  // d e_h = sum_s delta_s (W_s e_t + V_s[0:d]); computed before any write.
  Eigen::VectorXd g_head = params.v(t.rel).leftCols(d).transpose() * delta;
  for (Eigen::Index s = 0; s < k; ++s) g_head.noalias() += delta[s] * (params.w(t.rel, static_cast<std::size_t>(s)) * et);
  Eigen::VectorXd g_tail = ctx.q.transpose() * delta;

  auto rel = grad.relation(t.rel);
  double* base = rel.data();
  for (Eigen::Index s = 0; s < k; ++s) {
    MatrixView gw(base + s * d * d, d, d);
    gw.noalias() += delta[s] * eh * et.transpose();
  }
  MatrixView gv(base + (L.v_offset(t.rel) - L.relation_offset(t.rel)), k, 2 * d);
  gv.leftCols(d).noalias() += delta * eh.transpose();
  gv.rightCols(d).noalias() += delta * et.transpose();
  VectorView gu(base + (L.u_offset(t.rel) - L.relation_offset(t.rel)), k);
  gu += upstream * act;
  VectorView gb(base + (L.b_offset(t.rel) - L.relation_offset(t.rel)), k);
  gb += delta;

  auto gh = grad.entity(t.head);
  VectorView(gh.data(), d) += g_head;
  auto gt = grad.entity(t.tail);
  VectorView(gt.data(), d) += g_tail;
  return {raw, logistic(raw)};
}

GradientBuffer score_gradients(const ScoringParams& params, const Triple& t, double upstream) {
  GradientBuffer g(params.layout());
  score_gradients(params, t, upstream, g);
  return g;
}

std::vector<double> raw_scores(const ScoringParams& params, std::span<const Triple> atoms) {
  std::vector<std::size_t> order(atoms.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return std::pair(atoms[a].rel, atoms[a].head) < std::pair(atoms[b].rel, atoms[b].head);
  });
  std::vector<double> out(atoms.size());
  HeadContext ctx;
  Eigen::VectorXd act;
  for (std::size_t i = 0; i < order.size(); ++i) {
    const Triple& t = atoms[order[i]];
    if (i == 0 || t.rel != atoms[order[i - 1]].rel || t.head != atoms[order[i - 1]].head) {
      head_context(params, t.head, t.rel, ctx);
    }
    double raw = finish(params, t.rel, ctx, t.tail, act);
    if (!std::isfinite(raw)) non_finite(t, raw);
    out[order[i]] = raw;
  }
  return out;
}

std::vector<double> posterior_probs(const ScoringParams& params, std::span<const Triple> atoms) {
  auto out = raw_scores(params, atoms);
  for (double& x : out) x = logistic(x);
  return out;
}

void score_all_tails(const ScoringParams& params, EntityId head, RelationId rel, std::span<double> out) {
  HeadContext ctx;
  Eigen::VectorXd act;
  head_context(params, head, rel, ctx);
  for (std::size_t e = 0; e < out.size(); ++e) out[e] = finish(params, rel, ctx, static_cast<EntityId>(e), act);
}

void score_all_heads(const ScoringParams& params, RelationId rel, EntityId tail, std::span<double> out) {
  HeadContext ctx;
  Eigen::VectorXd act;
  tail_context(params, rel, tail, ctx);
  for (std::size_t e = 0; e < out.size(); ++e) out[e] = finish(params, rel, ctx, static_cast<EntityId>(e), act);
}

void apply_gradient(ScoringParams& params, const GradientBuffer& grad, double lr) {
  const auto& L = params.layout();
  auto dst = params.data();
  auto src = grad.data();
  auto update = [&](std::size_t offset, std::size_t n) {
    for (std::size_t i = offset; i < offset + n; ++i) dst[i] -= lr * src[i];
  };
  for (EntityId e : grad.touched_entities()) update(L.entity_offset(e), L.dim);
  for (RelationId r : grad.touched_relations()) update(L.relation_offset(r), L.relation_block());
}

}  // namespace npll
