#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <span>
#include <vector>

#include "npll/knowledge_graph.hpp"

namespace npll {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixView = Eigen::Map<RowMatrix>;
using ConstMatrixView = Eigen::Map<const RowMatrix>;
using VectorView = Eigen::Map<Eigen::VectorXd>;
using ConstVectorView = Eigen::Map<const Eigen::VectorXd>;

/// Flat parameter layout shared by ScoringParams and GradientBuffer.
///
///   entity e:    d reals
///   relation r:  W (k slices of d x d, row i = head coordinate),
///                V (k x 2d, head half then tail half), u (k), b (k)
struct ParamLayout {
  std::size_t num_entities = 0;
  std::size_t num_relations = 0;
  std::size_t dim = 0;     // d
  std::size_t slices = 0;  // k

  std::size_t relation_block() const { return slices * dim * dim + slices * 2 * dim + 2 * slices; }
  std::size_t entity_offset(EntityId e) const { return static_cast<std::size_t>(e) * dim; }
  std::size_t relation_offset(RelationId r) const {
    return num_entities * dim + static_cast<std::size_t>(r) * relation_block();
  }
  std::size_t w_offset(RelationId r, std::size_t s) const { return relation_offset(r) + s * dim * dim; }
  std::size_t v_offset(RelationId r) const { return relation_offset(r) + slices * dim * dim; }
  std::size_t u_offset(RelationId r) const { return v_offset(r) + slices * 2 * dim; }
  std::size_t b_offset(RelationId r) const { return u_offset(r) + slices; }
  std::size_t total() const { return num_entities * dim + num_relations * relation_block(); }

  friend bool operator==(const ParamLayout&, const ParamLayout&) = default;
};

/// Entity embeddings plus one {W, V, u, b} block per relation:
///   g(r, h, t) = u_r · tanh(e_h^T W_r e_t + V_r [e_h; e_t] + b_r)
class ScoringParams {
 public:
  ScoringParams() = default;
  ScoringParams(std::size_t num_entities, std::size_t num_relations, std::size_t dim, std::size_t slices);

  const ParamLayout& layout() const { return layout_; }
  std::size_t dim() const { return layout_.dim; }
  std::size_t slices() const { return layout_.slices; }
  std::size_t num_entities() const { return layout_.num_entities; }
  std::size_t num_relations() const { return layout_.num_relations; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }

  VectorView entity(EntityId e) { return {data_.data() + layout_.entity_offset(e), Eigen::Index(dim())}; }
  ConstVectorView entity(EntityId e) const { return {data_.data() + layout_.entity_offset(e), Eigen::Index(dim())}; }
  MatrixView w(RelationId r, std::size_t s) {
    return {data_.data() + layout_.w_offset(r, s), Eigen::Index(dim()), Eigen::Index(dim())};
  }
  ConstMatrixView w(RelationId r, std::size_t s) const {
    return {data_.data() + layout_.w_offset(r, s), Eigen::Index(dim()), Eigen::Index(dim())};
  }
  MatrixView v(RelationId r) { return {data_.data() + layout_.v_offset(r), Eigen::Index(slices()), Eigen::Index(2 * dim())}; }
  ConstMatrixView v(RelationId r) const {
    return {data_.data() + layout_.v_offset(r), Eigen::Index(slices()), Eigen::Index(2 * dim())};
  }
  VectorView u(RelationId r) { return {data_.data() + layout_.u_offset(r), Eigen::Index(slices())}; }
  ConstVectorView u(RelationId r) const { return {data_.data() + layout_.u_offset(r), Eigen::Index(slices())}; }
  VectorView b(RelationId r) { return {data_.data() + layout_.b_offset(r), Eigen::Index(slices())}; }
  ConstVectorView b(RelationId r) const { return {data_.data() + layout_.b_offset(r), Eigen::Index(slices())}; }

  friend bool operator==(const ScoringParams& a, const ScoringParams& b) {
    return a.layout_ == b.layout_ && a.data_ == b.data_;
  }

 private:
  ParamLayout layout_;
  std::vector<double> data_;
};

/// Gradient accumulator with the same layout as ScoringParams. Tracks which
/// entity and relation blocks were written so that clearing and applying an
/// update only touch those blocks.
class GradientBuffer {
 public:
  GradientBuffer() = default;
  explicit GradientBuffer(const ParamLayout& layout);

  const ParamLayout& layout() const { return layout_; }
  std::span<const double> data() const { return data_; }
  std::span<double> entity(EntityId e);
  std::span<double> relation(RelationId r);
  std::span<const EntityId> touched_entities() const { return entities_; }
  std::span<const RelationId> touched_relations() const { return relations_; }

  void clear();

 private:
  ParamLayout layout_;
  std::vector<double> data_;
  std::vector<std::uint8_t> entity_flag_;
  std::vector<std::uint8_t> relation_flag_;
  std::vector<EntityId> entities_;
  std::vector<RelationId> relations_;
};

struct FactScore {
  double raw = 0.0;
  double prob = 0.5;
};

/// Increasing logistic 1 / (1 + exp(-x)).
double logistic(double x);
/// log(1 + exp(x)) without overflow.
double softplus(double x);

/// Uniform init in [-1/sqrt(d), 1/sqrt(d)], drawn in flat layout order.
ScoringParams init_params(const KnowledgeGraph& kg, std::size_t dim, std::size_t slices, Rng& rng);
ScoringParams init_params(std::size_t num_entities, std::size_t num_relations, std::size_t dim, std::size_t slices,
                          Rng& rng);

/// Throws NumericError if the result is not finite.
FactScore score(const ScoringParams& params, const Triple& t);

/// Adds upstream * d(raw)/d(theta) into `grad`. A self-loop accumulates both
/// the head and the tail contribution on the same embedding. Returns the
/// forward score.
FactScore score_gradients(const ScoringParams& params, const Triple& t, double upstream, GradientBuffer& grad);
GradientBuffer score_gradients(const ScoringParams& params, const Triple& t, double upstream);

/// Batched score(t).prob, order preserving and bit-identical to single calls.
std::vector<double> posterior_probs(const ScoringParams& params, std::span<const Triple> atoms);
/// Raw scores, same contract as posterior_probs.
std::vector<double> raw_scores(const ScoringParams& params, std::span<const Triple> atoms);

/// Raw scores of every entity as tail of (head, rel, ?) or as head of
/// (?, rel, tail), written to `out` (size num_entities).
void score_all_tails(const ScoringParams& params, EntityId head, RelationId rel, std::span<double> out);
void score_all_heads(const ScoringParams& params, RelationId rel, EntityId tail, std::span<double> out);

/// params -= lr * grad over the touched blocks.
void apply_gradient(ScoringParams& params, const GradientBuffer& grad, double lr);

}  // namespace npll
