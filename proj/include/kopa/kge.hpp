#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

#include "kopa/kg.hpp"
#include "kopa/rng.hpp"

namespace kopa {

/// Score-function family. Values are the on-disk family codes.
enum class ScoreFamily : std::uint32_t { TransE = 0, DistMult = 1, ComplEx = 2, RotatE = 3 };

std::string_view to_string(ScoreFamily f);
ScoreFamily parse_family(std::string_view name);

/// Relation row width implied by `family` for entity width `d_e`.
/// Throws ConfigError when `d_e` violates the family's parity rule.
std::size_t relation_width(ScoreFamily family, std::size_t d_e);

/// Read-only view over embedding tables of element type Real.
///
/// Layouts: TransE/DistMult rows are plain reals. ComplEx entity and relation
/// rows and RotatE entity rows hold all real parts followed by all imaginary
/// parts. RotatE relation rows hold one phase (radians) per complex coordinate.
template <typename Real>
struct TableView {
  ScoreFamily family = ScoreFamily::TransE;
  std::size_t d_e = 0;
  std::size_t d_r = 0;
  std::span<const Real> entity;
  std::span<const Real> relation;

  std::span<const Real> entity_row(EntityId e) const { return entity.subspan(e * d_e, d_e); }
  std::span<const Real> relation_row(RelationId r) const { return relation.subspan(r * d_r, d_r); }
  std::size_t num_entities() const { return d_e ? entity.size() / d_e : 0; }
  std::size_t num_relations() const { return d_r ? relation.size() / d_r : 0; }
};

struct EmbeddingModel {
  ScoreFamily family = ScoreFamily::TransE;
  std::size_t d_e = 0;
  std::size_t d_r = 0;
  std::vector<float> entity_table;    // |E| x d_e, row-major
  std::vector<float> relation_table;  // |R| x d_r, row-major
  float gamma = 0.0f;

  std::size_t num_entities() const { return d_e ? entity_table.size() / d_e : 0; }
  std::size_t num_relations() const { return d_r ? relation_table.size() / d_r : 0; }
  TableView<float> view() const { return {family, d_e, d_r, entity_table, relation_table}; }

  bool operator==(const EmbeddingModel&) const = default;
};

/// Uniform init in +-(gamma + 2)/d_e; RotatE phases uniform in [-pi, pi).
EmbeddingModel init_embeddings(const KnowledgeGraph& kg, ScoreFamily family, std::size_t d_e,
                               double gamma, Rng& rng);

/// Dissimilarity F(h, r, t); lower means more plausible for every family.
double score(const EmbeddingModel& model, const Triple& t);

/// p_i = softmax_i(-alpha * F_i).
std::vector<double> adversarial_weights(std::span<const double> neg_scores, double alpha);

/// Positives with K negatives each, flattened as [pos_0 negs..., pos_1 negs...].
struct NegativeBatch {
  std::vector<Triple> positives;
  std::vector<Triple> negatives;  // positives.size() * k
  std::size_t k = 0;

  std::span<const Triple> negatives_of(std::size_t j) const {
    return std::span<const Triple>(negatives).subspan(j * k, k);
  }
};

/// Mean over positives of -log s(gamma - F(pos)) - sum_i p_i log s(F(neg_i) - gamma).
double loss_batch(const EmbeddingModel& model, const NegativeBatch& batch, double alpha);

/// Largest relative error between the analytic gradient of loss_batch and a
/// central finite difference, over every coordinate the batch touches. The
/// adversarial weights are held at their unperturbed values. Where both
/// gradients are below 1e-6 in magnitude the absolute error is used.
double grad_check(const EmbeddingModel& model, const NegativeBatch& batch, double alpha, double eps);

enum class Optimizer { sgd, adam };

struct TrainConfig {
  std::size_t negatives = 32;
  double lr = 0.5;
  std::size_t epochs = 500;
  std::size_t batch_size = 512;
  double alpha = 1.0;
  std::uint64_t seed = 0;
  std::vector<double> margin_grid = {0.0, 4.0, 6.0, 8.0, 12.0};
  Optimizer optimizer = Optimizer::sgd;
  std::size_t dim = 512;
  /// Use the OpenMP kernels; false selects the serial reference path.
  bool parallel = true;
};

void validate(const TrainConfig& config);

struct TrainResult {
  EmbeddingModel model;
  std::vector<double> history;  // mean loss per epoch
};

/// Minibatch optimization of the self-adversarial margin loss. Deterministic
/// for a fixed seed regardless of thread count. Throws TrainingError on a
/// non-finite epoch loss.
TrainResult train(const KnowledgeGraph& kg, const TrainConfig& config, ScoreFamily family,
                  double gamma);

/// Binary layout: "KGE1", u32 {family, |E|, |R|, d_e, d_r}, entity rows,
/// relation rows, gamma; all little-endian, reals as f32.
void save_embeddings(const EmbeddingModel& model, const std::filesystem::path& path);
EmbeddingModel load_embeddings(const std::filesystem::path& path,
                               const KnowledgeGraph* expected = nullptr);

/// Scores every triple. Uses the OpenMP path when `parallel` is set.
std::vector<double> score_all(const EmbeddingModel& model, std::span<const Triple> triples,
                              bool parallel = true);
std::vector<double> score_all(const EmbeddingModel& model, std::span<const LabeledTriple> triples,
                              bool parallel = true);

/// Real-valued vectors handed to the prefix adapter. Entity rows are returned
/// as stored. RotatE relation phases become [cos(theta) || sin(theta)] so every
/// vector has width d_e.
std::vector<double> entity_feature(const EmbeddingModel& model, EntityId e);
std::vector<double> relation_feature(const EmbeddingModel& model, RelationId r);

}  // namespace kopa
