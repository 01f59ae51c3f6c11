#pragma once

#include <compare>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "kopa/rng.hpp"

namespace kopa {

using EntityId = std::uint32_t;
using RelationId = std::uint32_t;

struct Triple {
  EntityId head = 0;
  RelationId relation = 0;
  EntityId tail = 0;

  auto operator<=>(const Triple&) const = default;
  bool touches(EntityId e) const noexcept { return head == e || tail == e; }
};

struct TripleHash {
  std::size_t operator()(const Triple& t) const noexcept {
    std::uint64_t x = (std::uint64_t{t.head} << 32) ^ (std::uint64_t{t.relation} << 16) ^ t.tail;
    return std::hash<std::uint64_t>{}(mix64(x));
  }
};

using TripleSet = std::unordered_set<Triple, TripleHash>;

struct LabeledTriple {
  Triple triple;
  bool label = false;

  bool operator==(const LabeledTriple&) const = default;
};

enum class Side { head, tail };

/// Ordered id vocabulary; indices are assigned in first-insertion order.
class Vocabulary {
 public:
  std::uint32_t intern(std::string_view id);
  const std::uint32_t* find(std::string_view id) const;
  const std::string& name(std::uint32_t index) const { return names_.at(index); }
  std::size_t size() const noexcept { return names_.size(); }
  const std::vector<std::string>& names() const noexcept { return names_; }

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, std::uint32_t> index_;
};

/// Entity/relation vocabularies, the training triple set and textual
/// descriptions. Immutable once built; all sampling reads it concurrently.
class KnowledgeGraph {
 public:
  KnowledgeGraph() = default;
  KnowledgeGraph(Vocabulary entities, Vocabulary relations, std::vector<Triple> train,
                 std::vector<std::string> entity_descriptions,
                 std::vector<std::string> relation_descriptions);

  const Vocabulary& entities() const noexcept { return entities_; }
  const Vocabulary& relations() const noexcept { return relations_; }
  std::size_t num_entities() const noexcept { return entities_.size(); }
  std::size_t num_relations() const noexcept { return relations_.size(); }

  /// Training triples in file order, deduplicated.
  std::span<const Triple> train() const noexcept { return train_; }
  bool is_train(const Triple& t) const { return train_set_.contains(t); }
  const TripleSet& train_set() const noexcept { return train_set_; }

  /// Indices into train() of the triples having `e` as head or tail, ascending.
  std::span<const std::uint32_t> incident(EntityId e) const { return incident_.at(e); }

  const std::string& entity_description(EntityId e) const { return entity_desc_.at(e); }
  const std::string& relation_description(RelationId r) const { return relation_desc_.at(r); }

  /// Same vocabularies and descriptions over a different training set.
  KnowledgeGraph with_train(std::vector<Triple> train) const;

  bool valid(const Triple& t) const noexcept {
    return t.head < num_entities() && t.tail < num_entities() && t.relation < num_relations();
  }

 private:
  Vocabulary entities_;
  Vocabulary relations_;
  std::vector<Triple> train_;
  TripleSet train_set_;
  std::vector<std::vector<std::uint32_t>> incident_;
  std::vector<std::string> entity_desc_;
  std::vector<std::string> relation_desc_;
};

struct DatasetPaths {
  std::filesystem::path train;
  std::filesystem::path valid;
  std::filesystem::path test;
  std::filesystem::path entity_descriptions;
  std::filesystem::path relation_descriptions;
  /// valid/test hold unlabeled positives (3 columns), read as label 1.
  bool positives_only = false;
};

struct Dataset {
  KnowledgeGraph graph;
  std::vector<LabeledTriple> valid;
  std::vector<LabeledTriple> test;
};

/// Reads the TSV layout. Vocabulary order is first appearance across
/// train, valid, test, then the two description files.
Dataset load_graph(const DatasetPaths& paths);

/// Writes `head\trelation\ttail[\tlabel]` lines with textual ids.
void write_triples(const std::filesystem::path& path, const KnowledgeGraph& kg,
                   std::span<const Triple> triples);
void write_labeled(const std::filesystem::path& path, const KnowledgeGraph& kg,
                   std::span<const LabeledTriple> triples);

/// Up to `limit` distinct train triples incident to `e`, uniformly without
/// replacement, in ascending train order. Triples in `exclude` are skipped.
std::vector<Triple> neighborhood(const KnowledgeGraph& kg, EntityId e, std::size_t limit, Rng& rng,
                                 const TripleSet* exclude = nullptr);

/// Replaces `side` of `t` with a uniformly drawn entity so that the result
/// is neither a training triple, a member of `extra_filter`, nor `t` itself.
/// Throws CorruptionExhausted if no entity qualifies.
Triple corrupt_triple(const KnowledgeGraph& kg, const Triple& t, Side side, Rng& rng,
                      const TripleSet* extra_filter = nullptr);

/// `count` filtered corruptions, each picking head or tail with probability 1/2.
std::vector<Triple> sample_negatives(const KnowledgeGraph& kg, const Triple& t, std::size_t count,
                                     Rng& rng, const TripleSet* extra_filter = nullptr);

using TripleScorer = std::function<double(const Triple&)>;

/// For each positive, draws `candidates_per_positive` filtered corruptions and
/// keeps the one with the lowest dissimilarity (first drawn wins ties).
/// Output alternates positive (true) then its hard negative (false).
std::vector<LabeledTriple> mine_hard_negatives(const KnowledgeGraph& kg, const TripleScorer& scorer,
                                               std::span<const Triple> positives,
                                               std::size_t candidates_per_positive, Rng& rng,
                                               const TripleSet* extra_filter = nullptr);

struct InductiveSplit {
  std::vector<EntityId> inductive_entities;  // ascending
  std::vector<Triple> retained_train;
  std::vector<LabeledTriple> seen_test;
  std::vector<LabeledTriple> unseen_test;
  double ir = 0.0;

  bool is_inductive(EntityId e) const;
};

/// round(ir * |E|) with halves rounded up.
std::size_t inductive_entity_count(double ir, std::size_t num_entities);

/// Hides round(ir*|E|) uniformly chosen entities from training and splits
/// `test` into seen/unseen by whether a triple touches a hidden entity.
InductiveSplit make_inductive_split(const KnowledgeGraph& kg, std::span<const LabeledTriple> test,
                                    double ir, Rng& rng);

/// Splits labeled triples into (seen, unseen) with respect to `split`.
std::pair<std::vector<LabeledTriple>, std::vector<LabeledTriple>> partition_seen_unseen(
    const InductiveSplit& split, std::span<const LabeledTriple> triples);

}  // namespace kopa
