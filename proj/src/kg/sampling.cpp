#include <algorithm>
#include <cmath>
#include <iterator>

#include "kopa/error.hpp"
#include "kopa/kg.hpp"

namespace kopa {

std::vector<Triple> neighborhood(const KnowledgeGraph& kg, EntityId e, std::size_t limit, Rng& rng,
                                 const TripleSet* exclude) {
  std::vector<Triple> pool;
  for (auto idx : kg.incident(e)) {
    const auto& t = kg.train()[idx];
    if (exclude && exclude->contains(t)) continue;
    pool.push_back(t);
  }
  std::vector<Triple> out;
  out.reserve(std::min(limit, pool.size()));
  std::sample(pool.begin(), pool.end(), std::back_inserter(out), limit, rng);
  return out;
}

namespace {

constexpr int kRejectionAttempts = 64;

Triple with_side(Triple t, Side side, EntityId e) {
  (side == Side::head ? t.head : t.tail) = e;
  return t;
}

}  // namespace

Triple corrupt_triple(const KnowledgeGraph& kg, const Triple& t, Side side, Rng& rng,
                      const TripleSet* extra_filter) {
  const auto n = kg.num_entities();
  auto blocked = [&](const Triple& c) {
    return c == t || kg.is_train(c) || (extra_filter && extra_filter->contains(c));
  };
  if (n > 0) {
    std::uniform_int_distribution<EntityId> pick(0, static_cast<EntityId>(n - 1));
    for (int attempt = 0; attempt < kRejectionAttempts; ++attempt) {
      auto c = with_side(t, side, pick(rng));
      if (!blocked(c)) return c;
    }
  }
  // Dense neighbourhoods: enumerate what is left. Uniform over the same set
  // the rejection loop samples from.
  std::vector<EntityId> allowed;
  for (EntityId e = 0; e < n; ++e) {
    if (!blocked(with_side(t, side, e))) allowed.push_back(e);
  }
  if (allowed.empty()) {
    throw CorruptionExhausted("no filtered " + std::string(side == Side::head ? "head" : "tail") +
                              " corruption exists for triple (" + std::to_string(t.head) + ", " +
                              std::to_string(t.relation) + ", " + std::to_string(t.tail) + ")");
  }
  std::uniform_int_distribution<std::size_t> pick(0, allowed.size() - 1);
  return with_side(t, side, allowed[pick(rng)]);
}

std::vector<Triple> sample_negatives(const KnowledgeGraph& kg, const Triple& t, std::size_t count,
                                     Rng& rng, const TripleSet* extra_filter) {
  if (count == 0) throw ConfigError("negative sample count must be >= 1");
  std::bernoulli_distribution head_side(0.5);
  std::vector<Triple> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    out.push_back(corrupt_triple(kg, t, head_side(rng) ? Side::head : Side::tail, rng, extra_filter));
  }
  return out;
}

std::vector<LabeledTriple> mine_hard_negatives(const KnowledgeGraph& kg, const TripleScorer& scorer,
                                               std::span<const Triple> positives,
                                               std::size_t candidates_per_positive, Rng& rng,
                                               const TripleSet* extra_filter) {
  if (candidates_per_positive == 0) throw ConfigError("candidate pool must be >= 1");
  std::vector<LabeledTriple> out;
  out.reserve(positives.size() * 2);
  for (const auto& p : positives) {
    auto candidates = sample_negatives(kg, p, candidates_per_positive, rng, extra_filter);
    std::size_t best = 0;
    double best_score = scorer(candidates[0]);
    for (std::size_t i = 1; i < candidates.size(); ++i) {
      double s = scorer(candidates[i]);
      if (s < best_score) {
        best = i;
        best_score = s;
      }
    }
    out.push_back({p, true});
    out.push_back({candidates[best], false});
  }
  return out;
}

bool InductiveSplit::is_inductive(EntityId e) const {
  return std::binary_search(inductive_entities.begin(), inductive_entities.end(), e);
}

std::size_t inductive_entity_count(double ir, std::size_t num_entities) {
  return static_cast<std::size_t>(std::floor(ir * static_cast<double>(num_entities) + 0.5));
}

std::pair<std::vector<LabeledTriple>, std::vector<LabeledTriple>> partition_seen_unseen(
    const InductiveSplit& split, std::span<const LabeledTriple> triples) {
  std::pair<std::vector<LabeledTriple>, std::vector<LabeledTriple>> out;
  for (const auto& lt : triples) {
    bool unseen = split.is_inductive(lt.triple.head) || split.is_inductive(lt.triple.tail);
    (unseen ? out.second : out.first).push_back(lt);
  }
  return out;
}

InductiveSplit make_inductive_split(const KnowledgeGraph& kg, std::span<const LabeledTriple> test,
                                    double ir, Rng& rng) {
  if (!(ir >= 0.0 && ir < 1.0)) throw ConfigError("inductive rate must lie in [0, 1)");
  InductiveSplit split;
  split.ir = ir;

  std::vector<EntityId> all(kg.num_entities());
  for (EntityId e = 0; e < all.size(); ++e) all[e] = e;
  std::sample(all.begin(), all.end(), std::back_inserter(split.inductive_entities),
              inductive_entity_count(ir, kg.num_entities()), rng);

  for (const auto& t : kg.train()) {
    if (!split.is_inductive(t.head) && !split.is_inductive(t.tail)) split.retained_train.push_back(t);
  }
  if (split.retained_train.empty() && !kg.train().empty()) {
    throw DegenerateSplit("inductive rate " + std::to_string(ir) + " removes every training triple");
  }
  std::tie(split.seen_test, split.unseen_test) = partition_seen_unseen(split, test);
  return split;
}

}  // namespace kopa
