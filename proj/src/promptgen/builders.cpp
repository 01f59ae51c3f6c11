#include <algorithm>
#include <cctype>
#include <iterator>

#include <spdlog/spdlog.h>

#include "kopa/error.hpp"
#include "kopa/parallel.hpp"
#include "kopa/promptgen.hpp"

namespace kopa {

std::string_view to_string(PromptMode m) {
  switch (m) {
    case PromptMode::zsr: return "zsr";
    case PromptMode::icl: return "icl";
    case PromptMode::it: return "it";
    case PromptMode::sit: return "sit";
    case PromptMode::kopa: return "kopa";
  }
  return "?";
}

PromptMode parse_mode(std::string_view name) {
  for (auto m : {PromptMode::zsr, PromptMode::icl, PromptMode::it, PromptMode::sit, PromptMode::kopa}) {
    if (name == to_string(m)) return m;
  }
  throw ConfigError("unknown prompt mode '" + std::string(name) + "'");
}

std::size_t PromptInstance::demonstration_lines() const {
  if (demonstration.empty()) return 0;
  return static_cast<std::size_t>(std::count(demonstration.begin(), demonstration.end(), '\n')) + 1;
}

std::string normalize_whitespace(std::string_view text) {
  std::string out;
  bool pending_space = false;
  for (unsigned char c : text) {
    if (std::isspace(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(static_cast<char>(c));
  }
  return out;
}

std::string verbalize_triple(const KnowledgeGraph& kg, const Triple& t) {
  auto part = [](const std::string& desc, const std::string& id) {
    auto d = normalize_whitespace(desc);
    return d.empty() ? normalize_whitespace(id) : d;
  };
  return part(kg.entity_description(t.head), kg.entities().name(t.head)) + " " +
         part(kg.relation_description(t.relation), kg.relations().name(t.relation)) + " " +
         part(kg.entity_description(t.tail), kg.entities().name(t.tail));
}

namespace {

PromptInstance base_instance(const KnowledgeGraph& kg, PromptMode mode, const Triple& t,
                             std::optional<bool> label) {
  PromptInstance inst;
  inst.mode = mode;
  inst.instruction = std::string(kInstruction);
  inst.triple_text = verbalize_triple(kg, t);
  inst.triple = t;
  if (label) inst.answer = std::string(answer_text(*label));
  return inst;
}

std::string join_lines(const std::vector<std::string>& lines) {
  std::string out;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (i) out.push_back('\n');
    out += lines[i];
  }
  return out;
}

}  // namespace

PromptInstance build_zsr(const KnowledgeGraph& kg, const Triple& t) {
  return base_instance(kg, PromptMode::zsr, t, std::nullopt);
}

DemoSet sample_demos(const KnowledgeGraph& kg, const Triple& t, std::size_t k, Rng& rng) {
  if (k == 0) throw ConfigError("demonstration count k must be >= 1");
  const TripleSet exclude{t};

  std::vector<std::uint32_t> pool_idx;
  auto add = [&](EntityId e) {
    for (auto idx : kg.incident(e)) pool_idx.push_back(idx);
  };
  add(t.head);
  if (t.tail != t.head) add(t.tail);
  std::sort(pool_idx.begin(), pool_idx.end());
  pool_idx.erase(std::unique(pool_idx.begin(), pool_idx.end()), pool_idx.end());
  std::vector<Triple> pool;
  for (auto idx : pool_idx) {
    if (kg.train()[idx] != t) pool.push_back(kg.train()[idx]);
  }
  if (pool.empty()) {
    spdlog::warn("query ({}, {}, {}) has no neighbourhood; sampling demonstrations uniformly",
                 kg.entities().name(t.head), kg.relations().name(t.relation),
                 kg.entities().name(t.tail));
    for (const auto& x : kg.train()) {
      if (x != t) pool.push_back(x);
    }
    if (pool.empty()) throw DataError("no training triples available for demonstrations");
  }

  const std::size_t n_pos = (k + 1) / 2, n_neg = k / 2;
  std::vector<Triple> positives;
  std::sample(pool.begin(), pool.end(), std::back_inserter(positives), n_pos, rng);
  std::uniform_int_distribution<std::size_t> any(0, pool.size() - 1);
  while (positives.size() < n_pos) positives.push_back(pool[any(rng)]);

  auto shared = [&](EntityId e) { return e == t.head || e == t.tail; };
  std::bernoulli_distribution coin(0.5);
  std::vector<Triple> negatives;
  for (std::size_t i = 0; i < n_neg; ++i) {
    const auto& base = positives[i % positives.size()];
    const bool keep_head = shared(base.head), keep_tail = shared(base.tail);
    Side side;
    if (keep_head && keep_tail) side = coin(rng) ? Side::head : Side::tail;
    else if (keep_head) side = Side::tail;
    else if (keep_tail) side = Side::head;
    else side = coin(rng) ? Side::head : Side::tail;
    negatives.push_back(corrupt_triple(kg, base, side, rng, &exclude));
  }

  DemoSet demos;
  demos.k = k;
  for (std::size_t i = 0; i < n_pos; ++i) {
    demos.items.push_back({positives[i], true});
    if (i < n_neg) demos.items.push_back({negatives[i], false});
  }
  return demos;
}

PromptInstance build_icl(const KnowledgeGraph& kg, const Triple& t, std::size_t k, Rng& rng) {
  auto inst = base_instance(kg, PromptMode::icl, t, std::nullopt);
  auto demos = sample_demos(kg, t, k, rng);
  std::vector<std::string> lines;
  for (const auto& d : demos.items) {
    lines.push_back(verbalize_triple(kg, d.triple) + " -> " + std::string(answer_text(d.label)));
  }
  inst.demonstration = join_lines(lines);
  return inst;
}

PromptInstance build_it(const KnowledgeGraph& kg, const Triple& t, std::optional<bool> label) {
  return base_instance(kg, PromptMode::it, t, label);
}

PromptInstance build_sit(const KnowledgeGraph& kg, const Triple& t, std::size_t m, Rng& rng,
                         std::optional<bool> label) {
  auto inst = base_instance(kg, PromptMode::sit, t, label);
  const std::size_t head_quota = m - m / 2, tail_quota = m / 2;

  TripleSet exclude{t};
  auto head_lines = neighborhood(kg, t.head, head_quota, rng, &exclude);
  exclude.insert(head_lines.begin(), head_lines.end());
  auto tail_lines =
      neighborhood(kg, t.tail, tail_quota + (head_quota - head_lines.size()), rng, &exclude);
  if (tail_lines.size() < tail_quota) {
    exclude.insert(tail_lines.begin(), tail_lines.end());
    auto extra = neighborhood(kg, t.head, tail_quota - tail_lines.size(), rng, &exclude);
    head_lines.insert(head_lines.end(), extra.begin(), extra.end());
  }

  std::vector<std::string> lines;
  for (const auto& x : head_lines) lines.push_back(verbalize_triple(kg, x));
  for (const auto& x : tail_lines) lines.push_back(verbalize_triple(kg, x));
  inst.demonstration = join_lines(lines);
  return inst;
}

PromptInstance build_kopa(const KnowledgeGraph& kg, const Triple& t, std::optional<bool> label) {
  auto inst = base_instance(kg, PromptMode::kopa, t, label);
  inst.prefix = t;
  return inst;
}

namespace {

PromptInstance build_labeled(const KnowledgeGraph& kg, PromptMode mode, const Triple& t, bool label,
                             std::size_t m, Rng& rng) {
  switch (mode) {
    case PromptMode::it: return build_it(kg, t, label);
    case PromptMode::sit: return build_sit(kg, t, m, rng, label);
    case PromptMode::kopa: return build_kopa(kg, t, label);
    default: throw ConfigError("mode " + std::string(to_string(mode)) + " has no labelled form");
  }
}

}  // namespace

std::vector<PromptInstance> build_training_corpus(const KnowledgeGraph& kg, PromptMode mode,
                                                  std::size_t m, Rng& rng) {
  if (mode != PromptMode::it && mode != PromptMode::sit && mode != PromptMode::kopa) {
    throw ConfigError("training corpora exist only for it, sit and kopa modes");
  }
  const auto train = kg.train();
  const std::uint64_t master = rng();
  std::vector<PromptInstance> out(2 * train.size());
  parallel_for(train.size(), [&](std::size_t i) {
    auto local = derive_rng(master, {i});
    std::bernoulli_distribution coin(0.5);
    const Triple& pos = train[i];
    const Triple neg = corrupt_triple(kg, pos, coin(local) ? Side::head : Side::tail, local);
    out[2 * i] = build_labeled(kg, mode, pos, true, m, local);
    out[2 * i + 1] = build_labeled(kg, mode, neg, false, m, local);
  });
  std::shuffle(out.begin(), out.end(), rng);
  return out;
}

std::vector<PromptInstance> build_it_corpus(const KnowledgeGraph& kg, Rng& rng) {
  return build_training_corpus(kg, PromptMode::it, 0, rng);
}

std::vector<PromptInstance> build_eval_prompts(const KnowledgeGraph& kg, PromptMode mode,
                                               std::span<const LabeledTriple> triples,
                                               std::size_t k, std::size_t m, Rng& rng) {
  const std::uint64_t master = rng();
  std::vector<PromptInstance> out(triples.size());
  parallel_for(triples.size(), [&](std::size_t i) {
    auto local = derive_rng(master, {i});
    const auto& lt = triples[i];
    switch (mode) {
      case PromptMode::zsr: out[i] = build_zsr(kg, lt.triple); break;
      case PromptMode::icl: out[i] = build_icl(kg, lt.triple, k, local); break;
      default: out[i] = build_labeled(kg, mode, lt.triple, lt.label, m, local); break;
    }
  });
  return out;
}

}  // namespace kopa
