#include <fstream>
#include <utility>

#include <spdlog/spdlog.h>

#include "kopa/error.hpp"
#include "kopa/kg.hpp"

namespace kopa {

std::uint32_t Vocabulary::intern(std::string_view id) {
  if (auto it = index_.find(std::string(id)); it != index_.end()) return it->second;
  auto idx = static_cast<std::uint32_t>(names_.size());
  names_.emplace_back(id);
  index_.emplace(names_.back(), idx);
  return idx;
}

const std::uint32_t* Vocabulary::find(std::string_view id) const {
  auto it = index_.find(std::string(id));
  return it == index_.end() ? nullptr : &it->second;
}

KnowledgeGraph::KnowledgeGraph(Vocabulary entities, Vocabulary relations, std::vector<Triple> train,
                               std::vector<std::string> entity_descriptions,
                               std::vector<std::string> relation_descriptions)
    : entities_(std::move(entities)),
      relations_(std::move(relations)),
      entity_desc_(std::move(entity_descriptions)),
      relation_desc_(std::move(relation_descriptions)) {
  entity_desc_.resize(entities_.size());
  relation_desc_.resize(relations_.size());
  incident_.resize(entities_.size());
  train_.reserve(train.size());
  for (const auto& t : train) {
    if (!valid(t)) throw DataError("training triple references an unknown index");
    if (!train_set_.insert(t).second) continue;
    auto idx = static_cast<std::uint32_t>(train_.size());
    train_.push_back(t);
    incident_[t.head].push_back(idx);
    if (t.tail != t.head) incident_[t.tail].push_back(idx);
  }
}

KnowledgeGraph KnowledgeGraph::with_train(std::vector<Triple> train) const {
  return KnowledgeGraph(entities_, relations_, std::move(train), entity_desc_, relation_desc_);
}

namespace {

std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> cols;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find('\t', start);
    cols.push_back(line.substr(start, pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return cols;
}

template <typename Fn>
void for_each_line(const std::filesystem::path& path, Fn&& fn) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    fn(std::string_view(line), lineno);
  }
}

struct Builder {
  Vocabulary entities;
  Vocabulary relations;
  std::vector<std::string> entity_desc;
  std::vector<std::string> relation_desc;

  Triple triple(std::span<const std::string_view> cols) {
    return Triple{entities.intern(cols[0]), relations.intern(cols[1]), entities.intern(cols[2])};
  }
};

std::vector<LabeledTriple> read_labeled(const std::filesystem::path& path, Builder& b,
                                        bool positives_only) {
  const std::size_t want = positives_only ? 3 : 4;
  std::vector<LabeledTriple> out;
  for_each_line(path, [&](std::string_view line, std::size_t lineno) {
    auto cols = split_tabs(line);
    if (cols.size() != want) {
      throw ParseError(path.string(), lineno,
                       "expected " + std::to_string(want) + " tab-separated columns, got " +
                           std::to_string(cols.size()));
    }
    if (positives_only) {
      out.push_back({b.triple(cols), true});
      return;
    }
    if (cols[3] != "1" && cols[3] != "0") {
      throw ParseError(path.string(), lineno, "label must be 1 or 0");
    }
    out.push_back({b.triple(cols), cols[3] == "1"});
  });
  return out;
}

void read_descriptions(const std::filesystem::path& path, Vocabulary& vocab,
                       std::vector<std::string>& desc) {
  for_each_line(path, [&](std::string_view line, std::size_t lineno) {
    auto tab = line.find('\t');
    auto id = line.substr(0, tab);
    if (id.empty()) throw ParseError(path.string(), lineno, "empty id");
    auto idx = vocab.intern(id);
    if (desc.size() <= idx) desc.resize(idx + 1);
    desc[idx] = tab == std::string_view::npos ? std::string() : std::string(line.substr(tab + 1));
  });
}

}  // namespace

Dataset load_graph(const DatasetPaths& paths) {
  Builder b;
  std::vector<Triple> train;
  std::size_t duplicates = 0;
  TripleSet seen;
  for_each_line(paths.train, [&](std::string_view line, std::size_t lineno) {
    auto cols = split_tabs(line);
    if (cols.size() != 3) {
      throw ParseError(paths.train.string(), lineno,
                       "expected 3 tab-separated columns, got " + std::to_string(cols.size()));
    }
    auto t = b.triple(cols);
    if (!seen.insert(t).second) {
      ++duplicates;
      return;
    }
    train.push_back(t);
  });
  if (duplicates > 0) {
    spdlog::warn("{}: dropped {} duplicate training triple(s)", paths.train.string(), duplicates);
  }

  auto valid = read_labeled(paths.valid, b, paths.positives_only);
  auto test = read_labeled(paths.test, b, paths.positives_only);
  read_descriptions(paths.entity_descriptions, b.entities, b.entity_desc);
  read_descriptions(paths.relation_descriptions, b.relations, b.relation_desc);

  Dataset ds{KnowledgeGraph(std::move(b.entities), std::move(b.relations), std::move(train),
                            std::move(b.entity_desc), std::move(b.relation_desc)),
             std::move(valid), std::move(test)};
  spdlog::debug("loaded |E|={} |R|={} train={} valid={} test={}", ds.graph.num_entities(),
                ds.graph.num_relations(), ds.graph.train().size(), ds.valid.size(), ds.test.size());
  return ds;
}

namespace {

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  return out;
}

void put_triple(std::ostream& out, const KnowledgeGraph& kg, const Triple& t) {
  out << kg.entities().name(t.head) << '\t' << kg.relations().name(t.relation) << '\t'
      << kg.entities().name(t.tail);
}

}  // namespace

void write_triples(const std::filesystem::path& path, const KnowledgeGraph& kg,
                   std::span<const Triple> triples) {
  auto out = open_out(path);
  for (const auto& t : triples) {
    put_triple(out, kg, t);
    out << '\n';
  }
}

void write_labeled(const std::filesystem::path& path, const KnowledgeGraph& kg,
                   std::span<const LabeledTriple> triples) {
  auto out = open_out(path);
  for (const auto& lt : triples) {
    put_triple(out, kg, lt.triple);
    out << '\t' << (lt.label ? '1' : '0') << '\n';
  }
}

}  // namespace kopa
