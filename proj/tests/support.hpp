#pragma once

#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "kopa/kg.hpp"

namespace kopa::test {

inline const std::filesystem::path kUmlsDir = KOPA_UMLS_DIR;

inline DatasetPaths umls_paths() {
  return {kUmlsDir / "train.tsv", kUmlsDir / "valid.tsv", kUmlsDir / "test.tsv",
          kUmlsDir / "entities.tsv", kUmlsDir / "relations.tsv"};
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "kopa") {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / (tag + "-" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

  std::filesystem::path write(const std::string& name, const std::string& text) const {
    auto p = path_ / name;
    std::ofstream(p, std::ios::binary) << text;
    return p;
  }

 private:
  std::filesystem::path path_;
};

/// Writes a five-file dataset and returns its paths.
inline DatasetPaths write_dataset(const TempDir& dir, const std::string& train, const std::string& valid,
                                  const std::string& test, const std::string& entities = "",
                                  const std::string& relations = "") {
  return {dir.write("train.tsv", train), dir.write("valid.tsv", valid), dir.write("test.tsv", test),
          dir.write("entities.tsv", entities), dir.write("relations.tsv", relations)};
}

/// Small connected graph: `n` entities, `r` relations, a ring per relation
/// plus a few chords. Every entity has neighbours.
inline KnowledgeGraph ring_graph(std::size_t n, std::size_t r, std::size_t chords = 2) {
  Vocabulary ents, rels;
  std::vector<std::string> edesc, rdesc;
  for (std::size_t i = 0; i < n; ++i) {
    ents.intern("e" + std::to_string(i));
    edesc.push_back("entity " + std::to_string(i));
  }
  for (std::size_t j = 0; j < r; ++j) {
    rels.intern("r" + std::to_string(j));
    rdesc.push_back("relation " + std::to_string(j));
  }
  std::vector<Triple> train;
  for (std::size_t j = 0; j < r; ++j) {
    for (std::size_t i = 0; i < n; ++i) {
      train.push_back({EntityId(i), RelationId(j), EntityId((i + 1 + j) % n)});
      for (std::size_t c = 2; c < 2 + chords && c < n; ++c) {
        if ((i + j) % 3 == 0) train.push_back({EntityId(i), RelationId(j), EntityId((i + c * 3 + j) % n)});
      }
    }
  }
  return KnowledgeGraph(std::move(ents), std::move(rels), std::move(train), std::move(edesc), std::move(rdesc));
}

}  // namespace kopa::test
