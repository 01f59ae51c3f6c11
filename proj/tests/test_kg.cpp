#include <doctest.h>

#include <algorithm>
#include <set>

#include "kopa/error.hpp"
#include "kopa/kg.hpp"
#include "support.hpp"

using namespace kopa;
using kopa::test::TempDir;

namespace {

KnowledgeGraph abc_graph(std::vector<Triple> train) {
  Vocabulary ents, rels;
  for (auto n : {"a", "b", "c"}) ents.intern(n);
  rels.intern("r");
  return KnowledgeGraph(ents, rels, std::move(train), {}, {});
}

KnowledgeGraph ab_graph(std::vector<Triple> train) {
  Vocabulary ents, rels;
  ents.intern("a");
  ents.intern("b");
  rels.intern("r");
  return KnowledgeGraph(ents, rels, std::move(train), {}, {});
}

}  // namespace

TEST_CASE("UMLS loads with the published counts") {
  auto ds = load_graph(kopa::test::umls_paths());
  CHECK(ds.graph.num_entities() == 135);
  CHECK(ds.graph.num_relations() == 46);
  CHECK(ds.graph.train().size() == 5216);
  auto positives = [](const auto& v) { return std::count_if(v.begin(), v.end(), [](auto& t) { return t.label; }); };
  CHECK(ds.valid.size() == 1304);
  CHECK(positives(ds.valid) == 652);
  CHECK(ds.test.size() == 1322);
  CHECK(positives(ds.test) == 661);
}

TEST_CASE("loading is idempotent") {
  auto a = load_graph(kopa::test::umls_paths());
  auto b = load_graph(kopa::test::umls_paths());
  CHECK(a.graph.entities().names() == b.graph.entities().names());
  CHECK(a.graph.relations().names() == b.graph.relations().names());
  CHECK(std::equal(a.graph.train().begin(), a.graph.train().end(), b.graph.train().begin(), b.graph.train().end()));
  CHECK(a.test == b.test);
}

TEST_CASE("empty train file with described entities") {
  TempDir dir;
  auto paths = kopa::test::write_dataset(dir, "", "", "", "x\tfirst entity\ny\tsecond entity\n", "");
  auto ds = load_graph(paths);
  CHECK(ds.graph.train().empty());
  CHECK(ds.graph.num_entities() == 2);
  CHECK(ds.graph.entity_description(1) == "second entity");
}

TEST_CASE("duplicate training triples are dropped") {
  TempDir dir;
  auto paths = kopa::test::write_dataset(dir, "a\tr\tb\nb\tr\tc\na\tr\tb\n", "", "");
  auto ds = load_graph(paths);
  CHECK(ds.graph.train().size() == 2);
  CHECK(ds.graph.num_entities() == 3);
}

TEST_CASE("vocabulary follows first appearance and covers every id") {
  TempDir dir;
  auto paths = kopa::test::write_dataset(dir, "b\tr\ta\r\n\n", "c\ts\ta\t1\n", "d\tr\tb\t0\n", "a\tdesc a\ne\t\n", "");
  auto ds = load_graph(paths);
  CHECK(ds.graph.entities().names() == std::vector<std::string>{"b", "a", "c", "d", "e"});
  CHECK(ds.graph.relations().names() == std::vector<std::string>{"r", "s"});
  CHECK(ds.graph.entity_description(1) == "desc a");
  CHECK(ds.graph.entity_description(0).empty());
  CHECK(ds.valid[0].label);
  CHECK_FALSE(ds.test[0].label);
}

TEST_CASE("malformed lines report their line number") {
  TempDir dir;
  SUBCASE("train with a label column") {
    auto paths = kopa::test::write_dataset(dir, "a\tr\tb\na\tr\tc\t1\n", "", "");
    try {
      load_graph(paths);
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      CHECK(e.line() == 2);
    }
  }
  SUBCASE("test without a label") {
    auto paths = kopa::test::write_dataset(dir, "a\tr\tb\n", "", "a\tr\tb\t1\n\na\tr\tb\n");
    try {
      load_graph(paths);
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      CHECK(e.line() == 3);
    }
  }
  SUBCASE("bad label") {
    auto paths = kopa::test::write_dataset(dir, "a\tr\tb\n", "a\tr\tb\tyes\n", "");
    CHECK_THROWS_AS(load_graph(paths), ParseError);
  }
  SUBCASE("missing file") {
    auto paths = kopa::test::write_dataset(dir, "", "", "");
    paths.valid = dir / "nope.tsv";
    CHECK_THROWS_AS(load_graph(paths), DataError);
  }
}

TEST_CASE("write_labeled round-trips through the loader") {
  TempDir dir;
  auto ds = load_graph(kopa::test::umls_paths());
  write_labeled(dir / "t.tsv", ds.graph, ds.test);
  auto paths = kopa::test::umls_paths();
  paths.test = dir / "t.tsv";
  CHECK(load_graph(paths).test == ds.test);
}

TEST_CASE("neighborhood") {
  auto kg = abc_graph({{0, 0, 1}, {2, 0, 0}});
  Rng rng(1);
  SUBCASE("fewer neighbours than the limit returns all of them") {
    auto n = neighborhood(kg, 0, 4, rng);
    CHECK(n.size() == 2);
  }
  SUBCASE("limit zero") { CHECK(neighborhood(kg, 0, 0, rng).empty()); }

  SUBCASE("fixed seed gives a reproducible subset of the incident triples") {
    auto big = kopa::test::ring_graph(12, 5);
    const EntityId e = 3;
    std::vector<Triple> incident;
    for (const auto& t : big.train()) {
      if (t.head == e || t.tail == e) incident.push_back(t);
    }
    REQUIRE(incident.size() >= 10);
    Rng a(99), b(99);
    auto first = neighborhood(big, e, 4, a);
    auto second = neighborhood(big, e, 4, b);
    CHECK(first == second);
    CHECK(first.size() == 4);
    std::set<Triple> distinct(first.begin(), first.end());
    CHECK(distinct.size() == 4);
    for (const auto& t : first) CHECK(std::find(incident.begin(), incident.end(), t) != incident.end());
  }
}

TEST_CASE("corrupt_triple") {
  SUBCASE("only two candidates") {
    auto kg = abc_graph({{0, 0, 1}});
    Rng rng(3);
    std::set<EntityId> seen;
    for (int i = 0; i < 200; ++i) {
      auto c = corrupt_triple(kg, {0, 0, 1}, Side::tail, rng);
      CHECK(c.head == 0);
      CHECK(c.relation == 0);
      CHECK(!kg.is_train(c));
      seen.insert(c.tail);
    }
    CHECK(seen == std::set<EntityId>{0, 2});
  }
  SUBCASE("no candidate left") {
    auto kg = ab_graph({{0, 0, 0}, {0, 0, 1}});
    Rng rng(3);
    CHECK_THROWS_AS(corrupt_triple(kg, {0, 0, 1}, Side::tail, rng), CorruptionExhausted);
  }
  SUBCASE("seeded replay on UMLS") {
    auto ds = load_graph(kopa::test::umls_paths());
    Rng a(17), b(17);
    auto t = ds.graph.train()[42];
    auto x = corrupt_triple(ds.graph, t, Side::head, a);
    CHECK(x == corrupt_triple(ds.graph, t, Side::head, b));
    CHECK(x.tail == t.tail);
    CHECK_FALSE(ds.graph.is_train(x));
  }
  SUBCASE("extra filter is honoured") {
    auto kg = abc_graph({{0, 0, 1}});
    TripleSet extra{{0, 0, 0}};
    Rng rng(5);
    for (int i = 0; i < 50; ++i) CHECK(corrupt_triple(kg, {0, 0, 1}, Side::tail, rng, &extra).tail == 2);
  }
}

TEST_CASE("sample_negatives") {
  auto ds = load_graph(kopa::test::umls_paths());
  const auto& kg = ds.graph;
  Rng rng(8);
  auto t = kg.train()[7];
  auto negs = sample_negatives(kg, t, 32, rng);
  CHECK(negs.size() == 32);
  for (const auto& n : negs) CHECK_FALSE(kg.is_train(n));

  auto small = abc_graph({{0, 0, 1}});
  auto one = sample_negatives(small, {0, 0, 1}, 1, rng);
  REQUIRE(one.size() == 1);
  CHECK_FALSE(small.is_train(one[0]));
  CHECK_THROWS_AS(sample_negatives(small, {0, 0, 1}, 0, rng), ConfigError);

  // 1e5 draws, head side should be 50% +- 1%.
  std::size_t heads = 0;
  const std::size_t draws = 100000;
  auto many = sample_negatives(kg, t, draws, rng);
  for (const auto& n : many) heads += n.head != t.head;
  const double share = double(heads) / double(draws);
  CHECK(std::abs(share - 0.5) < 0.01);
}

TEST_CASE("mine_hard_negatives") {
  auto kg = kopa::test::ring_graph(40, 2);
  std::vector<Triple> pos{kg.train()[0]};

  SUBCASE("argmin of the candidate dissimilarities") {
    // Score candidates by their index of appearance: first 3.0, second 1.0, third 2.0.
    Rng probe(21);
    auto drawn = sample_negatives(kg, pos[0], 3, probe);
    auto scorer = [&](const Triple& t) {
      if (t == drawn[0]) return 3.0;
      if (t == drawn[1]) return 1.0;
      return 2.0;
    };
    Rng rng(21);
    auto out = mine_hard_negatives(kg, scorer, pos, 3, rng);
    REQUIRE(out.size() == 2);
    CHECK(out[0] == LabeledTriple{pos[0], true});
    CHECK_FALSE(out[1].label);
    REQUIRE(drawn[1] != drawn[0]);
    REQUIRE(drawn[2] != drawn[1]);
    CHECK(out[1].triple == drawn[1]);
  }
  SUBCASE("constant scorer keeps the first candidate") {
    Rng probe(4);
    auto drawn = sample_negatives(kg, pos[0], 5, probe);
    Rng rng(4);
    auto out = mine_hard_negatives(kg, [](const Triple&) { return 0.0; }, pos, 5, rng);
    CHECK(out[1].triple == drawn[0]);
  }
  SUBCASE("one negative per positive on UMLS test positives") {
    auto ds = load_graph(kopa::test::umls_paths());
    std::vector<Triple> positives;
    for (const auto& t : ds.test) {
      if (t.label) positives.push_back(t.triple);
    }
    REQUIRE(positives.size() == 661);
    TripleSet known(positives.begin(), positives.end());
    Rng rng(2);
    auto out = mine_hard_negatives(ds.graph, [](const Triple& t) { return double(t.head + t.tail); }, positives, 30,
                                   rng, &known);
    CHECK(out.size() == 1322);
    std::size_t n_pos = 0;
    for (std::size_t i = 0; i < out.size(); ++i) {
      n_pos += out[i].label;
      if (!out[i].label) {
        CHECK_FALSE(ds.graph.is_train(out[i].triple));
        CHECK_FALSE(known.contains(out[i].triple));
      }
    }
    CHECK(n_pos == 661);
  }
}

TEST_CASE("inductive split") {
  auto ds = load_graph(kopa::test::umls_paths());
  const auto& kg = ds.graph;

  SUBCASE("ir = 0 is the full setting") {
    Rng rng(1);
    auto s = make_inductive_split(kg, ds.test, 0.0, rng);
    CHECK(s.inductive_entities.empty());
    CHECK(s.unseen_test.empty());
    CHECK(s.seen_test == ds.test);
    CHECK(s.retained_train.size() == kg.train().size());
  }
  SUBCASE("rounding is half-up") {
    CHECK(inductive_entity_count(0.1, 135) == 14);
    CHECK(inductive_entity_count(0.5, 3) == 2);
    CHECK(inductive_entity_count(0.2, 135) == 27);
  }
  SUBCASE("invariants for several rates") {
    for (double ir : {0.1, 0.2, 0.3}) {
      Rng rng(11);
      auto s = make_inductive_split(kg, ds.test, ir, rng);
      CHECK(s.inductive_entities.size() == inductive_entity_count(ir, 135));
      CHECK(std::is_sorted(s.inductive_entities.begin(), s.inductive_entities.end()));
      for (const auto& t : s.retained_train) CHECK_FALSE((s.is_inductive(t.head) || s.is_inductive(t.tail)));
      std::size_t dropped = 0;
      for (const auto& t : kg.train()) dropped += s.is_inductive(t.head) || s.is_inductive(t.tail);
      CHECK(dropped + s.retained_train.size() == kg.train().size());
      for (const auto& t : s.unseen_test) CHECK((s.is_inductive(t.triple.head) || s.is_inductive(t.triple.tail)));
      for (const auto& t : s.seen_test) CHECK_FALSE((s.is_inductive(t.triple.head) || s.is_inductive(t.triple.tail)));
      CHECK(s.seen_test.size() + s.unseen_test.size() == ds.test.size());
    }
  }
  SUBCASE("head in the inductive set lands in unseen") {
    Rng rng(5);
    auto s = make_inductive_split(kg, ds.test, 0.1, rng);
    for (const auto& t : ds.test) {
      if (s.is_inductive(t.triple.head)) {
        CHECK(std::find(s.unseen_test.begin(), s.unseen_test.end(), t) != s.unseen_test.end());
      }
    }
  }
  SUBCASE("bad rates and degenerate splits") {
    Rng rng(5);
    CHECK_THROWS_AS(make_inductive_split(kg, ds.test, 1.0, rng), ConfigError);
    CHECK_THROWS_AS(make_inductive_split(kg, ds.test, -0.1, rng), ConfigError);
    auto tiny = ab_graph({{0, 0, 1}});
    CHECK_THROWS_AS(make_inductive_split(tiny, {}, 0.5, rng), DegenerateSplit);
  }
}
