#include <numeric>
#include <sstream>

#include <doctest.h>

#include "kopa/error.hpp"
#include "kopa/promptgen.hpp"
#include "support.hpp"

using namespace kopa;

namespace {

KnowledgeGraph tiny_kg() {
  Vocabulary ents, rels;
  for (auto n : {"/m/0ctzf1", "/m/anim", "/m/x"}) ents.intern(n);
  rels.intern("/film/genre");
  return KnowledgeGraph(std::move(ents), std::move(rels), {{0, 0, 1}, {2, 0, 1}},
                        {"The Transformers", "animation", ""}, {"genre"});
}

const Dataset& umls() {
  static const Dataset d = load_graph(test::umls_paths());
  return d;
}

// Least-squares slope and coefficient of determination.
std::pair<double, double> linear_fit(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = double(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  return {sxy / sxx, sxy * sxy / (sxx * syy)};
}

}  // namespace

TEST_CASE("verbalize") {
  auto kg = tiny_kg();
  CHECK(verbalize_triple(kg, {0, 0, 1}) == "The Transformers genre animation");
  CHECK(verbalize_triple(kg, {2, 0, 1}) == "/m/x genre animation");

  Vocabulary ents, rels;
  ents.intern("a");
  ents.intern("b");
  rels.intern("r");
  KnowledgeGraph bare(std::move(ents), std::move(rels), {}, {"", ""}, {""});
  CHECK(verbalize_triple(bare, {0, 0, 1}) == "a r b");

  Vocabulary e2, r2;
  e2.intern("a");
  r2.intern("r");
  KnowledgeGraph messy(std::move(e2), std::move(r2), {}, {"  two\twords\n here "}, {"is\r\nlinked"});
  CHECK(verbalize_triple(messy, {0, 0, 0}) == "two words here is linked two words here");
  CHECK(normalize_whitespace("\t a  b \n") == "a b");
}

TEST_CASE("zsr") {
  auto kg = tiny_kg();
  auto a = build_zsr(kg, {0, 0, 1});
  auto b = build_zsr(kg, {2, 0, 1});
  CHECK(a.instruction == b.instruction);
  CHECK(a.instruction == kInstruction);
  CHECK(a.triple_text != b.triple_text);
  CHECK(a.demonstration.empty());
  CHECK_FALSE(a.answer.has_value());
  auto text = serialize_prompt(a);
  CHECK(text.find("Examples:") == std::string::npos);
  CHECK(text.find("Neighborhood facts:") == std::string::npos);
  CHECK(from_json_line(to_json_line(a)) == a);
}

TEST_CASE("sample_demos shot counts and sharing") {
  const auto& kg = umls().graph;
  Rng rng(5);
  for (std::size_t k : {1u, 2u, 4u, 8u}) {
    for (int i = 0; i < 50; ++i) {
      const auto& q = umls().test[rng() % umls().test.size()].triple;
      auto demos = sample_demos(kg, q, k, rng);
      REQUIRE(demos.items.size() == k);
      std::size_t pos = 0;
      for (std::size_t j = 0; j < demos.items.size(); ++j) {
        const auto& d = demos.items[j];
        CHECK((d.triple.touches(q.head) || d.triple.touches(q.tail)));
        CHECK(d.triple != q);
        pos += d.label;
        // Interleaved pos/neg/pos/...
        CHECK(d.label == (j % 2 == 0));
        if (d.label) CHECK(kg.is_train(d.triple));
        else CHECK_FALSE(kg.is_train(d.triple));
      }
      CHECK(pos == (k + 1) / 2);
    }
  }
  CHECK_THROWS_AS(sample_demos(kg, {0, 0, 1}, 0, rng), ConfigError);
}

TEST_CASE("sample_demos is reproducible under a seed") {
  const auto& kg = umls().graph;
  const auto q = umls().test.front().triple;
  Rng a(77), b(77);
  auto da = sample_demos(kg, q, 8, a), db = sample_demos(kg, q, 8, b);
  CHECK(da.items == db.items);
}

TEST_CASE("isolated query falls back to uniform sampling") {
  Vocabulary ents, rels;
  for (auto n : {"a", "b", "c", "d"}) ents.intern(n);
  rels.intern("r");
  KnowledgeGraph kg(std::move(ents), std::move(rels), {{0, 0, 1}, {1, 0, 0}}, {"", "", "", ""}, {""});
  Rng rng(1);
  auto demos = sample_demos(kg, {2, 0, 3}, 2, rng);
  CHECK(demos.items.size() == 2);
  CHECK(demos.items[0].label);
}

TEST_CASE("icl") {
  const auto& kg = umls().graph;
  Rng rng(9);
  const auto q = umls().test[3].triple;
  auto inst = build_icl(kg, q, 4, rng);
  CHECK(inst.demonstration_lines() == 4);
  CHECK_FALSE(inst.answer.has_value());
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start <= inst.demonstration.size()) {
    auto end = inst.demonstration.find('\n', start);
    if (end == std::string::npos) end = inst.demonstration.size();
    auto line = inst.demonstration.substr(start, end - start);
    const std::string want = line_no % 2 == 0 ? " -> true" : " -> false";
    CHECK(line.ends_with(want));
    ++line_no;
    start = end + 1;
  }
  CHECK(line_no == 4);
}

TEST_CASE("icl prompt length grows linearly in k") {
  auto kg = test::ring_graph(40, 3, 4);
  std::vector<double> ks, lens;
  for (std::size_t k : {1u, 2u, 4u, 8u}) {
    Rng rng(3);
    auto inst = build_icl(kg, {0, 0, 1}, k, rng);
    ks.push_back(double(k));
    lens.push_back(double(whitespace_token_count(serialize_prompt(inst))));
  }
  // Every line verbalizes to the same token count on the ring graph.
  for (std::size_t i = 1; i < ks.size(); ++i) {
    CHECK((lens[i] - lens[0]) / (ks[i] - ks[0]) == doctest::Approx(8.0));
  }
}

TEST_CASE("it corpus on UMLS") {
  const auto& kg = umls().graph;
  Rng rng(2024);
  auto corpus = build_it_corpus(kg, rng);
  CHECK(corpus.size() == 10432);
  std::size_t yes = 0;
  for (const auto& inst : corpus) {
    REQUIRE(inst.answer.has_value());
    CHECK((*inst.answer == "true" || *inst.answer == "false"));
    yes += *inst.answer == "true";
    CHECK(inst.demonstration.empty());
    CHECK((*inst.answer == "true") == kg.is_train(inst.triple));
  }
  CHECK(yes == 5216);
  Rng again(2024);
  CHECK(build_it_corpus(kg, again) == corpus);
}

TEST_CASE("empty graph gives an empty corpus") {
  Vocabulary ents, rels;
  ents.intern("a");
  rels.intern("r");
  KnowledgeGraph kg(std::move(ents), std::move(rels), {}, {""}, {""});
  Rng rng(1);
  CHECK(build_it_corpus(kg, rng).empty());
  CHECK_THROWS_AS(build_training_corpus(kg, PromptMode::zsr, 0, rng), ConfigError);
}

TEST_CASE("sit") {
  const auto& kg = umls().graph;
  Rng rng(4);
  for (int i = 0; i < 200; ++i) {
    const auto& q = kg.train()[rng() % kg.train().size()];
    auto inst = build_sit(kg, q, 4, rng, true);
    CHECK(inst.demonstration_lines() <= 4);
    std::istringstream lines(inst.demonstration);
    for (std::string line; std::getline(lines, line);) CHECK(line != verbalize_triple(kg, q));
    CHECK(inst.answer == std::optional<std::string>("true"));
  }
  const auto q = kg.train().front();
  auto zero = build_sit(kg, q, 0, rng, false);
  auto plain = build_it(kg, q, false);
  CHECK(zero.demonstration.empty());
  CHECK(serialize_prompt(zero, true) == serialize_prompt(plain, true));
}

TEST_CASE("sit excludes the query even when it is the only neighbour") {
  Vocabulary ents, rels;
  for (auto n : {"a", "b"}) ents.intern(n);
  rels.intern("r");
  KnowledgeGraph kg(std::move(ents), std::move(rels), {{0, 0, 1}}, {"", ""}, {""});
  Rng rng(1);
  auto inst = build_sit(kg, {0, 0, 1}, 4, rng, true);
  CHECK(inst.demonstration.empty());
}

TEST_CASE("sit length grows linearly in m, kopa length is constant") {
  const auto& kg = umls().graph;
  const std::vector<double> ms{0, 2, 4, 8};
  std::vector<double> sit_len;
  std::vector<std::size_t> kopa_len;
  for (double m : ms) {
    Rng rng(6);
    double total = 0;
    std::size_t kopa_total = 0;
    for (std::size_t i = 0; i < 300; ++i) {
      const auto& q = kg.train()[i * 17 % kg.train().size()];
      total += double(build_sit(kg, q, std::size_t(m), rng, true).demonstration_lines());
      auto k = build_kopa(kg, q, true);
      CHECK(k.demonstration.empty());
      REQUIRE(k.prefix.has_value());
      CHECK(*k.prefix == q);
      kopa_total += whitespace_token_count(serialize_prompt(k, true)) + 3;
    }
    sit_len.push_back(total / 300.0);
    kopa_len.push_back(kopa_total);
  }
  auto [slope, r2] = linear_fit(ms, sit_len);
  CHECK(slope > 0.9);
  CHECK(r2 > 0.99);
  CHECK(kopa_len[0] == kopa_len[1]);
  CHECK(kopa_len[0] == kopa_len[3]);
}

TEST_CASE("parse_answer") {
  CHECK(parse_answer("True.") == Answer::yes);
  CHECK(parse_answer("  the answer is false") == Answer::no);
  CHECK(parse_answer("maybe") == Answer::unknown);
  CHECK(parse_answer("") == Answer::unknown);
  CHECK(parse_answer("untrue, falsehood") == Answer::unknown);
  CHECK(parse_answer("FALSE then true") == Answer::no);
  for (bool label : {true, false}) {
    auto inst = build_it(tiny_kg(), {0, 0, 1}, label);
    auto text = serialize_prompt(inst, true);
    auto tail = text.substr(text.rfind("Answer:") + 7);
    CHECK(parse_answer(tail) == (label ? Answer::yes : Answer::no));
    CHECK(parse_answer(answer_text(label)) == (label ? Answer::yes : Answer::no));
  }
}

TEST_CASE("jsonl round trip") {
  test::TempDir dir;
  const auto& kg = umls().graph;
  Rng rng(3);
  std::vector<PromptInstance> all;
  const auto q = umls().valid[5].triple;
  all.push_back(build_zsr(kg, q));
  all.push_back(build_icl(kg, q, 2, rng));
  all.push_back(build_it(kg, q, true));
  all.push_back(build_sit(kg, q, 4, rng, false));
  all.push_back(build_kopa(kg, q, true));
  export_jsonl(all, dir / "p.jsonl");
  CHECK(import_jsonl(dir / "p.jsonl") == all);
}

TEST_CASE("jsonl schema errors carry line numbers") {
  test::TempDir dir;
  const std::string ok = R"({"mode":"zsr","instruction":"i","input":"x","triple":[0,1,2]})";
  CHECK_FALSE(from_json_line(ok).answer.has_value());

  auto expect_line = [&](const std::string& bad) {
    dir.write("bad.jsonl", ok + "\n" + bad + "\n");
    try {
      import_jsonl(dir / "bad.jsonl");
      FAIL("expected a parse error for " << bad);
    } catch (const ParseError& e) {
      CHECK(e.line() == 2);
    }
  };
  expect_line(R"({"mode":"zsr","instruction":"i","triple":[0,1,2]})");
  expect_line(R"({"mode":"zsr","instruction":"i","input":"x","triple":[0,1]})");
  expect_line(R"({"mode":"zsr","instruction":"i","input":"x","triple":[0,1,2],"extra":1})");
  expect_line(R"({"mode":"it","instruction":"i","input":"x","output":"yes","triple":[0,1,2]})");
  expect_line(R"({"mode":"kopa","instruction":"i","input":"x","triple":[0,1,2]})");
  expect_line(R"({"mode":"nope","instruction":"i","input":"x","triple":[0,1,2]})");
  expect_line("{not json");
}
