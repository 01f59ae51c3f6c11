#include <cmath>
#include <limits>
#include <random>

#include <doctest.h>

#include "kopa/classifier.hpp"
#include "kopa/error.hpp"
#include "oracles.hpp"

using namespace kopa;

namespace {

std::vector<ScoredLabel> random_set(std::mt19937_64& rng) {
  const std::size_t n = 2 + rng() % 60;
  std::vector<ScoredLabel> out(n);
  // Coarse grid so duplicate scores are common.
  std::uniform_int_distribution<int> grid(-20, 20);
  for (auto& s : out) {
    s.score = grid(rng) * 0.25;
    s.label = rng() & 1;
  }
  out[0].label = true;
  out[1].label = false;
  return out;
}

}  // namespace

TEST_CASE("separable example") {
  std::vector<ScoredLabel> d{{1.0, true}, {2.0, true}, {3.0, false}, {4.0, false}};
  auto c = fit_threshold(d);
  CHECK(c.theta == 2.5);
  CHECK(c.fit_accuracy == 1.0);
}

TEST_CASE("inverted example") {
  std::vector<ScoredLabel> d{{3.0, true}, {1.0, false}};
  auto c = fit_threshold(d);
  auto [theta, acc] = test::brute_force_threshold(d);
  CHECK(c.fit_accuracy == 0.5);
  CHECK(acc == 0.5);
  CHECK(c.theta == theta);
  // Smallest optimal candidate: the "everything false" sentinel below 1.
  CHECK(c.theta < 1.0);
  CHECK(std::isfinite(c.theta));
}

TEST_CASE("all scores equal") {
  std::vector<ScoredLabel> d{{2.0, true}, {2.0, false}, {2.0, true}, {2.0, false}};
  auto c = fit_threshold(d);
  CHECK(c.fit_accuracy == 0.5);
  CHECK(c.theta == doctest::Approx(2.0));
}

TEST_CASE("single class is rejected") {
  std::vector<ScoredLabel> pos{{1.0, true}, {2.0, true}};
  CHECK_THROWS_AS(fit_threshold(pos), DataError);
  CHECK_THROWS_AS(fit_threshold(std::vector<ScoredLabel>{}), DataError);
  std::vector<ScoredLabel> nan{{std::nan(""), true}, {1.0, false}};
  CHECK_THROWS_AS(fit_threshold(nan), DataError);
}

TEST_CASE("fit matches brute force exactly") {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 500; ++trial) {
    auto d = random_set(rng);
    auto c = fit_threshold(d);
    auto [theta, acc] = test::brute_force_threshold(d);
    CHECK(c.theta == theta);
    CHECK(c.fit_accuracy == acc);
    // No real threshold beats it: probe a dense sweep.
    for (double t = -6.0; t <= 6.0; t += 0.0625) {
      std::size_t correct = 0;
      for (const auto& s : d) correct += (s.score <= t) == s.label;
      CHECK(double(correct) / double(d.size()) <= c.fit_accuracy);
    }
  }
}

TEST_CASE("classification is invariant under increasing transforms") {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> g(0, 1);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<ScoredLabel> fit(80);
    for (auto& s : fit) {
      s.label = rng() & 1;
      s.score = g(rng) + (s.label ? -0.5 : 0.5);
    }
    fit[0].label = true;
    fit[1].label = false;
    auto transform = [](double x) { return std::exp(2.0 * x) + x * x * x; };
    auto fit_t = fit;
    for (auto& s : fit_t) s.score = transform(s.score);
    auto c = fit_threshold(fit), ct = fit_threshold(fit_t);
    CHECK(c.fit_accuracy == ct.fit_accuracy);
    // Midpoints move under the transform, so only points on the fitted
    // score grid are guaranteed to keep their side.
    for (std::size_t i = 0; i < fit.size(); ++i) CHECK(c.predict(fit[i].score) == ct.predict(fit_t[i].score));
  }
}

TEST_CASE("balanced data never scores below half") {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0, 1);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<ScoredLabel> d;
    for (int i = 0; i < 30; ++i) {
      d.push_back({u(rng), true});
      d.push_back({u(rng), false});
    }
    CHECK(fit_threshold(d).fit_accuracy >= 0.5);
  }
}

TEST_CASE("evaluate") {
  std::vector<bool> preds{true, true, true, true, false, false, false, false};
  std::vector<bool> labels{true, true, true, false, true, false, false, false};
  auto m = evaluate(preds, labels);
  CHECK(m.tp == 3);
  CHECK(m.fp == 1);
  CHECK(m.fn == 1);
  CHECK(m.tn == 3);
  CHECK(m.accuracy == 0.75);
  CHECK(m.precision == 0.75);
  CHECK(m.recall == 0.75);
  CHECK(m.f1 == 0.75);

  auto perfect = evaluate(labels, labels);
  CHECK(perfect.accuracy == 1.0);
  CHECK(perfect.precision == 1.0);
  CHECK(perfect.recall == 1.0);
  CHECK(perfect.f1 == 1.0);

  auto none = evaluate(std::vector<bool>(8, false), labels);
  CHECK(none.precision == 0.0);
  CHECK(none.recall == 0.0);
  CHECK(none.f1 == 0.0);
  CHECK(none.accuracy == 0.5);

  CHECK_THROWS_AS(evaluate({true}, {true, false}), DataError);
  CHECK_THROWS_AS(evaluate({}, {}), DataError);
}

TEST_CASE("f1 is the harmonic mean") {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<bool> p(20), l(20);
    for (std::size_t i = 0; i < 20; ++i) {
      p[i] = rng() & 1;
      l[i] = rng() & 1;
    }
    auto m = evaluate(p, l);
    if (m.precision + m.recall > 0) {
      CHECK(m.f1 == doctest::Approx(2 * m.precision * m.recall / (m.precision + m.recall)));
    }
    CHECK(m.accuracy == double(m.tp + m.tn) / 20.0);
  }
}

TEST_CASE("csv row") {
  auto m = evaluate({true, false}, {true, true});
  CHECK(metrics_csv_header() == "accuracy,precision,recall,f1,tp,fp,fn,tn");
  CHECK(metrics_csv_row(m) == "0.5,1,0.5,0.66666666666666663,1,0,1,0");
}
