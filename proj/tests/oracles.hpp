#pragma once

// Independent reference implementations used by the unit tests and the
// acceptance binary. None of these call into the library's kernels.

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <vector>

#include "kopa/classifier.hpp"
#include "kopa/kge.hpp"

namespace kopa::test {

// Scalar re-derivation of F with std::complex; shares no code with the kernels.
inline double oracle_score(const EmbeddingModel& m, const Triple& t) {
  auto e = [&](EntityId id, std::size_t i) { return double(m.entity_table[id * m.d_e + i]); };
  auto r = [&](std::size_t i) { return double(m.relation_table[t.relation * m.d_r + i]); };
  const std::size_t d = m.d_e, n = d / 2;
  double f = 0.0;
  switch (m.family) {
    case ScoreFamily::TransE:
      for (std::size_t i = 0; i < d; ++i) f += std::fabs(e(t.head, i) + r(i) - e(t.tail, i));
      return f;
    case ScoreFamily::DistMult:
      for (std::size_t i = 0; i < d; ++i) f -= e(t.head, i) * r(i) * e(t.tail, i);
      return f;
    case ScoreFamily::ComplEx: {
      std::complex<double> acc = 0.0;
      for (std::size_t k = 0; k < n; ++k) {
        std::complex<double> h(e(t.head, k), e(t.head, n + k)), rr(r(k), r(n + k)),
            tt(e(t.tail, k), e(t.tail, n + k));
        acc += h * rr * std::conj(tt);
      }
      return -acc.real();
    }
    case ScoreFamily::RotatE:
      for (std::size_t k = 0; k < n; ++k) {
        std::complex<double> h(e(t.head, k), e(t.head, n + k)), tt(e(t.tail, k), e(t.tail, n + k));
        f += std::abs(h * std::polar(1.0, r(k)) - tt);
      }
      return f;
  }
  return f;
}

inline double oracle_loss(const EmbeddingModel& m, const NegativeBatch& b, double alpha) {
  auto log_sigmoid = [](double x) { return -std::log1p(std::exp(-x)); };
  const double gamma = m.gamma;
  double total = 0.0;
  for (std::size_t j = 0; j < b.positives.size(); ++j) {
    double term = -log_sigmoid(gamma - oracle_score(m, b.positives[j]));
    std::vector<double> f;
    for (const auto& n : b.negatives_of(j)) f.push_back(oracle_score(m, n));
    double z = 0.0;
    for (double x : f) z += std::exp(-alpha * x);
    for (double x : f) term -= std::exp(-alpha * x) / z * log_sigmoid(x - gamma);
    total += term;
  }
  return total / double(b.positives.size());
}

/// Every candidate threshold scored by direct counting; best accuracy,
/// smallest theta on ties.
inline std::pair<double, double> brute_force_threshold(const std::vector<ScoredLabel>& data) {
  std::vector<double> v;
  for (const auto& s : data) v.push_back(s.score);
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
  std::vector<double> candidates{std::nextafter(v.front(), -std::numeric_limits<double>::infinity())};
  for (std::size_t i = 0; i + 1 < v.size(); ++i) candidates.push_back((v[i] + v[i + 1]) / 2.0);
  candidates.push_back(v.back());
  double best_theta = 0.0, best_acc = -1.0;
  for (double theta : candidates) {
    std::size_t correct = 0;
    for (const auto& s : data) correct += (s.score <= theta) == s.label;
    const double acc = double(correct) / double(data.size());
    if (acc > best_acc || (acc == best_acc && theta < best_theta)) {
      best_acc = acc;
      best_theta = theta;
    }
  }
  return {best_theta, best_acc};
}

}  // namespace kopa::test
