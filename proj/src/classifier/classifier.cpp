#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "kopa/classifier.hpp"
#include "kopa/error.hpp"

namespace kopa {

std::vector<bool> ThresholdClassifier::predict(std::span<const double> scores) const {
  std::vector<bool> out(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) out[i] = predict(scores[i]);
  return out;
}

ThresholdClassifier fit_threshold(std::span<const ScoredLabel> scored) {
  std::vector<ScoredLabel> sorted(scored.begin(), scored.end());
  std::size_t positives = 0;
  for (const auto& s : sorted) {
    if (!std::isfinite(s.score)) throw DataError("threshold fitting needs finite scores");
    positives += s.label;
  }
  const std::size_t n = sorted.size();
  if (positives == 0 || positives == n) {
    throw DataError("threshold fitting needs at least one positive and one negative example");
  }
  std::sort(sorted.begin(), sorted.end(),
            [](const ScoredLabel& a, const ScoredLabel& b) { return a.score < b.score; });

  // Sweep candidates in ascending order; strict improvement keeps the smallest.
  std::size_t correct = n - positives;  // all predicted false
  ThresholdClassifier best{std::nextafter(sorted.front().score, -std::numeric_limits<double>::infinity()), 0.0};
  std::size_t best_correct = correct;

  for (std::size_t i = 0; i < n;) {
    const double v = sorted[i].score;
    std::size_t j = i;
    for (; j < n && sorted[j].score == v; ++j) {
      if (sorted[j].label) ++correct;
      else --correct;
    }
    const double theta = j < n ? (v + sorted[j].score) / 2.0 : v;
    if (correct > best_correct) {
      best_correct = correct;
      best.theta = theta;
    }
    i = j;
  }
  best.fit_accuracy = double(best_correct) / double(n);
  return best;
}

Metrics evaluate(const std::vector<bool>& preds, const std::vector<bool>& labels) {
  if (preds.size() != labels.size()) {
    throw DataError("prediction/label length mismatch: " + std::to_string(preds.size()) + " vs " +
                    std::to_string(labels.size()));
  }
  if (preds.empty()) throw DataError("cannot evaluate an empty prediction set");
  Metrics m;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (preds[i]) (labels[i] ? m.tp : m.fp)++;
    else (labels[i] ? m.fn : m.tn)++;
  }
  auto ratio = [](std::size_t a, std::size_t b) { return b == 0 ? 0.0 : double(a) / double(b); };
  m.accuracy = ratio(m.tp + m.tn, m.total());
  m.precision = ratio(m.tp, m.tp + m.fp);
  m.recall = ratio(m.tp, m.tp + m.fn);
  m.f1 = m.precision + m.recall > 0 ? 2 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
  return m;
}

std::string metrics_csv_header() { return "accuracy,precision,recall,f1,tp,fp,fn,tn"; }

std::string metrics_csv_row(const Metrics& m) {
  std::ostringstream os;
  os.precision(17);
  os << m.accuracy << ',' << m.precision << ',' << m.recall << ',' << m.f1 << ',' << m.tp << ','
     << m.fp << ',' << m.fn << ',' << m.tn;
  return os.str();
}

}  // namespace kopa
