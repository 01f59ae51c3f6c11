#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace kopa {

struct ScoredLabel {
  double score = 0.0;  // dissimilarity
  bool label = false;
};

/// Predicts TRUE iff score <= theta.
struct ThresholdClassifier {
  double theta = 0.0;
  double fit_accuracy = 0.0;

  bool predict(double score) const noexcept { return score <= theta; }
  std::vector<bool> predict(std::span<const double> scores) const;
};

/// Threshold maximizing accuracy on `scored`.
///
/// Candidates are the midpoints between adjacent distinct scores plus two
/// sentinels: "everything false", encoded as the largest double below the
/// minimum score, and "everything true", encoded as the maximum score. Both
/// sentinels are finite. Ties go to the smallest candidate. Throws DataError
/// unless both classes are present.
ThresholdClassifier fit_threshold(std::span<const ScoredLabel> scored);

struct Metrics {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;

  std::size_t total() const noexcept { return tp + fp + fn + tn; }
};

/// Confusion-matrix metrics; 0/0 ratios are reported as 0.
Metrics evaluate(const std::vector<bool>& preds, const std::vector<bool>& labels);

std::string metrics_csv_header();
std::string metrics_csv_row(const Metrics& m);

}  // namespace kopa
