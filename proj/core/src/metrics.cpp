#include "mmgt/metrics.hpp"

#include <stdexcept>

namespace mmgt {

namespace {

void check_inputs(const std::vector<double>& scores,
                  const std::vector<int>& labels) {
  if (scores.empty())
    throw std::invalid_argument("metrics: empty score list");
  if (scores.size() != labels.size())
    throw std::invalid_argument("metrics: scores/labels length mismatch");
  for (int l : labels)
    if (l != 0 && l != 1)
      throw std::invalid_argument("metrics: labels must be 0 or 1");
}

}  // namespace

std::optional<double> auc_score(const std::vector<double>& scores,
                                const std::vector<int>& labels) {
  check_inputs(scores, labels);
  double wins = 0.0;
  std::size_t n_pos = 0, n_neg = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 1) continue;
    ++n_pos;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] != 0) continue;
      if (scores[i] > scores[j])
        wins += 1.0;
      else if (scores[i] == scores[j])
        wins += 0.5;
    }
  }
  for (int l : labels) n_neg += (l == 0) ? 1 : 0;
  if (n_pos == 0 || n_neg == 0) return std::nullopt;
  return wins / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

ClassificationMetrics classification_metrics(const std::vector<double>& scores,
                                             const std::vector<int>& labels,
                                             double threshold) {
  check_inputs(scores, labels);
  std::size_t tp = 0, tn = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    bool predicted = scores[i] >= threshold;
    if (labels[i] == 1)
      predicted ? ++tp : ++fn;
    else
      predicted ? ++fp : ++tn;
  }
  ClassificationMetrics m;
  m.auc = auc_score(scores, labels);
  m.accuracy =
      static_cast<double>(tp + tn) / static_cast<double>(scores.size());
  m.sensitivity =
      (tp + fn) ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
  m.specificity =
      (tn + fp) ? static_cast<double>(tn) / static_cast<double>(tn + fp) : 0.0;
  return m;
}

}  // namespace mmgt
