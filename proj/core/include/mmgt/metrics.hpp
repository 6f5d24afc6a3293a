#pragma once

#include <optional>
#include <vector>

namespace mmgt {

/// Area under the ROC curve as the pairwise rank statistic: over all
/// (positive, negative) pairs, wins count 1, ties 1/2. Returns nullopt when
/// either class is absent (AUC undefined). Labels must be 0/1.
std::optional<double> auc_score(const std::vector<double>& scores,
                                const std::vector<int>& labels);

struct ClassificationMetrics {
  std::optional<double> auc;
  double accuracy = 0.0;
  double sensitivity = 0.0;  // recall on positives; 0 when none present
  double specificity = 0.0;  // recall on negatives; 0 when none present
};

/// Threshold the scores at `threshold` (>= counts as positive) and compute
/// accuracy, sensitivity, and specificity alongside the AUC. Throws
/// std::invalid_argument on empty or mismatched inputs.
ClassificationMetrics classification_metrics(const std::vector<double>& scores,
                                             const std::vector<int>& labels,
                                             double threshold = 0.5);

}  // namespace mmgt
