#include <doctest.h>

#include <stdexcept>
#include <vector>

#include "mmgt/metrics.hpp"
#include "mmgt/rng.hpp"

using namespace mmgt;

TEST_CASE("auc counts pairwise wins and half-counts ties") {
  // Perfect ranking.
  CHECK(auc_score({0.9, 0.8, 0.2, 0.1}, {1, 1, 0, 0}).value() == 1.0);
  // Perfectly reversed.
  CHECK(auc_score({0.1, 0.2, 0.8, 0.9}, {1, 1, 0, 0}).value() == 0.0);
  // All scores equal: every pair ties -> 0.5.
  CHECK(auc_score({0.5, 0.5, 0.5}, {1, 0, 0}).value() == 0.5);

  // Hand-counted mix: positives {0.8, 0.4}, negatives {0.6, 0.4, 0.2}.
  // Pairs: (0.8 vs 0.6,0.4,0.2) = 3 wins; (0.4 vs 0.6) loss, (0.4 vs 0.4)
  // tie, (0.4 vs 0.2) win. AUC = (3 + 1 + 0.5) / 6.
  auto auc = auc_score({0.8, 0.4, 0.6, 0.4, 0.2}, {1, 1, 0, 0, 0});
  CHECK(auc.value() == doctest::Approx(4.5 / 6.0).epsilon(1e-12));
}

TEST_CASE("auc is undefined without both classes") {
  CHECK_FALSE(auc_score({0.1, 0.9}, {1, 1}).has_value());
  CHECK_FALSE(auc_score({0.1, 0.9}, {0, 0}).has_value());
}

TEST_CASE("auc is invariant under monotone score transforms") {
  Rng rng(3);
  std::vector<double> scores;
  std::vector<int> labels;
  for (int i = 0; i < 40; ++i) {
    scores.push_back(rng.uniform(-2, 2));
    labels.push_back(rng.uniform() < 0.4 ? 1 : 0);
  }
  std::vector<double> warped;
  for (double s : scores) warped.push_back(2.0 * s + 7.0);
  CHECK(auc_score(scores, labels).value() ==
        doctest::Approx(auc_score(warped, labels).value()).epsilon(1e-12));
}

TEST_CASE("classification metrics are hand-computable") {
  // scores    0.9  0.5  0.4  0.7  0.1  0.5
  // labels     1    1    1    0    0    0
  // >= 0.5     +    +    -    +    -    +
  const std::vector<double> scores = {0.9, 0.5, 0.4, 0.7, 0.1, 0.5};
  const std::vector<int> labels = {1, 1, 1, 0, 0, 0};
  ClassificationMetrics m = classification_metrics(scores, labels);
  CHECK(m.accuracy == doctest::Approx(3.0 / 6.0).epsilon(1e-12));
  CHECK(m.sensitivity == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(m.specificity == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  REQUIRE(m.auc.has_value());
  // Pairs won: 0.9 beats all three; 0.5 beats 0.1, ties 0.5, loses 0.7;
  // 0.4 beats 0.1, loses the rest. AUC = (3 + 1.5 + 1) / 9.
  CHECK(m.auc.value() == doctest::Approx(5.5 / 9.0).epsilon(1e-12));

  // The threshold boundary itself counts as positive.
  ClassificationMetrics hi = classification_metrics({0.5, 0.4}, {1, 0}, 0.5);
  CHECK(hi.accuracy == 1.0);
  CHECK(hi.sensitivity == 1.0);
  CHECK(hi.specificity == 1.0);
}

TEST_CASE("one-class inputs keep the absent-class rate at zero") {
  ClassificationMetrics m = classification_metrics({0.9, 0.2}, {1, 1});
  CHECK_FALSE(m.auc.has_value());
  CHECK(m.accuracy == 0.5);
  CHECK(m.sensitivity == 0.5);
  CHECK(m.specificity == 0.0);  // no negatives present
}

TEST_CASE("metrics reject empty and mismatched inputs") {
  CHECK_THROWS_AS((void)classification_metrics({}, {}), std::invalid_argument);
  CHECK_THROWS_AS((void)classification_metrics({0.5}, {1, 0}),
                  std::invalid_argument);
}
