#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "mmgt/popgraph.hpp"
#include "mmgt/rng.hpp"

using namespace mmgt;
using ad::Value;

namespace {
/// Random cohort whose tumor features carry a label-dependent shift on top
/// of a shared positive offset (mimicking ReLU-cone encoder outputs).
std::vector<PopPatient> make_cohort(std::size_t n, std::size_t dim_t,
                                    std::size_t dim_n, std::uint64_t seed,
                                    double separation) {
  Rng rng(seed);
  std::vector<PopPatient> out;
  for (std::size_t i = 0; i < n; ++i) {
    PopPatient p;
    char id[16];
    std::snprintf(id, sizeof(id), "p%03zu", i);
    p.id = id;
    p.label = static_cast<int>(i % 2);
    p.is_test = (i % 4) >= 2;  // both classes land in both roles
    for (std::size_t k = 0; k < dim_t; ++k)
      p.u_tumor.push_back(2.0 + separation * p.label + rng.uniform(-0.5, 0.5));
    for (std::size_t k = 0; k < dim_n; ++k)
      p.u_network.push_back(2.0 - separation * p.label +
                            rng.uniform(-0.5, 0.5));
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<double> fused_of(const PopPatient& p) {
  std::vector<double> f = p.u_tumor;
  f.insert(f.end(), p.u_network.begin(), p.u_network.end());
  return f;
}

/// The documented role mapping of each weighting scheme.
void scheme_roles(const PopPatient& p, const std::string& scheme,
                  std::vector<double>& node, std::vector<double>& edge) {
  if (scheme == "tumor_node+network_edge") {
    node = p.u_tumor;
    edge = p.u_network;
  } else if (scheme == "network_node+tumor_edge") {
    node = p.u_network;
    edge = p.u_tumor;
  } else if (scheme == "fused_node+network_edge") {
    node = fused_of(p);
    edge = p.u_network;
  } else if (scheme == "fused_node+tumor_edge") {
    node = fused_of(p);
    edge = p.u_tumor;
  } else {
    node = fused_of(p);
    edge = fused_of(p);
  }
}

/// Cohort-wise per-dimension z-scoring with the population sd (zero-variance
/// dimensions map to zero), mirroring the documented construction contract.
void standardize_columns(std::vector<std::vector<double>>& rows) {
  if (rows.empty()) return;
  const std::size_t n = rows.size(), dim = rows.front().size();
  for (std::size_t d = 0; d < dim; ++d) {
    double mean = 0;
    for (const auto& r : rows) mean += r[d];
    mean /= static_cast<double>(n);
    double var = 0;
    for (const auto& r : rows) var += (r[d] - mean) * (r[d] - mean);
    const double sd = std::sqrt(var / static_cast<double>(n));
    for (auto& r : rows) r[d] = sd > 0.0 ? (r[d] - mean) / sd : 0.0;
  }
}

double oracle_similarity(std::vector<double> a, std::vector<double> b,
                         Similarity sim) {
  if (sim == Similarity::kPearson) {
    double ma = 0, mb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      ma += a[i];
      mb += b[i];
    }
    ma /= static_cast<double>(a.size());
    mb /= static_cast<double>(b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      a[i] -= ma;
      b[i] -= mb;
    }
  }
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return dot / std::sqrt(na * nb);
}

bool all_zero(const std::vector<double>& v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return x == 0.0; });
}
}  // namespace

TEST_CASE("pairwise similarity matches hand values") {
  CHECK(pairwise_similarity({1, 0}, {0, 1}, Similarity::kCosine) == 0.0);
  CHECK(pairwise_similarity({1, 2, 3}, {2, 4, 6}, Similarity::kCosine) ==
        doctest::Approx(1.0).epsilon(1e-12));
  CHECK(pairwise_similarity({1, 2, 3}, {6, 4, 2}, Similarity::kPearson) ==
        doctest::Approx(-1.0).epsilon(1e-12));
  CHECK(pairwise_similarity({1, 2, 3}, {1, 3, 2}, Similarity::kPearson) ==
        doctest::Approx(0.5).epsilon(1e-12));

  CHECK_THROWS_AS(
      (void)pairwise_similarity({0, 0}, {1, 1}, Similarity::kCosine),
      std::domain_error);
  // Constant vectors have zero variance under centering.
  CHECK_THROWS_AS(
      (void)pairwise_similarity({3, 3, 3}, {1, 2, 3}, Similarity::kPearson),
      std::domain_error);
  CHECK_THROWS_AS(
      (void)pairwise_similarity({1, 2}, {1, 2, 3}, Similarity::kCosine),
      std::invalid_argument);
}

TEST_CASE("graph construction equals a standardize-first pairwise oracle") {
  auto patients = make_cohort(20, 8, 6, 404, 0.8);
  const double theta = 0.3;

  for (const char* scheme : kSchemeIds) {
    for (Similarity sim : {Similarity::kCosine, Similarity::kPearson}) {
      PopulationGraph g = build_population_graph(patients, scheme, theta, sim);
      CHECK(validate_population_graph(g).empty());
      REQUIRE(g.n_nodes == patients.size());

      std::vector<std::vector<double>> node_rows, edge_rows;
      for (const auto& p : patients) {
        std::vector<double> node, edge;
        scheme_roles(p, scheme, node, edge);
        node_rows.push_back(std::move(node));
        edge_rows.push_back(std::move(edge));
      }
      standardize_columns(node_rows);
      standardize_columns(edge_rows);

      REQUIRE(g.feature_dim == node_rows.front().size());
      for (std::size_t i = 0; i < g.n_nodes; ++i)
        for (std::size_t d = 0; d < g.feature_dim; ++d)
          CHECK(g.node_feats[i * g.feature_dim + d] ==
                doctest::Approx(node_rows[i][d]).epsilon(1e-12));

      std::vector<std::pair<int, int>> expect_edges;
      std::vector<double> expect_weights;
      for (std::size_t i = 0; i < patients.size(); ++i)
        for (std::size_t j = i + 1; j < patients.size(); ++j) {
          if (all_zero(edge_rows[i]) || all_zero(edge_rows[j])) continue;
          double r = oracle_similarity(edge_rows[i], edge_rows[j], sim);
          if (r >= theta) {
            expect_edges.emplace_back(static_cast<int>(i),
                                      static_cast<int>(j));
            expect_weights.push_back(r);
          }
        }
      CHECK(g.edges == expect_edges);
      REQUIRE(g.edge_weights.size() == expect_weights.size());
      for (std::size_t e = 0; e < expect_weights.size(); ++e)
        CHECK(g.edge_weights[e] ==
              doctest::Approx(expect_weights[e]).epsilon(1e-12));

      // The threshold must cut something: neither empty nor complete.
      const std::size_t complete = g.n_nodes * (g.n_nodes - 1) / 2;
      CHECK(g.edges.size() > 0);
      CHECK(g.edges.size() < complete);
    }
  }
}

TEST_CASE("a patient at the cohort mean is isolated, not an error") {
  // Patient 2 sits exactly at the mean of the other two in every dimension,
  // so its standardized edge feature is the zero vector.
  std::vector<PopPatient> ps(3);
  ps[0] = {"a", 0, false, {1.0, 2.0}, {1.0, 2.0}};
  ps[1] = {"b", 1, false, {3.0, 6.0}, {3.0, 6.0}};
  ps[2] = {"c", 1, false, {2.0, 4.0}, {2.0, 4.0}};
  PopulationGraph g = build_population_graph(ps, kSchemeIds[0], -1.0,
                                             Similarity::kCosine);
  CHECK(validate_population_graph(g).empty());
  REQUIRE(g.edges.size() == 1);  // only a--b survives
  CHECK(g.edges[0] == std::pair<int, int>(0, 1));
}

TEST_CASE("graph construction rejects malformed cohorts") {
  auto patients = make_cohort(6, 4, 4, 405, 0.5);
  CHECK_THROWS_AS((void)build_population_graph(patients, "no-such-scheme", 0.5,
                                               Similarity::kCosine),
                  std::invalid_argument);
  CHECK_THROWS_AS((void)build_population_graph({}, kSchemeIds[0], 0.5,
                                               Similarity::kCosine),
                  std::invalid_argument);

  auto bad_dim = patients;
  bad_dim[3].u_tumor.push_back(1.0);
  CHECK_THROWS_AS((void)build_population_graph(bad_dim, kSchemeIds[0], 0.5,
                                               Similarity::kCosine),
                  std::invalid_argument);

  auto bad_label = patients;
  bad_label[0].label = 2;
  CHECK_THROWS_AS((void)build_population_graph(bad_label, kSchemeIds[0], 0.5,
                                               Similarity::kCosine),
                  std::invalid_argument);
}

TEST_CASE("graph validation reports tampered invariants") {
  auto patients = make_cohort(10, 4, 4, 406, 0.5);
  PopulationGraph g = build_population_graph(patients, kSchemeIds[4], 0.2,
                                             Similarity::kCosine);
  REQUIRE(validate_population_graph(g).empty());
  REQUIRE(!g.edges.empty());

  PopulationGraph swapped = g;
  std::swap(swapped.edges[0].first, swapped.edges[0].second);
  CHECK_FALSE(validate_population_graph(swapped).empty());

  PopulationGraph low = g;
  low.edge_weights[0] = low.theta - 0.1;
  CHECK_FALSE(validate_population_graph(low).empty());

  PopulationGraph overlap = g;
  overlap.train_mask[0] = 1;
  overlap.test_mask[0] = 1;
  CHECK_FALSE(validate_population_graph(overlap).empty());
}

TEST_CASE("training ignores held-out labels entirely") {
  auto patients = make_cohort(16, 6, 4, 407, 0.8);
  ClassifierConfig cfg;
  cfg.gat_widths = {8, 8};
  cfg.epochs = 25;
  cfg.theta = 0.2;

  auto train_history = [&](const std::vector<PopPatient>& ps) {
    PopulationGraph g =
        build_population_graph(ps, kSchemeIds[0], cfg.theta, cfg.similarity);
    Rng rng(19);
    PopGraphClassifier model(g.feature_dim, cfg, rng);
    return train_node_classifier(model, g, cfg);
  };

  auto flipped = patients;
  for (auto& p : flipped)
    if (p.is_test) p.label = 1 - p.label;

  TrainHistory a = train_history(patients);
  TrainHistory b = train_history(flipped);
  CHECK(a.epoch_loss == b.epoch_loss);  // transductive masking is strict
}

TEST_CASE("an edgeless graph on separable features reaches train accuracy 1") {
  // Above-threshold-of-1 similarity is impossible, so the graph has no
  // edges and the classifier reduces to its per-node skip path.
  auto patients = make_cohort(16, 6, 4, 408, 3.0);
  ClassifierConfig cfg;
  cfg.gat_widths = {8, 8};
  cfg.epochs = 200;
  cfg.lr = 3e-2;
  PopulationGraph g = build_population_graph(patients, kSchemeIds[0],
                                             1.0 + 1e-9, Similarity::kCosine);
  CHECK(g.edges.empty());

  Rng rng(21);
  PopGraphClassifier model(g.feature_dim, cfg, rng);
  train_node_classifier(model, g, cfg);

  std::vector<double> scores = node_scores(model, g);
  std::size_t correct = 0, total = 0;
  for (std::size_t i = 0; i < g.n_nodes; ++i) {
    if (!g.train_mask[i]) continue;
    ++total;
    if ((scores[i] >= 0.5 ? 1 : 0) == g.labels[i]) ++correct;
  }
  CHECK(correct == total);
}

TEST_CASE("zero learning rate leaves every parameter untouched") {
  auto patients = make_cohort(12, 4, 4, 409, 0.8);
  ClassifierConfig cfg;
  cfg.gat_widths = {8};
  cfg.epochs = 5;
  cfg.lr = 0.0;
  cfg.theta = 0.2;
  PopulationGraph g = build_population_graph(patients, kSchemeIds[0],
                                             cfg.theta, Similarity::kCosine);
  Rng rng(23);
  PopGraphClassifier model(g.feature_dim, cfg, rng);
  std::vector<std::vector<double>> before;
  for (const Value& v : model.params().values()) before.push_back(v.data());
  train_node_classifier(model, g, cfg);
  std::size_t idx = 0;
  for (const Value& v : model.params().values())
    CHECK(v.data() == before[idx++]);
}

TEST_CASE("classifier loss gradients agree with finite differences") {
  auto patients = make_cohort(10, 4, 3, 410, 0.8);
  ClassifierConfig cfg;
  cfg.gat_widths = {6, 6};
  cfg.theta = 0.2;
  PopulationGraph g = build_population_graph(patients, kSchemeIds[0],
                                             cfg.theta, Similarity::kCosine);
  Rng rng(27);
  PopGraphClassifier model(g.feature_dim, cfg, rng);
  std::vector<double> targets(g.labels.begin(), g.labels.end());

  Value loss = ad::bce_with_logits(model.forward(g), targets, g.train_mask);
  ad::backward(loss);
  auto f = [&] {
    return ad::bce_with_logits(model.forward(g), targets, g.train_mask).item();
  };
  Rng pick(28);
  for (Value leaf : model.params().values()) {
    std::size_t idx = pick.uniform_index(leaf.size());
    double fd = ad::finite_difference(f, leaf, idx);
    double an = leaf.grad()[idx];
    CHECK(std::abs(fd - an) <=
          1e-5 * std::max({1.0, std::abs(fd), std::abs(an)}));
  }
}

TEST_CASE("single-class train masks are rejected") {
  auto patients = make_cohort(8, 4, 4, 411, 0.5);
  for (auto& p : patients)
    if (!p.is_test) p.label = 1;
  ClassifierConfig cfg;
  cfg.gat_widths = {4};
  PopulationGraph g = build_population_graph(patients, kSchemeIds[0],
                                             cfg.theta, Similarity::kCosine);
  Rng rng(29);
  PopGraphClassifier model(g.feature_dim, cfg, rng);
  CHECK_THROWS_AS((void)train_node_classifier(model, g, cfg),
                  std::invalid_argument);
}

TEST_CASE("divergent classifier training throws instead of emitting NaNs") {
  auto patients = make_cohort(12, 4, 4, 412, 0.8);
  ClassifierConfig cfg;
  cfg.gat_widths = {8};
  cfg.epochs = 60;
  cfg.lr = 1e16;
  cfg.theta = 0.2;
  PopulationGraph g = build_population_graph(patients, kSchemeIds[0],
                                             cfg.theta, Similarity::kCosine);
  Rng rng(31);
  PopGraphClassifier model(g.feature_dim, cfg, rng);
  CHECK_THROWS_AS((void)train_node_classifier(model, g, cfg),
                  TrainingDivergence);
}

TEST_CASE("scheme sweep emits all five rows deterministically") {
  auto patients = make_cohort(14, 6, 4, 413, 1.2);
  ClassifierConfig cfg;
  cfg.gat_widths = {8, 8};
  cfg.epochs = 30;
  cfg.theta = 0.2;

  std::vector<SchemeResult> rows = run_scheme_sweep(patients, cfg);
  REQUIRE(rows.size() == kSchemeIds.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CHECK(rows[i].scheme == kSchemeIds[i]);
    REQUIRE(rows[i].metrics.auc.has_value());
    CHECK(*rows[i].metrics.auc >= 0.0);
    CHECK(*rows[i].metrics.auc <= 1.0);
    for (double m : {rows[i].metrics.accuracy, rows[i].metrics.sensitivity,
                     rows[i].metrics.specificity}) {
      CHECK(m >= 0.0);
      CHECK(m <= 1.0);
    }
  }

  std::vector<SchemeResult> again = run_scheme_sweep(patients, cfg);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CHECK(rows[i].n_edges == again[i].n_edges);
    CHECK(*rows[i].metrics.auc == *again[i].metrics.auc);
    CHECK(rows[i].metrics.accuracy == again[i].metrics.accuracy);
  }

  std::string table = scheme_table_text(rows);
  for (const char* scheme : kSchemeIds)
    CHECK(table.find(scheme) != std::string::npos);
  for (const char* col : {"AUC", "ACC", "SEN", "SPE", "edges"})
    CHECK(table.find(col) != std::string::npos);
}

TEST_CASE("evaluation thresholds the sigmoid scores on test nodes") {
  auto patients = make_cohort(12, 5, 4, 414, 1.0);
  ClassifierConfig cfg;
  cfg.gat_widths = {8};
  cfg.epochs = 20;
  cfg.theta = 0.2;
  PopulationGraph g = build_population_graph(patients, kSchemeIds[2],
                                             cfg.theta, Similarity::kCosine);
  Rng rng(37);
  PopGraphClassifier model(g.feature_dim, cfg, rng);
  train_node_classifier(model, g, cfg);

  std::vector<double> scores = node_scores(model, g);
  REQUIRE(scores.size() == g.n_nodes);
  for (double s : scores) {
    CHECK(s > 0.0);
    CHECK(s < 1.0);
  }

  ClassificationMetrics m = evaluate_classifier(model, g);
  std::size_t correct = 0, total = 0;
  for (std::size_t i = 0; i < g.n_nodes; ++i) {
    if (!g.test_mask[i]) continue;
    ++total;
    if ((scores[i] >= 0.5 ? 1 : 0) == g.labels[i]) ++correct;
  }
  CHECK(m.accuracy ==
        doctest::Approx(static_cast<double>(correct) /
                        static_cast<double>(total)).epsilon(1e-12));
}
