#include "mmgt/popgraph.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

#include "mmgt/rng.hpp"

namespace mmgt {

using ad::Value;

double pairwise_similarity(const std::vector<double>& a,
                           const std::vector<double>& b, Similarity sim) {
  if (a.size() != b.size() || a.empty())
    throw std::invalid_argument("similarity: dimension mismatch");
  std::vector<double> x = a, y = b;
  if (sim == Similarity::kPearson) {
    double ma = 0.0, mb = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      ma += x[i];
      mb += y[i];
    }
    ma /= static_cast<double>(x.size());
    mb /= static_cast<double>(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
      x[i] -= ma;
      y[i] -= mb;
    }
  }
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    dot += x[i] * y[i];
    na += x[i] * x[i];
    nb += y[i] * y[i];
  }
  if (na == 0.0 || nb == 0.0)
    throw std::domain_error(
        sim == Similarity::kPearson
            ? "similarity: zero-variance feature vector"
            : "similarity: zero-norm feature vector");
  return dot / std::sqrt(na * nb);
}

namespace {

std::vector<double> scheme_node_feature(const PopPatient& p,
                                        const std::string& scheme) {
  if (scheme == kSchemeIds[0]) return p.u_tumor;
  if (scheme == kSchemeIds[1]) return p.u_network;
  std::vector<double> fused = p.u_tumor;
  fused.insert(fused.end(), p.u_network.begin(), p.u_network.end());
  return fused;
}

std::vector<double> scheme_edge_feature(const PopPatient& p,
                                        const std::string& scheme) {
  if (scheme == kSchemeIds[0] || scheme == kSchemeIds[2]) return p.u_network;
  if (scheme == kSchemeIds[1] || scheme == kSchemeIds[3]) return p.u_tumor;
  std::vector<double> fused = p.u_tumor;
  fused.insert(fused.end(), p.u_network.begin(), p.u_network.end());
  return fused;
}

bool known_scheme(const std::string& scheme) {
  return std::find(kSchemeIds.begin(), kSchemeIds.end(), scheme) !=
         kSchemeIds.end();
}

}  // namespace

PopulationGraph build_population_graph(const std::vector<PopPatient>& patients,
                                       const std::string& scheme, double theta,
                                       Similarity similarity) {
  if (!known_scheme(scheme))
    throw std::invalid_argument("population graph: unknown scheme '" + scheme +
                                "'");
  if (patients.empty())
    throw std::invalid_argument("population graph: no patients");
  for (const auto& p : patients) {
    if (p.u_tumor.size() != patients.front().u_tumor.size() ||
        p.u_network.size() != patients.front().u_network.size())
      throw std::invalid_argument(
          "population graph: inconsistent feature dimensions");
    if (p.label != 0 && p.label != 1)
      throw std::invalid_argument("population graph: labels must be 0 or 1");
  }

  PopulationGraph g;
  g.scheme = scheme;
  g.theta = theta;
  g.n_nodes = patients.size();
  std::vector<std::vector<double>> edge_feats;
  edge_feats.reserve(patients.size());
  for (const auto& p : patients) {
    auto node = scheme_node_feature(p, scheme);
    if (g.feature_dim == 0) g.feature_dim = node.size();
    g.node_feats.insert(g.node_feats.end(), node.begin(), node.end());
    edge_feats.push_back(scheme_edge_feature(p, scheme));
    g.labels.push_back(p.label);
    g.train_mask.push_back(p.is_test ? 0 : 1);
    g.test_mask.push_back(p.is_test ? 1 : 0);
    g.ids.push_back(p.id);
  }

  // Standardize both feature roles per dimension (cohort mean / population
  // sd) BEFORE any similarity is computed. Raw encoder outputs are ReLU
  // activations bunched in a positive cone where every pairwise cosine is
  // ~1, which makes the similarity threshold vacuous (a complete graph) and
  // saturates the scorer. Centering spreads the similarities so the
  // threshold selects genuinely alike patients. Transductively sound: only
  // features enter the statistics, never labels. Zero-variance dimensions
  // map to zero.
  auto standardize = [](std::vector<double>& flat, std::size_t n,
                        std::size_t dim) {
    for (std::size_t d = 0; d < dim; ++d) {
      double mean = 0.0;
      for (std::size_t i = 0; i < n; ++i) mean += flat[i * dim + d];
      mean /= static_cast<double>(n);
      double var = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double c = flat[i * dim + d] - mean;
        var += c * c;
      }
      const double sd = std::sqrt(var / static_cast<double>(n));
      for (std::size_t i = 0; i < n; ++i) {
        double& x = flat[i * dim + d];
        x = sd > 0.0 ? (x - mean) / sd : 0.0;
      }
    }
  };
  standardize(g.node_feats, g.n_nodes, g.feature_dim);
  if (!edge_feats.empty() && !edge_feats.front().empty()) {
    const std::size_t edge_dim = edge_feats.front().size();
    std::vector<double> flat;
    flat.reserve(g.n_nodes * edge_dim);
    for (const auto& f : edge_feats)
      flat.insert(flat.end(), f.begin(), f.end());
    standardize(flat, g.n_nodes, edge_dim);
    for (std::size_t i = 0; i < g.n_nodes; ++i)
      std::copy(flat.begin() + static_cast<std::ptrdiff_t>(i * edge_dim),
                flat.begin() + static_cast<std::ptrdiff_t>((i + 1) * edge_dim),
                edge_feats[i].begin());
  }

  auto zero_norm = [](const std::vector<double>& v) {
    for (double x : v)
      if (x != 0.0) return false;
    return true;
  };
  for (std::size_t i = 0; i < patients.size(); ++i)
    for (std::size_t j = i + 1; j < patients.size(); ++j) {
      // A patient sitting exactly at the cohort mean standardizes to the
      // zero vector; it gets no edges (isolated nodes are handled by the
      // classifier's skip path) rather than an undefined similarity.
      if (zero_norm(edge_feats[i]) || zero_norm(edge_feats[j])) continue;
      double r = pairwise_similarity(edge_feats[i], edge_feats[j], similarity);
      if (r >= theta) {
        g.edges.emplace_back(static_cast<int>(i), static_cast<int>(j));
        g.edge_weights.push_back(r);
      }
    }
  return g;
}

std::vector<std::string> validate_population_graph(const PopulationGraph& g) {
  std::vector<std::string> out;
  if (g.node_feats.size() != g.n_nodes * g.feature_dim)
    out.push_back("population graph: node feature buffer size mismatch");
  if (g.edges.size() != g.edge_weights.size())
    out.push_back("population graph: edge/weight length mismatch");
  if (g.labels.size() != g.n_nodes || g.train_mask.size() != g.n_nodes ||
      g.test_mask.size() != g.n_nodes)
    out.push_back("population graph: per-node array length mismatch");
  for (const auto& [i, j] : g.edges) {
    if (i >= j) out.push_back("population graph: edge not in canonical order");
    if (i < 0 || static_cast<std::size_t>(j) >= g.n_nodes)
      out.push_back("population graph: edge endpoint out of range");
  }
  for (double w : g.edge_weights)
    if (!(w >= g.theta))
      out.push_back("population graph: edge weight below threshold");
  for (std::size_t i = 0; i < g.train_mask.size(); ++i)
    if (g.train_mask[i] && g.test_mask[i]) {
      out.push_back("population graph: overlapping train/test masks");
      break;
    }
  return out;
}

// ------------------------------------------------------------- classifier

PopGraphClassifier::PopGraphClassifier(std::size_t feature_dim,
                                       const ClassifierConfig& cfg, Rng& rng) {
  if (cfg.gat_widths.empty())
    throw std::invalid_argument("classifier: empty width list");
  std::size_t in = feature_dim;
  for (std::size_t w : cfg.gat_widths) {
    layers.emplace_back(in, 1, w, rng);
    skips.emplace_back(in, w, rng, /*bias=*/false);
    in = w;
  }
  out = nn::Linear(in, 1, rng);
}

Value PopGraphClassifier::forward(const PopulationGraph& g) const {
  Value h = Value::constant({g.n_nodes, g.feature_dim}, g.node_feats);
  std::vector<int> src, dst;
  std::vector<double> attr;
  src.reserve(g.edges.size() * 2);
  dst.reserve(g.edges.size() * 2);
  attr.reserve(g.edges.size() * 2);
  for (std::size_t e = 0; e < g.edges.size(); ++e) {
    const auto& [i, j] = g.edges[e];
    src.push_back(i);
    dst.push_back(j);
    attr.push_back(g.edge_weights[e]);
    src.push_back(j);
    dst.push_back(i);
    attr.push_back(g.edge_weights[e]);
  }
  Value eattr = Value::constant({attr.size(), 1}, attr);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    h = ad::add(layers[l].forward(h, src, dst, eattr, g.n_nodes),
                skips[l].forward(h));
    if (l + 1 < layers.size()) h = ad::relu(h);
  }
  return out.forward(h);
}

nn::ParamMap PopGraphClassifier::params() const {
  nn::ParamMap p;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    layers[i].collect("gat" + std::to_string(i), p);
    skips[i].collect("skip" + std::to_string(i), p);
  }
  out.collect("out", p);
  return p;
}

TrainHistory train_node_classifier(PopGraphClassifier& model,
                                   const PopulationGraph& graph,
                                   const ClassifierConfig& cfg) {
  bool has_pos = false, has_neg = false;
  std::vector<std::size_t> train_nodes;
  for (std::size_t i = 0; i < graph.n_nodes; ++i) {
    if (!graph.train_mask[i]) continue;
    train_nodes.push_back(i);
    (graph.labels[i] == 1 ? has_pos : has_neg) = true;
  }
  if (train_nodes.empty())
    throw std::invalid_argument("classifier training: empty train mask");
  if (!has_pos || !has_neg)
    throw std::invalid_argument(
        "classifier training: degenerate labels (single class in train mask)");

  std::vector<double> targets(graph.labels.begin(), graph.labels.end());
  nn::Adam opt(model.params().values(), cfg.lr, cfg.weight_decay);
  nn::StepDecay schedule{cfg.lr, cfg.lr_decay, cfg.lr_step_every};
  Rng rng(derive_seed(cfg.seed, "classifier-batches"));
  TrainHistory history;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    opt.set_lr(schedule.at(epoch));
    double epoch_sum = 0.0;
    std::size_t n_steps = 0;
    auto step_with_mask = [&](const std::vector<std::uint8_t>& mask) {
      Value loss = ad::bce_with_logits(model.forward(graph), targets, mask);
      double value = loss.item();
      if (!std::isfinite(value)) {
        std::ostringstream msg;
        msg << "classifier training: non-finite loss " << value
            << " at epoch " << epoch;
        throw TrainingDivergence(msg.str());
      }
      opt.zero_grad();
      ad::backward(loss);
      opt.step();
      epoch_sum += value;
      ++n_steps;
    };
    if (cfg.minibatch) {
      std::vector<std::size_t> order = train_nodes;
      rng.shuffle(order);
      std::size_t batch = std::max<std::size_t>(1, cfg.batch_size);
      for (std::size_t start = 0; start < order.size(); start += batch) {
        std::vector<std::uint8_t> mask(graph.n_nodes, 0);
        for (std::size_t k = start; k < std::min(start + batch, order.size());
             ++k)
          mask[order[k]] = 1;
        step_with_mask(mask);
      }
    } else {
      step_with_mask(graph.train_mask);
    }
    history.epoch_loss.push_back(epoch_sum / static_cast<double>(n_steps));
    history.epoch_lr.push_back(opt.lr());
  }
  return history;
}

std::vector<double> node_scores(const PopGraphClassifier& model,
                                const PopulationGraph& graph) {
  Value scores = ad::sigmoid(model.forward(graph));
  return scores.data();
}

ClassificationMetrics evaluate_classifier(const PopGraphClassifier& model,
                                          const PopulationGraph& graph) {
  std::vector<double> all = node_scores(model, graph);
  std::vector<double> scores;
  std::vector<int> labels;
  for (std::size_t i = 0; i < graph.n_nodes; ++i) {
    if (!graph.test_mask[i]) continue;
    scores.push_back(all[i]);
    labels.push_back(graph.labels[i]);
  }
  if (scores.empty())
    throw std::invalid_argument("evaluation: empty test mask");
  return classification_metrics(scores, labels, 0.5);
}

// ------------------------------------------------------------------- sweep

std::vector<SchemeResult> run_scheme_sweep(
    const std::vector<PopPatient>& patients, const ClassifierConfig& cfg) {
  std::vector<SchemeResult> results;
  for (const char* scheme : kSchemeIds) {
    PopulationGraph graph =
        build_population_graph(patients, scheme, cfg.theta, cfg.similarity);
    ClassifierConfig scheme_cfg = cfg;
    scheme_cfg.seed = derive_seed(cfg.seed, scheme);
    Rng rng(derive_seed(scheme_cfg.seed, "classifier-init"));
    PopGraphClassifier model(graph.feature_dim, scheme_cfg, rng);
    train_node_classifier(model, graph, scheme_cfg);
    SchemeResult row;
    row.scheme = scheme;
    row.metrics = evaluate_classifier(model, graph);
    row.n_edges = graph.edges.size();
    results.push_back(std::move(row));
  }
  return results;
}

std::string scheme_table_text(const std::vector<SchemeResult>& results) {
  std::ostringstream out;
  char line[160];
  std::snprintf(line, sizeof(line), "%-28s %7s %7s %7s %7s %7s\n",
                "scheme", "AUC", "ACC", "SEN", "SPE", "edges");
  out << line;
  for (const auto& r : results) {
    std::string auc = "--";
    if (r.metrics.auc.has_value()) {
      char buf[16];
      std::snprintf(buf, sizeof(buf), "%.3f", *r.metrics.auc);
      auc = buf;
    }
    std::snprintf(line, sizeof(line), "%-28s %7s %7.3f %7.3f %7.3f %7zu\n",
                  r.scheme.c_str(), auc.c_str(), r.metrics.accuracy,
                  r.metrics.sensitivity, r.metrics.specificity, r.n_edges);
    out << line;
  }
  return out.str();
}

}  // namespace mmgt
