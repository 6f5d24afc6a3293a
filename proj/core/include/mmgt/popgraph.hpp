#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "mmgt/autodiff.hpp"
#include "mmgt/brainnet.hpp"
#include "mmgt/metrics.hpp"
#include "mmgt/nn.hpp"

namespace mmgt {

/// The five node/edge weighting schemes of the population graph: the node
/// feature is the tumor feature, the network feature, or their
/// concatenation, and the edge similarity is computed over one of the same
/// three choices.
inline constexpr std::array<const char*, 5> kSchemeIds = {
    "tumor_node+network_edge", "network_node+tumor_edge",
    "fused_node+network_edge", "fused_node+tumor_edge",
    "fused_node+fused_edge"};

enum class Similarity { kCosine, kPearson };

/// Per-patient input to the population graph: the concatenated tumor feature
/// (image ++ geometric, 64-dim), the brain network feature (32-dim), the
/// binary label, and the transductive role (train or held-out test node).
struct PopPatient {
  std::string id;
  int label = 0;
  bool is_test = false;
  std::vector<double> u_tumor;
  std::vector<double> u_network;
};

struct PopulationGraph {
  std::size_t n_nodes = 0;
  std::size_t feature_dim = 0;
  std::vector<double> node_feats;               // n_nodes × feature_dim
  std::vector<std::pair<int, int>> edges;       // canonical i < j, no loops
  std::vector<double> edge_weights;             // aligned, each >= theta
  std::vector<int> labels;
  std::vector<std::uint8_t> train_mask, test_mask;  // disjoint, covering
  std::vector<std::string> ids;
  std::string scheme;
  double theta = 0.5;
};

struct ClassifierConfig {
  std::vector<std::size_t> gat_widths = {16, 32, 32, 32};
  double theta = 0.5;
  Similarity similarity = Similarity::kCosine;
  std::size_t epochs = 200;
  double lr = 1e-3;
  double weight_decay = 0.0;  // classifier decay is unspecified upstream
  double lr_decay = 0.9;
  std::size_t lr_step_every = 50;
  bool minibatch = false;     // full-batch transductive by default
  std::size_t batch_size = 20;
  std::uint64_t seed = 7;
};

/// Pairwise similarity r(a, b); cosine by default, Pearson behind the flag.
/// Throws std::domain_error on zero-variance/zero-norm inputs.
double pairwise_similarity(const std::vector<double>& a,
                           const std::vector<double>& b, Similarity sim);

/// Thresholded-similarity construction: node features per `scheme`, an
/// undirected edge between every patient pair whose edge-feature similarity
/// reaches `theta`, with the similarity kept as the edge weight. Both
/// feature roles are z-scored per dimension over the cohort first (raw
/// encoder outputs bunch in a positive cone where cosine similarity is ~1
/// for every pair, making the threshold vacuous); a patient standardizing
/// to the zero vector is left isolated. Throws on unknown scheme or
/// inconsistent feature dims.
PopulationGraph build_population_graph(const std::vector<PopPatient>& patients,
                                       const std::string& scheme, double theta,
                                       Similarity similarity);

/// Validates the structural invariants (canonical edges, threshold, masks);
/// returns violations, empty when sound.
std::vector<std::string> validate_population_graph(const PopulationGraph& g);

/// Graph-attention node scorer: GAT stack over the population graph (edge
/// weight as 1-dim edge feature) followed by a linear scoring layer. Every
/// attention layer carries a parallel bias-free linear skip, so per-node
/// information survives dense graphs (where attention averages many
/// neighbors) and isolated nodes reduce cleanly to a per-node classifier.
struct PopGraphClassifier {
  std::vector<nn::GatLayer> layers;
  std::vector<nn::Linear> skips;
  nn::Linear out;

  PopGraphClassifier() = default;
  PopGraphClassifier(std::size_t feature_dim, const ClassifierConfig& cfg,
                     Rng& rng);
  /// Logits {N, 1} from a full-graph forward pass.
  ad::Value forward(const PopulationGraph& g) const;
  nn::ParamMap params() const;
};

/// Transductive training: binary cross-entropy on train-mask nodes only
/// (test nodes pass messages but never contribute loss). Throws
/// std::invalid_argument("degenerate labels") when the train mask holds a
/// single class, TrainingDivergence on non-finite loss.
TrainHistory train_node_classifier(PopGraphClassifier& model,
                                   const PopulationGraph& graph,
                                   const ClassifierConfig& cfg);

/// Test-mask metrics at threshold 0.5 on sigmoid scores.
ClassificationMetrics evaluate_classifier(const PopGraphClassifier& model,
                                          const PopulationGraph& graph);

/// Sigmoid scores for every node, in graph node order.
std::vector<double> node_scores(const PopGraphClassifier& model,
                                const PopulationGraph& graph);

struct SchemeResult {
  std::string scheme;
  ClassificationMetrics metrics;
  std::size_t n_edges = 0;
};

/// Build + train + evaluate all five schemes with per-scheme derived seeds;
/// rows are emitted in kSchemeIds order.
std::vector<SchemeResult> run_scheme_sweep(
    const std::vector<PopPatient>& patients, const ClassifierConfig& cfg);

/// Fixed-width text table of sweep results (AUC, ACC, SEN, SPE columns).
std::string scheme_table_text(const std::vector<SchemeResult>& results);

}  // namespace mmgt
