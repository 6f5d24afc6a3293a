#pragma once

#include <cstdint>
#include <vector>

#include "mmgt/autodiff.hpp"
#include "mmgt/geometry.hpp"
#include "mmgt/nn.hpp"
#include "mmgt/types.hpp"

namespace mmgt {

/// Architecture and attention settings for the three modality encoders.
/// Desk defaults quarter the convolution widths; the `paper` preset (module
/// config) restores the full-scale ones. Feature dim stays 32 in both.
struct EncoderConfig {
  // image branch
  std::size_t image_channels = 4;
  std::size_t image_cube = 16;
  std::vector<std::size_t> image_conv_widths = {16, 32, 32, 64, 64};
  std::vector<std::size_t> image_head_widths = {128, 64, 32};
  // geometric branch
  std::vector<std::size_t> geo_conv_widths = {8, 16, 16, 32, 32};
  std::vector<std::size_t> geo_head_widths = {64, 32, 32};
  // brain network branch
  std::size_t node_attr_dim = 16;
  std::vector<std::size_t> net_gat_widths = {16, 32, 32, 64, 64, 64};
  std::vector<std::size_t> net_head_widths = {128, 64, 32};
  std::vector<std::size_t> node_att_widths = {16, 32, 64, 128};
  // hierarchical attention
  double crossing_radius = 1.0;     // Chebyshev point-to-tract-voxel radius
  double uncrossed_attention = 0.1; // edges no point crosses
  bool raw_cosine_node_attention = false;  // skip the (1+s)/2 rescale
  bool use_attention = true;        // identity attention when false

  std::size_t feature_dim() const { return image_head_widths.back(); }
};

/// Cropped-volume 3D CNN; bias-free throughout so a zero input maps to a
/// zero feature and input saliency is well defined.
struct ImageEncoder {
  nn::ConvStack3d conv;
  nn::Mlp head;

  ImageEncoder() = default;
  ImageEncoder(const EncoderConfig& cfg, Rng& rng);
  /// x: {C, cube, cube, cube} -> {1, 32}.
  ad::Value forward(const ad::Value& x) const;
  nn::ParamMap params() const;
};

/// Constant graph input for the image branch.
ad::Value image_to_value(const TumorImage& img);

/// Point-graph encoder over mean-centered coordinates with link distances as
/// edge features; gated global pooling emits the per-point attention.
struct GeometricEncoder {
  std::vector<nn::EdgeCondConv> convs;
  nn::GlobalAttentionPool pool;
  nn::Mlp head;

  GeometricEncoder() = default;
  GeometricEncoder(const EncoderConfig& cfg, Rng& rng);
  struct Output {
    ad::Value feature;          // {1, 32}
    ad::Value point_attention;  // {P, 1}, softmax weights (sum to 1)
  };
  Output forward(const PointGraph& graph) const;
  nn::ParamMap params() const;
};

/// For each network edge: indices of the points lying within Chebyshev
/// distance `crossing_radius` of any voxel of that edge's pathway.
std::vector<std::vector<int>> edge_crossing_points(
    const std::vector<std::array<double, 3>>& points,
    const std::vector<std::vector<Voxel>>& edge_voxel_sets,
    double crossing_radius);

/// Edge-level attention: mean point attention over the crossing points, or
/// `uncrossed_attention` when no point crosses. Differentiable in a^P.
ad::Value edge_attention(const ad::Value& point_attention,
                         const std::vector<std::array<double, 3>>& points,
                         const std::vector<std::vector<Voxel>>& edge_voxel_sets,
                         double crossing_radius, double uncrossed_attention);

/// Node-level attention: cosine similarity between projected node embeddings
/// and the projected fused tumor feature (u^I and u^P concatenated),
/// rescaled to [0,1] via (1+s)/2 unless `raw_cosine`. Throws
/// std::domain_error on zero-norm projections.
ad::Value node_attention(const ad::Value& node_embeddings,
                         const ad::Value& u_image, const ad::Value& u_points,
                         const nn::Mlp& g_node_att, const nn::Mlp& g_tumor,
                         bool raw_cosine = false);

/// Graph-attention encoder over the patient brain network with the
/// hierarchical attention hooks: edge attrs are scaled per-edge before the
/// convolutions, node embeddings are scaled per-node before the symmetric
/// mean pooling. Passing all-ones attentions reproduces the attention-free
/// forward exactly.
struct BrainNetworkEncoder {
  std::vector<nn::GatLayer> layers;
  // One bias-free linear skip per attention layer: keeps per-node identity
  // from washing out under repeated neighborhood averaging on small dense
  // graphs (without it the downstream node attention degenerates to a
  // constant).
  std::vector<nn::Linear> skips;
  nn::Mlp head;
  nn::Mlp node_att_head;  // projects e^N for the node-attention cosine

  BrainNetworkEncoder() = default;
  BrainNetworkEncoder(const EncoderConfig& cfg, Rng& rng);
  /// Convolution stack only: node embeddings {R, d_embed}; `a_edge` is {E,1}
  /// over canonical edges (applied to both directions).
  ad::Value node_embeddings(const BrainNetwork& net,
                            const ad::Value& a_edge) const;
  /// Pooled feature {1, 32} from embeddings scaled by `a_node` ({R,1}).
  ad::Value pooled_feature(const ad::Value& embeddings,
                           const ad::Value& a_node) const;
  nn::ParamMap params() const;
};

/// All-ones attention column, the identity element of both scaling hooks.
ad::Value ones_attention(std::size_t n);

/// The three encoders trained jointly.
struct MultiModalEncoders {
  ImageEncoder image;
  GeometricEncoder geometric;
  BrainNetworkEncoder network;

  MultiModalEncoders() = default;
  MultiModalEncoders(const EncoderConfig& cfg, Rng& rng);
  nn::ParamMap params() const;
};

/// One patient's model inputs, assembled by the data-preparation stage.
struct PatientInputs {
  TumorImage image;
  PointGraph graph;
  BrainNetwork network;
};

/// One patient's forward pass through all three encoders with the
/// hierarchical attention wiring (g_tumor projects the fused tumor feature
/// for the node-attention similarity).
struct PatientForward {
  ad::Value u_image;          // {1, 32}
  ad::Value u_points;         // {1, 32}
  ad::Value u_network;        // {1, 32}
  ad::Value point_attention;  // {P, 1}
  ad::Value edge_attn;        // {E, 1}
  ad::Value node_attn;        // {R, 1}
};
PatientForward encode_patient(const MultiModalEncoders& enc,
                              const nn::Mlp& g_tumor,
                              const PatientInputs& inputs,
                              const EncoderConfig& cfg);

}  // namespace mmgt
