#include "mmgt/encoders.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace mmgt {

using ad::Value;

namespace {

std::size_t pooled_side(std::size_t side, std::size_t n_blocks) {
  for (std::size_t i = 0; i < n_blocks; ++i) side = (side + 1) / 2;
  return side;
}

}  // namespace

// ------------------------------------------------------------------- image

ImageEncoder::ImageEncoder(const EncoderConfig& cfg, Rng& rng) {
  conv = nn::ConvStack3d(cfg.image_channels, cfg.image_conv_widths, rng);
  std::size_t side = pooled_side(cfg.image_cube, cfg.image_conv_widths.size());
  std::size_t flat = cfg.image_conv_widths.back() * side * side * side;
  head = nn::Mlp(flat, cfg.image_head_widths, rng, /*bias=*/false);
}

Value ImageEncoder::forward(const Value& x) const {
  return head.forward(conv.forward(x));
}

nn::ParamMap ImageEncoder::params() const {
  nn::ParamMap out;
  conv.collect("conv", out);
  head.collect("head", out);
  return out;
}

Value image_to_value(const TumorImage& img) {
  return Value::constant({img.channels, img.nx, img.ny, img.nz}, img.data);
}

// --------------------------------------------------------------- geometric

GeometricEncoder::GeometricEncoder(const EncoderConfig& cfg, Rng& rng) {
  std::size_t in = 3;
  for (std::size_t w : cfg.geo_conv_widths) {
    convs.emplace_back(in, 1, w, rng);
    in = w;
  }
  pool = nn::GlobalAttentionPool(in, rng);
  head = nn::Mlp(in, cfg.geo_head_widths, rng);
}

GeometricEncoder::Output GeometricEncoder::forward(
    const PointGraph& graph) const {
  const std::size_t P = graph.points.size();
  if (P == 0)
    throw std::invalid_argument("geometric encoder: empty point graph");
  std::array<double, 3> center = {0.0, 0.0, 0.0};
  for (const auto& p : graph.points)
    for (std::size_t k = 0; k < 3; ++k) center[k] += p[k];
  for (auto& c : center) c /= static_cast<double>(P);
  std::vector<double> coords;
  coords.reserve(P * 3);
  for (const auto& p : graph.points)
    for (std::size_t k = 0; k < 3; ++k) coords.push_back(p[k] - center[k]);

  Value h = Value::constant({P, 3}, std::move(coords));
  Value edge_attr =
      Value::constant({graph.distances.size(), 1}, graph.distances);
  for (const auto& conv : convs)
    h = ad::relu(conv.forward(h, graph.src, graph.dst, edge_attr, P));
  auto [pooled, attention] = pool.forward(h);
  return Output{head.forward(pooled), attention};
}

nn::ParamMap GeometricEncoder::params() const {
  nn::ParamMap out;
  for (std::size_t i = 0; i < convs.size(); ++i)
    convs[i].collect("conv" + std::to_string(i), out);
  pool.collect("pool", out);
  head.collect("head", out);
  return out;
}

// --------------------------------------------------- hierarchical attention

std::vector<std::vector<int>> edge_crossing_points(
    const std::vector<std::array<double, 3>>& points,
    const std::vector<std::vector<Voxel>>& edge_voxel_sets,
    double crossing_radius) {
  std::vector<std::vector<int>> groups(edge_voxel_sets.size());
  for (std::size_t e = 0; e < edge_voxel_sets.size(); ++e) {
    const auto& voxels = edge_voxel_sets[e];
    for (std::size_t p = 0; p < points.size(); ++p) {
      const auto& pt = points[p];
      bool crossed = false;
      for (const auto& v : voxels) {
        double d = std::max({std::abs(pt[0] - v.x), std::abs(pt[1] - v.y),
                             std::abs(pt[2] - v.z)});
        if (d <= crossing_radius) {
          crossed = true;
          break;
        }
      }
      if (crossed) groups[e].push_back(static_cast<int>(p));
    }
  }
  return groups;
}

Value edge_attention(const Value& point_attention,
                     const std::vector<std::array<double, 3>>& points,
                     const std::vector<std::vector<Voxel>>& edge_voxel_sets,
                     double crossing_radius, double uncrossed_attention) {
  if (point_attention.rows() != points.size())
    throw std::invalid_argument(
        "edge attention: attention/point count mismatch");
  auto groups = edge_crossing_points(points, edge_voxel_sets, crossing_radius);
  return ad::group_mean(point_attention, groups, uncrossed_attention);
}

Value node_attention(const Value& node_embeddings, const Value& u_image,
                     const Value& u_points, const nn::Mlp& g_node_att,
                     const nn::Mlp& g_tumor, bool raw_cosine) {
  Value fused = ad::concat_cols(u_image, u_points);
  Value z_tumor = ad::l2_normalize_rows(g_tumor.forward(fused));
  Value z_nodes =
      ad::l2_normalize_rows(g_node_att.forward(node_embeddings));
  Value s = ad::matmul_nt(z_nodes, z_tumor);  // {R, 1} cosine per node
  if (raw_cosine) return s;
  return ad::scale(ad::add_scalar(s, 1.0), 0.5);
}

// ------------------------------------------------------------ brain network

BrainNetworkEncoder::BrainNetworkEncoder(const EncoderConfig& cfg, Rng& rng) {
  std::size_t in = cfg.node_attr_dim;
  for (std::size_t w : cfg.net_gat_widths) {
    layers.emplace_back(in, cfg.node_attr_dim, w, rng);
    skips.emplace_back(in, w, rng, /*bias=*/false);
    in = w;
  }
  head = nn::Mlp(in, cfg.net_head_widths, rng);
  node_att_head = nn::Mlp(in, cfg.node_att_widths, rng);
}

Value BrainNetworkEncoder::node_embeddings(const BrainNetwork& net,
                                           const Value& a_edge) const {
  if (net.n_nodes == 0)
    throw std::invalid_argument("brain network encoder: empty graph");
  if (a_edge.rows() != net.edge_index.size())
    throw std::invalid_argument(
        "brain network encoder: edge attention length mismatch");
  Value h = Value::constant({net.n_nodes, net.attr_dim}, net.node_attrs);

  std::vector<int> src, dst, dup;
  src.reserve(net.edge_index.size() * 2);
  dst.reserve(net.edge_index.size() * 2);
  dup.reserve(net.edge_index.size() * 2);
  for (std::size_t e = 0; e < net.edge_index.size(); ++e) {
    const auto& [i, j] = net.edge_index[e];
    src.push_back(i);
    dst.push_back(j);
    dup.push_back(static_cast<int>(e));
    src.push_back(j);
    dst.push_back(i);
    dup.push_back(static_cast<int>(e));
  }
  Value eattr;
  if (!net.edge_index.empty()) {
    Value canonical =
        Value::constant({net.edge_index.size(), net.attr_dim}, net.edge_attrs);
    eattr = ad::row_scale(ad::gather_rows(canonical, dup),
                          ad::gather_rows(a_edge, dup));
  } else {
    eattr = Value::constant({0, net.attr_dim}, {});
  }
  for (std::size_t l = 0; l < layers.size(); ++l) {
    // Parallel bias-free skip: graph-attention aggregation alone drives the
    // node embeddings of a small dense graph toward a common vector, which
    // collapses the downstream per-node attention to a constant.
    h = ad::add(layers[l].forward(h, src, dst, eattr, net.n_nodes),
                skips[l].forward(h));
    if (l + 1 < layers.size()) h = ad::relu(h);
  }
  return h;
}

Value BrainNetworkEncoder::pooled_feature(const Value& embeddings,
                                          const Value& a_node) const {
  return head.forward(ad::mean_rows(ad::row_scale(embeddings, a_node)));
}

nn::ParamMap BrainNetworkEncoder::params() const {
  nn::ParamMap out;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    layers[i].collect("gat" + std::to_string(i), out);
    skips[i].collect("skip" + std::to_string(i), out);
  }
  head.collect("head", out);
  node_att_head.collect("node_att", out);
  return out;
}

Value ones_attention(std::size_t n) {
  return Value::constant({n, 1}, std::vector<double>(n, 1.0));
}

namespace {
/// Rescale an attention vector to unit mean before it multiplies features.
/// Boundary pooling weights sum to 1 across the cloud, so raw crossed-edge
/// attention lives near 1/P while the uncrossed baseline is a constant;
/// applied unscaled, every edge attribute would shrink by one to two orders
/// of magnitude relative to the attention-free path. Unit-mean rescaling
/// keeps the relative emphasis, and identity attention passes through
/// exactly unchanged (mean of ones is exactly 1).
Value unit_mean(const Value& a) {
  if (a.rows() == 0) return a;
  Value m = ad::reshape(ad::mean(a), {1, 1});
  if (m.item() <= 0.0) return a;
  return ad::matmul(a, ad::div(Value::constant({1, 1}, {1.0}), m));
}
}  // namespace

// ----------------------------------------------------------------- compound

MultiModalEncoders::MultiModalEncoders(const EncoderConfig& cfg, Rng& rng)
    : image(cfg, rng), geometric(cfg, rng), network(cfg, rng) {}

nn::ParamMap MultiModalEncoders::params() const {
  nn::ParamMap out;
  out.merge("image", image.params());
  out.merge("geometric", geometric.params());
  out.merge("network", network.params());
  return out;
}

PatientForward encode_patient(const MultiModalEncoders& enc,
                              const nn::Mlp& g_tumor,
                              const PatientInputs& inputs,
                              const EncoderConfig& cfg) {
  PatientForward out;
  out.u_image = enc.image.forward(image_to_value(inputs.image));
  auto geo = enc.geometric.forward(inputs.graph);
  out.u_points = geo.feature;
  out.point_attention = geo.point_attention;

  if (cfg.use_attention) {
    out.edge_attn = edge_attention(
        geo.point_attention, inputs.graph.points, inputs.network.edge_voxel_sets,
        cfg.crossing_radius, cfg.uncrossed_attention);
  } else {
    out.edge_attn = ones_attention(inputs.network.edge_index.size());
  }
  Value embeddings =
      enc.network.node_embeddings(inputs.network, unit_mean(out.edge_attn));
  if (cfg.use_attention) {
    out.node_attn =
        node_attention(embeddings, out.u_image, out.u_points,
                       enc.network.node_att_head, g_tumor,
                       cfg.raw_cosine_node_attention);
  } else {
    out.node_attn = ones_attention(inputs.network.n_nodes);
  }
  out.u_network =
      enc.network.pooled_feature(embeddings, unit_mean(out.node_attn));
  return out;
}

}  // namespace mmgt
