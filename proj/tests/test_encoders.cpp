#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "mmgt/encoders.hpp"
#include "mmgt/geometry.hpp"
#include "mmgt/rng.hpp"

using namespace mmgt;
using ad::Value;

namespace {
EncoderConfig tiny_encoder_config() {
  EncoderConfig cfg;
  cfg.image_channels = 4;
  cfg.image_cube = 8;
  cfg.image_conv_widths = {4, 8};
  cfg.image_head_widths = {16, 8};
  cfg.geo_conv_widths = {4, 8};
  cfg.geo_head_widths = {16, 8};
  cfg.node_attr_dim = 4;
  cfg.net_gat_widths = {8, 8};
  cfg.net_head_widths = {16, 8};
  cfg.node_att_widths = {8, 16};
  return cfg;
}

nn::Mlp tiny_g_tumor(const EncoderConfig& cfg, Rng& rng) {
  return nn::Mlp(2 * cfg.feature_dim(), {16, 16}, rng);
}

PointsCloud random_cloud(Rng& rng, std::size_t n, double extent) {
  PointsCloud c;
  for (std::size_t i = 0; i < n; ++i)
    c.coords.push_back(
        {rng.uniform(0, extent), rng.uniform(0, extent), rng.uniform(0, extent)});
  return c;
}

PatientInputs random_inputs(const EncoderConfig& cfg, Rng& rng) {
  PatientInputs in;
  in.image.channels = cfg.image_channels;
  in.image.nx = in.image.ny = in.image.nz = cfg.image_cube;
  in.image.data.resize(cfg.image_channels * cfg.image_cube * cfg.image_cube *
                       cfg.image_cube);
  for (auto& v : in.image.data) v = rng.uniform(0, 1);

  PointsCloud cloud = random_cloud(rng, 14, 8.0);
  in.graph = build_point_graph(cloud, 5.0);

  BrainNetwork& net = in.network;
  net.n_nodes = 5;
  net.attr_dim = cfg.node_attr_dim;
  net.node_attrs.resize(net.n_nodes * net.attr_dim);
  for (auto& v : net.node_attrs) v = rng.uniform(-1, 1);
  net.edge_index = {{0, 1}, {0, 2}, {1, 3}, {2, 4}, {3, 4}};
  net.edge_attrs.resize(net.edge_index.size() * net.attr_dim);
  for (auto& v : net.edge_attrs) v = rng.uniform(-1, 1);
  // First four tracts pass near cloud points (a rounded coordinate is within
  // Chebyshev 0.5 of its point); the last sits far away and stays uncrossed.
  net.edge_voxel_sets.resize(net.edge_index.size());
  for (std::size_t e = 0; e + 1 < net.edge_index.size(); ++e) {
    const auto& p = in.graph.points[(3 * e) % in.graph.points.size()];
    net.edge_voxel_sets[e].push_back({static_cast<int>(std::lround(p[0])),
                                      static_cast<int>(std::lround(p[1])),
                                      static_cast<int>(std::lround(p[2]))});
  }
  net.edge_voxel_sets.back() = {{60, 60, 60}};
  return in;
}

/// Independent crossing scan: min Chebyshev distance from point to any voxel.
bool crosses(const std::array<double, 3>& p, const std::vector<Voxel>& voxels,
             double radius) {
  for (const auto& v : voxels) {
    double d = std::max({std::abs(p[0] - v.x), std::abs(p[1] - v.y),
                         std::abs(p[2] - v.z)});
    if (d <= radius) return true;
  }
  return false;
}
}  // namespace

TEST_CASE("edge crossing points match a brute-force scan") {
  Rng rng(101);
  for (int trial = 0; trial < 30; ++trial) {
    std::size_t P = 4 + rng.uniform_index(20);
    PointsCloud cloud = random_cloud(rng, P, 8.0);
    std::vector<std::vector<Voxel>> sets(6);
    for (auto& s : sets) {
      std::size_t n = rng.uniform_index(5);  // sometimes empty
      for (std::size_t i = 0; i < n; ++i)
        s.push_back({static_cast<int>(rng.uniform_index(9)),
                     static_cast<int>(rng.uniform_index(9)),
                     static_cast<int>(rng.uniform_index(9))});
    }
    const double radius = (trial % 3 == 0) ? 0.5 : (trial % 3 == 1 ? 1.0 : 2.0);

    auto groups = edge_crossing_points(cloud.coords, sets, radius);
    REQUIRE(groups.size() == sets.size());
    for (std::size_t e = 0; e < sets.size(); ++e) {
      std::vector<int> expect;
      for (std::size_t p = 0; p < cloud.coords.size(); ++p)
        if (crosses(cloud.coords[p], sets[e], radius))
          expect.push_back(static_cast<int>(p));
      CHECK(groups[e] == expect);
    }
  }
}

TEST_CASE("crossing radius boundary is inclusive") {
  std::vector<std::array<double, 3>> pts = {{1.0, 0.0, 0.0},
                                            {1.0 + 1e-6, 0.0, 0.0}};
  std::vector<std::vector<Voxel>> sets = {{{0, 0, 0}}};
  auto groups = edge_crossing_points(pts, sets, 1.0);
  CHECK(groups[0] == std::vector<int>{0});  // exactly-at-radius counts
}

TEST_CASE("edge attention is the crossing mean with an uncrossed fallback") {
  Rng rng(55);
  for (int trial = 0; trial < 20; ++trial) {
    std::size_t P = 3 + rng.uniform_index(12);
    PointsCloud cloud = random_cloud(rng, P, 6.0);
    std::vector<std::vector<Voxel>> sets(5);
    for (auto& s : sets) {
      std::size_t n = rng.uniform_index(4);
      for (std::size_t i = 0; i < n; ++i)
        s.push_back({static_cast<int>(rng.uniform_index(7)),
                     static_cast<int>(rng.uniform_index(7)),
                     static_cast<int>(rng.uniform_index(7))});
    }
    std::vector<double> att(P);
    for (auto& a : att) a = rng.uniform(0, 1);
    const double radius = 1.0, beta = 0.1;

    Value a_pt = Value::constant({P, 1}, att);
    Value a_edge = edge_attention(a_pt, cloud.coords, sets, radius, beta);
    REQUIRE(a_edge.rows() == sets.size());

    for (std::size_t e = 0; e < sets.size(); ++e) {
      double sum = 0;
      int count = 0;
      for (std::size_t p = 0; p < P; ++p)
        if (crosses(cloud.coords[p], sets[e], radius)) {
          sum += att[p];
          ++count;
        }
      double expect = count > 0 ? sum / count : beta;
      CHECK(a_edge.data()[e] == doctest::Approx(expect).epsilon(1e-12));
    }
  }
}

TEST_CASE("edge attention is differentiable in the point attention") {
  std::vector<std::array<double, 3>> pts = {
      {0.0, 0.0, 0.0}, {2.0, 0.0, 0.0}, {9.0, 9.0, 9.0}};
  std::vector<std::vector<Voxel>> sets = {
      {{0, 0, 0}, {2, 0, 0}},  // crossed by points 0 and 1
      {{0, 0, 0}},             // crossed by point 0 only
      {{5, 5, 5}}};            // uncrossed
  Value a_pt = Value::param({3, 1}, {0.2, 0.3, 0.5});
  Value total = ad::sum(edge_attention(a_pt, pts, sets, 1.0, 0.1));
  CHECK(total.item() == doctest::Approx(0.25 + 0.2 + 0.1).epsilon(1e-12));
  ad::backward(total);
  CHECK(a_pt.grad()[0] == doctest::Approx(0.5 + 1.0).epsilon(1e-12));
  CHECK(a_pt.grad()[1] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(a_pt.grad()[2] == doctest::Approx(0.0).epsilon(1e-12));

  Value mismatched = Value::param({2, 1}, {0.5, 0.5});
  CHECK_THROWS((void)edge_attention(mismatched, pts, sets, 1.0, 0.1));
}

TEST_CASE("node attention equals a direct cosine recomputation") {
  Rng rng(77);
  const std::size_t R = 6, d = 8;
  std::vector<double> ed(R * d), ui(d), up(d);
  for (auto& v : ed) v = rng.uniform(-1, 1);
  for (auto& v : ui) v = rng.uniform(-1, 1);
  for (auto& v : up) v = rng.uniform(-1, 1);
  Value emb = Value::param({R, d}, ed);
  Value u_image = Value::constant({1, d}, ui);
  Value u_points = Value::constant({1, d}, up);
  nn::Mlp g_node_att(d, {8, 16}, rng);
  nn::Mlp g_tumor(2 * d, {16, 16}, rng);

  Value a = node_attention(emb, u_image, u_points, g_node_att, g_tumor);
  REQUIRE(a.rows() == R);
  REQUIRE(a.cols() == 1);

  const std::vector<double>& zn = g_node_att.forward(emb).data();
  const std::vector<double>& zt =
      g_tumor.forward(ad::concat_cols(u_image, u_points)).data();
  const std::size_t D = zt.size();
  double tn = 0;
  for (double v : zt) tn += v * v;
  tn = std::sqrt(tn);
  for (std::size_t r = 0; r < R; ++r) {
    double dot = 0, nn2 = 0;
    for (std::size_t k = 0; k < D; ++k) {
      dot += zn[r * D + k] * zt[k];
      nn2 += zn[r * D + k] * zn[r * D + k];
    }
    double cosine = dot / (std::sqrt(nn2) * tn);
    CHECK(a.data()[r] == doctest::Approx((1.0 + cosine) / 2.0).epsilon(1e-6));
    CHECK(a.data()[r] >= 0.0);
    CHECK(a.data()[r] <= 1.0);
  }

  // Raw-cosine mode skips the [0,1] rescale.
  Value raw = node_attention(emb, u_image, u_points, g_node_att, g_tumor,
                             /*raw_cosine=*/true);
  for (std::size_t r = 0; r < R; ++r)
    CHECK(raw.data()[r] ==
          doctest::Approx(2.0 * a.data()[r] - 1.0).epsilon(1e-9));

  // A zero-norm projection is an error, not a silent NaN.
  nn::Mlp no_bias(d, {8, 16}, rng, /*bias=*/false);
  std::vector<double> zed(R * d, 0.0);
  Value zero_emb = Value::param({R, d}, zed);
  CHECK_THROWS_AS(
      (void)node_attention(zero_emb, u_image, u_points, no_bias, g_tumor),
      std::domain_error);
}

TEST_CASE("point attention is a softmax over the cloud") {
  EncoderConfig cfg = tiny_encoder_config();
  Rng rng(31);
  GeometricEncoder geo(cfg, rng);

  Rng data_rng(32);
  PointsCloud cloud = random_cloud(data_rng, 11, 8.0);
  PointGraph graph = build_point_graph(cloud, 5.0);
  auto out = geo.forward(graph);
  REQUIRE(out.point_attention.rows() == 11);
  double sum = 0;
  for (double a : out.point_attention.data()) {
    CHECK(a > 0.0);
    CHECK(a < 1.0);
    sum += a;
  }
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(out.feature.rows() == 1);
  CHECK(out.feature.cols() == cfg.feature_dim());

  // A single point takes the whole attention mass exactly.
  PointsCloud one;
  one.coords.push_back({1.0, 2.0, 3.0});
  auto solo = geo.forward(build_point_graph(one, 2.0));
  REQUIRE(solo.point_attention.rows() == 1);
  CHECK(solo.point_attention.data()[0] == 1.0);
}

TEST_CASE("geometric feature is translation invariant") {
  EncoderConfig cfg = tiny_encoder_config();
  Rng rng(41);
  GeometricEncoder geo(cfg, rng);

  Rng data_rng(42);
  PointsCloud cloud = random_cloud(data_rng, 12, 8.0);
  PointGraph graph = build_point_graph(cloud, 5.0);
  PointGraph shifted = graph;  // same edges and distances by construction
  for (auto& p : shifted.points) {
    p[0] += 5.3;
    p[1] += -2.1;
    p[2] += 7.7;
  }
  auto a = geo.forward(graph);
  auto b = geo.forward(shifted);
  for (std::size_t i = 0; i < a.feature.size(); ++i)
    CHECK(a.feature.data()[i] == doctest::Approx(b.feature.data()[i]).epsilon(1e-9));
  for (std::size_t i = 0; i < a.point_attention.size(); ++i)
    CHECK(a.point_attention.data()[i] ==
          doctest::Approx(b.point_attention.data()[i]).epsilon(1e-9));
}

TEST_CASE("image encoder maps an all-zero crop to exactly zero") {
  EncoderConfig cfg = tiny_encoder_config();
  Rng rng(51);
  ImageEncoder img(cfg, rng);
  TumorImage zero;
  zero.channels = cfg.image_channels;
  zero.nx = zero.ny = zero.nz = cfg.image_cube;
  zero.data.assign(zero.channels * zero.nx * zero.ny * zero.nz, 0.0);
  Value u = img.forward(image_to_value(zero));
  for (double v : u.data()) CHECK(v == 0.0);
}

TEST_CASE("image input conversion keeps shape and bytes") {
  TumorImage img;
  img.channels = 2;
  img.nx = img.ny = img.nz = 3;
  img.data.resize(2 * 27);
  for (std::size_t i = 0; i < img.data.size(); ++i)
    img.data[i] = static_cast<double>(i) * 0.25;
  Value v = image_to_value(img);
  CHECK(v.shape() == std::vector<std::size_t>{2, 3, 3, 3});
  CHECK(v.data() == img.data);
}

TEST_CASE("brain network embeddings are permutation equivariant") {
  EncoderConfig cfg = tiny_encoder_config();
  Rng rng(61);
  BrainNetworkEncoder net_enc(cfg, rng);

  Rng data_rng(62);
  PatientInputs in = random_inputs(cfg, data_rng);
  const BrainNetwork& net = in.network;

  const std::vector<int> perm = {3, 0, 4, 2, 1};  // new id of old node i
  BrainNetwork p;
  p.n_nodes = net.n_nodes;
  p.attr_dim = net.attr_dim;
  p.node_attrs.resize(net.node_attrs.size());
  for (std::size_t i = 0; i < net.n_nodes; ++i)
    for (std::size_t k = 0; k < net.attr_dim; ++k)
      p.node_attrs[perm[i] * net.attr_dim + k] =
          net.node_attrs[i * net.attr_dim + k];
  for (const auto& [i, j] : net.edge_index) {
    int a = perm[i], b = perm[j];
    p.edge_index.emplace_back(std::min(a, b), std::max(a, b));
  }
  p.edge_attrs = net.edge_attrs;
  p.edge_voxel_sets = net.edge_voxel_sets;

  Value ones = ones_attention(net.edge_index.size());
  Value e1 = net_enc.node_embeddings(net, ones);
  Value e2 = net_enc.node_embeddings(p, ones);
  const std::size_t d = e1.cols();
  REQUIRE(e2.cols() == d);
  for (std::size_t i = 0; i < net.n_nodes; ++i)
    for (std::size_t k = 0; k < d; ++k)
      CHECK(e1.data()[i * d + k] ==
            doctest::Approx(e2.data()[perm[i] * d + k]).epsilon(1e-6));

  Value f1 = net_enc.pooled_feature(e1, ones_attention(net.n_nodes));
  Value f2 = net_enc.pooled_feature(e2, ones_attention(net.n_nodes));
  for (std::size_t k = 0; k < f1.size(); ++k)
    CHECK(f1.data()[k] == doctest::Approx(f2.data()[k]).epsilon(1e-6));
}

TEST_CASE("disabling attention equals the all-ones attention forward exactly") {
  EncoderConfig cfg = tiny_encoder_config();
  Rng rng(71);
  MultiModalEncoders enc(cfg, rng);
  nn::Mlp g_tumor = tiny_g_tumor(cfg, rng);

  Rng data_rng(72);
  PatientInputs in = random_inputs(cfg, data_rng);

  EncoderConfig off = cfg;
  off.use_attention = false;
  PatientForward fwd = encode_patient(enc, g_tumor, in, off);
  for (double v : fwd.edge_attn.data()) CHECK(v == 1.0);
  for (double v : fwd.node_attn.data()) CHECK(v == 1.0);

  Value emb = enc.network.node_embeddings(
      in.network, ones_attention(in.network.edge_index.size()));
  Value pooled =
      enc.network.pooled_feature(emb, ones_attention(in.network.n_nodes));
  CHECK(fwd.u_network.data() == pooled.data());  // bit-exact
}

TEST_CASE("patient forward pass emits the documented shapes and fallbacks") {
  EncoderConfig cfg = tiny_encoder_config();
  Rng rng(81);
  MultiModalEncoders enc(cfg, rng);
  nn::Mlp g_tumor = tiny_g_tumor(cfg, rng);

  Rng data_rng(82);
  PatientInputs in = random_inputs(cfg, data_rng);
  PatientForward fwd = encode_patient(enc, g_tumor, in, cfg);

  CHECK(fwd.u_image.shape() == std::vector<std::size_t>{1, cfg.feature_dim()});
  CHECK(fwd.u_points.shape() == std::vector<std::size_t>{1, cfg.feature_dim()});
  CHECK(fwd.u_network.shape() ==
        std::vector<std::size_t>{1, cfg.feature_dim()});
  CHECK(fwd.point_attention.rows() == in.graph.points.size());
  CHECK(fwd.edge_attn.rows() == in.network.edge_index.size());
  CHECK(fwd.node_attn.rows() == in.network.n_nodes);

  // The far-away tract is uncrossed: exact fallback value.
  CHECK(fwd.edge_attn.data().back() == cfg.uncrossed_attention);
  // Node attention is a rescaled cosine, so it lives in [0,1].
  for (double v : fwd.node_attn.data()) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
  for (double v : fwd.u_network.data()) CHECK(std::isfinite(v));
}
