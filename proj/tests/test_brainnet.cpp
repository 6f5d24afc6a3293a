#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "mmgt/brainnet.hpp"
#include "mmgt/rng.hpp"
#include "mmgt/synth.hpp"
#include "mmgt/tensor.hpp"

namespace fs = std::filesystem;
using namespace mmgt;
using ad::Value;

namespace {
fs::path temp_dir(const char* name) {
  fs::path d = fs::temp_directory_path() / "mmgt_tests" / name;
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

SynthesisConfig tiny_synth() {
  SynthesisConfig c;
  c.n_patients = 8;
  c.volume_shape = {24, 24, 24};
  c.atlas_regions = 6;
  c.atlas_tracts = 10;
  c.rng_seed = 29;
  return c;
}

BrainNetTrainConfig tiny_train() {
  BrainNetTrainConfig c;
  c.node_samples = 24;
  c.edge_samples = 12;
  c.ae_encoder_widths = {32, 8};
  c.edge_anat_widths = {24, 8};
  c.edge_fa_widths = {12, 8};
  c.edge_proj_widths = {8};
  c.ae_epochs = 12;
  c.edge_epochs = 8;
  c.batch_size = 8;
  c.seed = 5;
  return c;
}

SslDataset tiny_dataset(const SynthesisConfig& sc, const Atlas& atlas,
                        int n = 3) {
  SslDataset data;
  for (int i = 0; i < n; ++i)
    data.volumes.push_back(generate_patient(sc, i % 2, atlas, i).volume);
  return data;
}
}  // namespace

TEST_CASE("anatomical channel helper excludes the reference channel") {
  auto ch = anatomical_channels(5, 4);
  CHECK(ch == std::vector<std::size_t>{0, 1, 2, 3});
  auto mid = anatomical_channels(4, 1);
  CHECK(mid == std::vector<std::size_t>{0, 2, 3});
}

TEST_CASE("voxel sampling follows the documented index rule") {
  MultiChannelVolume v = MultiChannelVolume::zeros(2, 4, 4, 4);
  for (std::size_t i = 0; i < v.data.size(); ++i)
    v.data[i] = static_cast<double>(i);
  std::vector<Voxel> voxels = {{0, 0, 0}, {1, 1, 1}, {2, 2, 2}};

  // n_samples > list: entry i reads voxels[floor(i*3/5)] -> 0,0,1,1,2.
  auto out = sample_voxel_values(v, voxels, 5, {0});
  REQUIRE(out.size() == 5);
  CHECK(out[0] == v.at(0, 0, 0, 0));
  CHECK(out[1] == v.at(0, 0, 0, 0));
  CHECK(out[2] == v.at(0, 1, 1, 1));
  CHECK(out[3] == v.at(0, 1, 1, 1));
  CHECK(out[4] == v.at(0, 2, 2, 2));

  // Multi-channel: sample-major, channel-minor.
  auto two = sample_voxel_values(v, voxels, 2, {0, 1});
  REQUIRE(two.size() == 4);
  CHECK(two[0] == v.at(0, 0, 0, 0));
  CHECK(two[1] == v.at(1, 0, 0, 0));
  CHECK(two[2] == v.at(0, 1, 1, 1));
  CHECK(two[3] == v.at(1, 1, 1, 1));
}

TEST_CASE("volume and mask tensor loaders round-trip") {
  auto dir = temp_dir("brainnet_io");
  SynthesisConfig sc = tiny_synth();
  Atlas atlas = generate_atlas(sc);
  PatientSample p = generate_patient(sc, 1, atlas, 0);

  std::vector<std::uint64_t> vd = {p.volume.channels, p.volume.nx,
                                   p.volume.ny, p.volume.nz};
  save_tensor(dir / "v.mmgt", to_f32(vd, p.volume.data));
  U8Tensor mask_t({p.mask.nx, p.mask.ny, p.mask.nz}, p.mask.data);
  save_tensor(dir / "m.mmgt", mask_t);

  MultiChannelVolume v = load_volume(dir / "v.mmgt");
  CHECK(v.channels == p.volume.channels);
  CHECK(v.nx == p.volume.nx);
  for (std::size_t i = 0; i < v.data.size(); ++i)
    CHECK(v.data[i] == doctest::Approx(p.volume.data[i]).epsilon(1e-6));

  TumorMask m = load_mask(dir / "m.mmgt");
  CHECK(m.data == p.mask.data);

  // Wrong rank is rejected.
  save_tensor(dir / "bad.mmgt", to_f32({4}, {1, 2, 3, 4}));
  CHECK_THROWS((void)load_volume(dir / "bad.mmgt"));
  CHECK_THROWS((void)load_mask(dir / "bad.mmgt"));
}

TEST_CASE("autoencoder bottleneck dimension is the last encoder width") {
  Rng rng(7);
  NodeAutoencoder ae(48, {32, 8}, rng);
  CHECK(ae.attr_dim() == 8);
  Value x = Value::constant({1, 48}, std::vector<double>(48, 0.5));
  CHECK(ae.encode(x).cols() == 8);
  CHECK(ae.reconstruct(x).cols() == 48);
}

TEST_CASE("edge contrastive loss matches a double-loop oracle") {
  Rng rng(11);
  const std::size_t n = 5, d = 6;
  std::vector<double> za(n * d), zf(n * d);
  for (auto& v : za) v = rng.uniform(-1, 1);
  for (auto& v : zf) v = rng.uniform(-1, 1);
  Value a = Value::param({n, d}, za);
  Value f = Value::param({n, d}, zf);
  const double tau = 0.1;

  Value loss = edge_contrastive_loss(a, f, tau);

  auto cos = [&](std::size_t i, std::size_t j) {
    double num = 0, na = 0, nf = 0;
    for (std::size_t k = 0; k < d; ++k) {
      num += za[i * d + k] * zf[j * d + k];
      na += za[i * d + k] * za[i * d + k];
      nf += zf[j * d + k] * zf[j * d + k];
    }
    return num / (std::sqrt(na) * std::sqrt(nf));
  };
  double expect = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double denom = 0;
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) denom += std::exp(cos(i, j) / tau);
    expect += -cos(i, i) / tau + std::log(denom);
  }
  expect /= static_cast<double>(n);
  CHECK(loss.item() == doctest::Approx(expect).epsilon(1e-9));

  // Batches below 2 are rejected.
  Value one = Value::param({1, d}, std::vector<double>(d, 0.3));
  CHECK_THROWS((void)edge_contrastive_loss(one, one, tau));
}

TEST_CASE("node autoencoder training reduces the loss deterministically") {
  SynthesisConfig sc = tiny_synth();
  Atlas atlas = generate_atlas(sc);
  SslDataset data = tiny_dataset(sc, atlas);
  BrainNetTrainConfig tc = tiny_train();

  const std::size_t input_dim = tc.node_samples * 4;  // anatomical channels
  Rng r1(tc.seed);
  NodeAutoencoder ae1(input_dim, tc.ae_encoder_widths, r1);
  TrainHistory h1 = train_node_autoencoder(ae1, data, atlas, tc);
  REQUIRE(h1.epoch_loss.size() == tc.ae_epochs);
  CHECK(h1.epoch_loss.back() < h1.epoch_loss.front());
  for (double l : h1.epoch_loss) CHECK(std::isfinite(l));

  Rng r2(tc.seed);
  NodeAutoencoder ae2(input_dim, tc.ae_encoder_widths, r2);
  TrainHistory h2 = train_node_autoencoder(ae2, data, atlas, tc);
  CHECK(h1.epoch_loss == h2.epoch_loss);  // bit-identical reruns
}

TEST_CASE("edge encoder training runs and the loss stays finite") {
  SynthesisConfig sc = tiny_synth();
  Atlas atlas = generate_atlas(sc);
  SslDataset data = tiny_dataset(sc, atlas);
  BrainNetTrainConfig tc = tiny_train();

  Rng rng(tc.seed);
  EdgeEncoderPair pair(tc.edge_samples * 4, tc.edge_samples, tc, rng);
  TrainHistory h = train_edge_encoders(pair, data, atlas, tc);
  REQUIRE(h.epoch_loss.size() == tc.edge_epochs);
  for (double l : h.epoch_loss) CHECK(std::isfinite(l));
  CHECK(h.epoch_loss.back() < h.epoch_loss.front());
}

TEST_CASE("diverging learning rate raises TrainingDivergence") {
  SynthesisConfig sc = tiny_synth();
  Atlas atlas = generate_atlas(sc);
  SslDataset data = tiny_dataset(sc, atlas, 2);
  BrainNetTrainConfig tc = tiny_train();
  tc.lr = 1e18;
  tc.ae_epochs = 40;

  Rng rng(tc.seed);
  NodeAutoencoder ae(tc.node_samples * 4, tc.ae_encoder_widths, rng);
  CHECK_THROWS_AS((void)train_node_autoencoder(ae, data, atlas, tc),
                  TrainingDivergence);
}

TEST_CASE("brain network assembly matches the atlas structure") {
  SynthesisConfig sc = tiny_synth();
  Atlas atlas = generate_atlas(sc);
  SslDataset data = tiny_dataset(sc, atlas, 2);
  BrainNetTrainConfig tc = tiny_train();

  Rng rng(tc.seed);
  NodeAutoencoder ae(tc.node_samples * 4, tc.ae_encoder_widths, rng);
  EdgeEncoderPair pair(tc.edge_samples * 4, tc.edge_samples, tc, rng);
  // Untrained models are fine for structure checks.
  PatientSample p = generate_patient(sc, 1, atlas, 1);
  BrainNetwork net = build_brain_network(p.volume, atlas, ae, pair, tc);

  CHECK(net.n_nodes == sc.atlas_regions);
  CHECK(net.edge_index.size() == sc.atlas_tracts);
  CHECK(net.edge_index == atlas.tract_endpoints);
  CHECK(net.edge_voxel_sets == atlas.tract_voxels);
  CHECK(net.attr_dim == ae.attr_dim());
  CHECK(net.attr_dim == pair.attr_dim());
  CHECK(net.node_attrs.size() == net.n_nodes * net.attr_dim);
  CHECK(net.edge_attrs.size() == net.edge_index.size() * net.attr_dim);
  CHECK(validate_brain_network(net).empty());

  // Deterministic: same inputs, same attributes.
  BrainNetwork net2 = build_brain_network(p.volume, atlas, ae, pair, tc);
  CHECK(net.node_attrs == net2.node_attrs);
  CHECK(net.edge_attrs == net2.edge_attrs);
}

TEST_CASE("brain network serialization round-trips") {
  auto dir = temp_dir("brainnet_net_io");
  SynthesisConfig sc = tiny_synth();
  Atlas atlas = generate_atlas(sc);
  BrainNetTrainConfig tc = tiny_train();
  Rng rng(tc.seed);
  NodeAutoencoder ae(tc.node_samples * 4, tc.ae_encoder_widths, rng);
  EdgeEncoderPair pair(tc.edge_samples * 4, tc.edge_samples, tc, rng);
  PatientSample p = generate_patient(sc, 0, atlas, 2);
  BrainNetwork net = build_brain_network(p.volume, atlas, ae, pair, tc);

  save_brain_network(dir / "p002", net);
  BrainNetwork back = load_brain_network(dir / "p002");
  CHECK(back.n_nodes == net.n_nodes);
  CHECK(back.attr_dim == net.attr_dim);
  CHECK(back.edge_index == net.edge_index);
  CHECK(back.edge_voxel_sets == net.edge_voxel_sets);
  REQUIRE(back.node_attrs.size() == net.node_attrs.size());
  for (std::size_t i = 0; i < net.node_attrs.size(); ++i)
    CHECK(back.node_attrs[i] ==
          doctest::Approx(net.node_attrs[i]).epsilon(1e-6));
  REQUIRE(back.edge_attrs.size() == net.edge_attrs.size());
  for (std::size_t i = 0; i < net.edge_attrs.size(); ++i)
    CHECK(back.edge_attrs[i] ==
          doctest::Approx(net.edge_attrs[i]).epsilon(1e-6));
}

TEST_CASE("split volume loader filters by split name") {
  auto dir = temp_dir("brainnet_split");
  SynthesisConfig sc = tiny_synth();
  CohortManifest m = generate_cohort(sc, dir);
  SslDataset ssl = load_split_volumes(m, dir, "ssl");
  CHECK(ssl.volumes.size() == m.ids_in_split("ssl").size());
  CHECK_FALSE(ssl.volumes.empty());
}
