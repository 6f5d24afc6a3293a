#include "mmgt/brainnet.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "mmgt/rng.hpp"
#include "mmgt/tensor.hpp"

namespace mmgt {

namespace {

void check_channels(const MultiChannelVolume& volume,
                    const std::vector<std::size_t>& channels) {
  if (channels.empty())
    throw std::invalid_argument("voxel sampling: empty channel list");
  for (std::size_t c : channels)
    if (c >= volume.channels)
      throw std::invalid_argument("voxel sampling: channel index out of range");
}

}  // namespace

std::vector<double> sample_voxel_values(
    const MultiChannelVolume& volume, const std::vector<Voxel>& voxels,
    std::size_t n_samples, const std::vector<std::size_t>& channels) {
  check_channels(volume, channels);
  if (voxels.empty())
    throw std::invalid_argument("voxel sampling: empty voxel list");
  if (n_samples == 0)
    throw std::invalid_argument("voxel sampling: zero samples requested");
  const std::size_t len = voxels.size();
  std::vector<double> out;
  out.reserve(n_samples * channels.size());
  for (std::size_t i = 0; i < n_samples; ++i) {
    const Voxel& v = voxels[i * len / n_samples];
    for (std::size_t c : channels)
      out.push_back(volume.at(c, static_cast<std::size_t>(v.x),
                              static_cast<std::size_t>(v.y),
                              static_cast<std::size_t>(v.z)));
  }
  return out;
}

std::vector<double> sample_region_voxels(
    const MultiChannelVolume& volume, const Atlas& atlas, std::size_t region_id,
    std::size_t n_samples, const std::vector<std::size_t>& channels) {
  if (region_id >= atlas.region_voxels.size())
    throw std::invalid_argument("voxel sampling: region id out of range");
  return sample_voxel_values(volume, atlas.region_voxels[region_id], n_samples,
                             channels);
}

std::vector<double> sample_tract_voxels(
    const MultiChannelVolume& volume, const Atlas& atlas, std::size_t tract_id,
    std::size_t n_samples, const std::vector<std::size_t>& channels) {
  if (tract_id >= atlas.tract_voxels.size())
    throw std::invalid_argument("voxel sampling: tract id out of range");
  return sample_voxel_values(volume, atlas.tract_voxels[tract_id], n_samples,
                             channels);
}

std::vector<std::size_t> anatomical_channels(std::size_t n_channels,
                                             std::size_t reference_channel) {
  std::vector<std::size_t> out;
  for (std::size_t c = 0; c < n_channels; ++c)
    if (c != reference_channel) out.push_back(c);
  if (out.empty())
    throw std::invalid_argument("volume has no anatomical channels");
  return out;
}

// ------------------------------------------------------------------- models

NodeAutoencoder::NodeAutoencoder(std::size_t input_dim_,
                                 const std::vector<std::size_t>& encoder_widths,
                                 Rng& rng)
    : input_dim(input_dim_) {
  if (encoder_widths.empty())
    throw std::invalid_argument("autoencoder: empty width list");
  encoder = nn::Mlp(input_dim_, encoder_widths, rng);
  std::vector<std::size_t> decoder_widths(encoder_widths.rbegin() + 1,
                                          encoder_widths.rend());
  decoder_widths.push_back(input_dim_);
  decoder = nn::Mlp(encoder_widths.back(), decoder_widths, rng);
}

nn::ParamMap NodeAutoencoder::params() const {
  nn::ParamMap out;
  encoder.collect("encoder", out);
  decoder.collect("decoder", out);
  return out;
}

std::size_t NodeAutoencoder::attr_dim() const {
  return encoder.layers.back().W.cols();
}

EdgeEncoderPair::EdgeEncoderPair(std::size_t anat_dim, std::size_t fa_dim,
                                 const BrainNetTrainConfig& cfg, Rng& rng)
    : tau(cfg.tau_edge) {
  anat = nn::Mlp(anat_dim, cfg.edge_anat_widths, rng);
  fa = nn::Mlp(fa_dim, cfg.edge_fa_widths, rng);
  if (cfg.edge_anat_widths.back() != cfg.edge_fa_widths.back())
    throw std::invalid_argument(
        "edge encoders: anatomical and reference output dims differ");
  proj_anat = nn::Mlp(cfg.edge_anat_widths.back(), cfg.edge_proj_widths, rng);
  proj_fa = nn::Mlp(cfg.edge_fa_widths.back(), cfg.edge_proj_widths, rng);
}

nn::ParamMap EdgeEncoderPair::params() const {
  nn::ParamMap out;
  anat.collect("anat", out);
  fa.collect("fa", out);
  proj_anat.collect("proj_anat", out);
  proj_fa.collect("proj_fa", out);
  return out;
}

std::size_t EdgeEncoderPair::attr_dim() const {
  return anat.layers.back().W.cols();
}

ad::Value edge_contrastive_loss(const ad::Value& z_anat, const ad::Value& z_fa,
                                double tau, bool include_positive) {
  if (z_anat.rows() != z_fa.rows() || z_anat.cols() != z_fa.cols())
    throw std::invalid_argument("edge contrastive loss: shape mismatch");
  ad::Value scores =
      ad::matmul_nt(ad::l2_normalize_rows(z_anat), ad::l2_normalize_rows(z_fa));
  return ad::mean(ad::info_nce_rows(scores, tau, include_positive));
}

// --------------------------------------------------------------------- data

MultiChannelVolume load_volume(const std::filesystem::path& path) {
  F32Tensor t = load_f32_tensor(path);
  if (t.rank() != 4)
    throw TensorIoError("volume tensor must have rank 4: " + path.string());
  MultiChannelVolume v = MultiChannelVolume::zeros(t.dims()[0], t.dims()[1],
                                                   t.dims()[2], t.dims()[3]);
  for (std::size_t i = 0; i < t.size(); ++i)
    v.data[i] = static_cast<double>(t[i]);
  return v;
}

TumorMask load_mask(const std::filesystem::path& path) {
  U8Tensor t = load_u8_tensor(path);
  if (t.rank() != 3)
    throw TensorIoError("mask tensor must have rank 3: " + path.string());
  TumorMask m = TumorMask::zeros(t.dims()[0], t.dims()[1], t.dims()[2]);
  for (std::size_t i = 0; i < t.size(); ++i)
    m.data[i] = t[i] ? 1 : 0;
  return m;
}

SslDataset load_split_volumes(const CohortManifest& manifest,
                              const std::filesystem::path& root,
                              const std::string& split) {
  SslDataset data;
  for (const auto& patient : manifest.patients) {
    if (patient.split != split) continue;
    auto it = patient.files.find("volume");
    if (it == patient.files.end())
      throw std::runtime_error("patient " + patient.id +
                               ": manifest has no volume file");
    data.volumes.push_back(load_volume(root / it->second));
  }
  if (data.volumes.empty())
    throw std::runtime_error("split '" + split + "' has no patients");
  return data;
}

// ----------------------------------------------------------------- training

namespace {

[[noreturn]] void throw_divergence(const char* stage, std::size_t epoch,
                                   double loss) {
  std::ostringstream msg;
  msg << stage << ": non-finite loss " << loss << " at epoch " << epoch
      << "; lower the learning rate or inspect the input scaling";
  throw TrainingDivergence(msg.str());
}

/// All (patient, item) rows as a dataset matrix; rows are fixed-length
/// vectors produced by `make_row`.
std::vector<std::vector<double>> collect_rows(
    std::size_t n_patients, std::size_t n_items,
    const std::function<std::vector<double>(std::size_t, std::size_t)>&
        make_row) {
  std::vector<std::vector<double>> rows;
  rows.reserve(n_patients * n_items);
  for (std::size_t p = 0; p < n_patients; ++p)
    for (std::size_t i = 0; i < n_items; ++i) rows.push_back(make_row(p, i));
  return rows;
}

ad::Value rows_to_constant(const std::vector<std::vector<double>>& rows,
                           const std::vector<std::size_t>& idx) {
  const std::size_t d = rows.front().size();
  std::vector<double> flat;
  flat.reserve(idx.size() * d);
  for (std::size_t i : idx)
    flat.insert(flat.end(), rows[i].begin(), rows[i].end());
  return ad::Value::constant({idx.size(), d}, std::move(flat));
}

}  // namespace

TrainHistory train_node_autoencoder(NodeAutoencoder& model,
                                    const SslDataset& data, const Atlas& atlas,
                                    const BrainNetTrainConfig& cfg) {
  const auto& first = data.volumes.front();
  auto channels = anatomical_channels(first.channels, cfg.reference_channel);
  auto rows = collect_rows(
      data.volumes.size(), atlas.region_voxels.size(),
      [&](std::size_t p, std::size_t r) {
        return sample_region_voxels(data.volumes[p], atlas, r,
                                    cfg.node_samples, channels);
      });
  if (rows.front().size() != model.input_dim)
    throw std::invalid_argument(
        "autoencoder training: sample width does not match model input");

  nn::Adam opt(model.params().values(), cfg.lr, cfg.weight_decay);
  nn::StepDecay schedule{cfg.lr, cfg.lr_decay, cfg.lr_step_every};
  Rng rng(derive_seed(cfg.seed, "node-autoencoder"));
  TrainHistory history;

  std::vector<std::size_t> order(rows.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  const std::size_t batch = std::max<std::size_t>(1, cfg.batch_size);

  for (std::size_t epoch = 0; epoch < cfg.ae_epochs; ++epoch) {
    opt.set_lr(schedule.at(epoch));
    rng.shuffle(order);
    double epoch_sum = 0.0;
    std::size_t n_batches = 0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      std::vector<std::size_t> idx(
          order.begin() + static_cast<std::ptrdiff_t>(start),
          order.begin() + static_cast<std::ptrdiff_t>(
                              std::min(start + batch, order.size())));
      ad::Value x = rows_to_constant(rows, idx);
      ad::Value loss = ad::mse(model.reconstruct(x), x.data());
      double value = loss.item();
      if (!std::isfinite(value))
        throw_divergence("autoencoder training", epoch, value);
      opt.zero_grad();
      ad::backward(loss);
      opt.step();
      epoch_sum += value;
      ++n_batches;
    }
    history.epoch_loss.push_back(epoch_sum / static_cast<double>(n_batches));
    history.epoch_lr.push_back(opt.lr());
  }
  return history;
}

TrainHistory train_edge_encoders(EdgeEncoderPair& model, const SslDataset& data,
                                 const Atlas& atlas,
                                 const BrainNetTrainConfig& cfg) {
  const auto& first = data.volumes.front();
  auto anat_ch = anatomical_channels(first.channels, cfg.reference_channel);
  std::vector<std::size_t> fa_ch = {cfg.reference_channel};
  auto anat_rows = collect_rows(
      data.volumes.size(), atlas.tract_voxels.size(),
      [&](std::size_t p, std::size_t t) {
        return sample_tract_voxels(data.volumes[p], atlas, t, cfg.edge_samples,
                                   anat_ch);
      });
  auto fa_rows = collect_rows(
      data.volumes.size(), atlas.tract_voxels.size(),
      [&](std::size_t p, std::size_t t) {
        return sample_tract_voxels(data.volumes[p], atlas, t, cfg.edge_samples,
                                   fa_ch);
      });

  nn::Sgd opt(model.params().values(), cfg.lr, cfg.weight_decay);
  nn::StepDecay schedule{cfg.lr, cfg.lr_decay, cfg.lr_step_every};
  Rng rng(derive_seed(cfg.seed, "edge-encoders"));
  TrainHistory history;

  std::vector<std::size_t> order(anat_rows.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  const std::size_t batch = std::max<std::size_t>(2, cfg.batch_size);

  for (std::size_t epoch = 0; epoch < cfg.edge_epochs; ++epoch) {
    opt.set_lr(schedule.at(epoch));
    rng.shuffle(order);
    double epoch_sum = 0.0;
    std::size_t n_batches = 0;
    for (std::size_t start = 0; start + 1 < order.size(); start += batch) {
      std::vector<std::size_t> idx(
          order.begin() + static_cast<std::ptrdiff_t>(start),
          order.begin() + static_cast<std::ptrdiff_t>(
                              std::min(start + batch, order.size())));
      if (idx.size() < 2) break;  // a singleton has no negatives
      ad::Value za = model.proj_anat.forward(
          model.anat.forward(rows_to_constant(anat_rows, idx)));
      ad::Value zf = model.proj_fa.forward(
          model.fa.forward(rows_to_constant(fa_rows, idx)));
      ad::Value loss = edge_contrastive_loss(
          za, zf, model.tau, cfg.include_positive_in_denominator);
      double value = loss.item();
      if (!std::isfinite(value))
        throw_divergence("edge encoder training", epoch, value);
      opt.zero_grad();
      ad::backward(loss);
      opt.step();
      epoch_sum += value;
      ++n_batches;
    }
    if (n_batches == 0)
      throw std::runtime_error(
          "edge encoder training: fewer than two tract samples");
    history.epoch_loss.push_back(epoch_sum / static_cast<double>(n_batches));
    history.epoch_lr.push_back(opt.lr());
  }
  return history;
}

// ---------------------------------------------------------------- inference

BrainNetwork build_brain_network(const MultiChannelVolume& volume,
                                 const Atlas& atlas,
                                 const NodeAutoencoder& node_ae,
                                 const EdgeEncoderPair& edge_pair,
                                 const BrainNetTrainConfig& cfg) {
  if (node_ae.attr_dim() != edge_pair.attr_dim())
    throw std::invalid_argument(
        "brain network: node and edge attribute dims differ");
  auto channels = anatomical_channels(volume.channels, cfg.reference_channel);

  BrainNetwork net;
  net.n_nodes = atlas.region_voxels.size();
  net.attr_dim = node_ae.attr_dim();
  net.node_attrs.reserve(net.n_nodes * net.attr_dim);
  for (std::size_t r = 0; r < net.n_nodes; ++r) {
    auto row = sample_region_voxels(volume, atlas, r, cfg.node_samples,
                                    channels);
    const std::size_t dim = row.size();
    ad::Value code =
        node_ae.encode(ad::Value::constant({1, dim}, std::move(row)));
    net.node_attrs.insert(net.node_attrs.end(), code.data().begin(),
                          code.data().end());
  }
  net.edge_index = atlas.tract_endpoints;
  net.edge_voxel_sets = atlas.tract_voxels;
  net.edge_attrs.reserve(net.edge_index.size() * net.attr_dim);
  for (std::size_t t = 0; t < net.edge_index.size(); ++t) {
    auto row = sample_tract_voxels(volume, atlas, t, cfg.edge_samples,
                                   channels);
    const std::size_t dim = row.size();
    ad::Value code = edge_pair.anat.forward(
        ad::Value::constant({1, dim}, std::move(row)));
    net.edge_attrs.insert(net.edge_attrs.end(), code.data().begin(),
                          code.data().end());
  }
  return net;
}

// ------------------------------------------------------------ serialization

void save_brain_network(const std::filesystem::path& prefix,
                        const BrainNetwork& net) {
  save_tensor(prefix.string() + "_nodes.mmgt",
              to_f32({net.n_nodes, net.attr_dim}, net.node_attrs));
  std::vector<double> edges_flat;
  edges_flat.reserve(net.edge_index.size() * 2);
  for (const auto& [i, j] : net.edge_index) {
    edges_flat.push_back(static_cast<double>(i));
    edges_flat.push_back(static_cast<double>(j));
  }
  save_tensor(prefix.string() + "_edges.mmgt",
              to_f32({net.edge_index.size(), 2}, edges_flat));
  save_tensor(prefix.string() + "_edge_attrs.mmgt",
              to_f32({net.edge_index.size(), net.attr_dim}, net.edge_attrs));

  nlohmann::json doc;
  doc["n_nodes"] = net.n_nodes;
  doc["attr_dim"] = net.attr_dim;
  doc["edge_voxel_sets"] = nlohmann::json::array();
  for (const auto& vs : net.edge_voxel_sets) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& v : vs) arr.push_back({v.x, v.y, v.z});
    doc["edge_voxel_sets"].push_back(std::move(arr));
  }
  std::ofstream out(prefix.string() + "_graph.json");
  if (!out) throw std::runtime_error("cannot write " + prefix.string());
  out << doc.dump() << "\n";
}

BrainNetwork load_brain_network(const std::filesystem::path& prefix) {
  BrainNetwork net;
  F32Tensor nodes = load_f32_tensor(prefix.string() + "_nodes.mmgt");
  F32Tensor edges = load_f32_tensor(prefix.string() + "_edges.mmgt");
  F32Tensor edge_attrs = load_f32_tensor(prefix.string() + "_edge_attrs.mmgt");
  if (nodes.rank() != 2 || edges.rank() != 2 || edge_attrs.rank() != 2 ||
      edges.dims()[1] != 2)
    throw TensorIoError("brain network tensors have unexpected ranks");
  net.n_nodes = nodes.dims()[0];
  net.attr_dim = nodes.dims()[1];
  net.node_attrs.assign(nodes.vec().begin(), nodes.vec().end());
  for (std::size_t e = 0; e < edges.dims()[0]; ++e)
    net.edge_index.emplace_back(static_cast<int>(edges[2 * e]),
                                static_cast<int>(edges[2 * e + 1]));
  net.edge_attrs.assign(edge_attrs.vec().begin(), edge_attrs.vec().end());

  std::ifstream in(prefix.string() + "_graph.json");
  if (!in) throw std::runtime_error("cannot read " + prefix.string());
  nlohmann::json doc = nlohmann::json::parse(in);
  for (const auto& arr : doc.at("edge_voxel_sets")) {
    std::vector<Voxel> vs;
    for (const auto& v : arr)
      vs.push_back(Voxel{v.at(0).get<int>(), v.at(1).get<int>(),
                         v.at(2).get<int>()});
    net.edge_voxel_sets.push_back(std::move(vs));
  }
  if (net.edge_voxel_sets.size() != net.edge_index.size())
    throw TensorIoError("brain network: edge list / voxel set length mismatch");
  auto violations = validate_brain_network(net);
  if (!violations.empty())
    throw TensorIoError("brain network: " + violations.front());
  return net;
}

}  // namespace mmgt
