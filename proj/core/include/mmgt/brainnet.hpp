#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <vector>

#include "mmgt/autodiff.hpp"
#include "mmgt/manifest.hpp"
#include "mmgt/nn.hpp"
#include "mmgt/types.hpp"

namespace mmgt {

/// Thrown when a training loop produces a non-finite loss.
class TrainingDivergence : public std::runtime_error {
 public:
  explicit TrainingDivergence(const std::string& what)
      : std::runtime_error(what) {}
};

/// Settings for the self-supervised attribute models. Desk defaults are
/// scaled-down; `paper` preset (module config) restores the full widths
/// (node 4000 samples, encoder 2048..16; edge 4000/1000 samples).
struct BrainNetTrainConfig {
  std::size_t node_samples = 512;   // voxels sampled per region
  std::size_t edge_samples = 256;   // voxels sampled per tract
  std::size_t reference_channel = 4;
  std::vector<std::size_t> ae_encoder_widths = {256, 128, 64, 32, 16};
  std::vector<std::size_t> edge_anat_widths = {256, 128, 32, 16};
  std::vector<std::size_t> edge_fa_widths = {128, 64, 16};
  std::vector<std::size_t> edge_proj_widths = {32, 16};
  double tau_edge = 0.1;
  bool include_positive_in_denominator = false;
  std::size_t ae_epochs = 120;
  std::size_t edge_epochs = 120;
  std::size_t batch_size = 50;
  double lr = 1e-3;
  double weight_decay = 5e-4;
  double lr_decay = 0.9;
  std::size_t lr_step_every = 50;
  std::uint64_t seed = 7;
};

/// Deterministic fixed-length voxel sampling: entry i reads the voxel at
/// list index floor(i*len/n_samples) (repetition when the list is short,
/// even-stride downsampling when long); the listed channels are concatenated
/// per sample (sample-major, channel-minor). Voxel lists are used in their
/// stored canonical order.
std::vector<double> sample_voxel_values(const MultiChannelVolume& volume,
                                        const std::vector<Voxel>& voxels,
                                        std::size_t n_samples,
                                        const std::vector<std::size_t>& channels);
std::vector<double> sample_region_voxels(const MultiChannelVolume& volume,
                                         const Atlas& atlas,
                                         std::size_t region_id,
                                         std::size_t n_samples,
                                         const std::vector<std::size_t>& channels);
std::vector<double> sample_tract_voxels(const MultiChannelVolume& volume,
                                        const Atlas& atlas,
                                        std::size_t tract_id,
                                        std::size_t n_samples,
                                        const std::vector<std::size_t>& channels);

/// Region-voxel autoencoder; the bottleneck output is the node attribute
/// vector (dim = last encoder width).
struct NodeAutoencoder {
  nn::Mlp encoder;
  nn::Mlp decoder;
  std::size_t input_dim = 0;

  NodeAutoencoder() = default;
  NodeAutoencoder(std::size_t input_dim_,
                  const std::vector<std::size_t>& encoder_widths, Rng& rng);
  ad::Value encode(const ad::Value& x) const { return encoder.forward(x); }
  ad::Value reconstruct(const ad::Value& x) const {
    return decoder.forward(encoder.forward(x));
  }
  nn::ParamMap params() const;
  std::size_t attr_dim() const;
};

/// Anatomical and reference-channel tract encoders with projection heads
/// into a shared latent space. Only the anatomical branch survives into
/// inference; the reference branch exists to shape it during training.
struct EdgeEncoderPair {
  nn::Mlp anat;
  nn::Mlp fa;
  nn::Mlp proj_anat;
  nn::Mlp proj_fa;
  double tau = 0.1;

  EdgeEncoderPair() = default;
  EdgeEncoderPair(std::size_t anat_dim, std::size_t fa_dim,
                  const BrainNetTrainConfig& cfg, Rng& rng);
  nn::ParamMap params() const;
  std::size_t attr_dim() const;
};

/// Mean over rows of -log[exp(S_nn/tau) / sum_{m != n} exp(S_nm/tau)] with
/// S = cosine similarity; the matched pair is excluded from the denominator
/// unless `include_positive`. Throws on batches smaller than 2 and on
/// zero-norm rows.
ad::Value edge_contrastive_loss(const ad::Value& z_anat, const ad::Value& z_fa,
                                double tau, bool include_positive = false);

struct TrainHistory {
  std::vector<double> epoch_loss;
  std::vector<double> epoch_lr;
};

/// Container-tensor loaders for the per-patient artifacts (f32 {C,X,Y,Z}
/// volume, u8 {X,Y,Z} mask). Channel names are defaulted on load.
MultiChannelVolume load_volume(const std::filesystem::path& path);
TumorMask load_mask(const std::filesystem::path& path);

/// Patients of one split loaded in memory for the self-supervised stage.
struct SslDataset {
  std::vector<MultiChannelVolume> volumes;
};
SslDataset load_split_volumes(const CohortManifest& manifest,
                              const std::filesystem::path& root,
                              const std::string& split);

/// Mean-squared-error training of the region autoencoder over all
/// (patient, region) vectors of the dataset. Adam, step-decayed lr. Throws
/// TrainingDivergence (with epoch and loss in the message) on non-finite
/// loss.
TrainHistory train_node_autoencoder(NodeAutoencoder& model,
                                    const SslDataset& data, const Atlas& atlas,
                                    const BrainNetTrainConfig& cfg);

/// Contrastive alignment of anatomical and reference tract vectors over all
/// (patient, tract) pairs. SGD, step-decayed lr; minibatches below 2 are
/// dropped. Throws TrainingDivergence on non-finite loss.
TrainHistory train_edge_encoders(EdgeEncoderPair& model, const SslDataset& data,
                                 const Atlas& atlas,
                                 const BrainNetTrainConfig& cfg);

/// Assemble one patient's attributed graph: node attrs from the autoencoder
/// bottleneck, edge attrs from the anatomical tract encoder, voxel pathways
/// copied from the atlas. Node/edge attribute dims must agree.
BrainNetwork build_brain_network(const MultiChannelVolume& volume,
                                 const Atlas& atlas,
                                 const NodeAutoencoder& node_ae,
                                 const EdgeEncoderPair& edge_pair,
                                 const BrainNetTrainConfig& cfg);

/// Network serialization: node/edge attribute tensors, edge index tensor,
/// and a JSON sidecar listing the edge voxel sets.
void save_brain_network(const std::filesystem::path& prefix,
                        const BrainNetwork& net);
BrainNetwork load_brain_network(const std::filesystem::path& prefix);

/// Anatomical channels of a volume (all but the reference channel).
std::vector<std::size_t> anatomical_channels(std::size_t n_channels,
                                             std::size_t reference_channel);

}  // namespace mmgt
