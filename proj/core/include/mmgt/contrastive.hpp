#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mmgt/autodiff.hpp"
#include "mmgt/brainnet.hpp"
#include "mmgt/encoders.hpp"
#include "mmgt/nn.hpp"

namespace mmgt {

/// Feed-forward projections of the four feature vectors into the shared
/// 128-dim latent space. Width lists are layer outputs; the tumor head takes
/// the concatenated image+geometric feature (64-dim input).
struct ProjectionHeads {
  nn::Mlp g_image;    // 32 -> 32,64,128,128
  nn::Mlp g_points;   // 32 -> 32,64,128,128
  nn::Mlp g_network;  // 32 -> 32,64,128,128
  nn::Mlp g_tumor;    // 64 -> 64,64,128,128

  ProjectionHeads() = default;
  ProjectionHeads(std::size_t feature_dim, Rng& rng);
  nn::ParamMap params() const;
  std::size_t latent_dim() const;
};

struct ContrastiveConfig {
  double tau = 0.1;
  double lambda = 0.8;  // tumor-level weight in the combined loss
  std::size_t batch_size = 20;
  std::size_t epochs = 200;
  double lr = 1e-3;
  double weight_decay = 5e-4;
  double lr_decay = 0.9;
  std::size_t lr_step_every = 50;
  bool augment = false;  // paired 90-degree rotations
  bool include_positive_in_denominator = false;
  std::uint64_t seed = 7;
};
std::vector<std::string> validate_contrastive_config(
    const ContrastiveConfig& cfg);

/// Pairwise-cosine contrastive losses over matched latent batches (rows are
/// patients). Each is the mean over anchors i of
/// -log[exp(S_ii/tau) / sum_{j != i} exp(S_ij/tau)]; the positive pair joins
/// the denominator only when `include_positive`. N >= 2 required; zero-norm
/// rows throw std::domain_error.
ad::Value loss_image_to_points(const ad::Value& z_image,
                               const ad::Value& z_points, double tau,
                               bool include_positive = false);
ad::Value loss_points_to_image(const ad::Value& z_points,
                               const ad::Value& z_image, double tau,
                               bool include_positive = false);
ad::Value loss_network_to_tumor(const ad::Value& z_network,
                                const ad::Value& z_tumor, double tau,
                                bool include_positive = false);
/// Combined bi-level loss: lambda averages the two tumor-level directions,
/// (1 - lambda) weights the brain-to-tumor level.
ad::Value loss_multi(const ad::Value& z_image, const ad::Value& z_points,
                     const ad::Value& z_network, const ad::Value& z_tumor,
                     double tau, double lambda, bool include_positive = false);

/// Axis-aligned quarter-turn rotation; the interpolation-free augmentation
/// applied identically to the cropped volume and the point cloud.
struct Rotation90 {
  int axis = 2;           // 0=x, 1=y, 2=z
  int quarter_turns = 1;  // 1..3
};
TumorImage rotate_image(const TumorImage& img, const Rotation90& rot);
PointGraph rotate_graph(const PointGraph& graph, const Rotation90& rot,
                        const std::array<double, 3>& center);

/// Latent batches for one minibatch of patients (rows align with `patients`).
struct LatentBatch {
  ad::Value z_image, z_points, z_network, z_tumor;  // each {N, 128}
};
LatentBatch project_batch(const MultiModalEncoders& enc,
                          const ProjectionHeads& heads,
                          const std::vector<const PatientInputs*>& patients,
                          const EncoderConfig& enc_cfg);

/// Joint training of the three encoders and four heads: per minibatch the
/// full attention-wired forward runs for every patient, the combined loss is
/// minimized by SGD with the step-decay schedule. Partial minibatches below
/// 2 patients are dropped. On a non-finite loss the parameters are restored
/// to the end of the last finite epoch and TrainingDivergence is thrown.
TrainHistory train_contrastive(MultiModalEncoders& enc, ProjectionHeads& heads,
                               const std::vector<PatientInputs>& patients,
                               const EncoderConfig& enc_cfg,
                               const ContrastiveConfig& cfg);

}  // namespace mmgt
