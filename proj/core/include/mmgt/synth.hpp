#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mmgt/manifest.hpp"
#include "mmgt/types.hpp"

namespace mmgt {

/// Desk-scale cohort generator settings. Class-effect sizes plant a signal in
/// every modality: delta_img shifts lesion texture, delta_geo perturbs the
/// lesion boundary, delta_net attenuates channels along lesion-adjacent
/// tracts (reference channel hardest hit). Label 1 receives the full effect,
/// label 0 a 0.3-scaled one.
struct SynthesisConfig {
  std::size_t n_patients = 20;
  std::array<std::size_t, 3> volume_shape = {32, 32, 32};
  std::size_t n_channels = 5;  // 4 anatomical + 1 FA-like reference
  std::size_t reference_channel = 4;
  std::size_t atlas_regions = 12;
  std::size_t atlas_tracts = 40;
  double delta_img = 0.5;
  double delta_geo = 0.5;
  double delta_net = 0.5;
  double positive_rate = 0.25;
  std::size_t n_ssl = 0;  // 0 = automatic (max(2, n/10))
  std::uint64_t rng_seed = 7;
};

std::vector<std::string> validate_synthesis_config(const SynthesisConfig& c);

/// Deterministic split arithmetic: after removing the ssl pool, the rest is
/// split 7:3 (train = floor(0.7 m), test = the remainder), and the train side
/// is halved with the odd patient going to `contrastive`
/// (contrastive = ceil(train/2)). Throws std::invalid_argument
/// ("cohort too small for 4-way split") when any partition is empty.
struct SplitSizes {
  std::size_t ssl = 0, contrastive = 0, classifier = 0, test = 0;
};
SplitSizes compute_split_sizes(std::size_t n_patients, std::size_t n_ssl);

/// R disjoint ellipsoidal regions tiled on a jittered grid plus E tracts
/// voxelized as quadratic Bezier curves between distinct region pairs.
/// Deterministic under config.rng_seed. Throws std::runtime_error
/// ("atlas congestion") when regions or distinct tract pairs don't fit.
Atlas generate_atlas(const SynthesisConfig& config);

struct PatientSample {
  MultiChannelVolume volume;
  TumorMask mask;
};

/// One patient: smooth per-channel background, one blob lesion, label-scaled
/// planted effects. All randomness is drawn before any label-dependent
/// branch, so with equal seeds and zero effect sizes the two labels produce
/// identical bytes. Throws std::runtime_error ("placement failure") when no
/// lesion position touches enough tract voxels.
PatientSample generate_patient(const SynthesisConfig& config, int label,
                               const Atlas& atlas, std::size_t patient_index);

/// Full cohort on disk: atlas.json, config snapshot, per-patient volume/mask
/// tensors, cohort.json manifest. Positive labels are interleaved at a fixed
/// stride (n / quota), so every split at least one stride wide sees both
/// classes. Returns the manifest (also written to disk).
CohortManifest generate_cohort(const SynthesisConfig& config,
                               const std::filesystem::path& out_dir);

void save_atlas(const std::filesystem::path& path, const Atlas& atlas);
Atlas load_atlas(const std::filesystem::path& path);

void save_synthesis_config(const std::filesystem::path& path,
                           const SynthesisConfig& config);
SynthesisConfig load_synthesis_config(const std::filesystem::path& path);

/// Tract indices whose pathway comes within Chebyshev distance `dilation`
/// of any mask voxel (the lesion-adjacency rule shared by the generator and
/// the disruption statistics in tests).
std::vector<std::size_t> tracts_adjacent_to_mask(const Atlas& atlas,
                                                 const TumorMask& mask,
                                                 int dilation = 2);

}  // namespace mmgt
