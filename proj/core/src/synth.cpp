#include "mmgt/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "mmgt/rng.hpp"
#include "mmgt/tensor.hpp"

namespace mmgt {
namespace {

constexpr double kLabelScale[2] = {0.3, 1.0};  // effect scale per class
constexpr double kMaxAttenuation = 0.95;

/// Smooth scalar field: normal noise on a coarse grid, trilinear upsampling.
class SmoothField {
 public:
  SmoothField(Rng& rng, const std::array<std::size_t, 3>& shape,
              std::size_t granularity)
      : granularity_(granularity) {
    for (int a = 0; a < 3; ++a) coarse_[a] = shape[static_cast<std::size_t>(a)] / granularity + 2;
    values_.resize(coarse_[0] * coarse_[1] * coarse_[2]);
    for (auto& v : values_) v = rng.normal();
  }

  double at(double x, double y, double z) const {
    double fx = x / static_cast<double>(granularity_);
    double fy = y / static_cast<double>(granularity_);
    double fz = z / static_cast<double>(granularity_);
    std::size_t ix = static_cast<std::size_t>(fx);
    std::size_t iy = static_cast<std::size_t>(fy);
    std::size_t iz = static_cast<std::size_t>(fz);
    double tx = fx - static_cast<double>(ix);
    double ty = fy - static_cast<double>(iy);
    double tz = fz - static_cast<double>(iz);
    auto g = [&](std::size_t a, std::size_t b, std::size_t c) {
      return values_[(std::min(a, coarse_[0] - 1) * coarse_[1] +
                      std::min(b, coarse_[1] - 1)) *
                         coarse_[2] +
                     std::min(c, coarse_[2] - 1)];
    };
    double c00 = g(ix, iy, iz) * (1 - tx) + g(ix + 1, iy, iz) * tx;
    double c10 = g(ix, iy + 1, iz) * (1 - tx) + g(ix + 1, iy + 1, iz) * tx;
    double c01 = g(ix, iy, iz + 1) * (1 - tx) + g(ix + 1, iy, iz + 1) * tx;
    double c11 =
        g(ix, iy + 1, iz + 1) * (1 - tx) + g(ix + 1, iy + 1, iz + 1) * tx;
    double c0 = c00 * (1 - ty) + c10 * ty;
    double c1 = c01 * (1 - ty) + c11 * ty;
    return c0 * (1 - tz) + c1 * tz;
  }

 private:
  std::size_t granularity_;
  std::array<std::size_t, 3> coarse_;
  std::vector<double> values_;
};

}  // namespace

std::vector<std::string> validate_synthesis_config(const SynthesisConfig& c) {
  std::vector<std::string> out;
  if (c.delta_img < 0 || c.delta_geo < 0 || c.delta_net < 0)
    out.push_back("effect sizes must be >= 0");
  if (c.atlas_regions < 2) out.push_back("need at least 2 atlas regions");
  if (c.atlas_tracts < 1) out.push_back("need at least 1 atlas tract");
  for (auto d : c.volume_shape)
    if (d < 8) out.push_back("volume_shape must be >= 8 per axis");
  if (c.n_channels < 2) out.push_back("need at least 2 channels");
  if (c.reference_channel >= c.n_channels)
    out.push_back("reference_channel out of range");
  if (c.positive_rate <= 0.0 || c.positive_rate >= 1.0)
    out.push_back("positive_rate must be in (0,1)");
  return out;
}

SplitSizes compute_split_sizes(std::size_t n_patients, std::size_t n_ssl) {
  if (n_ssl == 0) n_ssl = std::max<std::size_t>(2, n_patients / 10);
  SplitSizes s;
  s.ssl = n_ssl;
  if (n_patients <= n_ssl)
    throw std::invalid_argument("cohort too small for 4-way split");
  std::size_t m = n_patients - n_ssl;
  std::size_t train = static_cast<std::size_t>(0.7 * static_cast<double>(m));
  s.test = m - train;
  s.contrastive = (train + 1) / 2;  // odd patient goes to contrastive
  s.classifier = train - s.contrastive;
  if (s.ssl == 0 || s.contrastive == 0 || s.classifier == 0 || s.test == 0)
    throw std::invalid_argument("cohort too small for 4-way split");
  return s;
}

Atlas generate_atlas(const SynthesisConfig& config) {
  auto violations = validate_synthesis_config(config);
  if (!violations.empty())
    throw std::invalid_argument("invalid synthesis config: " + violations[0]);
  Rng rng(derive_seed(config.rng_seed, "atlas"));
  Atlas atlas;
  atlas.volume_shape = config.volume_shape;

  // Tile the volume into a cubic cell grid and keep one region per cell; an
  // ellipsoid strictly inside its cell can never overlap a neighbor.
  std::size_t r = config.atlas_regions;
  std::size_t cells_per_axis = 1;
  while (cells_per_axis * cells_per_axis * cells_per_axis < r)
    ++cells_per_axis;
  std::size_t min_dim = std::min(
      {config.volume_shape[0], config.volume_shape[1], config.volume_shape[2]});
  double cell = static_cast<double>(min_dim) / static_cast<double>(cells_per_axis);
  double max_semi = cell / 2.0 - 1.0;
  if (max_semi < 1.5) throw std::runtime_error("atlas congestion");
  std::vector<std::size_t> cell_ids(cells_per_axis * cells_per_axis *
                                    cells_per_axis);
  for (std::size_t i = 0; i < cell_ids.size(); ++i) cell_ids[i] = i;
  rng.shuffle(cell_ids);

  std::vector<std::array<double, 3>> centers;
  for (std::size_t k = 0; k < r; ++k) {
    std::size_t id = cell_ids[k];
    std::size_t cz = id % cells_per_axis;
    std::size_t cy = (id / cells_per_axis) % cells_per_axis;
    std::size_t cx = id / (cells_per_axis * cells_per_axis);
    std::array<double, 3> semi;
    for (auto& a : semi) a = rng.uniform(1.5, max_semi);
    std::array<double, 3> center;
    std::array<std::size_t, 3> ci = {cx, cy, cz};
    for (int axis = 0; axis < 3; ++axis) {
      double scale = static_cast<double>(
                         config.volume_shape[static_cast<std::size_t>(axis)]) /
                     static_cast<double>(cells_per_axis);
      double lo = static_cast<double>(ci[static_cast<std::size_t>(axis)]) * scale;
      double hi = lo + scale;
      double margin = semi[static_cast<std::size_t>(axis)] + 0.5;
      // Jitter the center while keeping the ellipsoid inside its cell.
      double cmin = lo + margin, cmax = hi - margin;
      center[static_cast<std::size_t>(axis)] =
          cmin < cmax ? rng.uniform(cmin, cmax) : (lo + hi) / 2.0;
    }
    std::vector<Voxel> voxels;
    for (int x = static_cast<int>(center[0] - semi[0]) - 1;
         x <= static_cast<int>(center[0] + semi[0]) + 1; ++x)
      for (int y = static_cast<int>(center[1] - semi[1]) - 1;
           y <= static_cast<int>(center[1] + semi[1]) + 1; ++y)
        for (int z = static_cast<int>(center[2] - semi[2]) - 1;
             z <= static_cast<int>(center[2] + semi[2]) + 1; ++z) {
          if (x < 0 || y < 0 || z < 0 ||
              x >= static_cast<int>(config.volume_shape[0]) ||
              y >= static_cast<int>(config.volume_shape[1]) ||
              z >= static_cast<int>(config.volume_shape[2]))
            continue;
          double dx = (static_cast<double>(x) - center[0]) / semi[0];
          double dy = (static_cast<double>(y) - center[1]) / semi[1];
          double dz = (static_cast<double>(z) - center[2]) / semi[2];
          if (dx * dx + dy * dy + dz * dz <= 1.0)
            voxels.push_back({x, y, z});
        }
    if (voxels.empty())
      voxels.push_back({static_cast<int>(center[0]),
                        static_cast<int>(center[1]),
                        static_cast<int>(center[2])});
    atlas.region_voxels.push_back(std::move(voxels));
    centers.push_back(center);
  }

  // Tracts: E distinct unordered region pairs, each voxelized as a quadratic
  // Bezier curve between region centers with a random bowing control point.
  std::size_t max_pairs = r * (r - 1) / 2;
  if (config.atlas_tracts > max_pairs)
    throw std::runtime_error("atlas congestion");
  std::vector<std::pair<int, int>> all_pairs;
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = i + 1; j < r; ++j)
      all_pairs.push_back({static_cast<int>(i), static_cast<int>(j)});
  rng.shuffle(all_pairs);
  all_pairs.resize(config.atlas_tracts);
  std::sort(all_pairs.begin(), all_pairs.end());

  for (const auto& [ri, rj] : all_pairs) {
    const auto& a = centers[static_cast<std::size_t>(ri)];
    const auto& b = centers[static_cast<std::size_t>(rj)];
    std::array<double, 3> mid;
    for (int axis = 0; axis < 3; ++axis) {
      double bow = rng.uniform(-3.0, 3.0);
      mid[static_cast<std::size_t>(axis)] =
          (a[static_cast<std::size_t>(axis)] +
           b[static_cast<std::size_t>(axis)]) /
              2.0 +
          bow;
    }
    std::set<Voxel> voxels;
    const int steps = 200;
    for (int s = 0; s <= steps; ++s) {
      double t = static_cast<double>(s) / steps;
      std::array<double, 3> p;
      for (int axis = 0; axis < 3; ++axis) {
        std::size_t ax = static_cast<std::size_t>(axis);
        p[ax] = (1 - t) * (1 - t) * a[ax] + 2 * (1 - t) * t * mid[ax] +
                t * t * b[ax];
      }
      Voxel v{static_cast<int>(std::lround(p[0])),
              static_cast<int>(std::lround(p[1])),
              static_cast<int>(std::lround(p[2]))};
      v.x = std::clamp(v.x, 0, static_cast<int>(config.volume_shape[0]) - 1);
      v.y = std::clamp(v.y, 0, static_cast<int>(config.volume_shape[1]) - 1);
      v.z = std::clamp(v.z, 0, static_cast<int>(config.volume_shape[2]) - 1);
      voxels.insert(v);
    }
    atlas.tract_endpoints.push_back({ri, rj});
    atlas.tract_voxels.emplace_back(voxels.begin(), voxels.end());
  }
  return atlas;
}

std::vector<std::size_t> tracts_adjacent_to_mask(const Atlas& atlas,
                                                 const TumorMask& mask,
                                                 int dilation) {
  auto fg = mask.foreground_voxels();
  std::vector<std::size_t> out;
  for (std::size_t e = 0; e < atlas.tract_voxels.size(); ++e) {
    bool adjacent = false;
    for (const auto& tv : atlas.tract_voxels[e]) {
      for (const auto& mv : fg)
        if (chebyshev_distance(tv, mv) <= dilation) {
          adjacent = true;
          break;
        }
      if (adjacent) break;
    }
    if (adjacent) out.push_back(e);
  }
  return out;
}

namespace {

/// Count of tract voxels within Chebyshev `dilation` of the mask; used for
/// the placement-quality check.
std::size_t adjacent_tract_voxel_count(const Atlas& atlas,
                                       const TumorMask& mask, int dilation) {
  auto fg = mask.foreground_voxels();
  std::size_t count = 0;
  for (const auto& tract : atlas.tract_voxels)
    for (const auto& tv : tract)
      for (const auto& mv : fg)
        if (chebyshev_distance(tv, mv) <= dilation) {
          ++count;
          break;
        }
  return count;
}

TumorMask voxelize_blob(const std::array<std::size_t, 3>& shape,
                        const std::array<double, 3>& center,
                        const std::array<double, 3>& semi,
                        const std::array<double, 3>& lobe_dir,
                        double irregularity) {
  TumorMask mask = TumorMask::zeros(shape[0], shape[1], shape[2]);
  int reach = static_cast<int>(std::ceil(
                  *std::max_element(semi.begin(), semi.end()) *
                  (1.0 + irregularity))) +
              1;
  Voxel c{static_cast<int>(std::lround(center[0])),
          static_cast<int>(std::lround(center[1])),
          static_cast<int>(std::lround(center[2]))};
  for (int x = c.x - reach; x <= c.x + reach; ++x)
    for (int y = c.y - reach; y <= c.y + reach; ++y)
      for (int z = c.z - reach; z <= c.z + reach; ++z) {
        if (x < 0 || y < 0 || z < 0 || x >= static_cast<int>(shape[0]) ||
            y >= static_cast<int>(shape[1]) || z >= static_cast<int>(shape[2]))
          continue;
        double dx = static_cast<double>(x) - center[0];
        double dy = static_cast<double>(y) - center[1];
        double dz = static_cast<double>(z) - center[2];
        double norm = std::sqrt(dx * dx + dy * dy + dz * dz);
        // Cosine-lobe boundary bulge in the lobe direction.
        double bulge = 0.0;
        if (norm > 1e-9 && irregularity > 0.0) {
          double cosang = (dx * lobe_dir[0] + dy * lobe_dir[1] +
                           dz * lobe_dir[2]) /
                          norm;
          bulge = irregularity * std::max(0.0, cosang);
        }
        double q = dx / (semi[0] * (1.0 + bulge));
        double w = dy / (semi[1] * (1.0 + bulge));
        double v = dz / (semi[2] * (1.0 + bulge));
        if (q * q + w * w + v * v <= 1.0)
          mask.set(static_cast<std::size_t>(x), static_cast<std::size_t>(y),
                   static_cast<std::size_t>(z), true);
      }
  // Keep only the component containing the center so the mask is always one
  // 6-connected blob even for extreme boundary perturbations.
  if (mask.foreground_count() > 0 && !is_single_6connected_component(mask)) {
    TumorMask kept = TumorMask::zeros(shape[0], shape[1], shape[2]);
    std::vector<Voxel> stack;
    if (mask.at(static_cast<std::size_t>(c.x), static_cast<std::size_t>(c.y),
                static_cast<std::size_t>(c.z))) {
      stack.push_back(c);
      kept.set(static_cast<std::size_t>(c.x), static_cast<std::size_t>(c.y),
               static_cast<std::size_t>(c.z), true);
    }
    const int dirs[6][3] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0},
                            {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
    while (!stack.empty()) {
      Voxel v2 = stack.back();
      stack.pop_back();
      for (auto& d : dirs) {
        int xx = v2.x + d[0], yy = v2.y + d[1], zz = v2.z + d[2];
        if (xx < 0 || yy < 0 || zz < 0 || xx >= static_cast<int>(shape[0]) ||
            yy >= static_cast<int>(shape[1]) ||
            zz >= static_cast<int>(shape[2]))
          continue;
        if (mask.at(static_cast<std::size_t>(xx), static_cast<std::size_t>(yy),
                    static_cast<std::size_t>(zz)) &&
            !kept.at(static_cast<std::size_t>(xx),
                     static_cast<std::size_t>(yy),
                     static_cast<std::size_t>(zz))) {
          kept.set(static_cast<std::size_t>(xx), static_cast<std::size_t>(yy),
                   static_cast<std::size_t>(zz), true);
          stack.push_back({xx, yy, zz});
        }
      }
    }
    mask = kept;
  }
  return mask;
}

}  // namespace

PatientSample generate_patient(const SynthesisConfig& config, int label,
                               const Atlas& atlas,
                               std::size_t patient_index) {
  if (label != 0 && label != 1)
    throw std::invalid_argument("label must be 0 or 1");
  Rng rng(derive_seed(config.rng_seed, "patient", patient_index));
  const auto& shape = config.volume_shape;
  double effect = kLabelScale[label];

  // ---- backgrounds (label-independent randomness) ----
  MultiChannelVolume vol = MultiChannelVolume::zeros(config.n_channels,
                                                     shape[0], shape[1],
                                                     shape[2]);
  const double anat_base[4] = {1.0, 0.8, 1.2, 0.9};
  double gain = rng.uniform(0.9, 1.1);  // per-patient nuisance gain
  for (std::size_t c = 0; c < config.n_channels; ++c) {
    double base = c == config.reference_channel
                      ? 0.6
                      : anat_base[std::min<std::size_t>(c, 3)];
    SmoothField field(rng, shape, 4);
    for (std::size_t x = 0; x < shape[0]; ++x)
      for (std::size_t y = 0; y < shape[1]; ++y)
        for (std::size_t z = 0; z < shape[2]; ++z) {
          double v = base + 0.15 * field.at(static_cast<double>(x),
                                            static_cast<double>(y),
                                            static_cast<double>(z)) +
                     0.05 * rng.normal();
          vol.at(c, x, y, z) = gain * v;
        }
    vol.channel_names[c] = c == config.reference_channel
                               ? "fa_ref"
                               : "anat" + std::to_string(c);
  }

  // ---- lesion geometry (randomness drawn before label effects) ----
  std::array<double, 3> semi;
  for (auto& s : semi) s = rng.uniform(2.5, 4.5);
  std::array<double, 3> lobe_dir;
  double norm = 0.0;
  for (auto& d : lobe_dir) {
    d = rng.normal();
    norm += d * d;
  }
  norm = std::sqrt(std::max(norm, 1e-12));
  for (auto& d : lobe_dir) d /= norm;
  SmoothField texture(rng, shape, 4);

  double max_semi = *std::max_element(semi.begin(), semi.end());
  double margin = max_semi * 1.4 + 2.0;
  TumorMask mask;
  bool placed = false;
  for (int attempt = 0; attempt < 50 && !placed; ++attempt) {
    std::array<double, 3> center;
    for (int axis = 0; axis < 3; ++axis) {
      double dim =
          static_cast<double>(shape[static_cast<std::size_t>(axis)]);
      center[static_cast<std::size_t>(axis)] =
          rng.uniform(margin, dim - margin);
    }
    double irregularity = 0.35 * config.delta_geo * effect;
    mask = voxelize_blob(shape, center, semi, lobe_dir, irregularity);
    if (mask.foreground_count() < 8) continue;
    if (adjacent_tract_voxel_count(atlas, mask, 2) >= 5) placed = true;
  }
  if (!placed) throw std::runtime_error("placement failure");

  // ---- label-dependent planted effects ----
  // Texture shift inside the lesion on anatomical channels.
  if (config.delta_img > 0.0) {
    for (std::size_t c = 0; c < config.n_channels; ++c) {
      if (c == config.reference_channel) continue;
      for (std::size_t x = 0; x < shape[0]; ++x)
        for (std::size_t y = 0; y < shape[1]; ++y)
          for (std::size_t z = 0; z < shape[2]; ++z)
            if (mask.at(x, y, z))
              vol.at(c, x, y, z) +=
                  config.delta_img * effect *
                  (0.4 + 0.3 * texture.at(static_cast<double>(x),
                                          static_cast<double>(y),
                                          static_cast<double>(z)));
    }
  }
  // Attenuation along lesion-adjacent tracts: the reference channel drops by
  // the full effect, anatomical channels by half of it (so inference-time
  // data still carries the disruption).
  if (config.delta_net > 0.0) {
    auto disrupted = tracts_adjacent_to_mask(atlas, mask, 2);
    std::set<Voxel> voxels;
    for (auto e : disrupted)
      voxels.insert(atlas.tract_voxels[e].begin(),
                    atlas.tract_voxels[e].end());
    double fa_factor =
        1.0 - std::min(kMaxAttenuation, config.delta_net * effect);
    double anat_factor =
        1.0 - std::min(kMaxAttenuation, 0.5 * config.delta_net * effect);
    for (const auto& v : voxels) {
      auto x = static_cast<std::size_t>(v.x);
      auto y = static_cast<std::size_t>(v.y);
      auto z = static_cast<std::size_t>(v.z);
      for (std::size_t c = 0; c < config.n_channels; ++c)
        vol.at(c, x, y, z) *=
            c == config.reference_channel ? fa_factor : anat_factor;
    }
  }
  // Reference channel is a nonnegative anisotropy-like index.
  for (std::size_t x = 0; x < shape[0]; ++x)
    for (std::size_t y = 0; y < shape[1]; ++y)
      for (std::size_t z = 0; z < shape[2]; ++z)
        vol.at(config.reference_channel, x, y, z) =
            std::max(0.05, vol.at(config.reference_channel, x, y, z));

  return {std::move(vol), std::move(mask)};
}

namespace {
std::string patient_id(std::size_t index) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "p%03zu", index);
  return buf;
}
}  // namespace

CohortManifest generate_cohort(const SynthesisConfig& config,
                               const std::filesystem::path& out_dir) {
  auto violations = validate_synthesis_config(config);
  if (!violations.empty())
    throw std::invalid_argument("invalid synthesis config: " + violations[0]);
  SplitSizes sizes = compute_split_sizes(config.n_patients, config.n_ssl);
  std::filesystem::create_directories(out_dir);

  Atlas atlas = generate_atlas(config);
  save_atlas(out_dir / "atlas.json", atlas);
  save_synthesis_config(out_dir / "config.json", config);

  // Labels: fixed positive quota, evenly interleaved; any split at least one
  // stride (n / quota) wide is guaranteed both classes.
  std::size_t n = config.n_patients;
  std::size_t n_pos = std::max<std::size_t>(
      1, static_cast<std::size_t>(
             std::lround(config.positive_rate * static_cast<double>(n))));
  std::vector<int> labels(n, 0);
  for (std::size_t k = 0; k < n_pos; ++k)
    labels[k * n / n_pos] = 1;

  // Split tags assigned contiguously over the interleaved order.
  std::vector<std::string> split_of(n);
  std::size_t cursor = 0;
  for (auto [name, count] :
       std::initializer_list<std::pair<const char*, std::size_t>>{
           {"ssl", sizes.ssl},
           {"contrastive", sizes.contrastive},
           {"classifier", sizes.classifier},
           {"test", sizes.test}}) {
    for (std::size_t k = 0; k < count; ++k) split_of[cursor++] = name;
  }

  CohortManifest manifest;
  manifest.atlas_path = "atlas.json";
  manifest.config_path = "config.json";
  for (std::size_t i = 0; i < n; ++i) {
    PatientSample sample = generate_patient(config, labels[i], atlas, i);
    PatientEntry entry;
    entry.id = patient_id(i);
    entry.label = labels[i];
    entry.split = split_of[i];
    std::string vol_file = entry.id + "_volume.mmgt";
    std::string mask_file = entry.id + "_mask.mmgt";
    save_tensor(out_dir / vol_file,
                to_f32({sample.volume.channels, sample.volume.nx,
                        sample.volume.ny, sample.volume.nz},
                       sample.volume.data));
    U8Tensor mask_tensor({sample.mask.nx, sample.mask.ny, sample.mask.nz},
                         sample.mask.data);
    save_tensor(out_dir / mask_file, mask_tensor);
    entry.files["volume"] = vol_file;
    entry.files["mask"] = mask_file;
    manifest.patients.push_back(std::move(entry));
  }
  save_manifest(out_dir / "cohort.json", manifest);
  return manifest;
}

void save_atlas(const std::filesystem::path& path, const Atlas& atlas) {
  nlohmann::json doc;
  doc["volume_shape"] = atlas.volume_shape;
  auto voxels_to_json = [](const std::vector<Voxel>& vs) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& v : vs) arr.push_back({v.x, v.y, v.z});
    return arr;
  };
  doc["regions"] = nlohmann::json::array();
  for (const auto& r : atlas.region_voxels)
    doc["regions"].push_back(voxels_to_json(r));
  doc["tracts"] = nlohmann::json::array();
  for (std::size_t e = 0; e < atlas.tract_endpoints.size(); ++e) {
    nlohmann::json t;
    t["endpoints"] = {atlas.tract_endpoints[e].first,
                      atlas.tract_endpoints[e].second};
    t["voxels"] = voxels_to_json(atlas.tract_voxels[e]);
    doc["tracts"].push_back(std::move(t));
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write atlas: " + path.string());
  out << doc.dump() << "\n";
}

Atlas load_atlas(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open atlas: " + path.string());
  nlohmann::json doc;
  in >> doc;
  Atlas atlas;
  auto shape = doc.at("volume_shape");
  for (int a = 0; a < 3; ++a)
    atlas.volume_shape[static_cast<std::size_t>(a)] =
        shape.at(static_cast<std::size_t>(a)).get<std::size_t>();
  auto voxels_from_json = [](const nlohmann::json& arr) {
    std::vector<Voxel> vs;
    for (const auto& v : arr)
      vs.push_back({v.at(0).get<int>(), v.at(1).get<int>(),
                    v.at(2).get<int>()});
    return vs;
  };
  for (const auto& r : doc.at("regions"))
    atlas.region_voxels.push_back(voxels_from_json(r));
  for (const auto& t : doc.at("tracts")) {
    atlas.tract_endpoints.push_back({t.at("endpoints").at(0).get<int>(),
                                     t.at("endpoints").at(1).get<int>()});
    atlas.tract_voxels.push_back(voxels_from_json(t.at("voxels")));
  }
  return atlas;
}

void save_synthesis_config(const std::filesystem::path& path,
                           const SynthesisConfig& config) {
  nlohmann::json doc;
  doc["n_patients"] = config.n_patients;
  doc["volume_shape"] = config.volume_shape;
  doc["n_channels"] = config.n_channels;
  doc["reference_channel"] = config.reference_channel;
  doc["atlas_regions"] = config.atlas_regions;
  doc["atlas_tracts"] = config.atlas_tracts;
  doc["delta_img"] = config.delta_img;
  doc["delta_geo"] = config.delta_geo;
  doc["delta_net"] = config.delta_net;
  doc["positive_rate"] = config.positive_rate;
  doc["n_ssl"] = config.n_ssl;
  doc["rng_seed"] = config.rng_seed;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write config: " + path.string());
  out << doc.dump(2) << "\n";
}

SynthesisConfig load_synthesis_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config: " + path.string());
  nlohmann::json doc;
  in >> doc;
  SynthesisConfig c;
  c.n_patients = doc.at("n_patients").get<std::size_t>();
  for (int a = 0; a < 3; ++a)
    c.volume_shape[static_cast<std::size_t>(a)] =
        doc.at("volume_shape").at(static_cast<std::size_t>(a)).get<std::size_t>();
  c.n_channels = doc.at("n_channels").get<std::size_t>();
  c.reference_channel = doc.at("reference_channel").get<std::size_t>();
  c.atlas_regions = doc.at("atlas_regions").get<std::size_t>();
  c.atlas_tracts = doc.at("atlas_tracts").get<std::size_t>();
  c.delta_img = doc.at("delta_img").get<double>();
  c.delta_geo = doc.at("delta_geo").get<double>();
  c.delta_net = doc.at("delta_net").get<double>();
  c.positive_rate = doc.at("positive_rate").get<double>();
  c.n_ssl = doc.at("n_ssl").get<std::size_t>();
  c.rng_seed = doc.at("rng_seed").get<std::uint64_t>();
  return c;
}

}  // namespace mmgt
