#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <tuple>
#include <vector>

namespace mmgt {

/// Integer voxel coordinate. Ordering is lexicographic (x, y, z) so that
/// sorted voxel lists have a canonical layout on disk.
struct Voxel {
  int x = 0, y = 0, z = 0;
  friend bool operator==(const Voxel& a, const Voxel& b) {
    return a.x == b.x && a.y == b.y && a.z == b.z;
  }
  friend bool operator<(const Voxel& a, const Voxel& b) {
    return std::tie(a.x, a.y, a.z) < std::tie(b.x, b.y, b.z);
  }
};

/// Chebyshev (max-axis) distance between two voxels.
int chebyshev_distance(const Voxel& a, const Voxel& b);

/// Multi-sequence scan volume. Channel-major row-major layout:
/// index = ((c * nx + x) * ny + y) * nz + z.
struct MultiChannelVolume {
  std::size_t channels = 0, nx = 0, ny = 0, nz = 0;
  std::vector<std::string> channel_names;
  std::array<double, 3> voxel_size = {1.0, 1.0, 1.0};
  std::vector<double> data;

  static MultiChannelVolume zeros(std::size_t c, std::size_t x, std::size_t y,
                                  std::size_t z);
  std::size_t index(std::size_t c, std::size_t x, std::size_t y,
                    std::size_t z) const {
    return ((c * nx + x) * ny + y) * nz + z;
  }
  double at(std::size_t c, std::size_t x, std::size_t y, std::size_t z) const {
    return data[index(c, x, y, z)];
  }
  double& at(std::size_t c, std::size_t x, std::size_t y, std::size_t z) {
    return data[index(c, x, y, z)];
  }
};

/// Binary lesion mask over the same spatial grid as its volume.
struct TumorMask {
  std::size_t nx = 0, ny = 0, nz = 0;
  std::vector<std::uint8_t> data;  // 0/1

  static TumorMask zeros(std::size_t x, std::size_t y, std::size_t z);
  std::size_t index(std::size_t x, std::size_t y, std::size_t z) const {
    return (x * ny + y) * nz + z;
  }
  bool at(std::size_t x, std::size_t y, std::size_t z) const {
    return data[index(x, y, z)] != 0;
  }
  void set(std::size_t x, std::size_t y, std::size_t z, bool v) {
    data[index(x, y, z)] = v ? 1 : 0;
  }
  std::size_t foreground_count() const;
  std::vector<Voxel> foreground_voxels() const;
};

/// Lesion-masked crop of the anatomical channels: voxels outside the mask are
/// exactly zero, the padded mask bounding box is centered in a fixed cube.
struct TumorImage {
  std::size_t channels = 0, nx = 0, ny = 0, nz = 0;
  std::vector<double> data;

  std::size_t index(std::size_t c, std::size_t x, std::size_t y,
                    std::size_t z) const {
    return ((c * nx + x) * ny + y) * nz + z;
  }
  double at(std::size_t c, std::size_t x, std::size_t y, std::size_t z) const {
    return data[index(c, x, y, z)];
  }
};

/// Surface sample of the lesion; `attention` is filled by the geometric
/// encoder (empty before that).
struct PointsCloud {
  std::vector<std::array<double, 3>> coords;
  std::vector<double> attention;  // empty or size() == coords.size(), in [0,1]
};

/// Attributed region/tract graph for one patient. Edges are canonical
/// (first < second) and unique. `edge_voxel_sets` carries each tract's voxel
/// pathway so downstream attention can test geometric crossings.
struct BrainNetwork {
  std::size_t n_nodes = 0;
  std::size_t attr_dim = 0;
  std::vector<double> node_attrs;                 // n_nodes × attr_dim
  std::vector<std::pair<int, int>> edge_index;    // canonical i < j
  std::vector<double> edge_attrs;                 // edges × attr_dim
  std::vector<std::vector<Voxel>> edge_voxel_sets;
};

/// Fixed spatial parcellation: disjoint region voxel sets (nodes) and tract
/// voxel pathways with endpoint region pairs (edges).
struct Atlas {
  std::array<std::size_t, 3> volume_shape = {0, 0, 0};
  std::vector<std::vector<Voxel>> region_voxels;
  std::vector<std::pair<int, int>> tract_endpoints;  // canonical i < j
  std::vector<std::vector<Voxel>> tract_voxels;      // sorted, unique
};

/// Canonicalize an undirected edge list: order endpoints (i < j), sort,
/// and drop duplicates. Throws std::invalid_argument on self-edges.
std::vector<std::pair<int, int>> canonical_edges(
    std::vector<std::pair<int, int>> edges);

/// True iff the mask foreground is non-empty and forms one component under
/// 6-connectivity (flood fill).
bool is_single_6connected_component(const TumorMask& mask);

/// Validators return human-readable violations; empty means all invariants
/// hold. Violations are data, not errors.
std::vector<std::string> validate_volume(const MultiChannelVolume& v);
std::vector<std::string> validate_mask(const TumorMask& m);
std::vector<std::string> validate_tumor_image(const TumorImage& img,
                                              const TumorMask& cropped_mask);
std::vector<std::string> validate_points_cloud(
    const PointsCloud& cloud, const std::array<std::size_t, 3>& bounds);
std::vector<std::string> validate_brain_network(const BrainNetwork& net);
std::vector<std::string> validate_atlas(const Atlas& atlas);

/// Build the x^I crop: anatomical channels (all but `reference_channel`)
/// multiplied by the mask, bounding box padded by `pad`, centered in a
/// `cube`-sided volume (center-cropped if the padded box exceeds the cube).
TumorImage make_tumor_image(const MultiChannelVolume& volume,
                            const TumorMask& mask, std::size_t cube,
                            std::size_t pad = 2,
                            std::size_t reference_channel = 4);

/// The mask cropped with the identical geometry as make_tumor_image, so the
/// pair can be validated together.
TumorMask crop_mask_like_tumor_image(const TumorMask& mask, std::size_t cube,
                                     std::size_t pad = 2);

}  // namespace mmgt
