#include "mmgt/types.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <stdexcept>

namespace mmgt {

int chebyshev_distance(const Voxel& a, const Voxel& b) {
  int dx = std::abs(a.x - b.x);
  int dy = std::abs(a.y - b.y);
  int dz = std::abs(a.z - b.z);
  return std::max(dx, std::max(dy, dz));
}

MultiChannelVolume MultiChannelVolume::zeros(std::size_t c, std::size_t x,
                                             std::size_t y, std::size_t z) {
  MultiChannelVolume v;
  v.channels = c;
  v.nx = x;
  v.ny = y;
  v.nz = z;
  v.channel_names.resize(c);
  for (std::size_t i = 0; i < c; ++i)
    v.channel_names[i] = "ch" + std::to_string(i);
  v.data.assign(c * x * y * z, 0.0);
  return v;
}

TumorMask TumorMask::zeros(std::size_t x, std::size_t y, std::size_t z) {
  TumorMask m;
  m.nx = x;
  m.ny = y;
  m.nz = z;
  m.data.assign(x * y * z, 0);
  return m;
}

std::size_t TumorMask::foreground_count() const {
  std::size_t n = 0;
  for (auto v : data) n += (v != 0);
  return n;
}

std::vector<Voxel> TumorMask::foreground_voxels() const {
  std::vector<Voxel> out;
  for (std::size_t x = 0; x < nx; ++x)
    for (std::size_t y = 0; y < ny; ++y)
      for (std::size_t z = 0; z < nz; ++z)
        if (at(x, y, z))
          out.push_back({static_cast<int>(x), static_cast<int>(y),
                         static_cast<int>(z)});
  return out;
}

std::vector<std::pair<int, int>> canonical_edges(
    std::vector<std::pair<int, int>> edges) {
  for (auto& e : edges) {
    if (e.first == e.second)
      throw std::invalid_argument("self-edge in edge list");
    if (e.first > e.second) std::swap(e.first, e.second);
  }
  std::sort(edges.begin(), edges.end());
  edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
  return edges;
}

bool is_single_6connected_component(const TumorMask& mask) {
  std::size_t total = mask.foreground_count();
  if (total == 0) return false;
  // Flood fill from the first foreground voxel.
  std::vector<std::uint8_t> seen(mask.data.size(), 0);
  std::vector<std::size_t> stack;
  std::size_t start = 0;
  while (mask.data[start] == 0) ++start;
  stack.push_back(start);
  seen[start] = 1;
  std::size_t visited = 0;
  const std::size_t ny = mask.ny, nz = mask.nz;
  while (!stack.empty()) {
    std::size_t idx = stack.back();
    stack.pop_back();
    ++visited;
    std::size_t z = idx % nz;
    std::size_t y = (idx / nz) % ny;
    std::size_t x = idx / (nz * ny);
    const int dirs[6][3] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0},
                            {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
    for (auto& d : dirs) {
      long long xx = static_cast<long long>(x) + d[0];
      long long yy = static_cast<long long>(y) + d[1];
      long long zz = static_cast<long long>(z) + d[2];
      if (xx < 0 || yy < 0 || zz < 0 || xx >= static_cast<long long>(mask.nx) ||
          yy >= static_cast<long long>(ny) || zz >= static_cast<long long>(nz))
        continue;
      std::size_t nidx = (static_cast<std::size_t>(xx) * ny +
                          static_cast<std::size_t>(yy)) *
                             nz +
                         static_cast<std::size_t>(zz);
      if (mask.data[nidx] != 0 && !seen[nidx]) {
        seen[nidx] = 1;
        stack.push_back(nidx);
      }
    }
  }
  return visited == total;
}

namespace {
bool all_finite(const std::vector<double>& v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}
}  // namespace

std::vector<std::string> validate_volume(const MultiChannelVolume& v) {
  std::vector<std::string> out;
  if (v.channels < 1) out.push_back("volume: needs at least one channel");
  if (v.nx < 4 || v.ny < 4 || v.nz < 4)
    out.push_back("volume: spatial dims must be >= 4");
  if (v.channel_names.size() != v.channels)
    out.push_back("volume: channel_names length != channel count");
  if (v.data.size() != v.channels * v.nx * v.ny * v.nz)
    out.push_back("volume: data size mismatch");
  else if (!all_finite(v.data))
    out.push_back("volume: non-finite values");
  return out;
}

std::vector<std::string> validate_mask(const TumorMask& m) {
  std::vector<std::string> out;
  if (m.data.size() != m.nx * m.ny * m.nz) {
    out.push_back("mask: data size mismatch");
    return out;
  }
  for (auto v : m.data)
    if (v > 1) {
      out.push_back("mask: values must be 0/1");
      break;
    }
  if (m.foreground_count() == 0)
    out.push_back("mask: empty foreground");
  else if (!is_single_6connected_component(m))
    out.push_back("mask: foreground not a single 6-connected component");
  return out;
}

std::vector<std::string> validate_tumor_image(const TumorImage& img,
                                              const TumorMask& cropped_mask) {
  std::vector<std::string> out;
  if (img.data.size() != img.channels * img.nx * img.ny * img.nz) {
    out.push_back("tumor image: data size mismatch");
    return out;
  }
  if (!all_finite(img.data)) out.push_back("tumor image: non-finite values");
  if (img.nx != cropped_mask.nx || img.ny != cropped_mask.ny ||
      img.nz != cropped_mask.nz) {
    out.push_back("tumor image: shape differs from cropped mask");
    return out;
  }
  for (std::size_t c = 0; c < img.channels; ++c)
    for (std::size_t x = 0; x < img.nx; ++x)
      for (std::size_t y = 0; y < img.ny; ++y)
        for (std::size_t z = 0; z < img.nz; ++z)
          if (!cropped_mask.at(x, y, z) && img.at(c, x, y, z) != 0.0) {
            out.push_back("tumor image: nonzero voxel outside mask");
            return out;
          }
  return out;
}

std::vector<std::string> validate_points_cloud(
    const PointsCloud& cloud, const std::array<std::size_t, 3>& bounds) {
  std::vector<std::string> out;
  if (cloud.coords.empty()) out.push_back("points cloud: empty");
  for (const auto& p : cloud.coords) {
    for (int a = 0; a < 3; ++a) {
      if (!std::isfinite(p[a]) || p[a] < 0.0 ||
          p[a] >= static_cast<double>(bounds[static_cast<std::size_t>(a)])) {
        out.push_back("points cloud: coordinate out of bounds");
        return out;
      }
    }
  }
  if (!cloud.attention.empty()) {
    if (cloud.attention.size() != cloud.coords.size())
      out.push_back("points cloud: attention length != point count");
    else
      for (double a : cloud.attention)
        if (!std::isfinite(a) || a < 0.0 || a > 1.0) {
          out.push_back("points cloud: attention outside [0,1]");
          break;
        }
  }
  return out;
}

std::vector<std::string> validate_brain_network(const BrainNetwork& net) {
  std::vector<std::string> out;
  if (net.attr_dim == 0) out.push_back("brain network: attr_dim must be > 0");
  if (net.node_attrs.size() != net.n_nodes * net.attr_dim)
    out.push_back("brain network: node_attrs size mismatch");
  if (net.edge_attrs.size() != net.edge_index.size() * net.attr_dim)
    out.push_back("brain network: edge_attrs size mismatch");
  if (net.edge_voxel_sets.size() != net.edge_index.size())
    out.push_back("brain network: edge_voxel_sets size mismatch");
  for (const auto& e : net.edge_index) {
    if (e.first < 0 || e.second < 0 ||
        e.first >= static_cast<int>(net.n_nodes) ||
        e.second >= static_cast<int>(net.n_nodes)) {
      out.push_back("brain network: edge endpoint out of range");
      break;
    }
    if (e.first >= e.second) {
      out.push_back("brain network: edge not in canonical (i < j) order");
      break;
    }
  }
  auto sorted = net.edge_index;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
    out.push_back("brain network: duplicate edges");
  if (!all_finite(net.node_attrs) || !all_finite(net.edge_attrs))
    out.push_back("brain network: non-finite attributes");
  return out;
}

std::vector<std::string> validate_atlas(const Atlas& atlas) {
  std::vector<std::string> out;
  // Disjointness via a single occupancy pass over all region voxels.
  std::vector<std::uint8_t> occupied(
      atlas.volume_shape[0] * atlas.volume_shape[1] * atlas.volume_shape[2],
      0);
  auto flat = [&](const Voxel& v) {
    return (static_cast<std::size_t>(v.x) * atlas.volume_shape[1] +
            static_cast<std::size_t>(v.y)) *
               atlas.volume_shape[2] +
           static_cast<std::size_t>(v.z);
  };
  for (const auto& region : atlas.region_voxels) {
    if (region.empty()) out.push_back("atlas: empty region");
    for (const auto& v : region) {
      if (v.x < 0 || v.y < 0 || v.z < 0 ||
          v.x >= static_cast<int>(atlas.volume_shape[0]) ||
          v.y >= static_cast<int>(atlas.volume_shape[1]) ||
          v.z >= static_cast<int>(atlas.volume_shape[2])) {
        out.push_back("atlas: region voxel out of bounds");
        return out;
      }
      if (occupied[flat(v)]) {
        out.push_back("atlas: overlapping regions");
        return out;
      }
      occupied[flat(v)] = 1;
    }
  }
  if (atlas.tract_voxels.size() != atlas.tract_endpoints.size())
    out.push_back("atlas: tract arrays length mismatch");
  int r = static_cast<int>(atlas.region_voxels.size());
  for (const auto& e : atlas.tract_endpoints)
    if (e.first < 0 || e.second < 0 || e.first >= r || e.second >= r) {
      out.push_back("atlas: tract endpoint references invalid region");
      break;
    }
  return out;
}

namespace {
struct Box {
  std::size_t x0, x1, y0, y1, z0, z1;  // half-open
};

// Padded bounding box of the mask, clamped to the grid, then center-cropped
// to at most `cube` per axis.
Box crop_box(const TumorMask& mask, std::size_t cube, std::size_t pad) {
  std::size_t xmin = mask.nx, ymin = mask.ny, zmin = mask.nz;
  std::size_t xmax = 0, ymax = 0, zmax = 0;
  bool any = false;
  for (std::size_t x = 0; x < mask.nx; ++x)
    for (std::size_t y = 0; y < mask.ny; ++y)
      for (std::size_t z = 0; z < mask.nz; ++z)
        if (mask.at(x, y, z)) {
          any = true;
          xmin = std::min(xmin, x);
          ymin = std::min(ymin, y);
          zmin = std::min(zmin, z);
          xmax = std::max(xmax, x);
          ymax = std::max(ymax, y);
          zmax = std::max(zmax, z);
        }
  if (!any) throw std::invalid_argument("empty mask in crop");
  auto lo = [&](std::size_t m) { return m > pad ? m - pad : 0; };
  Box b;
  b.x0 = lo(xmin); b.x1 = std::min(mask.nx, xmax + pad + 1);
  b.y0 = lo(ymin); b.y1 = std::min(mask.ny, ymax + pad + 1);
  b.z0 = lo(zmin); b.z1 = std::min(mask.nz, zmax + pad + 1);
  auto shrink = [&](std::size_t& a0, std::size_t& a1) {
    std::size_t w = a1 - a0;
    if (w > cube) {
      std::size_t excess = w - cube;
      a0 += excess / 2;
      a1 = a0 + cube;
    }
  };
  shrink(b.x0, b.x1);
  shrink(b.y0, b.y1);
  shrink(b.z0, b.z1);
  return b;
}

// Offsets that center the box inside the cube.
std::array<std::size_t, 3> cube_offsets(const Box& b, std::size_t cube) {
  return {(cube - (b.x1 - b.x0)) / 2, (cube - (b.y1 - b.y0)) / 2,
          (cube - (b.z1 - b.z0)) / 2};
}
}  // namespace

TumorImage make_tumor_image(const MultiChannelVolume& volume,
                            const TumorMask& mask, std::size_t cube,
                            std::size_t pad, std::size_t reference_channel) {
  if (volume.nx != mask.nx || volume.ny != mask.ny || volume.nz != mask.nz)
    throw std::invalid_argument("volume/mask shape mismatch");
  Box b = crop_box(mask, cube, pad);
  auto off = cube_offsets(b, cube);
  std::vector<std::size_t> keep;
  for (std::size_t c = 0; c < volume.channels; ++c)
    if (c != reference_channel) keep.push_back(c);
  TumorImage img;
  img.channels = keep.size();
  img.nx = img.ny = img.nz = cube;
  img.data.assign(img.channels * cube * cube * cube, 0.0);
  for (std::size_t ci = 0; ci < keep.size(); ++ci)
    for (std::size_t x = b.x0; x < b.x1; ++x)
      for (std::size_t y = b.y0; y < b.y1; ++y)
        for (std::size_t z = b.z0; z < b.z1; ++z)
          if (mask.at(x, y, z))
            img.data[img.index(ci, x - b.x0 + off[0], y - b.y0 + off[1],
                               z - b.z0 + off[2])] =
                volume.at(keep[ci], x, y, z);
  return img;
}

TumorMask crop_mask_like_tumor_image(const TumorMask& mask, std::size_t cube,
                                     std::size_t pad) {
  Box b = crop_box(mask, cube, pad);
  auto off = cube_offsets(b, cube);
  TumorMask out = TumorMask::zeros(cube, cube, cube);
  for (std::size_t x = b.x0; x < b.x1; ++x)
    for (std::size_t y = b.y0; y < b.y1; ++y)
      for (std::size_t z = b.z0; z < b.z1; ++z)
        if (mask.at(x, y, z))
          out.set(x - b.x0 + off[0], y - b.y0 + off[1], z - b.z0 + off[2],
                  true);
  return out;
}

}  // namespace mmgt
