#pragma once

#include <array>
#include <cstddef>
#include <vector>

#include "mmgt/types.hpp"

namespace mmgt {

/// Radius-neighbor graph over a point set. Edges are stored directed (both
/// orientations present) so graph convolutions can treat them uniformly;
/// `distances` aligns with the directed edge list.
struct PointGraph {
  std::vector<std::array<double, 3>> points;
  std::vector<int> src, dst;          // directed, symmetric closure
  std::vector<double> distances;      // per directed edge, <= radius
  double radius = 0.0;
};

/// All foreground voxels with at least one background (or out-of-volume)
/// 6-neighbor — the voxel-surface stand-in for a boundary mesh.
/// Throws std::invalid_argument on an empty mask. Points are returned in
/// canonical (x,y,z) scan order.
PointsCloud extract_surface_points(const TumorMask& mask);

/// Greedy farthest point sampling: start at `seed_index`, then repeatedly add
/// the point with the largest min-distance to the selected set, breaking ties
/// toward the lowest index. Throws when k == 0, k > P, or the cloud is empty.
PointsCloud farthest_point_sampling(const PointsCloud& points, std::size_t k,
                                    std::size_t seed_index = 0);

/// All and only point pairs with Euclidean distance <= radius (no
/// self-edges). Throws on an empty cloud or non-positive radius.
PointGraph build_point_graph(const PointsCloud& points, double radius);

/// Largest distance from any input point to its nearest selected point
/// (the FPS coverage radius; exposed for property tests).
double coverage_radius(const PointsCloud& all, const PointsCloud& selected);

}  // namespace mmgt
