#include "mmgt/geometry.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace mmgt {
namespace {
double sqdist(const std::array<double, 3>& a, const std::array<double, 3>& b) {
  double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
  return dx * dx + dy * dy + dz * dz;
}
}  // namespace

PointsCloud extract_surface_points(const TumorMask& mask) {
  if (mask.foreground_count() == 0)
    throw std::invalid_argument("surface extraction on empty mask");
  PointsCloud cloud;
  const int dirs[6][3] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0},
                          {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
  for (std::size_t x = 0; x < mask.nx; ++x)
    for (std::size_t y = 0; y < mask.ny; ++y)
      for (std::size_t z = 0; z < mask.nz; ++z) {
        if (!mask.at(x, y, z)) continue;
        bool boundary = false;
        for (auto& d : dirs) {
          long long xx = static_cast<long long>(x) + d[0];
          long long yy = static_cast<long long>(y) + d[1];
          long long zz = static_cast<long long>(z) + d[2];
          if (xx < 0 || yy < 0 || zz < 0 ||
              xx >= static_cast<long long>(mask.nx) ||
              yy >= static_cast<long long>(mask.ny) ||
              zz >= static_cast<long long>(mask.nz) ||
              !mask.at(static_cast<std::size_t>(xx),
                       static_cast<std::size_t>(yy),
                       static_cast<std::size_t>(zz))) {
            boundary = true;
            break;
          }
        }
        if (boundary)
          cloud.coords.push_back({static_cast<double>(x),
                                  static_cast<double>(y),
                                  static_cast<double>(z)});
      }
  return cloud;
}

PointsCloud farthest_point_sampling(const PointsCloud& points, std::size_t k,
                                    std::size_t seed_index) {
  std::size_t p = points.coords.size();
  if (p == 0) throw std::invalid_argument("farthest point sampling: empty cloud");
  if (k == 0 || k > p)
    throw std::invalid_argument("farthest point sampling: k out of range");
  if (seed_index >= p)
    throw std::invalid_argument("farthest point sampling: seed out of range");
  std::vector<double> min_sq(p, std::numeric_limits<double>::infinity());
  std::vector<std::size_t> picked;
  picked.reserve(k);
  picked.push_back(seed_index);
  for (std::size_t step = 1; step < k; ++step) {
    std::size_t last = picked.back();
    for (std::size_t i = 0; i < p; ++i)
      min_sq[i] =
          std::min(min_sq[i], sqdist(points.coords[i], points.coords[last]));
    // Lowest index wins ties (strict > comparison).
    double best = -1.0;
    std::size_t best_i = 0;
    for (std::size_t i = 0; i < p; ++i) {
      if (min_sq[i] > best && min_sq[i] > 0.0) {
        best = min_sq[i];
        best_i = i;
      }
    }
    if (best <= 0.0) {
      // All remaining points coincide with selected ones; fall back to the
      // first unselected index to keep the output size at k.
      std::vector<std::uint8_t> in(p, 0);
      for (auto s : picked) in[s] = 1;
      for (std::size_t i = 0; i < p; ++i)
        if (!in[i]) {
          best_i = i;
          break;
        }
    }
    picked.push_back(best_i);
  }
  PointsCloud out;
  out.coords.reserve(k);
  for (auto i : picked) out.coords.push_back(points.coords[i]);
  if (!points.attention.empty()) {
    out.attention.reserve(k);
    for (auto i : picked) out.attention.push_back(points.attention[i]);
  }
  return out;
}

PointGraph build_point_graph(const PointsCloud& points, double radius) {
  if (points.coords.empty())
    throw std::invalid_argument("point graph: empty cloud");
  if (radius <= 0.0)
    throw std::invalid_argument("point graph: radius must be positive");
  PointGraph g;
  g.points = points.coords;
  g.radius = radius;
  double r2 = radius * radius;
  std::size_t p = points.coords.size();
  for (std::size_t i = 0; i < p; ++i)
    for (std::size_t j = i + 1; j < p; ++j) {
      double d2 = sqdist(points.coords[i], points.coords[j]);
      if (d2 <= r2) {
        double d = std::sqrt(d2);
        g.src.push_back(static_cast<int>(i));
        g.dst.push_back(static_cast<int>(j));
        g.distances.push_back(d);
        g.src.push_back(static_cast<int>(j));
        g.dst.push_back(static_cast<int>(i));
        g.distances.push_back(d);
      }
    }
  return g;
}

double coverage_radius(const PointsCloud& all, const PointsCloud& selected) {
  double worst = 0.0;
  for (const auto& p : all.coords) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& s : selected.coords) best = std::min(best, sqdist(p, s));
    worst = std::max(worst, best);
  }
  return std::sqrt(worst);
}

}  // namespace mmgt
