#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include "cpdeform/errors.hpp"
#include "cpdeform/particle_cloud.hpp"

namespace cpdeform {

struct GridSpec {
  std::array<int, 3> resolution{32, 32, 32};
  Vec3 origin = Vec3::Zero();
  double cell = 1.0 / 32.0;

  static GridSpec unit_cube(int n) { return {{n, n, n}, Vec3::Zero(), 1.0 / n}; }

  std::size_t cell_count() const {
    return static_cast<std::size_t>(resolution[0]) * resolution[1] * resolution[2];
  }
  std::size_t index(int i, int j, int k) const {
    return (static_cast<std::size_t>(i) * resolution[1] + j) * resolution[2] + k;
  }
  Vec3 cell_center(int i, int j, int k) const { return origin + cell * Vec3(i + 0.5, j + 0.5, k + 0.5); }
  bool operator==(const GridSpec& o) const {
    return resolution == o.resolution && origin == o.origin && cell == o.cell;
  }
  void validate() const {
    for (int r : resolution)
      if (r < 1) throw InvalidArgument("grid resolution must be >= 1 on every axis");
    if (!(cell > 0.0)) throw InvalidArgument("grid cell size must be positive");
  }
};

/// Per-cell occupancy in [0, 1].
struct OccupancyGrid {
  GridSpec spec;
  std::vector<double> cells;

  double at(int i, int j, int k) const { return cells[spec.index(i, j, k)]; }
  std::size_t occupied() const {
    return static_cast<std::size_t>(std::count_if(cells.begin(), cells.end(), [](double c) { return c > 0.0; }));
  }
};

/// Bins particles into cells; a cell saturates at `reference_density` particles.
inline OccupancyGrid voxelize(const ParticleCloud& cloud, const GridSpec& spec, double reference_density = 1.0) {
  spec.validate();
  cloud.validate();
  if (!(reference_density > 0.0)) throw InvalidArgument("reference density must be positive");
  OccupancyGrid grid{spec, std::vector<double>(spec.cell_count(), 0.0)};
  for (const auto& p : cloud.points) {
    std::array<int, 3> idx{};
    for (int d = 0; d < 3; ++d) {
      const double u = (p[d] - spec.origin[d]) / spec.cell;
      // The upper face belongs to the last cell.
      if (u < 0.0 || u > spec.resolution[d]) throw OutOfBoundsError("particle outside the voxel grid");
      idx[d] = std::min(static_cast<int>(std::floor(u)), spec.resolution[d] - 1);
    }
    grid.cells[spec.index(idx[0], idx[1], idx[2])] += 1.0;
  }
  for (auto& c : grid.cells) c = std::clamp(c / reference_density, 0.0, 1.0);
  return grid;
}

/// Soft intersection-over-union: sum(min) / sum(max).
inline double iou(const OccupancyGrid& a, const OccupancyGrid& b) {
  if (!(a.spec == b.spec) || a.cells.size() != b.cells.size())
    throw ShapeMismatchError("IoU of grids with different specs");
  double inter = 0.0, uni = 0.0;
  for (std::size_t i = 0; i < a.cells.size(); ++i) {
    inter += std::min(a.cells[i], b.cells[i]);
    uni += std::max(a.cells[i], b.cells[i]);
  }
  if (uni == 0.0) throw UndefinedMetricError("IoU of two empty grids");
  return inter / uni;
}

}  // namespace cpdeform
