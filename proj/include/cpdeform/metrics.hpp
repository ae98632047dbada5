#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "cpdeform/errors.hpp"
#include "cpdeform/occupancy.hpp"
#include "cpdeform/particle_cloud.hpp"
#include "cpdeform/transport.hpp"

namespace cpdeform {

struct MetricsRecord {
  double w1 = 0.0;
  double w1_initial = 0.0;
  double iou_initial = 0.0;
  double iou_final = 0.0;
  double niiou = 0.0;
  double wall_time = 0.0;
  std::vector<double> stage_wall_times;
};

/// (IoU_T - IoU_0) / (1 - IoU_0) on a shared voxel grid.
inline double normalized_incremental_iou(const ParticleCloud& initial, const ParticleCloud& final_cloud,
                                         const ParticleCloud& goal, const GridSpec& grid) {
  const OccupancyGrid g = voxelize(goal, grid);
  const double iou0 = iou(voxelize(initial, grid), g);
  if (iou0 >= 1.0) throw UndefinedMetricError("initial shape already matches the goal (IoU = 1)");
  const double iou_t = iou(voxelize(final_cloud, grid), g);
  return (iou_t - iou0) / (1.0 - iou0);
}

/// W1, IoU pair and NIIoU of a final cloud.
inline MetricsRecord compute_metrics(const ParticleCloud& initial, const ParticleCloud& final_cloud,
                                     const ParticleCloud& goal, const GridSpec& grid) {
  MetricsRecord m;
  m.w1 = ot::w1_distance(final_cloud, goal);
  m.w1_initial = ot::w1_distance(initial, goal);
  const OccupancyGrid g = voxelize(goal, grid);
  m.iou_initial = iou(voxelize(initial, grid), g);
  m.iou_final = iou(voxelize(final_cloud, grid), g);
  if (m.iou_initial >= 1.0) throw UndefinedMetricError("initial shape already matches the goal (IoU = 1)");
  m.niiou = (m.iou_final - m.iou_initial) / (1.0 - m.iou_initial);
  return m;
}

namespace detail {

inline std::vector<double> average_ranks(const std::vector<double>& v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> rank(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = r;
    i = j + 1;
  }
  return rank;
}

}  // namespace detail

/// Spearman rank correlation with average ranks for ties.
inline double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw ShapeMismatchError("correlation inputs differ in length");
  if (a.size() < 2) throw UndefinedMetricError("correlation needs at least two samples");
  const auto ra = detail::average_ranks(a), rb = detail::average_ranks(b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n, mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) throw UndefinedMetricError("correlation of a constant input");
  return sab / std::sqrt(saa * sbb);
}

}  // namespace cpdeform
