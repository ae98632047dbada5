#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "cpdeform/errors.hpp"
#include "cpdeform/geometry.hpp"
#include "cpdeform/parallel.hpp"
#include "cpdeform/particle_cloud.hpp"
#include "cpdeform/transport.hpp"

namespace cpdeform::contact {

/// Grasp template: an orientation per manipulator and, for manipulators
/// 2..k, the direction in which they are placed relative to manipulator 1.
struct CandidatePose {
  std::string id;
  std::vector<Quat> orientations;
  std::vector<Vec3> directions;

  std::size_t manipulators() const { return orientations.size(); }

  void validate() const {
    if (orientations.empty()) throw InvalidArgument("pose '" + id + "' has no manipulators");
    if (directions.size() + 1 != orientations.size())
      throw InvalidArgument("pose '" + id + "' needs one direction per extra manipulator");
    for (const auto& q : orientations)
      if (std::abs(q.norm() - 1.0) > 1e-9) throw InvalidArgument("pose '" + id + "' has a non-unit rotation");
    for (const auto& d : directions)
      if (std::abs(d.norm() - 1.0) > 1e-9) throw InvalidArgument("pose '" + id + "' has a non-unit direction");
  }
};

/// Left-right, top-bottom and front-back grasps for two manipulators.
inline std::vector<CandidatePose> default_pose_set() {
  const Quat I = Quat::Identity();
  const Quat to_x(Eigen::AngleAxisd(M_PI / 2, Vec3::UnitZ()));  // local y onto world -x
  const Quat to_z(Eigen::AngleAxisd(M_PI / 2, Vec3::UnitX()));  // local y onto world +z
  return {
      {"left-right", {to_x, to_x}, {Vec3::UnitX()}},
      {"top-bottom", {I, I}, {Vec3::UnitY()}},
      {"front-back", {to_z, to_z}, {Vec3::UnitZ()}},
  };
}

struct ContactPlan {
  std::string pose_id;
  std::vector<Pose> poses;
  double score = 0.0;
  std::size_t peak = 0;
};

struct GridOptions {
  int intervals = 8;      // N_i; (N_i + 1)^3 candidate points
  double extent = 0.0;    // edge length of the search cube; <= 0 means 4x the tool's largest dimension
  double clearance = 1.0 / 32.0;
  /// Length in which the score measures distances. In world units of a unit
  /// domain every d^2 is well below 1, the weights are nearly flat and the
  /// argmax slides to the grid boundary; a cell-sized unit keeps them local.
  double length_unit = 1.0;
  Aabb domain{Vec3::Zero(), Vec3::Ones()};  // tool centers must stay inside
  int threads = 1;
};

/// argmax of the priorities, ties to the lowest index.
inline std::size_t peak_particle(const std::vector<double>& priorities, const ParticleCloud& cloud) {
  if (priorities.empty() || cloud.empty()) throw InvalidArgument("peak of empty priorities");
  if (priorities.size() != cloud.size()) throw ShapeMismatchError("priorities do not match the cloud");
  return ot::argmax_lowest(priorities);
}

inline ShapePrimitive placed(const ShapePrimitive& tool, const Vec3& at, const Quat& orientation) {
  ShapePrimitive s = tool;
  s.pose = Pose{at, orientation};
  return s;
}

/// (1/N) sum_i f_i / (d_i^2 + 1), d_i the signed distance from particle i to
/// the tool centered at x, in multiples of `unit`.
inline double placement_score(const Vec3& x, const ParticleCloud& cloud, const std::vector<double>& priorities,
                              const ShapePrimitive& tool, const Quat& orientation, double unit = 1.0) {
  if (priorities.size() != cloud.size()) throw ShapeMismatchError("priorities do not match the cloud");
  if (!(unit > 0.0)) throw InvalidArgument("score length unit must be positive");
  const ShapePrimitive s = placed(tool, x, orientation);
  double sum = 0.0;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const double d = sdf(s, cloud.points[i]) / unit;
    sum += priorities[i] / (d * d + 1.0);
  }
  return sum / static_cast<double>(cloud.size());
}

/// Smallest signed distance from any particle to the placed tool.
inline double min_distance(const ParticleCloud& cloud, const ShapePrimitive& placed_tool) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& p : cloud.points) best = std::min(best, sdf(placed_tool, p));
  return best;
}

inline bool collision_free(const ParticleCloud& cloud, const ShapePrimitive& placed_tool, double clearance) {
  for (const auto& p : cloud.points)
    if (sdf(placed_tool, p) < clearance) return false;
  return true;
}

/// Scored grid search around a center particle (the priority peak unless
/// `center` is given). Colliding candidates are discarded; ties go to the
/// lexicographically smallest grid index.
inline ContactPlan place_single(const ParticleCloud& cloud, const std::vector<double>& priorities,
                                const ShapePrimitive& tool, const Quat& orientation, const GridOptions& grid,
                                std::optional<std::size_t> center = std::nullopt) {
  if (grid.intervals < 2) throw InvalidArgument("grid needs at least 2 intervals per axis");
  const double extent = grid.extent > 0.0 ? grid.extent : 4.0 * tool.largest_dimension();
  const std::size_t peak = center ? *center : peak_particle(priorities, cloud);
  if (peak >= cloud.size()) throw InvalidArgument("center particle out of range");
  const Vec3 c = cloud.points[peak];
  const int n = grid.intervals + 1;
  const std::size_t total = static_cast<std::size_t>(n) * n * n;
  std::vector<double> scores(total, -std::numeric_limits<double>::infinity());
  std::vector<char> valid(total, 0);
  auto point = [&](std::size_t id) {
    const int i = static_cast<int>(id / (n * n)), j = static_cast<int>(id / n % n), k = static_cast<int>(id % n);
    return Vec3(c + extent * (Vec3(i, j, k) / grid.intervals - Vec3::Constant(0.5)));
  };
  parallel_for(total, grid.threads, [&](std::size_t id) {
    const Vec3 x = point(id);
    if (!grid.domain.contains(x)) return;
    if (!collision_free(cloud, placed(tool, x, orientation), grid.clearance)) return;
    valid[id] = 1;
    scores[id] = placement_score(x, cloud, priorities, tool, orientation, grid.length_unit);
  });
  std::optional<std::size_t> best;
  for (std::size_t id = 0; id < total; ++id)
    if (valid[id] && (!best || scores[id] > scores[*best])) best = id;
  if (!best) throw PlacementError("no collision-free placement on the search grid");
  return ContactPlan{"", {Pose{point(*best), orientation}}, scores[*best], peak};
}

/// Places manipulator 1 with place_single, then each further manipulator
/// along its pose direction at the first lattice offset that neither
/// overlaps manipulator 1 nor collides with the cloud.
inline ContactPlan place_multi(const ParticleCloud& cloud, const std::vector<double>& priorities,
                               const std::vector<ShapePrimitive>& tools, const CandidatePose& pose,
                               const GridOptions& grid, std::optional<std::size_t> center = std::nullopt) {
  pose.validate();
  if (pose.manipulators() != tools.size()) throw ShapeMismatchError("pose and manipulator counts differ");
  ContactPlan plan = place_single(cloud, priorities, tools[0], pose.orientations[0], grid, center);
  plan.pose_id = pose.id;
  const ShapePrimitive first = placed(tools[0], plan.poses[0].translation, pose.orientations[0]);
  for (std::size_t m = 1; m < tools.size(); ++m) {
    const Vec3& dir = pose.directions[m - 1];
    const Quat& rot = pose.orientations[m];
    const double step = 0.5 * tools[m].smallest_dimension();
    // Offset at which the two tools just touch along dir.
    const double start = support(first, dir) - first.pose.translation.dot(dir) +
                         local_support(tools[m], rot.conjugate() * (-dir));
    const double reach = grid.domain.extent().norm() + start;
    bool found = false;
    for (double t = start; t <= reach; t += step) {
      const Vec3 x = first.pose.translation + t * dir;
      if (!grid.domain.contains(x)) break;
      if (collision_free(cloud, placed(tools[m], x, rot), grid.clearance)) {
        plan.poses.push_back(Pose{x, rot});
        found = true;
        break;
      }
    }
    if (!found) throw PlacementError("pose '" + pose.id + "': no free placement along its direction");
  }
  return plan;
}

}  // namespace cpdeform::contact
