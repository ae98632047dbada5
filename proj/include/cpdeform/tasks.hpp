#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "cpdeform/contact.hpp"
#include "cpdeform/errors.hpp"
#include "cpdeform/geometry.hpp"
#include "cpdeform/metrics.hpp"
#include "cpdeform/particle_cloud.hpp"
#include "cpdeform/sim/mpm.hpp"
#include "cpdeform/solver.hpp"

namespace cpdeform {

/// How the goal cloud is produced from the task description.
enum class GoalMode {
  sample,       // sample the goal primitives independently
  translate,    // move each initial part by its own offset
  demonstrate,  // deform the initial cloud with scripted manipulator motions
};

inline std::string_view to_string(GoalMode m) {
  switch (m) {
    case GoalMode::sample: return "sample";
    case GoalMode::translate: return "translate";
    case GoalMode::demonstrate: return "demonstrate";
  }
  return "?";
}
inline GoalMode goal_mode_from_string(std::string_view s) {
  if (s == "sample") return GoalMode::sample;
  if (s == "translate") return GoalMode::translate;
  if (s == "demonstrate") return GoalMode::demonstrate;
  throw InvalidArgument("unknown goal mode '" + std::string(s) + "'");
}

/// One scripted segment: manipulators start at `poses` and move with
/// constant linear velocity for `steps` action steps.
struct DemoSegment {
  std::vector<Pose> poses;
  std::vector<Vec3> velocities;
  int steps = 0;
};

struct TaskSpec {
  std::string id;
  std::string description;
  std::vector<ShapePrimitive> initial;  // body = union of parts
  int particles = 0;
  GoalMode goal_mode = GoalMode::sample;
  std::vector<ShapePrimitive> goal;  // sample mode
  std::vector<Vec3> offsets;         // translate mode, one per initial part
  std::vector<DemoSegment> demo;     // demonstrate mode
  std::vector<ShapePrimitive> manipulators;
  std::vector<contact::CandidatePose> poses;
  std::vector<Pose> vanilla_poses;
  int n_stage = 2;
  int n_step = 10;
  sim::SimConfig sim;
  SolverOptions solver;
  contact::GridOptions grid;
  int voxel_resolution = 32;
  int surface_threshold = 10;  // fewer neighbors than this within 1.5 spacings = surface

  ShapePrimitive body() const { return initial.size() == 1 ? initial[0] : ShapePrimitive::composite(initial); }

  void validate() const {
    if (id.empty()) throw InvalidArgument("task needs an id");
    auto fail = [&](const std::string& what) { throw InvalidArgument("task '" + id + "': " + what); };
    if (initial.empty()) fail("no initial shape");
    if (particles < 1 || particles > 4096) fail("particle count must lie in [1, 4096]");
    if (manipulators.empty()) fail("no manipulators");
    if (poses.empty()) fail("empty pose set");
    if (n_stage < 0 || n_step < 0) fail("negative stage or step count");
    for (const auto& s : initial) s.validate();
    for (const auto& m : manipulators) m.validate();
    for (const auto& p : poses) {
      p.validate();
      if (p.manipulators() != manipulators.size()) fail("pose '" + p.id + "' has the wrong manipulator count");
    }
    if (!vanilla_poses.empty() && vanilla_poses.size() != manipulators.size())
      fail("vanilla placement needs one pose per manipulator");
    const Aabb unit{Vec3::Zero(), Vec3::Ones()};
    auto inside = [&](const ShapePrimitive& s) {
      const Aabb b = bounding_box(s);
      return unit.contains(b.lower) && unit.contains(b.upper);
    };
    for (const auto& s : initial)
      if (!inside(s)) fail("initial shape leaves the unit cube");
    switch (goal_mode) {
      case GoalMode::sample: {
        if (goal.empty()) fail("sample mode needs goal shapes");
        for (const auto& s : goal) {
          s.validate();
          if (!inside(s)) fail("goal shape leaves the unit cube");
        }
        const ShapePrimitive g = goal.size() == 1 ? goal[0] : ShapePrimitive::composite(goal);
        const double v0 = estimate_volume(body()), v1 = estimate_volume(g);
        if (std::abs(v1 - v0) > 0.2 * v0) fail("initial and goal volumes differ by more than 20%");
        break;
      }
      case GoalMode::translate:
        if (offsets.size() != initial.size()) fail("translate mode needs one offset per initial part");
        for (std::size_t i = 0; i < initial.size(); ++i) {
          ShapePrimitive moved = initial[i];
          moved.pose.translation += offsets[i];
          if (!inside(moved)) fail("translated part leaves the unit cube");
        }
        break;
      case GoalMode::demonstrate:
        if (demo.empty()) fail("demonstrate mode needs at least one segment");
        for (const auto& seg : demo)
          if (seg.poses.size() != manipulators.size() || seg.velocities.size() != manipulators.size() ||
              seg.steps < 0)
            fail("demonstration segment does not match the manipulators");
        break;
    }
    sim.validate();
  }
};

/// A task with its clouds sampled for one seed.
struct TaskInstance {
  TaskSpec spec;
  std::uint64_t seed = 0;
  ParticleCloud initial;
  ParticleCloud goal;
  double volume = 0.0;

  GridSpec voxel_grid() const { return GridSpec::unit_cube(spec.voxel_resolution); }

  /// Rest state with manipulators at `poses` (their spec poses if empty).
  sim::SimState state(const ParticleCloud& cloud, const std::vector<Pose>& poses = {}) const {
    std::vector<ShapePrimitive> tools = spec.manipulators;
    for (std::size_t m = 0; m < tools.size() && m < poses.size(); ++m) tools[m].pose = poses[m];
    return sim::SimState::at_rest(cloud, volume, std::move(tools));
  }
};

/// Runs the demonstration segments on a cloud; velocities and affine terms
/// are reset between segments.
inline ParticleCloud run_demonstration(const TaskSpec& spec, const ParticleCloud& cloud, double volume) {
  sim::Simulator simulator(spec.sim);
  sim::SimState s = sim::SimState::at_rest(cloud, volume, spec.manipulators);
  for (const auto& seg : spec.demo) {
    for (std::size_t m = 0; m < seg.poses.size(); ++m) s.manipulators[m].pose = seg.poses[m];
    sim::ActionSequence a(seg.steps, static_cast<int>(seg.poses.size()), spec.sim.action_dims());
    for (int t = 0; t < seg.steps; ++t)
      for (std::size_t m = 0; m < seg.velocities.size(); ++m)
        for (int d = 0; d < 3; ++d) a.at(t, static_cast<int>(m), d) = seg.velocities[m][d];
    s = simulator.rollout(s, a);
    s.settle();
  }
  return s.cloud();
}

inline TaskInstance instantiate(const TaskSpec& spec, std::uint64_t seed) {
  spec.validate();
  TaskInstance inst;
  inst.spec = spec;
  inst.seed = seed;
  const ShapePrimitive body = spec.body();
  inst.volume = estimate_volume(body);
  inst.initial = sample_uniform(body, static_cast<std::size_t>(spec.particles), seed);
  switch (spec.goal_mode) {
    case GoalMode::sample: {
      const ShapePrimitive g = spec.goal.size() == 1 ? spec.goal[0] : ShapePrimitive::composite(spec.goal);
      inst.goal = sample_uniform(g, static_cast<std::size_t>(spec.particles), seed ^ 0x9e3779b97f4a7c15ULL);
      break;
    }
    case GoalMode::translate: {
      std::vector<Vec3> pts = inst.initial.points;
      for (auto& p : pts)
        for (std::size_t part = 0; part < spec.initial.size(); ++part)
          if (sdf(spec.initial[part], p) < 0.0) {
            p += spec.offsets[part];
            break;
          }
      inst.goal = ParticleCloud(std::move(pts));
      break;
    }
    case GoalMode::demonstrate:
      inst.goal = run_demonstration(spec, inst.initial, inst.volume);
      break;
  }
  return inst;
}

// ---------------------------------------------------------------------------
// Built-in desk-scale tasks. Bodies rest on the floor layer (y ~ 0.1) of the
// unit domain; gravity is off so that an untouched body is a fixed point.

namespace detail {

inline Pose at(double x, double y, double z) { return Pose{Vec3(x, y, z), Quat::Identity()}; }

inline contact::CandidatePose single_pose(const std::string& id, const Quat& q = Quat::Identity()) {
  return {id, {q}, {}};
}

inline TaskSpec base_task(const std::string& id, const std::string& description) {
  TaskSpec t;
  t.id = id;
  t.description = description;
  t.grid.clearance = t.sim.dx();
  t.grid.length_unit = t.sim.dx();
  return t;
}

inline ShapePrimitive pen() { return ShapePrimitive::capsule(0.03, 0.02); }

}  // namespace detail

inline TaskSpec mini_writer() {
  using detail::at;
  TaskSpec t = detail::base_task("mini-writer", "press one dent into the top of a block with a pen");
  t.initial = {ShapePrimitive::box(Vec3(0.12, 0.07, 0.12), at(0.5, 0.17, 0.5))};
  t.particles = 400;
  t.goal_mode = GoalMode::demonstrate;
  t.manipulators = {detail::pen()};
  t.demo = {{{at(0.46, 0.35, 0.5)}, {Vec3(0.0, -0.8, 0.0)}, 8}, {{at(0.46, 0.222, 0.5)}, {Vec3(0.0, 0.8, 0.0)}, 6}};
  t.poses = {detail::single_pose("vertical")};
  t.vanilla_poses = {at(0.46, 0.33, 0.5)};
  t.n_stage = 1;
  t.n_step = 10;
  t.grid.extent = 0.2;
  return t;
}

inline TaskSpec mini_writer_pp() {
  using detail::at;
  TaskSpec t = detail::base_task("mini-writer++", "press two separated dents into the top of a block");
  t.initial = {ShapePrimitive::box(Vec3(0.3, 0.07, 0.12), at(0.5, 0.17, 0.5))};
  t.particles = 700;
  t.goal_mode = GoalMode::demonstrate;
  t.manipulators = {detail::pen()};
  t.demo = {{{at(0.3, 0.35, 0.5)}, {Vec3(0.0, -0.8, 0.0)}, 8},
            {{at(0.3, 0.222, 0.5)}, {Vec3(0.0, 0.8, 0.0)}, 6},
            {{at(0.7, 0.35, 0.5)}, {Vec3(0.0, -0.8, 0.0)}, 8},
            {{at(0.7, 0.222, 0.5)}, {Vec3(0.0, 0.8, 0.0)}, 6}};
  t.poses = {detail::single_pose("vertical")};
  t.vanilla_poses = {at(0.5, 0.33, 0.5)};
  t.n_stage = 2;
  t.n_step = 10;
  t.grid.extent = 0.2;
  return t;
}

inline TaskSpec mini_move() {
  using detail::at;
  TaskSpec t = detail::base_task("mini-move", "carry a ball to a new spot with two spheres");
  t.initial = {ShapePrimitive::sphere(0.08, at(0.38, 0.2, 0.5))};
  t.particles = 500;
  t.goal_mode = GoalMode::translate;
  t.offsets = {Vec3(0.2, 0.0, 0.0)};
  t.manipulators = {ShapePrimitive::sphere(0.05), ShapePrimitive::sphere(0.05)};
  t.poses = contact::default_pose_set();
  t.vanilla_poses = {at(0.38, 0.2, 0.36), at(0.38, 0.2, 0.64)};
  t.n_stage = 2;
  t.n_step = 10;
  t.grid.extent = 0.3;
  return t;
}

inline TaskSpec mini_move_pp() {
  using detail::at;
  TaskSpec t = detail::base_task("mini-move++", "carry two balls to separate destinations");
  t.initial = {ShapePrimitive::sphere(0.07, at(0.3, 0.18, 0.32)), ShapePrimitive::sphere(0.07, at(0.7, 0.18, 0.68))};
  t.particles = 600;
  t.goal_mode = GoalMode::translate;
  t.offsets = {Vec3(0.0, 0.0, 0.2), Vec3(0.0, 0.0, -0.2)};
  t.manipulators = {ShapePrimitive::sphere(0.05), ShapePrimitive::sphere(0.05)};
  t.poses = contact::default_pose_set();
  t.vanilla_poses = {at(0.16, 0.18, 0.32), at(0.44, 0.18, 0.32)};
  t.n_stage = 2;
  t.n_step = 10;
  t.grid.extent = 0.3;
  return t;
}

inline TaskSpec mini_table() {
  using detail::at;
  TaskSpec t = detail::base_task("mini-table", "push one of the four legs of a small table outward");
  const ShapePrimitive leg = ShapePrimitive::box(Vec3(0.035, 0.05, 0.035));
  auto leg_at = [&](double x, double z) {
    ShapePrimitive l = leg;
    l.pose = at(x, 0.15, z);
    return l;
  };
  t.initial = {ShapePrimitive::box(Vec3(0.16, 0.035, 0.16), at(0.5, 0.23, 0.5)), leg_at(0.38, 0.38),
               leg_at(0.62, 0.38), leg_at(0.38, 0.62), leg_at(0.62, 0.62)};
  t.particles = 700;
  t.goal_mode = GoalMode::demonstrate;
  t.manipulators = {ShapePrimitive::sphere(0.04)};
  t.demo = {{{at(0.62, 0.15, 0.75)}, {Vec3(0.0, 0.0, -0.4)}, 10}};
  t.poses = {detail::single_pose("free")};
  t.vanilla_poses = {at(0.5, 0.15, 0.75)};
  t.n_stage = 2;
  t.n_step = 10;
  t.grid.extent = 0.24;
  return t;
}

inline TaskSpec mini_rope() {
  using detail::at;
  TaskSpec t = detail::base_task("mini-rope", "bend a straight bar around its middle");
  t.initial = {ShapePrimitive::box(Vec3(0.26, 0.035, 0.035), at(0.5, 0.135, 0.4))};
  t.particles = 400;
  t.goal_mode = GoalMode::demonstrate;
  t.manipulators = {ShapePrimitive::sphere(0.04), ShapePrimitive::sphere(0.04)};
  t.demo = {{{at(0.5, 0.135, 0.32), at(0.9, 0.135, 0.9)}, {Vec3(0.0, 0.0, 0.6), Vec3::Zero()}, 10}};
  t.poses = {{"front-back", {Quat::Identity(), Quat::Identity()}, {Vec3::UnitZ()}},
             {"left-right", {Quat::Identity(), Quat::Identity()}, {Vec3::UnitX()}}};
  t.vanilla_poses = {at(0.3, 0.135, 0.32), at(0.3, 0.135, 0.48)};
  t.n_stage = 2;
  t.n_step = 10;
  t.grid.extent = 0.24;
  return t;
}

inline TaskSpec mini_pinch() {
  using detail::at;
  TaskSpec t = detail::base_task("mini-pinch", "pinch dents into two opposite faces of a cube");
  t.initial = {ShapePrimitive::box(Vec3(0.11, 0.1, 0.11), at(0.5, 0.2, 0.5))};
  t.particles = 600;
  t.goal_mode = GoalMode::demonstrate;
  t.manipulators = {ShapePrimitive::sphere(0.04), ShapePrimitive::sphere(0.04)};
  t.demo = {{{at(0.33, 0.22, 0.5), at(0.67, 0.22, 0.5)}, {Vec3(0.5, 0.0, 0.0), Vec3(-0.5, 0.0, 0.0)}, 8}};
  t.poses = contact::default_pose_set();
  for (auto& p : t.poses) p.orientations = {Quat::Identity(), Quat::Identity()};
  t.vanilla_poses = {at(0.5, 0.22, 0.33), at(0.5, 0.22, 0.67)};
  t.n_stage = 2;
  t.n_step = 10;
  t.grid.extent = 0.24;
  return t;
}

inline std::vector<TaskSpec> builtin_tasks() {
  return {mini_writer(), mini_writer_pp(), mini_move(), mini_move_pp(), mini_table(), mini_rope(), mini_pinch()};
}

inline TaskSpec find_task(const std::string& id) {
  for (auto& t : builtin_tasks())
    if (t.id == id) return t;
  throw InvalidArgument("unknown task '" + id + "'");
}

}  // namespace cpdeform
