#pragma once

#include <sstream>
#include <string>
#include <vector>

#include "cpdeform/errors.hpp"
#include "cpdeform/io/ini.hpp"
#include "cpdeform/tasks.hpp"

namespace cpdeform::io {

// Task files. Example:
//
//   [task]
//   id = mini-writer
//   particles = 400
//   goal_mode = demonstrate
//   [initial]
//   shape = box 0.12 0.07 0.12 @ 0.5 0.17 0.5
//   [manipulators]
//   shape = capsule 0.03 0.02
//   [demo]
//   segment = 8 | 0.46 0.35 0.5 0 -0.8 0
//   [pose vertical]
//   orientation = 1 0 0 0
//   [vanilla]
//   pose = 0.46 0.33 0.5
//
// Shapes are `kind sizes... [@ x y z [qw qx qy qz]]`; sizes are half extents
// (box), radius (sphere), radius and half height (capsule), half extents and
// rounding radius (rounded-box). A demo segment is `steps` followed by one
// `| x y z [qw qx qy qz] vx vy vz` group per manipulator. [sim], [solver] and
// [grid] override the defaults key by key.

namespace detail {

inline Pose parse_pose(const IniEntry& e, std::string_view text) {
  const auto words = split_words(text);
  if (words.size() != 3 && words.size() != 7)
    throw ConfigError("a pose is 'x y z' or 'x y z qw qx qy qz'", e.line, e.key);
  const auto v = as_numbers(e, text, words.size());
  Pose p;
  p.translation = Vec3(v[0], v[1], v[2]);
  if (v.size() == 7) {
    p.rotation = Quat(v[3], v[4], v[5], v[6]);
    if (std::abs(p.rotation.norm() - 1.0) > 1e-9) throw ConfigError("rotation is not a unit quaternion", e.line, e.key);
  }
  return p;
}

inline ShapePrimitive parse_shape(const IniEntry& e) {
  const std::string_view text = trim(e.value);
  const auto at = text.find('@');
  const auto head = split_words(text.substr(0, at));
  if (head.empty()) throw ConfigError("missing shape kind", e.line, e.key);
  ShapeKind kind;
  try {
    kind = shape_kind_from_string(head[0]);
  } catch (const InvalidArgument& err) {
    throw ConfigError(err.what(), e.line, e.key);
  }
  std::vector<double> size;
  for (std::size_t i = 1; i < head.size(); ++i) size.push_back(parse_double(head[i], e));
  auto expect = [&](std::size_t n) {
    if (size.size() != n)
      throw ConfigError(std::string(head[0]) + " takes " + std::to_string(n) + " size values", e.line, e.key);
  };
  ShapePrimitive s;
  switch (kind) {
    case ShapeKind::box:
      expect(3);
      s = ShapePrimitive::box(Vec3(size[0], size[1], size[2]));
      break;
    case ShapeKind::sphere:
      expect(1);
      s = ShapePrimitive::sphere(size[0]);
      break;
    case ShapeKind::capsule:
      expect(2);
      s = ShapePrimitive::capsule(size[0], size[1]);
      break;
    case ShapeKind::rounded_box:
      expect(4);
      s = ShapePrimitive::rounded_box(Vec3(size[0], size[1], size[2]), size[3]);
      break;
    case ShapeKind::composite_union:
      throw ConfigError("composite-union is written as several shape lines", e.line, e.key);
  }
  if (at != std::string_view::npos) s.pose = parse_pose(e, text.substr(at + 1));
  try {
    s.validate();
  } catch (const InvalidArgument& err) {
    throw ConfigError(err.what(), e.line, e.key);
  }
  return s;
}

inline Vec3 parse_vec3(const IniEntry& e) {
  const auto v = as_numbers(e, e.value, 3);
  return Vec3(v[0], v[1], v[2]);
}

inline DemoSegment parse_segment(const IniEntry& e) {
  std::vector<std::string_view> groups;
  std::string_view rest = e.value;
  for (auto bar = rest.find('|'); bar != std::string_view::npos; bar = rest.find('|')) {
    groups.push_back(rest.substr(0, bar));
    rest = rest.substr(bar + 1);
  }
  groups.push_back(rest);
  if (groups.size() < 2) throw ConfigError("a segment is 'steps | pose velocity ...'", e.line, e.key);
  DemoSegment seg;
  const auto steps = split_words(groups[0]);
  if (steps.size() != 1) throw ConfigError("segment must start with its step count", e.line, e.key);
  const long long n = parse_integer(steps[0], e);
  if (n < 0 || n > 100000) throw ConfigError("segment step count out of range", e.line, e.key);
  seg.steps = static_cast<int>(n);
  for (std::size_t g = 1; g < groups.size(); ++g) {
    const auto words = split_words(groups[g]);
    if (words.size() != 6 && words.size() != 10)
      throw ConfigError("segment group needs 6 or 10 numbers", e.line, e.key);
    std::vector<double> v;
    for (auto w : words) v.push_back(parse_double(w, e));
    Pose p;
    p.translation = Vec3(v[0], v[1], v[2]);
    if (v.size() == 10) {
      p.rotation = Quat(v[3], v[4], v[5], v[6]);
      if (std::abs(p.rotation.norm() - 1.0) > 1e-9)
        throw ConfigError("rotation is not a unit quaternion", e.line, e.key);
    }
    seg.poses.push_back(p);
    seg.velocities.emplace_back(v[v.size() - 3], v[v.size() - 2], v[v.size() - 1]);
  }
  return seg;
}

template <class F>
void set_if(const IniSection& s, std::string_view key, F&& apply) {
  if (const IniEntry* e = s.find(key)) apply(*e);
}

inline void read_sim(const IniSection& s, sim::SimConfig& c) {
  check_keys(s, {"grid_resolution", "dt", "substeps", "youngs_modulus", "poisson_ratio", "yield_stress", "density",
                 "friction", "friction_smoothing", "plastic_smoothing", "softness", "gravity", "action_bound",
                 "rotation_control", "boundary_cells", "max_cfl"});
  set_if(s, "grid_resolution", [&](auto& e) { c.grid_resolution = as_int(e); });
  set_if(s, "dt", [&](auto& e) { c.dt = as_double(e); });
  set_if(s, "substeps", [&](auto& e) { c.substeps = as_int(e); });
  set_if(s, "youngs_modulus", [&](auto& e) { c.material.youngs_modulus = as_double(e); });
  set_if(s, "poisson_ratio", [&](auto& e) { c.material.poisson_ratio = as_double(e); });
  set_if(s, "yield_stress", [&](auto& e) { c.material.yield_stress = as_double(e); });
  set_if(s, "density", [&](auto& e) { c.material.density = as_double(e); });
  set_if(s, "friction", [&](auto& e) { c.friction = as_double(e); });
  set_if(s, "friction_smoothing", [&](auto& e) { c.friction_smoothing = as_double(e); });
  set_if(s, "plastic_smoothing", [&](auto& e) { c.plastic_smoothing = as_double(e); });
  set_if(s, "softness", [&](auto& e) { c.softness = as_double(e); });
  set_if(s, "gravity", [&](auto& e) { c.gravity = parse_vec3(e); });
  set_if(s, "action_bound", [&](auto& e) { c.action_bound = as_double(e); });
  set_if(s, "rotation_control", [&](auto& e) { c.rotation_control = as_bool(e); });
  set_if(s, "boundary_cells", [&](auto& e) { c.boundary_cells = as_int(e); });
  set_if(s, "max_cfl", [&](auto& e) { c.max_cfl = as_double(e); });
}

inline void read_solver(const IniSection& s, SolverOptions& o) {
  check_keys(s, {"iterations", "lr", "clip", "gradient_scale", "init", "approach_speed", "shape_weight",
                 "grasp_weight", "grasp_temperature", "loss_epsilon", "loss_max_iters", "loss_tol"});
  set_if(s, "iterations", [&](auto& e) { o.iterations = as_int(e); });
  set_if(s, "lr", [&](auto& e) { o.lr = as_double(e); });
  set_if(s, "clip", [&](auto& e) { o.clip = as_double(e); });
  set_if(s, "gradient_scale", [&](auto& e) { o.gradient_scale = as_double(e); });
  set_if(s, "init", [&](auto& e) {
    if (e.value == "zeros") o.init = ActionInit::zeros;
    else if (e.value == "approach") o.init = ActionInit::approach;
    else throw ConfigError("expected zeros or approach", e.line, e.key);
  });
  set_if(s, "approach_speed", [&](auto& e) { o.approach_speed = as_double(e); });
  set_if(s, "shape_weight", [&](auto& e) { o.loss.shape_weight = as_double(e); });
  set_if(s, "grasp_weight", [&](auto& e) { o.loss.grasp_weight = as_double(e); });
  set_if(s, "grasp_temperature", [&](auto& e) { o.loss.grasp_temperature = as_double(e); });
  set_if(s, "loss_epsilon", [&](auto& e) { o.loss.epsilon_factor = as_double(e); });
  set_if(s, "loss_max_iters", [&](auto& e) {
    const int v = as_int(e);
    if (v < 1) throw ConfigError("must be >= 1", e.line, e.key);
    o.loss.max_iters = static_cast<std::size_t>(v);
  });
  set_if(s, "loss_tol", [&](auto& e) { o.loss.tol = as_double(e); });
}

inline void read_grid(const IniSection& s, contact::GridOptions& g) {
  check_keys(s, {"intervals", "extent", "clearance", "length_unit", "domain_lower", "domain_upper"});
  set_if(s, "intervals", [&](auto& e) { g.intervals = as_int(e); });
  set_if(s, "extent", [&](auto& e) { g.extent = as_double(e); });
  set_if(s, "clearance", [&](auto& e) { g.clearance = as_double(e); });
  set_if(s, "length_unit", [&](auto& e) { g.length_unit = as_double(e); });
  set_if(s, "domain_lower", [&](auto& e) { g.domain.lower = parse_vec3(e); });
  set_if(s, "domain_upper", [&](auto& e) { g.domain.upper = parse_vec3(e); });
}

}  // namespace detail

/// Builds a task from a parsed document. Field errors carry their line.
inline TaskSpec task_from_ini(const IniDocument& doc) {
  using namespace detail;
  static constexpr std::string_view known[] = {"task",  "initial", "goal", "manipulators", "demo", "pose",
                                               "vanilla", "sim",   "solver", "grid"};
  for (const auto& s : doc.sections) {
    bool ok = false;
    for (auto k : known) ok = ok || s.kind == k;
    if (!ok) throw ConfigError("unknown section [" + s.kind + "]", s.line);
    if (s.kind == "pose" && s.name.empty()) throw ConfigError("[pose] needs a name, as in [pose left-right]", s.line);
    if (s.kind != "pose" && !s.name.empty()) throw ConfigError("[" + s.kind + "] takes no name", s.line);
  }
  const IniSection* head = doc.find("task");
  if (!head) throw ConfigError("missing [task] section");
  check_keys(*head, {"id", "description", "particles", "goal_mode", "n_stage", "n_step", "voxel_resolution",
                     "surface_threshold"});

  TaskSpec t;
  t.grid.clearance = t.sim.dx();
  t.grid.length_unit = t.sim.dx();
  const IniEntry* id = head->find("id");
  if (!id || id->value.empty()) throw ConfigError("missing task id", head->line, "id");
  t.id = id->value;
  set_if(*head, "description", [&](auto& e) { t.description = e.value; });
  const IniEntry* particles = head->find("particles");
  if (!particles) throw ConfigError("missing particle count", head->line, "particles");
  t.particles = as_int(*particles);
  set_if(*head, "goal_mode", [&](auto& e) {
    try {
      t.goal_mode = goal_mode_from_string(e.value);
    } catch (const InvalidArgument& err) {
      throw ConfigError(err.what(), e.line, e.key);
    }
  });
  set_if(*head, "n_stage", [&](auto& e) { t.n_stage = as_int(e); });
  set_if(*head, "n_step", [&](auto& e) { t.n_step = as_int(e); });
  set_if(*head, "voxel_resolution", [&](auto& e) { t.voxel_resolution = as_int(e); });
  set_if(*head, "surface_threshold", [&](auto& e) { t.surface_threshold = as_int(e); });

  // [sim] before the geometry so that dx-based grid defaults follow it.
  if (const IniSection* s = doc.find("sim")) {
    read_sim(*s, t.sim);
    t.grid.clearance = t.sim.dx();
    t.grid.length_unit = t.sim.dx();
  }
  if (const IniSection* s = doc.find("solver")) read_solver(*s, t.solver);
  if (const IniSection* s = doc.find("grid")) read_grid(*s, t.grid);

  const IniSection* initial = doc.find("initial");
  if (!initial) throw ConfigError("missing [initial] section");
  check_keys(*initial, {"shape"});
  for (const IniEntry* e : initial->all("shape")) t.initial.push_back(parse_shape(*e));

  if (const IniSection* goal = doc.find("goal")) {
    check_keys(*goal, {"shape", "offset"});
    for (const IniEntry* e : goal->all("shape")) t.goal.push_back(parse_shape(*e));
    for (const IniEntry* e : goal->all("offset")) t.offsets.push_back(parse_vec3(*e));
  }
  if (const IniSection* demo = doc.find("demo")) {
    check_keys(*demo, {"segment"});
    for (const IniEntry* e : demo->all("segment")) t.demo.push_back(parse_segment(*e));
  }
  const IniSection* tools = doc.find("manipulators");
  if (!tools) throw ConfigError("missing [manipulators] section");
  check_keys(*tools, {"shape"});
  for (const IniEntry* e : tools->all("shape")) t.manipulators.push_back(parse_shape(*e));

  for (const IniSection* s : doc.all("pose")) {
    check_keys(*s, {"orientation", "direction"});
    contact::CandidatePose p;
    p.id = s->name;
    for (const IniEntry* e : s->all("orientation")) {
      const auto v = as_numbers(*e, e->value, 4);
      p.orientations.emplace_back(v[0], v[1], v[2], v[3]);
    }
    for (const IniEntry* e : s->all("direction")) p.directions.push_back(parse_vec3(*e));
    try {
      p.validate();
    } catch (const InvalidArgument& err) {
      throw ConfigError(err.what(), s->line);
    }
    t.poses.push_back(std::move(p));
  }
  if (const IniSection* v = doc.find("vanilla")) {
    check_keys(*v, {"pose"});
    for (const IniEntry* e : v->all("pose")) t.vanilla_poses.push_back(parse_pose(*e, e->value));
  }

  try {
    t.validate();
  } catch (const InvalidArgument& err) {
    throw ConfigError(err.what());
  }
  return t;
}

inline TaskSpec parse_task(std::string_view text) { return task_from_ini(parse_ini(text)); }
inline TaskSpec read_task(const std::string& path) { return task_from_ini(read_ini(path)); }

// --- writer -----------------------------------------------------------------

namespace detail {

inline std::string join(std::initializer_list<double> values) {
  std::string out;
  for (double v : values) {
    if (!out.empty()) out += ' ';
    out += format_double(v);
  }
  return out;
}

inline std::string vec_text(const Vec3& v) { return join({v.x(), v.y(), v.z()}); }
inline std::string quat_text(const Quat& q) { return join({q.w(), q.x(), q.y(), q.z()}); }

inline bool is_identity(const Quat& q) { return q.w() == 1.0 && q.x() == 0.0 && q.y() == 0.0 && q.z() == 0.0; }

inline std::string pose_text(const Pose& p) {
  std::string out = vec_text(p.translation);
  if (!is_identity(p.rotation)) out += ' ' + quat_text(p.rotation);
  return out;
}

inline std::string shape_text(const ShapePrimitive& s) {
  std::string out(to_string(s.kind));
  switch (s.kind) {
    case ShapeKind::box: out += ' ' + vec_text(s.half_extents); break;
    case ShapeKind::sphere: out += ' ' + format_double(s.radius); break;
    case ShapeKind::capsule: out += ' ' + join({s.radius, s.half_height}); break;
    case ShapeKind::rounded_box: out += ' ' + vec_text(s.half_extents) + ' ' + format_double(s.radius); break;
    case ShapeKind::composite_union: throw InvalidArgument("nested composite shapes cannot be written");
  }
  if (!s.pose.translation.isZero(0.0) || !is_identity(s.pose.rotation)) out += " @ " + pose_text(s.pose);
  return out;
}

}  // namespace detail

/// Text form of a task; parse_task(write_task(t)) reproduces t exactly.
inline std::string write_task(const TaskSpec& t) {
  using namespace detail;
  std::ostringstream o;
  auto num = [](double v) { return format_double(v); };
  o << "[task]\n";
  o << "id = " << t.id << "\n";
  if (!t.description.empty()) o << "description = " << t.description << "\n";
  o << "particles = " << t.particles << "\n";
  o << "goal_mode = " << to_string(t.goal_mode) << "\n";
  o << "n_stage = " << t.n_stage << "\n";
  o << "n_step = " << t.n_step << "\n";
  o << "voxel_resolution = " << t.voxel_resolution << "\n";
  o << "surface_threshold = " << t.surface_threshold << "\n";

  o << "\n[initial]\n";
  for (const auto& s : t.initial) o << "shape = " << shape_text(s) << "\n";
  if (!t.goal.empty() || !t.offsets.empty()) {
    o << "\n[goal]\n";
    for (const auto& s : t.goal) o << "shape = " << shape_text(s) << "\n";
    for (const auto& v : t.offsets) o << "offset = " << vec_text(v) << "\n";
  }
  if (!t.demo.empty()) {
    o << "\n[demo]\n";
    for (const auto& seg : t.demo) {
      o << "segment = " << seg.steps;
      for (std::size_t m = 0; m < seg.poses.size(); ++m)
        o << " | " << pose_text(seg.poses[m]) << ' ' << vec_text(seg.velocities[m]);
      o << "\n";
    }
  }
  o << "\n[manipulators]\n";
  for (const auto& s : t.manipulators) o << "shape = " << shape_text(s) << "\n";
  for (const auto& p : t.poses) {
    o << "\n[pose " << p.id << "]\n";
    for (const auto& q : p.orientations) o << "orientation = " << quat_text(q) << "\n";
    for (const auto& d : p.directions) o << "direction = " << vec_text(d) << "\n";
  }
  if (!t.vanilla_poses.empty()) {
    o << "\n[vanilla]\n";
    for (const auto& p : t.vanilla_poses) o << "pose = " << pose_text(p) << "\n";
  }

  const auto& c = t.sim;
  o << "\n[sim]\n";
  o << "grid_resolution = " << c.grid_resolution << "\n";
  o << "dt = " << num(c.dt) << "\n";
  o << "substeps = " << c.substeps << "\n";
  o << "youngs_modulus = " << num(c.material.youngs_modulus) << "\n";
  o << "poisson_ratio = " << num(c.material.poisson_ratio) << "\n";
  o << "yield_stress = " << num(c.material.yield_stress) << "\n";
  o << "density = " << num(c.material.density) << "\n";
  o << "friction = " << num(c.friction) << "\n";
  o << "friction_smoothing = " << num(c.friction_smoothing) << "\n";
  o << "plastic_smoothing = " << num(c.plastic_smoothing) << "\n";
  o << "softness = " << num(c.softness) << "\n";
  o << "gravity = " << vec_text(c.gravity) << "\n";
  o << "action_bound = " << num(c.action_bound) << "\n";
  o << "rotation_control = " << (c.rotation_control ? "true" : "false") << "\n";
  o << "boundary_cells = " << c.boundary_cells << "\n";
  o << "max_cfl = " << num(c.max_cfl) << "\n";

  const auto& s = t.solver;
  o << "\n[solver]\n";
  o << "iterations = " << s.iterations << "\n";
  o << "lr = " << num(s.lr) << "\n";
  o << "clip = " << num(s.clip) << "\n";
  o << "gradient_scale = " << num(s.gradient_scale) << "\n";
  o << "init = " << (s.init == ActionInit::zeros ? "zeros" : "approach") << "\n";
  o << "approach_speed = " << num(s.approach_speed) << "\n";
  o << "shape_weight = " << num(s.loss.shape_weight) << "\n";
  o << "grasp_weight = " << num(s.loss.grasp_weight) << "\n";
  o << "grasp_temperature = " << num(s.loss.grasp_temperature) << "\n";
  o << "loss_epsilon = " << num(s.loss.epsilon_factor) << "\n";
  o << "loss_max_iters = " << s.loss.max_iters << "\n";
  o << "loss_tol = " << num(s.loss.tol) << "\n";

  const auto& g = t.grid;
  o << "\n[grid]\n";
  o << "intervals = " << g.intervals << "\n";
  o << "extent = " << num(g.extent) << "\n";
  o << "clearance = " << num(g.clearance) << "\n";
  o << "length_unit = " << num(g.length_unit) << "\n";
  o << "domain_lower = " << vec_text(g.domain.lower) << "\n";
  o << "domain_upper = " << vec_text(g.domain.upper) << "\n";
  return o.str();
}

}  // namespace cpdeform::io
