#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "cpdeform/contact.hpp"
#include "cpdeform/errors.hpp"
#include "cpdeform/metrics.hpp"
#include "cpdeform/parallel.hpp"
#include "cpdeform/solver.hpp"
#include "cpdeform/tasks.hpp"
#include "cpdeform/transport.hpp"

namespace cpdeform {

enum class Method { cpdeform, vanilla, random, multi_restart };

inline std::string_view to_string(Method m) {
  switch (m) {
    case Method::cpdeform: return "cpdeform";
    case Method::vanilla: return "vanilla";
    case Method::random: return "random";
    case Method::multi_restart: return "multi-restart";
  }
  return "?";
}
inline Method method_from_string(std::string_view s) {
  if (s == "cpdeform") return Method::cpdeform;
  if (s == "vanilla") return Method::vanilla;
  if (s == "random") return Method::random;
  if (s == "multi-restart") return Method::multi_restart;
  throw InvalidArgument("unknown method '" + std::string(s) + "'");
}

struct PipelineOptions {
  int n_stage = 2;
  int n_step = 10;
  SolverOptions solver;
  contact::GridOptions grid;
  ot::PriorityOptions priorities;
  /// Adds the do-nothing plan to every stage's candidates, so a stage never
  /// makes the shape worse. Off reproduces the plain greedy loop.
  bool inject_noop = true;
  int restarts = 15;  // multi-restart only
  std::uint64_t seed = 0;
  int threads = 1;  // candidate solves run concurrently
};

/// Options with the task's defaults.
inline PipelineOptions default_options(const TaskSpec& spec) {
  PipelineOptions o;
  o.n_stage = spec.n_stage;
  o.n_step = spec.n_step;
  o.solver = spec.solver;
  o.grid = spec.grid;
  return o;
}

struct CandidateRecord {
  std::string pose_id;  // "no-op" for the injected do-nothing plan
  std::vector<Pose> poses;
  std::size_t center = 0;  // particle the placement search was centered on
  double score = 0.0;
  double loss = std::numeric_limits<double>::infinity();  // W1 of the resulting cloud to the goal
  double solver_loss = std::numeric_limits<double>::infinity();
  int best_iteration = -1;
  int blowups = 0;
  double wall_time = 0.0;
  bool failed = false;
  std::string error;
  sim::ActionSequence actions;
  std::vector<IterationLog> history;
};

struct StageRecord {
  int stage = 0;
  std::vector<double> priorities;
  std::size_t peak = 0;
  std::vector<CandidateRecord> candidates;
  int executed = -1;  // index into candidates; -1 when the stage was skipped
  double loss_before = 0.0;
  double loss = 0.0;  // executed candidate's loss = W1 after the stage
  double niiou = 0.0;
  double wall_time = 0.0;
  std::string warning;
  ParticleCloud cloud;  // after the stage

  bool skipped() const { return executed < 0; }
  const CandidateRecord& executed_plan() const {
    if (executed < 0) throw InvalidArgument("stage was skipped");
    return candidates[static_cast<std::size_t>(executed)];
  }
};

struct RunRecord {
  std::string task_id;
  Method method = Method::cpdeform;
  std::uint64_t seed = 0;
  PipelineOptions options;
  std::vector<StageRecord> stages;
  ParticleCloud initial;
  ParticleCloud final_cloud;
  MetricsRecord metrics;
  std::vector<std::string> warnings;
  double wall_time = 0.0;
};

// ---------------------------------------------------------------------------

/// Particles with fewer than `threshold` neighbors within 1.5 particle
/// spacings, the spacing being cbrt(volume / N). Falls back to every particle
/// when none qualifies.
inline std::vector<std::size_t> surface_particles(const ParticleCloud& cloud, double volume, int threshold) {
  if (cloud.empty()) throw InvalidArgument("surface of an empty cloud");
  if (!(volume > 0.0)) throw InvalidArgument("volume must be positive");
  const double spacing = std::cbrt(volume / static_cast<double>(cloud.size()));
  const double r2 = 2.25 * spacing * spacing;
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    int count = 0;
    for (std::size_t j = 0; j < cloud.size() && count < threshold; ++j)
      if (j != i && (cloud.points[i] - cloud.points[j]).squaredNorm() <= r2) ++count;
    if (count < threshold) out.push_back(i);
  }
  if (out.empty())
    for (std::size_t i = 0; i < cloud.size(); ++i) out.push_back(i);
  return out;
}

namespace detail {

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// NIIoU is undefined when the initial shape already fills the goal's voxels.
inline double niiou_or_nan(const TaskInstance& inst, const ParticleCloud& cloud) {
  try {
    return normalized_incremental_iou(inst.initial, cloud, inst.goal, inst.voxel_grid());
  } catch (const UndefinedMetricError&) {
    return std::numeric_limits<double>::quiet_NaN();
  }
}

struct Placement {
  std::size_t center = 0;
  const contact::CandidatePose* pose = nullptr;
};

/// Solves one candidate: place, optimize, replay the best actions.
inline CandidateRecord solve_candidate(const TaskInstance& inst, const sim::SimState& current,
                                       const std::vector<double>& priorities, const Placement& where,
                                       const PipelineOptions& opts, sim::SimState* final_state) {
  const auto t0 = std::chrono::steady_clock::now();
  CandidateRecord c;
  c.pose_id = where.pose->id;
  c.center = where.center;
  try {
    const ParticleCloud cloud = current.cloud();
    const contact::ContactPlan plan =
        contact::place_multi(cloud, priorities, inst.spec.manipulators, *where.pose, opts.grid, where.center);
    c.poses = plan.poses;
    c.score = plan.score;
    sim::SimState s0 = current;
    for (std::size_t m = 0; m < s0.manipulators.size(); ++m) s0.manipulators[m].pose = plan.poses[m];
    sim::SimConfig cfg = inst.spec.sim;
    cfg.threads = 1;
    const SolveReport rep = optimize_trajectory(s0, inst.goal, opts.n_step, cfg, opts.solver);
    c.actions = rep.best_actions;
    c.solver_loss = rep.best_loss;
    c.best_iteration = rep.best_iteration;
    c.blowups = rep.blowups;
    c.history = rep.history;
    sim::Simulator simulator(cfg);
    *final_state = simulator.rollout(s0, rep.best_actions);
    c.loss = ot::w1_distance(final_state->cloud(), inst.goal);
  } catch (const Error& e) {
    c.failed = true;
    c.error = e.what();
  }
  c.wall_time = seconds_since(t0);
  return c;
}

/// The staged loop shared by cpdeform, random and multi-restart.
/// `centers(stage_record, cloud)` returns the placement centers of a stage.
template <class CenterFn>
RunRecord staged_run(const TaskInstance& inst, Method method, const PipelineOptions& opts, CenterFn&& centers) {
  if (opts.n_stage < 0) throw InvalidArgument("n_stage must be >= 0");
  if (opts.n_step < 1) throw InvalidArgument("n_step must be >= 1");
  const auto t0 = std::chrono::steady_clock::now();
  RunRecord run;
  run.task_id = inst.spec.id;
  run.method = method;
  run.seed = inst.seed;
  run.options = opts;
  run.initial = inst.initial;
  sim::SimState state = inst.state(inst.initial);
  double current_loss = ot::w1_distance(inst.initial, inst.goal);
  int placed_stages = 0;
  for (int stage = 0; stage < opts.n_stage; ++stage) {
    const auto ts = std::chrono::steady_clock::now();
    StageRecord rec;
    rec.stage = stage;
    rec.loss_before = current_loss;
    const ParticleCloud cloud = state.cloud();
    rec.priorities = ot::transport_priorities(cloud, inst.goal, opts.priorities);
    rec.peak = ot::argmax_lowest(rec.priorities);

    std::vector<Placement> work;
    for (std::size_t center : centers(rec, cloud))
      for (const auto& pose : inst.spec.poses) work.push_back({center, &pose});
    std::vector<CandidateRecord> solved(work.size());
    std::vector<sim::SimState> finals(work.size());
    parallel_for(work.size(), opts.threads, [&](std::size_t k) {
      solved[k] = solve_candidate(inst, state, rec.priorities, work[k], opts, &finals[k]);
    });

    // argmin over (loss, index): a total order, so the choice is deterministic.
    std::optional<std::size_t> best;
    for (std::size_t k = 0; k < solved.size(); ++k)
      if (!solved[k].failed && (!best || solved[k].loss < solved[*best].loss)) best = k;
    if (best) ++placed_stages;
    rec.candidates = std::move(solved);
    if (opts.inject_noop) {
      CandidateRecord noop;
      noop.pose_id = "no-op";
      noop.loss = current_loss;
      noop.actions = sim::ActionSequence(0, static_cast<int>(inst.spec.manipulators.size()),
                                         inst.spec.sim.action_dims());
      rec.candidates.push_back(noop);
      if (!best || noop.loss < rec.candidates[*best].loss) best = rec.candidates.size() - 1;
    }

    if (best && rec.candidates[*best].pose_id != "no-op") {
      state = std::move(finals[*best]);
      state.settle();
    }
    if (!best) {
      rec.warning = "stage " + std::to_string(stage) + ": no pose could be placed; stage skipped";
      run.warnings.push_back(rec.warning);
    } else {
      rec.executed = static_cast<int>(*best);
      current_loss = rec.candidates[*best].loss;
    }
    rec.loss = current_loss;
    rec.cloud = state.cloud();
    rec.niiou = niiou_or_nan(inst, rec.cloud);
    rec.wall_time = seconds_since(ts);
    run.stages.push_back(std::move(rec));
  }
  if (opts.n_stage > 0 && placed_stages == 0)
    throw PipelineError("task '" + inst.spec.id + "': every pose failed placement in every stage");
  run.final_cloud = state.cloud();
  run.wall_time = seconds_since(t0);
  return run;
}

}  // namespace detail

/// Wall times and final metrics of a finished run. NIIoU is NaN when the
/// initial shape already matches the goal on the voxel grid.
inline MetricsRecord evaluate(const RunRecord& run, const TaskInstance& inst) {
  MetricsRecord m;
  try {
    m = compute_metrics(run.initial, run.final_cloud, inst.goal, inst.voxel_grid());
  } catch (const UndefinedMetricError&) {
    m.w1 = ot::w1_distance(run.final_cloud, inst.goal);
    m.w1_initial = ot::w1_distance(run.initial, inst.goal);
    m.iou_initial = m.iou_final = 1.0;
    m.niiou = std::numeric_limits<double>::quiet_NaN();
  }
  m.wall_time = run.wall_time;
  for (const auto& s : run.stages) m.stage_wall_times.push_back(s.wall_time);
  return m;
}

/// Transport-priority contact discovery: every stage places the tools around
/// the particle with the largest priority, solves each pose and executes the
/// lowest-loss plan.
inline RunRecord cpdeform_run(const TaskInstance& inst, const PipelineOptions& opts) {
  RunRecord run = detail::staged_run(inst, Method::cpdeform, opts, [](const StageRecord& rec, const ParticleCloud&) {
    return std::vector<std::size_t>{rec.peak};
  });
  run.metrics = evaluate(run, inst);
  return run;
}

namespace detail {

// `draws` uniformly drawn surface particles per stage, each searched with
// the full pose set.
inline RunRecord surface_sampled_run(const TaskInstance& inst, Method method, const PipelineOptions& opts,
                                     int draws) {
  if (draws < 1) throw InvalidArgument("restarts must be >= 1");
  std::mt19937_64 rng(opts.seed);
  RunRecord run = staged_run(inst, method, opts, [&](const StageRecord&, const ParticleCloud& cloud) {
    const auto surface = surface_particles(cloud, inst.volume, inst.spec.surface_threshold);
    std::uniform_int_distribution<std::size_t> pick(0, surface.size() - 1);
    std::vector<std::size_t> out;
    for (int k = 0; k < draws; ++k) out.push_back(surface[pick(rng)]);
    return out;
  });
  run.metrics = evaluate(run, inst);
  return run;
}

}  // namespace detail

/// Contact points drawn uniformly from the surface instead of the priority
/// peak; everything else as in cpdeform_run.
inline RunRecord baseline_random(const TaskInstance& inst, const PipelineOptions& opts) {
  return detail::surface_sampled_run(inst, Method::random, opts, 1);
}

/// opts.restarts random surface contacts per stage, each solved with every
/// pose; the lowest-loss plan is executed. One restart equals baseline_random.
inline RunRecord baseline_multi_restart(const TaskInstance& inst, const PipelineOptions& opts) {
  return detail::surface_sampled_run(inst, Method::multi_restart, opts, opts.restarts);
}

/// The plain trajectory solver: the task's handcrafted placement and one
/// solve over n_stage * n_step steps, no contact switching.
inline RunRecord baseline_vanilla(const TaskInstance& inst, const PipelineOptions& opts) {
  if (opts.n_stage < 0 || opts.n_step < 0) throw InvalidArgument("step budget must be >= 0");
  if (inst.spec.vanilla_poses.size() != inst.spec.manipulators.size())
    throw InvalidArgument("task '" + inst.spec.id + "' has no handcrafted placement");
  const auto t0 = std::chrono::steady_clock::now();
  RunRecord run;
  run.task_id = inst.spec.id;
  run.method = Method::vanilla;
  run.seed = inst.seed;
  run.options = opts;
  run.initial = inst.initial;
  run.final_cloud = inst.initial;
  const int horizon = opts.n_stage * opts.n_step;
  if (horizon > 0) {
    const auto ts = std::chrono::steady_clock::now();
    StageRecord rec;
    rec.loss_before = ot::w1_distance(inst.initial, inst.goal);
    rec.priorities = ot::transport_priorities(inst.initial, inst.goal, opts.priorities);
    rec.peak = ot::argmax_lowest(rec.priorities);
    CandidateRecord c;
    c.pose_id = "handcrafted";
    c.poses = inst.spec.vanilla_poses;
    const sim::SimState s0 = inst.state(inst.initial, inst.spec.vanilla_poses);
    const SolveReport rep = optimize_trajectory(s0, inst.goal, horizon, inst.spec.sim, opts.solver);
    c.actions = rep.best_actions;
    c.solver_loss = rep.best_loss;
    c.best_iteration = rep.best_iteration;
    c.blowups = rep.blowups;
    c.history = rep.history;
    sim::Simulator simulator(inst.spec.sim);
    run.final_cloud = simulator.rollout(s0, rep.best_actions).cloud();
    c.loss = ot::w1_distance(run.final_cloud, inst.goal);
    c.wall_time = detail::seconds_since(ts);
    rec.candidates.push_back(std::move(c));
    rec.executed = 0;
    rec.loss = rec.candidates[0].loss;
    rec.cloud = run.final_cloud;
    rec.niiou = detail::niiou_or_nan(inst, rec.cloud);
    rec.wall_time = detail::seconds_since(ts);
    run.stages.push_back(std::move(rec));
  }
  run.wall_time = detail::seconds_since(t0);
  run.metrics = evaluate(run, inst);
  return run;
}

inline RunRecord run_method(const TaskInstance& inst, Method method, const PipelineOptions& opts) {
  switch (method) {
    case Method::cpdeform: return cpdeform_run(inst, opts);
    case Method::vanilla: return baseline_vanilla(inst, opts);
    case Method::random: return baseline_random(inst, opts);
    case Method::multi_restart: return baseline_multi_restart(inst, opts);
  }
  throw InvalidArgument("unknown method");
}

// ---------------------------------------------------------------------------
// Loss landscape over a horizontal sweep of a single manipulator.

struct LandscapeOptions {
  int iterations = 50;
  /// Tool height; NaN means the height of the task's handcrafted placement.
  double height = std::numeric_limits<double>::quiet_NaN();
  ot::PriorityOptions priorities;
  int threads = 1;
};

struct LandscapeCell {
  int i = 0, j = 0;
  double x = 0.0, z = 0.0;
  bool valid = false;  // false when the tool collides with the body there
  double loss = std::numeric_limits<double>::quiet_NaN();
  std::size_t nearest = 0;
  double priority = 0.0;  // of the particle nearest to the cell point
};

struct LandscapeResult {
  std::string task_id;
  int nx = 0, nz = 0;
  double height = 0.0;
  int iterations = 0;
  std::vector<double> priorities;
  std::vector<LandscapeCell> cells;  // row-major in (i, j)
};

/// Places the tool at cell centers of an nx x nz grid spanning the body's
/// horizontal extent, solves a reduced-budget trajectory from each and
/// records the W1 reached. Also records the stage-start priority field.
inline LandscapeResult loss_landscape(const TaskInstance& inst, int nx, int nz, const LandscapeOptions& lo = {}) {
  if (nx < 1 || nz < 1) throw InvalidArgument("landscape grid must be at least 1x1");
  if (inst.spec.manipulators.size() != 1) throw InvalidArgument("landscape needs a single-manipulator task");
  if (lo.iterations < 1) throw InvalidArgument("landscape needs at least one solver iteration");
  LandscapeResult r;
  r.task_id = inst.spec.id;
  r.nx = nx;
  r.nz = nz;
  r.iterations = lo.iterations;
  r.height = std::isnan(lo.height) ? inst.spec.vanilla_poses.at(0).translation.y() : lo.height;
  r.priorities = ot::transport_priorities(inst.initial, inst.goal, lo.priorities);
  const Aabb box = inst.initial.bounds();
  const Quat orientation = inst.spec.poses.at(0).orientations.at(0);
  SolverOptions so = inst.spec.solver;
  so.iterations = lo.iterations;
  sim::SimConfig cfg = inst.spec.sim;
  cfg.threads = 1;

  r.cells.resize(static_cast<std::size_t>(nx) * nz);
  parallel_for(r.cells.size(), lo.threads, [&](std::size_t id) {
    LandscapeCell& c = r.cells[id];
    c.i = static_cast<int>(id) / nz;
    c.j = static_cast<int>(id) % nz;
    c.x = box.lower.x() + (c.i + 0.5) * (box.upper.x() - box.lower.x()) / nx;
    c.z = box.lower.z() + (c.j + 0.5) * (box.upper.z() - box.lower.z()) / nz;
    const Vec3 at(c.x, r.height, c.z);
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t p = 0; p < inst.initial.size(); ++p) {
      const double d = (inst.initial.points[p] - at).squaredNorm();
      if (d < best) {
        best = d;
        c.nearest = p;
      }
    }
    c.priority = r.priorities[c.nearest];
    const ShapePrimitive tool = contact::placed(inst.spec.manipulators[0], at, orientation);
    if (!contact::collision_free(inst.initial, tool, inst.spec.grid.clearance)) return;
    const sim::SimState s0 = inst.state(inst.initial, {tool.pose});
    try {
      const SolveReport rep = optimize_trajectory(s0, inst.goal, inst.spec.n_step, cfg, so);
      sim::Simulator simulator(cfg);
      c.loss = ot::w1_distance(simulator.rollout(s0, rep.best_actions).cloud(), inst.goal);
      c.valid = true;
    } catch (const SolverFailure&) {
    }
  });
  return r;
}

/// Spearman correlation between cell priority and cell loss over valid cells.
inline double priority_loss_correlation(const LandscapeResult& r) {
  std::vector<double> pri, loss;
  for (const auto& c : r.cells)
    if (c.valid) {
      pri.push_back(c.priority);
      loss.push_back(c.loss);
    }
  if (pri.size() < 10) throw UndefinedMetricError("correlation needs at least 10 valid cells");
  return spearman(pri, loss);
}

}  // namespace cpdeform
