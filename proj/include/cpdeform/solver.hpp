#pragma once

#include <chrono>
#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include "cpdeform/errors.hpp"
#include "cpdeform/sim/loss.hpp"
#include "cpdeform/sim/mpm.hpp"

namespace cpdeform {

enum class ActionInit { zeros, approach };

struct SolverOptions {
  int iterations = 200;
  double lr = 0.1;
  double clip = 1.0;  // per-component bound on the scaled gradient
  /// Multiplies dL/da before clipping. Particle masses are 1/N in the loss;
  /// <= 0 means 3 N, which puts typical early gradients near the clip.
  double gradient_scale = 0.0;
  ActionInit init = ActionInit::zeros;
  double approach_speed = 0.1;  // fraction of the action bound
  sim::LossOptions loss;
};

struct IterationLog {
  int iteration = 0;
  double loss = 0.0;
  double shape = 0.0;
  double grasp = 0.0;
  double wall = 0.0;  // seconds since the solve started
};

struct SolveReport {
  sim::ActionSequence best_actions;
  double best_loss = std::numeric_limits<double>::infinity();
  int best_iteration = -1;
  std::vector<IterationLog> history;  // successful iterations only
  int blowups = 0;
  double final_lr = 0.0;
  double wall_time = 0.0;
};

/// Constant velocity toward the cloud centroid for every manipulator.
inline sim::ActionSequence approach_actions(const sim::SimState& s0, int horizon, const sim::SimConfig& cfg,
                                            double speed_fraction) {
  sim::ActionSequence a(horizon, static_cast<int>(s0.manipulators.size()), cfg.action_dims());
  Vec3 centroid = Vec3::Zero();
  for (const auto& p : s0.x) centroid += p;
  centroid /= static_cast<double>(s0.size());
  for (std::size_t m = 0; m < s0.manipulators.size(); ++m) {
    Vec3 dir = centroid - s0.manipulators[m].pose.translation;
    if (dir.norm() > 0.0) dir.normalize();
    for (int t = 0; t < horizon; ++t)
      for (int d = 0; d < 3; ++d) a.at(t, static_cast<int>(m), d) = speed_fraction * cfg.action_bound * dir[d];
  }
  return a;
}

/// Gradient descent on the action sequence: rollout, frozen-plan loss,
/// adjoint, clipped step, clamp to bounds. Returns the best iterate seen.
inline SolveReport optimize_trajectory(const sim::SimState& s0, const ParticleCloud& goal, int horizon,
                                       const sim::SimConfig& cfg, const SolverOptions& opts,
                                       const sim::ActionSequence* init = nullptr) {
  if (horizon < 1) throw InvalidArgument("horizon must be >= 1");
  if (!(opts.lr > 0.0)) throw InvalidArgument("learning rate must be positive");
  if (opts.iterations < 1) throw InvalidArgument("solver needs at least one iteration");
  const auto start = std::chrono::steady_clock::now();
  const int K = static_cast<int>(s0.manipulators.size());
  sim::ActionSequence a = init != nullptr ? *init
                          : opts.init == ActionInit::approach
                              ? approach_actions(s0, horizon, cfg, opts.approach_speed)
                              : sim::ActionSequence(horizon, K, cfg.action_dims());
  if (a.steps() != horizon || a.manipulators() != K || a.dims() != cfg.action_dims())
    throw ShapeMismatchError("initial actions do not match the horizon or manipulators");
  a.clamp(cfg.action_bound);

  const double scale = opts.gradient_scale > 0.0 ? opts.gradient_scale : 3.0 * static_cast<double>(s0.size());
  sim::Simulator simulator(cfg);
  sim::ShapeLoss loss(goal, opts.loss);
  SolveReport report;
  double lr = opts.lr;
  std::optional<sim::ActionSequence> prev_a, prev_g;

  auto descend = [&](const sim::ActionSequence& from, const sim::ActionSequence& g) {
    sim::ActionSequence next = from;
    for (std::size_t i = 0; i < next.size(); ++i)
      next.data()[i] -= lr * std::clamp(scale * g.data()[i], -opts.clip, opts.clip);
    next.clamp(cfg.action_bound);
    return next;
  };

  for (int it = 0; it < opts.iterations; ++it) {
    sim::GradientResult r;
    try {
      r = sim::grad_actions(simulator, s0, a, loss);
    } catch (const SimulationBlowup&) {
      ++report.blowups;
      lr *= 0.5;
      a = prev_a ? descend(*prev_a, *prev_g) : sim::ActionSequence(horizon, K, cfg.action_dims());
      continue;
    }
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    report.history.push_back({it, r.loss.total, r.loss.shape, r.loss.grasp, wall});
    if (r.loss.total < report.best_loss) {
      report.best_loss = r.loss.total;
      report.best_actions = a;
      report.best_iteration = it;
    }
    prev_a = a;
    prev_g = r.grad;
    a = descend(a, r.grad);
  }
  if (report.history.empty()) throw SolverFailure("every solver iteration blew up");
  report.final_lr = lr;
  report.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

}  // namespace cpdeform
