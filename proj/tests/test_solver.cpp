#include <gtest/gtest.h>

#include "cpdeform/solver.hpp"
#include "cpdeform/tasks.hpp"

using namespace cpdeform;

namespace {

struct Writer {
  TaskInstance inst = instantiate(mini_writer(), 0);
  sim::SimState s0 = inst.state(inst.initial, inst.spec.vanilla_poses);
};

const Writer& writer() {
  static const Writer w;
  return w;
}

SolverOptions quick(int iterations) {
  SolverOptions o = writer().inst.spec.solver;
  o.iterations = iterations;
  return o;
}

}  // namespace

TEST(Solver, SingleIterationLogsOnce) {
  const auto& w = writer();
  const auto r = optimize_trajectory(w.s0, w.inst.goal, 4, w.inst.spec.sim, quick(1));
  ASSERT_EQ(r.history.size(), 1u);
  EXPECT_EQ(r.best_iteration, 0);
  EXPECT_EQ(r.best_loss, r.history[0].loss);
  EXPECT_EQ(r.best_actions.steps(), 4);
}

TEST(Solver, GoalEqualToStartKeepsShapeTermTiny) {
  const auto& w = writer();
  const auto r = optimize_trajectory(w.s0, w.inst.initial, 4, w.inst.spec.sim, quick(3));
  EXPECT_LE(r.history.front().shape, 1e-6);
  double best_shape = r.history.front().shape;
  for (const auto& h : r.history)
    if (h.loss == r.best_loss) best_shape = h.shape;
  EXPECT_LE(best_shape, 1e-6);
}

TEST(Solver, ReducesWriterLoss) {
  const auto& w = writer();
  const auto r = optimize_trajectory(w.s0, w.inst.goal, w.inst.spec.n_step, w.inst.spec.sim, quick(30));
  EXPECT_LE(r.best_loss, 0.8 * r.history.front().loss);
  EXPECT_EQ(r.blowups, 0);
}

TEST(Solver, BestLossIsMonotoneInBudgetAndReproducible) {
  const auto& w = writer();
  double last = std::numeric_limits<double>::infinity();
  for (int n : {1, 3, 6}) {
    const auto r = optimize_trajectory(w.s0, w.inst.goal, 5, w.inst.spec.sim, quick(n));
    EXPECT_LE(r.best_loss, last);
    last = r.best_loss;
  }
  const auto a = optimize_trajectory(w.s0, w.inst.goal, 5, w.inst.spec.sim, quick(6));
  const auto b = optimize_trajectory(w.s0, w.inst.goal, 5, w.inst.spec.sim, quick(6));
  EXPECT_EQ(a.best_loss, b.best_loss);
  EXPECT_EQ(a.best_actions.data(), b.best_actions.data());
}

TEST(Solver, ActionsStayWithinBounds) {
  const auto& w = writer();
  SolverOptions o = quick(5);
  o.lr = 10.0;  // steps far past the bound get clamped
  const auto r = optimize_trajectory(w.s0, w.inst.goal, 5, w.inst.spec.sim, o);
  for (double x : r.best_actions.data()) EXPECT_LE(std::abs(x), w.inst.spec.sim.action_bound);
}

TEST(Solver, ApproachInitPointsAtTheBody) {
  const auto& w = writer();
  const auto a = approach_actions(w.s0, 3, w.inst.spec.sim, 0.5);
  const Vec3 to_body = w.inst.initial.centroid() - w.s0.manipulators[0].pose.translation;
  const Vec3 v(a.at(0, 0, 0), a.at(0, 0, 1), a.at(0, 0, 2));
  EXPECT_NEAR(v.norm(), 0.5 * w.inst.spec.sim.action_bound, 1e-12);
  EXPECT_GT(v.dot(to_body), 0.99 * v.norm() * to_body.norm());
}

TEST(Solver, RejectsBadArguments) {
  const auto& w = writer();
  EXPECT_THROW(optimize_trajectory(w.s0, w.inst.goal, 0, w.inst.spec.sim, quick(1)), InvalidArgument);
  SolverOptions o = quick(1);
  o.lr = 0.0;
  EXPECT_THROW(optimize_trajectory(w.s0, w.inst.goal, 3, w.inst.spec.sim, o), InvalidArgument);
  const sim::ActionSequence wrong(2, 1, 3);
  EXPECT_THROW(optimize_trajectory(w.s0, w.inst.goal, 3, w.inst.spec.sim, quick(1), &wrong), ShapeMismatchError);
}
