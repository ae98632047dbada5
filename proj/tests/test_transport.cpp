#include <algorithm>
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "cpdeform/transport.hpp"

using namespace cpdeform;

namespace {

ParticleCloud random_cloud(std::size_t n, std::mt19937_64& rng, double scale = 1.0) {
  std::uniform_real_distribution<double> u(0.0, scale);
  std::vector<Vec3> pts;
  for (std::size_t i = 0; i < n; ++i) pts.emplace_back(u(rng), u(rng), u(rng));
  return ParticleCloud(std::move(pts));
}

// Exact optimum for equal-size uniform clouds: the optimal plans include a
// permutation matrix, so enumerating all matchings is exact.
double brute_force_cost(const ParticleCloud& a, const ParticleCloud& b, int exponent) {
  std::vector<std::size_t> perm(a.size());
  std::iota(perm.begin(), perm.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double c = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      const double d = (a.points[i] - b.points[perm[i]]).norm();
      c += exponent == 1 ? d : d * d;
    }
    best = std::min(best, c / static_cast<double>(a.size()));
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

}  // namespace

TEST(CostMatrix, Entries) {
  const ParticleCloud a({Vec3(0, 0, 0)}), b({Vec3(1, 0, 0)}), c({Vec3(3, 0, 0)});
  EXPECT_DOUBLE_EQ(ot::cost_matrix(a, b, 1)(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(ot::cost_matrix(a, c, 2)(0, 0), 9.0);
  std::mt19937_64 rng(0);
  const auto r = random_cloud(5, rng);
  const auto m = ot::cost_matrix(r, r, 1);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(m(i, i), 0.0);
  EXPECT_THROW(ot::cost_matrix(a, ParticleCloud(), 1), InvalidArgument);
  EXPECT_THROW(ot::cost_matrix(a, b, 3), InvalidArgument);
}

TEST(Sinkhorn, IdenticalCloudsGiveDiagonalPlan) {
  std::mt19937_64 rng(1);
  const auto c = random_cloud(4, rng);
  const auto M = ot::cost_matrix(c, c, 1);
  const auto r = ot::sinkhorn_annealed(c, c, M);
  EXPECT_LE(r.cost, 1e-6);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(r.plan_at(i, i), 0.25, 1e-6);
}

TEST(Sinkhorn, SinglePointPair) {
  const ParticleCloud a({Vec3(0, 0, 0)}), b({Vec3(1, 0, 0)});
  const auto M = ot::cost_matrix(a, b, 1);
  ot::AnnealingSchedule s;
  s.end_factor = 1e-3;
  EXPECT_NEAR(ot::sinkhorn_annealed(a, b, M, s).cost, 1.0, 0.01);
}

TEST(Sinkhorn, MatchesBruteForceWithWeakDuality) {
  std::mt19937_64 rng(2);
  for (int inst = 0; inst < 10; ++inst) {
    for (int exponent : {1, 2}) {
      const auto a = random_cloud(6, rng), b = random_cloud(6, rng);
      const auto M = ot::cost_matrix(a, b, exponent);
      const auto r = ot::sinkhorn_annealed(a, b, M);
      const double exact = brute_force_cost(a, b, exponent);
      EXPECT_NEAR(r.cost, exact, 0.02 * exact);
      EXPECT_LE(r.feasible_dual, r.cost + 1e-12);
      EXPECT_LE(r.dual_objective(), r.cost + r.epsilon * std::log(36.0) + 1e-12);
    }
  }
}

TEST(Sinkhorn, PlanMarginalsAndSmallEpsilonStability) {
  std::mt19937_64 rng(3);
  const auto a = random_cloud(30, rng), b = random_cloud(20, rng);
  const auto M = ot::cost_matrix(a, b, 1);
  // Costs up to ~1.7 with epsilon 1e-3: far beyond exp() range without the log domain.
  const auto r = ot::sinkhorn(a, b, M, 1e-3, 5000, 1e-8);
  for (double x : r.f) EXPECT_TRUE(std::isfinite(x));
  for (std::size_t i = 0; i < a.size(); ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < b.size(); ++j) {
      EXPECT_GE(r.plan_at(i, j), 0.0);
      row += r.plan_at(i, j);
    }
    EXPECT_NEAR(row, a.mass, 1e-12);
  }
  for (std::size_t j = 0; j < b.size(); ++j) {
    double col = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) col += r.plan_at(i, j);
    EXPECT_NEAR(col, b.mass, 1e-12);
  }
  EXPECT_THROW(ot::sinkhorn(a, b, M, 0.0, 10, 1e-3), InvalidArgument);
}

TEST(Sinkhorn, UnconvergedIsFlagged) {
  std::mt19937_64 rng(4);
  const auto a = random_cloud(20, rng), b = random_cloud(20, rng);
  const auto M = ot::cost_matrix(a, b, 1);
  EXPECT_FALSE(ot::sinkhorn(a, b, M, 1e-4, 1, 1e-12).converged);
}

TEST(W1, IdentityTranslationSymmetryScaling) {
  std::mt19937_64 rng(5);
  const auto c = random_cloud(40, rng, 0.3);
  EXPECT_LE(ot::w1_distance(c, c), 1e-6);
  EXPECT_NEAR(ot::w1_distance(c, c.translated(Vec3(0.1, 0, 0))), 0.1, 0.002);
  const auto d = random_cloud(40, rng, 0.3);
  EXPECT_NEAR(ot::w1_distance(c, d), ot::w1_distance(d, c), 1e-6);
  ParticleCloud c2 = c, d2 = d;
  for (auto& p : c2.points) p *= 2.5;
  for (auto& p : d2.points) p *= 2.5;
  EXPECT_NEAR(ot::w1_distance(c2, d2), 2.5 * ot::w1_distance(c, d), 0.01 * 2.5 * ot::w1_distance(c, d));
}

TEST(W1, FourPointsMatchBruteForce) {
  std::mt19937_64 rng(6);
  for (int k = 0; k < 10; ++k) {
    const auto a = random_cloud(4, rng), b = random_cloud(4, rng);
    const double exact = brute_force_cost(a, b, 1);
    EXPECT_NEAR(ot::w1_distance(a, b), exact, 0.02 * exact);
  }
}

TEST(Priorities, ZeroWhenSourceEqualsTarget) {
  std::mt19937_64 rng(7);
  const auto c = random_cloud(30, rng, 0.2);
  for (auto gauge : {ot::PriorityGauge::mean, ot::PriorityGauge::median}) {
    ot::PriorityOptions o;
    o.gauge = gauge;
    for (double f : ot::transport_priorities(c, c, o)) EXPECT_NEAR(f, 0.0, 1e-6);
  }
}

TEST(Priorities, DisplacedClusterRanksHigher) {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> n(0.0, 0.01);
  std::vector<Vec3> src, tgt;
  for (int i = 0; i < 4; ++i) src.emplace_back(0.2 + n(rng), 0.5 + n(rng), 0.5 + n(rng));
  for (int i = 0; i < 4; ++i) src.emplace_back(0.8 + n(rng), 0.5 + n(rng), 0.5 + n(rng));
  for (int i = 0; i < 4; ++i) tgt.push_back(src[i]);
  for (int i = 0; i < 4; ++i) tgt.emplace_back(0.2 + n(rng), 0.5 + n(rng), 0.5 + n(rng));
  const ParticleCloud a(src), b(tgt);
  ot::PriorityOptions raw;
  raw.exponent = 1;
  raw.gauge = ot::PriorityGauge::mean;
  raw.debias = false;
  for (const auto& opts : {ot::PriorityOptions{}, raw}) {
    const auto f = ot::transport_priorities(a, b, opts);
    const double low_max = *std::max_element(f.begin(), f.begin() + 4);
    const double high_min = *std::min_element(f.begin() + 4, f.end());
    EXPECT_GT(high_min, low_max);
  }
  const auto f = ot::transport_priorities(a, b, raw);
  EXPECT_NEAR(std::accumulate(f.begin(), f.end(), 0.0), 0.0, 1e-12);
}

TEST(Priorities, PermutationAndTranslationEquivariance) {
  std::mt19937_64 rng(9);
  const auto a = random_cloud(25, rng, 0.4), b = random_cloud(25, rng, 0.4).translated(Vec3(0.3, 0, 0));
  const auto f = ot::transport_priorities(a, b);
  std::vector<std::size_t> perm(a.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<Vec3> shuffled;
  for (auto p : perm) shuffled.push_back(a.points[p]);
  const auto fp = ot::transport_priorities(ParticleCloud(shuffled), b);
  for (std::size_t i = 0; i < perm.size(); ++i) EXPECT_NEAR(fp[i], f[perm[i]], 1e-8);
  const Vec3 t(0.05, -0.02, 0.1);
  const auto ft = ot::transport_priorities(a.translated(t), b.translated(t));
  EXPECT_EQ(ot::argmax_lowest(ft), ot::argmax_lowest(f));
}

TEST(Argmax, TiesGoLow) {
  EXPECT_EQ(ot::argmax_lowest({0.1, 0.9, 0.3}), 1u);
  EXPECT_EQ(ot::argmax_lowest({2.0, 2.0, 2.0}), 0u);
  EXPECT_THROW(ot::argmax_lowest({}), InvalidArgument);
}
