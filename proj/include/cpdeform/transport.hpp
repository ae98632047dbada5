#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <utility>
#include <limits>
#include <numeric>
#include <vector>

#include "cpdeform/errors.hpp"
#include "cpdeform/parallel.hpp"
#include "cpdeform/particle_cloud.hpp"

namespace cpdeform::ot {

/// Dense row-major ground-cost matrix, rows index source particles.
struct CostMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  double operator()(std::size_t i, std::size_t j) const { return values[i * cols + j]; }
  double max() const { return values.empty() ? 0.0 : *std::max_element(values.begin(), values.end()); }
};

/// M[i][j] = |src_i - tgt_j|^exponent for exponent 1 or 2.
inline CostMatrix cost_matrix(const ParticleCloud& src, const ParticleCloud& tgt, int exponent) {
  if (src.empty() || tgt.empty()) throw InvalidArgument("cost matrix of an empty cloud");
  if (exponent != 1 && exponent != 2) throw InvalidArgument("cost exponent must be 1 or 2");
  CostMatrix m{src.size(), tgt.size(), std::vector<double>(src.size() * tgt.size())};
  for (std::size_t i = 0; i < m.rows; ++i)
    for (std::size_t j = 0; j < m.cols; ++j) {
      const double sq = (src.points[i] - tgt.points[j]).squaredNorm();
      m.values[i * m.cols + j] = exponent == 2 ? sq : std::sqrt(sq);
    }
  return m;
}

/// Output of entropic transport. f, g are the log-domain dual potentials of
/// the plan P_ij = a_i b_j exp((f_i + g_j - M_ij) / epsilon); `plan` is that
/// matrix rounded onto the exact transport polytope, and `cost` = <plan, M>.
struct TransportResult {
  std::vector<double> f;
  std::vector<double> g;
  std::vector<double> plan;
  std::size_t rows = 0;
  std::size_t cols = 0;
  double src_mass = 0.0;
  double tgt_mass = 0.0;
  double cost = 0.0;
  double epsilon = 0.0;
  std::size_t iterations = 0;
  /// L1 marginal violation of the unrounded entropic plan.
  double marginal_error = 0.0;
  bool converged = false;
  /// Dual objective of the c-transformed (hence feasible) potentials; a lower
  /// bound on the exact transport cost.
  double feasible_dual = 0.0;

  double plan_at(std::size_t i, std::size_t j) const { return plan[i * cols + j]; }
  double dual_objective() const {
    return src_mass * std::accumulate(f.begin(), f.end(), 0.0) + tgt_mass * std::accumulate(g.begin(), g.end(), 0.0);
  }
};

struct AnnealingSchedule {
  double start_factor = 0.5;  // times the largest cost entry
  double end_factor = 1e-4;
  int levels = 13;
  std::size_t level_max_iters = 100;
  double level_tol = 1e-3;
};

struct SinkhornOptions {
  std::size_t max_iters = 2000;
  double tol = 1e-4;  // L1 marginal violation; the rounded plan is exactly feasible anyway
  int threads = 1;
};

namespace detail {

struct LevelStats {
  std::size_t iterations = 0;
  double error = std::numeric_limits<double>::infinity();
};

inline double log_sum_exp(const double* x, std::size_t n) {
  double hi = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < n; ++k) hi = std::max(hi, x[k]);
  if (!std::isfinite(hi)) return hi;
  double s = 0.0;
  for (std::size_t k = 0; k < n; ++k) s += std::exp(x[k] - hi);
  return hi + std::log(s);
}

// Exact log-domain half steps: make row (resp. column) marginals exact.
inline void update_f(const CostMatrix& M, double b, double eps, const std::vector<double>& g, std::vector<double>& f,
                     int threads) {
  parallel_for(M.rows, threads, [&](std::size_t i) {
    std::vector<double> buf(M.cols);
    for (std::size_t j = 0; j < M.cols; ++j) buf[j] = (g[j] - M(i, j)) / eps;
    f[i] = -eps * (std::log(b) + log_sum_exp(buf.data(), M.cols));
  });
}
inline void update_g(const CostMatrix& M, double a, double eps, const std::vector<double>& f, std::vector<double>& g,
                     int threads) {
  parallel_for(M.cols, threads, [&](std::size_t j) {
    std::vector<double> buf(M.rows);
    for (std::size_t i = 0; i < M.rows; ++i) buf[i] = (f[i] - M(i, j)) / eps;
    g[j] = -eps * (std::log(a) + log_sum_exp(buf.data(), M.rows));
  });
}

// Sinkhorn at one epsilon. Scaling iterations on a kernel stabilized by the
// current potentials; scalings are absorbed into (f, g) when they drift.
// Kernel entries below exp(-kTruncate) are dropped: with scalings bounded by
// exp(kAbsorb) the dropped mass stays below exp(kAbsorb - kTruncate) per entry.
inline LevelStats run_level(const CostMatrix& M, double a, double b, double eps, std::vector<double>& f,
                            std::vector<double>& g, std::size_t max_iters, double tol, int threads) {
  const std::size_t n = M.rows, m = M.cols;
  constexpr double kAbsorb = 15.0, kTruncate = 50.0;
  std::vector<std::vector<std::pair<std::uint32_t, double>>> K(n);
  std::vector<double> u(n, 1.0), v(m, 1.0), Kv(n), Ktu(m);
  auto rebuild = [&] {
    parallel_for(n, threads, [&](std::size_t i) {
      auto& row = K[i];
      row.clear();
      for (std::size_t j = 0; j < m; ++j) {
        const double e = (f[i] + g[j] - M(i, j)) / eps;
        if (e > -kTruncate) row.emplace_back(static_cast<std::uint32_t>(j), std::exp(e));
      }
    });
    std::fill(u.begin(), u.end(), 1.0);
    std::fill(v.begin(), v.end(), 1.0);
  };
  auto apply_K = [&] {
    parallel_for(n, threads, [&](std::size_t i) {
      double s = 0.0;
      for (const auto& [j, k] : K[i]) s += k * v[j];
      Kv[i] = s;
    });
  };

  update_f(M, b, eps, g, f, threads);
  rebuild();
  LevelStats stats;
  for (;;) {
    apply_K();
    double err = 0.0;
    for (std::size_t i = 0; i < n; ++i) err += std::abs(a * b * u[i] * Kv[i] - a);
    stats.error = err;
    if ((stats.iterations > 0 && err <= tol) || stats.iterations >= max_iters) break;

    for (std::size_t i = 0; i < n; ++i) u[i] = 1.0 / (b * Kv[i]);
    std::fill(Ktu.begin(), Ktu.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const double ui = u[i];
      for (const auto& [j, k] : K[i]) Ktu[j] += k * ui;
    }
    for (std::size_t j = 0; j < m; ++j) v[j] = 1.0 / (a * Ktu[j]);
    ++stats.iterations;

    bool drift = false;
    for (double x : u) drift = drift || !std::isfinite(x) || x <= 0.0 || std::abs(std::log(x)) > kAbsorb;
    for (double x : v) drift = drift || !std::isfinite(x) || x <= 0.0 || std::abs(std::log(x)) > kAbsorb;
    if (drift) {
      for (std::size_t j = 0; j < m; ++j)
        if (std::isfinite(v[j]) && v[j] > 0.0) g[j] += eps * std::log(v[j]);
      update_f(M, b, eps, g, f, threads);
      update_g(M, a, eps, f, g, threads);
      rebuild();
    }
  }
  for (std::size_t i = 0; i < n; ++i) f[i] += eps * std::log(u[i]);
  for (std::size_t j = 0; j < m; ++j) g[j] += eps * std::log(v[j]);
  return stats;
}

inline TransportResult finalize(const CostMatrix& M, double a, double b, double eps, std::vector<double> f,
                                std::vector<double> g, const LevelStats& stats, std::size_t total_iters, double tol) {
  const std::size_t n = M.rows, m = M.cols;
  for (double x : f)
    if (!std::isfinite(x)) throw NumericError("non-finite source potential");
  for (double x : g)
    if (!std::isfinite(x)) throw NumericError("non-finite target potential");

  TransportResult r;
  r.rows = n;
  r.cols = m;
  r.src_mass = a;
  r.tgt_mass = b;
  r.epsilon = eps;
  r.iterations = total_iters;
  r.plan.resize(n * m);
  std::vector<double> row_sum(n, 0.0), col_sum(m, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      const double p = a * b * std::exp((f[i] + g[j] - M(i, j)) / eps);
      r.plan[i * m + j] = p;
      row_sum[i] += p;
      col_sum[j] += p;
    }
  double err = 0.0;
  for (std::size_t i = 0; i < n; ++i) err += std::abs(row_sum[i] - a);
  for (std::size_t j = 0; j < m; ++j) err += std::abs(col_sum[j] - b);
  r.marginal_error = err;
  r.converged = stats.error <= tol;

  // Round onto the transport polytope: shrink overfull rows and columns, then
  // add the rank-one correction for the remaining deficit.
  for (std::size_t i = 0; i < n; ++i) {
    const double s = row_sum[i] > a ? a / row_sum[i] : 1.0;
    for (std::size_t j = 0; j < m; ++j) r.plan[i * m + j] *= s;
  }
  std::fill(col_sum.begin(), col_sum.end(), 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) col_sum[j] += r.plan[i * m + j];
  std::vector<double> scale_c(m);
  for (std::size_t j = 0; j < m; ++j) scale_c[j] = col_sum[j] > b ? b / col_sum[j] : 1.0;
  std::fill(row_sum.begin(), row_sum.end(), 0.0);
  std::fill(col_sum.begin(), col_sum.end(), 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      double& p = r.plan[i * m + j];
      p *= scale_c[j];
      row_sum[i] += p;
      col_sum[j] += p;
    }
  std::vector<double> dr(n), dc(m);
  double deficit = 0.0;
  for (std::size_t i = 0; i < n; ++i) deficit += (dr[i] = std::max(0.0, a - row_sum[i]));
  for (std::size_t j = 0; j < m; ++j) dc[j] = std::max(0.0, b - col_sum[j]);
  if (deficit > 0.0)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) r.plan[i * m + j] += dr[i] * dc[j] / deficit;

  double cost = 0.0;
  for (std::size_t k = 0; k < n * m; ++k) cost += r.plan[k] * M.values[k];
  r.cost = cost;

  // c-transforms give a feasible pair: fc_i + gc_j <= M_ij.
  std::vector<double> gc(m, std::numeric_limits<double>::infinity()), fc(n, std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) gc[j] = std::min(gc[j], M(i, j) - f[i]);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) fc[i] = std::min(fc[i], M(i, j) - gc[j]);
  r.feasible_dual = a * std::accumulate(fc.begin(), fc.end(), 0.0) + b * std::accumulate(gc.begin(), gc.end(), 0.0);

  r.f = std::move(f);
  r.g = std::move(g);
  return r;
}

inline void check_inputs(const ParticleCloud& src, const ParticleCloud& tgt, const CostMatrix& M, double eps) {
  if (src.empty() || tgt.empty()) throw InvalidArgument("transport between empty clouds");
  if (M.rows != src.size() || M.cols != tgt.size()) throw ShapeMismatchError("cost matrix does not match clouds");
  if (!(eps > 0.0)) throw InvalidArgument("epsilon must be positive");
}

}  // namespace detail

/// Warm-start potentials for the next solve (e.g. the previous result's f, g).
struct Potentials {
  std::vector<double> f;
  std::vector<double> g;
};

/// Log-domain stabilized Sinkhorn at a fixed epsilon. Particle masses come
/// from the clouds (uniform). Returns with `converged == false` when
/// `max_iters` is hit before the marginal tolerance; the caller decides.
inline TransportResult sinkhorn(const ParticleCloud& src, const ParticleCloud& tgt, const CostMatrix& M, double epsilon,
                                std::size_t max_iters, double tol, const Potentials* warm = nullptr, int threads = 1) {
  detail::check_inputs(src, tgt, M, epsilon);
  std::vector<double> f(M.rows, 0.0), g(M.cols, 0.0);
  if (warm != nullptr && warm->f.size() == M.rows && warm->g.size() == M.cols) {
    f = warm->f;
    g = warm->g;
  }
  const auto stats = detail::run_level(M, src.mass, tgt.mass, epsilon, f, g, max_iters, tol, threads);
  return detail::finalize(M, src.mass, tgt.mass, epsilon, std::move(f), std::move(g), stats, stats.iterations, tol);
}

/// Sinkhorn with geometric epsilon decay relative to the largest cost entry,
/// warm-starting each level from the previous one.
inline TransportResult sinkhorn_annealed(const ParticleCloud& src, const ParticleCloud& tgt, const CostMatrix& M,
                                         const AnnealingSchedule& schedule = {}, const SinkhornOptions& opts = {}) {
  if (schedule.levels < 1) throw InvalidArgument("annealing needs at least one level");
  double scale = M.max();
  if (!(scale > 0.0)) scale = 1.0;
  const double e0 = scale * schedule.start_factor, e1 = scale * schedule.end_factor;
  detail::check_inputs(src, tgt, M, e1);
  std::vector<double> f(M.rows, 0.0), g(M.cols, 0.0);
  std::size_t total = 0;
  detail::LevelStats last;
  double eps = e1;
  for (int k = 0; k < schedule.levels; ++k) {
    const bool final_level = k + 1 == schedule.levels;
    eps = schedule.levels == 1 ? e1 : e0 * std::pow(e1 / e0, static_cast<double>(k) / (schedule.levels - 1));
    last = detail::run_level(M, src.mass, tgt.mass, eps, f, g, final_level ? opts.max_iters : schedule.level_max_iters,
                             final_level ? opts.tol : schedule.level_tol, opts.threads);
    total += last.iterations;
  }
  return detail::finalize(M, src.mass, tgt.mass, eps, std::move(f), std::move(g), last, total, opts.tol);
}

/// Additive constant of the potentials. `median` puts the bulk of particles
/// that need not move at zero.
enum class PriorityGauge { mean, median };

struct PriorityOptions {
  int exponent = 2;
  PriorityGauge gauge = PriorityGauge::median;
  /// Subtract the source's self-transport potential (Sinkhorn divergence
  /// potential), which removes the entropic bias at the cloud boundary.
  bool debias = true;
  AnnealingSchedule schedule{0.5, 1e-2, 8, 100, 1e-3};
  SinkhornOptions sinkhorn{};
};

/// Source dual potentials, shifted by the chosen gauge.
inline std::vector<double> transport_priorities(const ParticleCloud& src, const ParticleCloud& tgt,
                                                const PriorityOptions& opts = {}) {
  const CostMatrix M = cost_matrix(src, tgt, opts.exponent);
  auto f = sinkhorn_annealed(src, tgt, M, opts.schedule, opts.sinkhorn).f;
  if (opts.debias) {
    // Same absolute epsilon for the self problem.
    const CostMatrix S = cost_matrix(src, src, opts.exponent);
    AnnealingSchedule self = opts.schedule;
    if (S.max() > 0.0) {
      self.end_factor *= M.max() / S.max();
      self.start_factor = std::max(self.start_factor, self.end_factor);
    }
    const auto f_self = sinkhorn_annealed(src, src, S, self, opts.sinkhorn).f;
    for (std::size_t i = 0; i < f.size(); ++i) f[i] -= f_self[i];
  }
  double shift = 0.0;
  if (opts.gauge == PriorityGauge::mean) {
    shift = std::accumulate(f.begin(), f.end(), 0.0) / static_cast<double>(f.size());
  } else {
    std::vector<double> tmp = f;
    const auto mid = tmp.begin() + static_cast<std::ptrdiff_t>(tmp.size() / 2);
    std::nth_element(tmp.begin(), mid, tmp.end());
    shift = *mid;
  }
  for (auto& x : f) x -= shift;
  return f;
}

/// Wasserstein-1 distance (Euclidean ground metric) via annealed Sinkhorn.
inline double w1_distance(const ParticleCloud& src, const ParticleCloud& tgt, const AnnealingSchedule& schedule = {},
                          const SinkhornOptions& opts = {}) {
  const CostMatrix M = cost_matrix(src, tgt, 1);
  return sinkhorn_annealed(src, tgt, M, schedule, opts).cost;
}

/// Index of the largest value; ties go to the lowest index.
inline std::size_t argmax_lowest(const std::vector<double>& values) {
  if (values.empty()) throw InvalidArgument("argmax of an empty vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i)
    if (values[i] > values[best]) best = i;
  return best;
}

}  // namespace cpdeform::ot
