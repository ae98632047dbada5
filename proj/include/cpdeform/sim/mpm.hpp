#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "cpdeform/errors.hpp"
#include "cpdeform/parallel.hpp"
#include "cpdeform/sim/config.hpp"
#include "cpdeform/sim/kernels.hpp"
#include "cpdeform/sim/state.hpp"

namespace cpdeform::sim {

/// Input state of one substep, kept for the reverse pass.
struct SubstepFrame {
  std::vector<Vec3> x, v;
  std::vector<Mat3> C, F;
  std::vector<Vec3> translation;
  std::vector<Vec4> rotation;  // (w, x, y, z)
  int step = 0;
};

struct Trajectory {
  std::vector<SubstepFrame> frames;
};

/// Cotangents of a simulator state; poses are split into translation and
/// quaternion coefficients.
struct StateCotangent {
  std::vector<Vec3> x, v;
  std::vector<Mat3> C, F;
  std::vector<Vec3> translation;
  std::vector<Vec4> rotation;

  static StateCotangent zeros(std::size_t particles, std::size_t manipulators) {
    StateCotangent c;
    c.x.assign(particles, Vec3::Zero());
    c.v.assign(particles, Vec3::Zero());
    c.C.assign(particles, Mat3::Zero());
    c.F.assign(particles, Mat3::Zero());
    c.translation.assign(manipulators, Vec3::Zero());
    c.rotation.assign(manipulators, Vec4::Zero());
    return c;
  }
};

/// MLS-MPM with APIC transfer, fixed-corotated elasticity and von Mises
/// plasticity. Holds grid scratch space, so one instance per thread.
class Simulator {
 public:
  explicit Simulator(const SimConfig& config) : cfg_(config) {
    cfg_.validate();
    nodes_ = cfg_.grid_resolution + 1;
    const std::size_t count = static_cast<std::size_t>(nodes_) * nodes_ * nodes_;
    grid_m_.assign(count, 0.0);
    grid_mv_.assign(count, Vec3::Zero());
    grid_v_.assign(count, Vec3::Zero());
  }

  const SimConfig& config() const { return cfg_; }

  /// One action step (cfg.substeps substeps). Appends substep inputs to `record`.
  void step(SimState& s, const ActionSequence& actions, int t, Trajectory* record = nullptr) {
    check_action(s, actions, t);
    for (int sub = 0; sub < cfg_.substeps; ++sub) {
      if (record != nullptr) record->frames.push_back(capture(s));
      substep(s, actions, t);
    }
    ++s.step;
  }

  SimState rollout(const SimState& s0, const ActionSequence& actions, Trajectory* record = nullptr) {
    if (actions.steps() > 0 &&
        (actions.manipulators() != static_cast<int>(s0.manipulators.size()) || actions.dims() != cfg_.action_dims()))
      throw ShapeMismatchError("action sequence does not match the manipulators");
    SimState s = s0;
    if (record != nullptr) {
      record->frames.clear();
      record->frames.reserve(static_cast<std::size_t>(actions.steps()) * cfg_.substeps);
    }
    for (int t = 0; t < actions.steps(); ++t) step(s, actions, t, record);
    return s;
  }

  /// Reverse pass over a recorded rollout. `final_bar` holds dL/d(final
  /// state); returns dL/d(actions). `shapes` and `particle_volume` come from
  /// the initial state.
  ActionSequence backward(const Trajectory& record, const ActionSequence& actions, const SimState& s0,
                          StateCotangent final_bar) {
    ActionSequence grad(actions.steps(), actions.manipulators(), actions.dims());
    if (record.frames.size() != static_cast<std::size_t>(actions.steps()) * cfg_.substeps)
      throw ShapeMismatchError("trajectory does not match the action sequence");
    StateCotangent bar = std::move(final_bar);
    for (std::size_t f = record.frames.size(); f-- > 0;) {
      const int t = static_cast<int>(f) / cfg_.substeps;
      substep_backward(record.frames[f], s0, actions, t, bar, grad);
    }
    return grad;
  }

 private:
  struct ParticleScratch {
    std::vector<Stencil> stencil;
    std::vector<Mat3> F_tmp, F_new, R, A;
  };

  double kappa() const { return cfg_.material.yield_stress / (2.0 * cfg_.material.mu()); }
  double apic_factor() const { return 4.0 * cfg_.inv_dx() * cfg_.inv_dx(); }
  std::size_t node(int i, int j, int k) const {
    return (static_cast<std::size_t>(i) * nodes_ + j) * nodes_ + k;
  }
  double lower_clamp() const { return cfg_.dx(); }
  double upper_clamp() const { return 1.0 - cfg_.dx(); }

  void check_action(const SimState& s, const ActionSequence& actions, int t) const {
    if (t < 0 || t >= actions.steps()) throw InvalidArgument("action step out of range");
    if (actions.manipulators() != static_cast<int>(s.manipulators.size()) || actions.dims() != cfg_.action_dims())
      throw ShapeMismatchError("action does not match the manipulators");
    for (int k = 0; k < actions.manipulators(); ++k)
      for (int d = 0; d < actions.dims(); ++d) {
        const double a = actions.at(t, k, d);
        if (!std::isfinite(a) || std::abs(a) > cfg_.action_bound + 1e-12)
          throw InvalidArgument("action outside bounds at step " + std::to_string(t));
      }
  }

  static SubstepFrame capture(const SimState& s) {
    SubstepFrame f{s.x, s.v, s.C, s.F, {}, {}, s.step};
    for (const auto& m : s.manipulators) {
      f.translation.push_back(m.pose.translation);
      f.rotation.push_back(quat_coeffs(m.pose.rotation));
    }
    return f;
  }

  // Per-particle constitutive update and affine momentum.
  void particle_phase(const std::vector<Vec3>& x, const std::vector<Mat3>& C, const std::vector<Mat3>& F,
                      double volume, ParticleScratch& ps) {
    const std::size_t n = x.size();
    ps.stencil.resize(n);
    ps.F_tmp.resize(n);
    ps.F_new.resize(n);
    ps.R.resize(n);
    ps.A.resize(n);
    const double dt = cfg_.dt, mass = volume * cfg_.material.density, mu = cfg_.material.mu(),
                 la = cfg_.material.lambda(), kap = kappa(), k4 = apic_factor();
    parallel_for(n, cfg_.threads, [&](std::size_t p) {
      ps.stencil[p] = make_stencil(x[p], cfg_.inv_dx());
      ps.F_tmp[p] = (Mat3::Identity() + dt * C[p]) * F[p];
      ps.F_new[p] = plastic_projection(ps.F_tmp[p], kap, cfg_.plastic_smoothing * kap);
      const double J = ps.F_new[p].determinant();
      if (!(J > 0.0) || !std::isfinite(J)) {
        ps.R[p].setIdentity();
        ps.A[p].setConstant(std::numeric_limits<double>::quiet_NaN());
        return;
      }
      ps.R[p] = polar_rotation(ps.F_new[p]);
      const Mat3 tau = kirchhoff_stress(ps.F_new[p], ps.R[p], mu, la);
      ps.A[p] = -dt * volume * k4 * tau + mass * C[p];
    });
  }

  template <class Fn>
  void for_box(Fn&& fn) const {
    for (int i = lo_[0]; i <= hi_[0]; ++i)
      for (int j = lo_[1]; j <= hi_[1]; ++j)
        for (int k = lo_[2]; k <= hi_[2]; ++k) fn(node(i, j, k));
  }

  // Grid arrays are zero outside the active box, so only that box is cleared.
  void scatter(const std::vector<Vec3>& x, const std::vector<Vec3>& v, double mass, const ParticleScratch& ps) {
    for_box([&](std::size_t id) {
      grid_m_[id] = 0.0;
      grid_mv_[id].setZero();
      grid_v_[id].setZero();
    });
    lo_ = {nodes_, nodes_, nodes_};
    hi_ = {-1, -1, -1};
    const double dx = cfg_.dx();
    for (std::size_t p = 0; p < x.size(); ++p) {
      const Stencil& st = ps.stencil[p];
      for (int d = 0; d < 3; ++d) {
        lo_[d] = std::min(lo_[d], st.base[d]);
        hi_[d] = std::max(hi_[d], st.base[d] + 2);
      }
      // mom + A (node - x) with node - x = (ijk - fx) dx
      const Mat3 Adx = ps.A[p] * dx;
      const Vec3 c0 = mass * v[p] - Adx * st.fx;
      for (int i = 0; i < 3; ++i) {
        const Vec3 ci = c0 + Adx.col(0) * i;
        for (int j = 0; j < 3; ++j) {
          const double wij = st.w[0][i] * st.w[1][j];
          const Vec3 cij = ci + Adx.col(1) * j;
          const std::size_t row = node(st.base[0] + i, st.base[1] + j, st.base[2]);
          for (int k = 0; k < 3; ++k) {
            const double w = wij * st.w[2][k];
            grid_m_[row + k] += w * mass;
            grid_mv_[row + k] += w * (cij + Adx.col(2) * k);
          }
        }
      }
    }
  }

  template <class Fn>
  void for_active_nodes(Fn&& fn) {
    const int ni = hi_[0] - lo_[0] + 1;
    if (ni <= 0) return;
    parallel_for(static_cast<std::size_t>(ni), cfg_.threads, [&](std::size_t ii) {
      const int i = lo_[0] + static_cast<int>(ii);
      for (int j = lo_[1]; j <= hi_[1]; ++j)
        for (int k = lo_[2]; k <= hi_[2]; ++k) {
          const std::size_t id = node(i, j, k);
          if (grid_m_[id] > 0.0) fn(i, j, k, id);
        }
    });
  }

  Vec3 apply_boundary(int i, int j, int k, Vec3 vel) const {
    const int idx[3] = {i, j, k};
    const int b = cfg_.boundary_cells, n = cfg_.grid_resolution;
    for (int d = 0; d < 3; ++d) {
      if (idx[d] < b && vel[d] < 0.0) vel[d] = 0.0;
      if (idx[d] > n - b && vel[d] > 0.0) vel[d] = 0.0;
    }
    return vel;
  }
  bool boundary_blocks(int i, int j, int k, const Vec3& vel, int d) const {
    const int idx[3] = {i, j, k};
    const int b = cfg_.boundary_cells, n = cfg_.grid_resolution;
    return (idx[d] < b && vel[d] < 0.0) || (idx[d] > n - b && vel[d] > 0.0);
  }

  // Grid velocities: momentum / mass, gravity, manipulator contact in order,
  // then the domain walls. `stages` (if given) receives the velocity before
  // each manipulator and after the last one.
  void grid_phase(const std::vector<Vec3>& t, const std::vector<Vec4>& q, const std::vector<ShapePrimitive>& shapes,
                  const ActionSequence& actions, int step, std::vector<std::vector<Vec3>>* stages) {
    const std::size_t K = shapes.size();
    if (stages != nullptr) {
      // Entries are only read at active nodes, which are all written below.
      stages->resize(K + 1);
      for (auto& s : *stages) s.resize(grid_m_.size());
    }
    const double dx = cfg_.dx();
    for_active_nodes([&](int i, int j, int k, std::size_t id) {
      Vec3 vel = grid_mv_[id] / grid_m_[id] + cfg_.dt * cfg_.gravity;
      const Vec3 pos = Vec3(i, j, k) * dx;
      for (std::size_t m = 0; m < K; ++m) {
        if (stages != nullptr) (*stages)[m][id] = vel;
        if (in_contact_band(shapes[m], pos, t[m], q[m], cfg_.softness))
          vel = collide<double>(shapes[m], pos, vel, t[m], q[m], actions.linear(step, static_cast<int>(m)),
                                actions.angular(step, static_cast<int>(m)), cfg_.softness, cfg_.friction, cfg_.friction_smoothing);
      }
      if (stages != nullptr) (*stages)[K][id] = vel;
      grid_v_[id] = apply_boundary(i, j, k, vel);
    });
  }

  void gather(const std::vector<Vec3>& x, const ParticleScratch& ps, std::vector<Vec3>& v_out,
              std::vector<Mat3>& C_out) {
    const double dx = cfg_.dx(), k4 = apic_factor();
    v_out.resize(x.size());
    C_out.resize(x.size());
    parallel_for(x.size(), cfg_.threads, [&](std::size_t p) {
      const Stencil& st = ps.stencil[p];
      // sum w gv (ijk - fx)^T dx, accumulated as sum w gv ijk^T - (sum w gv) fx^T
      Vec3 vel = Vec3::Zero();
      Mat3 B = Mat3::Zero();
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
          const double wij = st.w[0][i] * st.w[1][j];
          const std::size_t row = node(st.base[0] + i, st.base[1] + j, st.base[2]);
          Vec3 sum_k = Vec3::Zero(), sum_kk = Vec3::Zero();
          for (int k = 0; k < 3; ++k) {
            const Vec3 wg = (wij * st.w[2][k]) * grid_v_[row + k];
            sum_k += wg;
            sum_kk += k * wg;
          }
          vel += sum_k;
          B.col(0) += i * sum_k;
          B.col(1) += j * sum_k;
          B.col(2) += sum_kk;
        }
      B -= vel * st.fx.transpose();
      v_out[p] = vel;
      C_out[p] = (k4 * dx) * B;
    });
  }

  void substep(SimState& s, const ActionSequence& actions, int t) {
    const std::size_t K = s.manipulators.size();
    std::vector<Vec3> trans(K);
    std::vector<Vec4> rot(K);
    for (std::size_t m = 0; m < K; ++m) {
      trans[m] = s.manipulators[m].pose.translation;
      rot[m] = quat_coeffs(s.manipulators[m].pose.rotation);
    }
    const double mass = s.particle_volume * cfg_.material.density;
    particle_phase(s.x, s.C, s.F, s.particle_volume, scratch_);
    scatter(s.x, s.v, mass, scratch_);
    grid_phase(trans, rot, s.manipulators, actions, t, nullptr);
    gather(s.x, scratch_, s.v, s.C);
    const double lo = lower_clamp(), hi = upper_clamp();
    for (std::size_t p = 0; p < s.x.size(); ++p) {
      s.x[p] = (s.x[p] + cfg_.dt * s.v[p]).cwiseMax(lo).cwiseMin(hi);
      s.F[p] = scratch_.F_new[p];
    }
    for (std::size_t m = 0; m < K; ++m) {
      auto& pose = s.manipulators[m].pose;
      pose.translation += cfg_.dt * actions.linear(t, static_cast<int>(m));
      if (cfg_.rotation_control)
        pose.rotation =
            quat_from_coeffs(advance_rotation<double>(rot[m], actions.angular(t, static_cast<int>(m)), cfg_.dt));
    }
    for (std::size_t p = 0; p < s.x.size(); ++p) {
      const double J = s.F[p].determinant();
      if (!s.x[p].allFinite() || !s.v[p].allFinite() || !s.C[p].allFinite() || !s.F[p].allFinite() || !(J > 0.0))
        throw SimulationBlowup(s.step, "simulation blew up at step " + std::to_string(s.step));
    }
  }

  void substep_backward(const SubstepFrame& fr, const SimState& s0, const ActionSequence& actions, int t,
                        StateCotangent& bar, ActionSequence& grad) {
    const std::size_t n = fr.x.size(), K = fr.translation.size();
    const double dt = cfg_.dt, dx = cfg_.dx(), k4 = apic_factor();
    const double volume = s0.particle_volume, mass = volume * cfg_.material.density;
    const double mu = cfg_.material.mu(), la = cfg_.material.lambda(), kap = kappa();
    const int D = actions.dims();

    // Recompute the forward substep.
    ParticleScratch& ps = scratch_;
    particle_phase(fr.x, fr.C, fr.F, volume, ps);
    scatter(fr.x, fr.v, mass, ps);
    auto& stages = stages_;
    grid_phase(fr.translation, fr.rotation, s0.manipulators, actions, t, &stages);
    std::vector<Vec3> v_new;
    std::vector<Mat3> C_new;
    gather(fr.x, ps, v_new, C_new);

    // Manipulator pose update.
    for (std::size_t m = 0; m < K; ++m) {
      for (int d = 0; d < 3; ++d) grad.at(t, static_cast<int>(m), d) += dt * bar.translation[m][d];
      if (cfg_.rotation_control) {
        Vec4 q_bar = Vec4::Zero();
        Vec3 w_bar = Vec3::Zero();
        advance_rotation_vjp(fr.rotation[m], actions.angular(t, static_cast<int>(m)), dt, bar.rotation[m], q_bar,
                             w_bar);
        bar.rotation[m] = q_bar;
        for (int d = 0; d < 3; ++d) grad.at(t, static_cast<int>(m), 3 + d) += w_bar[d];
      }
    }

    // Position update, clamp, and grid-to-particle transfer.
    auto& gv_bar = gv_bar_;
    auto& mv_bar = mv_bar_;
    auto& m_bar = m_bar_;
    gv_bar.resize(grid_m_.size());
    mv_bar.resize(grid_m_.size());
    m_bar.resize(grid_m_.size());
    for_box([&](std::size_t id) {
      gv_bar[id].setZero();
      mv_bar[id].setZero();
      m_bar[id] = 0.0;
    });
    std::vector<Vec3> x_bar(n, Vec3::Zero());
    const double lo = lower_clamp(), hi = upper_clamp();
    for (std::size_t p = 0; p < n; ++p) {
      const Vec3 y = fr.x[p] + dt * v_new[p];
      Vec3 xo = bar.x[p];
      for (int d = 0; d < 3; ++d)
        if (y[d] < lo || y[d] > hi) xo[d] = 0.0;
      const Vec3 vb = bar.v[p] + dt * xo;
      // h = vb + k4 Cb (node - x), the cotangent reaching each node's velocity.
      const Mat3 Cdx = (k4 * dx) * bar.C[p];
      const Vec3 h0 = vb - Cdx * ps.stencil[p].fx;
      Vec3 xb = xo, S = Vec3::Zero();
      const Stencil& st = ps.stencil[p];
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
          const Vec3 hij = h0 + Cdx.col(0) * i + Cdx.col(1) * j;
          const std::size_t row = node(st.base[0] + i, st.base[1] + j, st.base[2]);
          for (int k = 0; k < 3; ++k) {
            const double w = st.weight(i, j, k);
            const Vec3 h = hij + Cdx.col(2) * k;
            const Vec3& gv = grid_v_[row + k];
            gv_bar[row + k] += w * h;
            xb += st.weight_gradient(i, j, k) * gv.dot(h);
            S += w * gv;
          }
        }
      xb -= k4 * (bar.C[p].transpose() * S);
      x_bar[p] = xb;
    }

    // Grid: walls, manipulators in reverse order, normalization.
    std::vector<CollideGrad> pose_bar(K);
    for (int i = lo_[0]; i <= hi_[0]; ++i)
      for (int j = lo_[1]; j <= hi_[1]; ++j)
        for (int k = lo_[2]; k <= hi_[2]; ++k) {
          const std::size_t id = node(i, j, k);
          if (!(grid_m_[id] > 0.0)) continue;
          Vec3 g = gv_bar[id];
          for (int d = 0; d < 3; ++d)
            if (boundary_blocks(i, j, k, stages[K][id], d)) g[d] = 0.0;
          const Vec3 pos = Vec3(i, j, k) * dx;
          for (std::size_t m = K; m-- > 0;) {
            if (!in_contact_band(s0.manipulators[m], pos, fr.translation[m], fr.rotation[m], cfg_.softness)) continue;
            CollideGrad cg;
            collide_vjp(s0.manipulators[m], pos, stages[m][id], fr.translation[m], fr.rotation[m],
                        actions.linear(t, static_cast<int>(m)), actions.angular(t, static_cast<int>(m)), cfg_.softness,
                        cfg_.friction, cfg_.friction_smoothing, g, cg);
            g = cg.v;
            pose_bar[m].t += cg.t;
            pose_bar[m].q += cg.q;
            pose_bar[m].u += cg.u;
            pose_bar[m].w += cg.w;
          }
          const double gm = grid_m_[id];
          mv_bar[id] = g / gm;
          m_bar[id] = -g.dot(grid_mv_[id]) / (gm * gm);
        }
    for (std::size_t m = 0; m < K; ++m) {
      bar.translation[m] += pose_bar[m].t;
      bar.rotation[m] += pose_bar[m].q;
      for (int d = 0; d < 3; ++d) grad.at(t, static_cast<int>(m), d) += pose_bar[m].u[d];
      if (D == 6)
        for (int d = 0; d < 3; ++d) grad.at(t, static_cast<int>(m), 3 + d) += pose_bar[m].w[d];
    }

    // Particle-to-grid transfer and the constitutive chain.
    parallel_for(n, cfg_.threads, [&](std::size_t p) {
      const Stencil& st = ps.stencil[p];
      // Momentum sent to a node: mom + A (node - x), as in scatter.
      const Mat3 Adx = ps.A[p] * dx;
      const Vec3 c0 = mass * fr.v[p] - Adx * st.fx;
      Vec3 vb = Vec3::Zero(), wmv = Vec3::Zero();
      Mat3 Ab = Mat3::Zero();
      Vec3 xb = x_bar[p];
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
          const Vec3 cij = c0 + Adx.col(0) * i + Adx.col(1) * j;
          const std::size_t row = node(st.base[0] + i, st.base[1] + j, st.base[2]);
          Vec3 sum_k = Vec3::Zero(), sum_kk = Vec3::Zero();
          for (int k = 0; k < 3; ++k) {
            const double w = st.weight(i, j, k);
            const Vec3& mb = mv_bar[row + k];
            sum_k += w * mb;
            sum_kk += (w * k) * mb;
            xb += st.weight_gradient(i, j, k) * (mb.dot(cij + Adx.col(2) * k) + m_bar[row + k] * mass);
          }
          wmv += sum_k;
          Ab.col(0) += i * sum_k;
          Ab.col(1) += j * sum_k;
          Ab.col(2) += sum_kk;
        }
      Ab = (Ab - wmv * st.fx.transpose()) * dx;
      vb = mass * wmv;
      xb -= ps.A[p].transpose() * wmv;
      const Mat3 tau_bar = -dt * volume * k4 * Ab;
      Mat3 Cb = mass * Ab;
      const Mat3 Fnew_bar = bar.F[p] + kirchhoff_stress_vjp(ps.F_new[p], ps.R[p], mu, la, tau_bar);
      const Mat3 Ftmp_bar = plastic_projection_vjp(ps.F_tmp[p], kap, cfg_.plastic_smoothing * kap, Fnew_bar);
      Cb += dt * Ftmp_bar * fr.F[p].transpose();
      bar.F[p] = (Mat3::Identity() + dt * fr.C[p]).transpose() * Ftmp_bar;
      bar.x[p] = xb;
      bar.v[p] = vb;
      bar.C[p] = Cb;
    });
  }

  SimConfig cfg_;
  int nodes_ = 0;
  std::vector<double> grid_m_;
  std::vector<Vec3> grid_mv_;
  std::vector<Vec3> grid_v_;
  std::array<int, 3> lo_{}, hi_{};
  ParticleScratch scratch_;
  std::vector<std::vector<Vec3>> stages_;
  std::vector<Vec3> gv_bar_, mv_bar_;
  std::vector<double> m_bar_;
};

/// One action step applied to a copy of the state.
inline SimState step(const SimState& s, const ActionSequence& actions, int t, const SimConfig& config) {
  Simulator sim(config);
  SimState out = s;
  sim.step(out, actions, t);
  return out;
}

inline SimState rollout(const SimState& s0, const ActionSequence& actions, const SimConfig& config,
                        Trajectory* record = nullptr) {
  Simulator sim(config);
  return sim.rollout(s0, actions, record);
}

}  // namespace cpdeform::sim
