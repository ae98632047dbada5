#pragma once

// Per-particle and per-node building blocks of the simulator, each paired
// with its vector-Jacobian product.

#include <array>
#include <cmath>

#include <Eigen/Dense>
#include <ceres/jet.h>

#include "cpdeform/geometry.hpp"

namespace cpdeform::sim {

using Vec4 = Eigen::Vector4d;

// ---------------------------------------------------------------------------
// Quadratic B-spline stencil

struct Stencil {
  std::array<int, 3> base{};
  std::array<std::array<double, 3>, 3> w{};   // [axis][offset]
  std::array<std::array<double, 3>, 3> dw{};  // d w / d x in world units
  Vec3 fx = Vec3::Zero();

  double weight(int i, int j, int k) const { return w[0][i] * w[1][j] * w[2][k]; }
  Vec3 weight_gradient(int i, int j, int k) const {
    return {dw[0][i] * w[1][j] * w[2][k], w[0][i] * dw[1][j] * w[2][k], w[0][i] * w[1][j] * dw[2][k]};
  }
  /// Node position minus particle position.
  Vec3 offset(int i, int j, int k, double dx) const { return (Vec3(i, j, k) - fx) * dx; }
};

inline Stencil make_stencil(const Vec3& x, double inv_dx) {
  Stencil s;
  for (int d = 0; d < 3; ++d) {
    const double p = x[d] * inv_dx;
    s.base[d] = static_cast<int>(std::floor(p - 0.5));
    const double f = p - s.base[d];
    s.fx[d] = f;
    s.w[d] = {0.5 * (1.5 - f) * (1.5 - f), 0.75 - (f - 1.0) * (f - 1.0), 0.5 * (f - 0.5) * (f - 0.5)};
    s.dw[d] = {-(1.5 - f) * inv_dx, -2.0 * (f - 1.0) * inv_dx, (f - 0.5) * inv_dx};
  }
  return s;
}

// ---------------------------------------------------------------------------
// Polar decomposition and fixed-corotated stress

inline Mat3 skew(const Vec3& y) {
  Mat3 m;
  m << 0.0, -y.z(), y.y(), y.z(), 0.0, -y.x(), -y.y(), y.x(), 0.0;
  return m;
}

/// Rotation factor of F = R S by Newton iteration R <- (R + R^-T) / 2.
/// Requires det F > 0.
inline Mat3 polar_rotation(const Mat3& F) {
  Mat3 R = F;
  for (int it = 0; it < 80; ++it) {
    const Mat3 next = 0.5 * (R + R.inverse().transpose());
    const double change = (next - R).cwiseAbs().maxCoeff();
    R = next;
    if (change < 1e-15) break;
  }
  return R;
}

/// Pulls a cotangent of R back to F, with R the polar rotation of F.
inline Mat3 polar_vjp(const Mat3& F, const Mat3& R, const Mat3& R_bar) {
  Mat3 S = R.transpose() * F;
  S = (0.5 * (S + S.transpose())).eval();
  const Mat3 M = R.transpose() * R_bar;
  const Vec3 m(M(2, 1) - M(1, 2), M(0, 2) - M(2, 0), M(1, 0) - M(0, 1));
  const Mat3 A = S.trace() * Mat3::Identity() - S;
  const Vec3 y = A.inverse() * m;
  return R * skew(y);
}

/// Kirchhoff stress 2 mu (F - R) F^T + lambda J (J - 1) I.
inline Mat3 kirchhoff_stress(const Mat3& F, const Mat3& R, double mu, double lambda) {
  const double J = F.determinant();
  return 2.0 * mu * (F - R) * F.transpose() + lambda * J * (J - 1.0) * Mat3::Identity();
}

inline Mat3 kirchhoff_stress_vjp(const Mat3& F, const Mat3& R, double mu, double lambda, const Mat3& tau_bar) {
  const double J = F.determinant();
  Mat3 F_bar = 2.0 * mu * (tau_bar * F + tau_bar.transpose() * (F - R));
  F_bar += polar_vjp(F, R, -2.0 * mu * tau_bar * F);
  F_bar += lambda * (2.0 * J - 1.0) * tau_bar.trace() * J * F.inverse().transpose();
  return F_bar;
}

// ---------------------------------------------------------------------------
// von Mises return mapping on the Hencky strain
//
// With b = F F^T and H = log(b) / 2, a yielding F is mapped to
// exp(-c dev H) F where c = 1 - kappa / |dev H| and kappa = yield / (2 mu).

namespace detail {

// (log a - log b) / (a - b) for a, b > 0.
inline double log_divided_difference(double a, double b) {
  const double r = (a - b) / b;
  if (std::abs(r) < 1e-8) return (1.0 - 0.5 * r) / b;
  return std::log1p(r) / (a - b);
}
// (exp a - exp b) / (a - b).
inline double exp_divided_difference(double a, double b) {
  const double h = a - b;
  if (std::abs(h) < 1e-10) return std::exp(b) * (1.0 + 0.5 * h);
  return std::exp(b) * std::expm1(h) / h;
}

}  // namespace detail

inline bool yields(const Mat3& F, double kappa) {
  const Mat3 b = F * F.transpose();
  Eigen::SelfAdjointEigenSolver<Mat3> es;
  es.computeDirect(b, Eigen::EigenvaluesOnly);
  const Vec3 h = 0.5 * es.eigenvalues().array().log().matrix();
  const Vec3 dev = h.array() - h.mean();
  return dev.norm() > kappa;
}

/// Plastic flow e -> s(e) of the excess e = |dev| - kappa: zero below the
/// yield surface, linear well above it, with a quadratic blend of width
/// `delta` so the return map is C^1.
inline double plastic_excess(double e, double delta) {
  if (e <= 0.0) return 0.0;
  if (e >= delta) return e - 0.5 * delta;
  return 0.5 * e * e / delta;
}
inline double plastic_excess_slope(double e, double delta) {
  if (e <= 0.0) return 0.0;
  return e >= delta ? 1.0 : e / delta;
}

/// Von Mises return on the Hencky strain: the deviatoric log stretch is
/// reduced by s(|dev| - kappa).
inline Mat3 plastic_projection(const Mat3& F, double kappa, double delta) {
  if (!yields(F, kappa)) return F;
  const Eigen::SelfAdjointEigenSolver<Mat3> es(F * F.transpose());
  const Vec3 h = 0.5 * es.eigenvalues().array().log().matrix();
  const Vec3 dev = h.array() - h.mean();
  const double norm = dev.norm();
  if (norm <= kappa) return F;
  const double c = plastic_excess(norm - kappa, delta) / norm;
  const Mat3& Q = es.eigenvectors();
  const Vec3 z = -c * dev;
  return Q * z.array().exp().matrix().asDiagonal() * Q.transpose() * F;
}

/// Cotangent of the projection input given the cotangent of its output.
inline Mat3 plastic_projection_vjp(const Mat3& F, double kappa, double delta, const Mat3& out_bar) {
  if (!yields(F, kappa)) return out_bar;
  const Eigen::SelfAdjointEigenSolver<Mat3> es(F * F.transpose());
  const Vec3 lam = es.eigenvalues();
  const Vec3 h = 0.5 * lam.array().log().matrix();
  const Vec3 dev = h.array() - h.mean();
  const double norm = dev.norm();
  if (norm <= kappa) return out_bar;
  const double excess = plastic_excess(norm - kappa, delta);
  const double c = excess / norm;
  const double dc_dnorm = plastic_excess_slope(norm - kappa, delta) / norm - excess / (norm * norm);
  const Mat3& Q = es.eigenvectors();
  const Vec3 z = -c * dev;
  const Mat3 G = Q * z.array().exp().matrix().asDiagonal() * Q.transpose();

  Mat3 F_bar = G * out_bar;
  Mat3 G_bar = out_bar * F.transpose();
  G_bar = (0.5 * (G_bar + G_bar.transpose())).eval();

  // Everything below is expressed in the eigenbasis Q of b.
  const Mat3 Gt = Q.transpose() * G_bar * Q;
  Mat3 Zt;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) Zt(i, j) = Gt(i, j) * detail::exp_divided_difference(z[i], z[j]);
  double c_bar = 0.0;
  for (int i = 0; i < 3; ++i) c_bar -= Zt(i, i) * dev[i];
  Mat3 Dt = -c * Zt;
  for (int i = 0; i < 3; ++i) Dt(i, i) += c_bar * dc_dnorm * dev[i] / norm;
  const double trace = Dt.trace() / 3.0;
  for (int i = 0; i < 3; ++i) Dt(i, i) -= trace;
  Mat3 bt;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) bt(i, j) = 0.5 * Dt(i, j) * detail::log_divided_difference(lam[i], lam[j]);
  const Mat3 b_bar = Q * bt * Q.transpose();
  F_bar += (b_bar + b_bar.transpose()) * F;
  return F_bar;
}

// ---------------------------------------------------------------------------
// Rigid manipulator contact on grid nodes

/// Contact influence below this is treated as no contact.
inline constexpr double kInfluenceCutoff = 1e-10;

/// Grid velocity after contact with a kinematic manipulator at pose (t, q)
/// moving with linear velocity u and angular velocity w. Within the
/// influence band the velocity relative to the tool loses its approaching
/// normal part and its tangential part is scaled by the Coulomb slip ratio
/// max(0, 1 - friction |vn| / |vt|); the stick/slip switch is blended over a
/// band of width `smoothing` in that ratio so that it is C^1.
template <class T>
Vec3T<T> collide(const ShapePrimitive& shape, const Vec3& node, const Vec3T<T>& v, const Vec3T<T>& t,
                 const Eigen::Matrix<T, 4, 1>& q, const Vec3T<T>& u, const Vec3T<T>& w, double softness,
                 double friction, double smoothing) {
  using std::exp;
  const Vec3T<T> arm = node.cast<T>() - t;
  const Vec3T<T> local = rotate_inverse<T>(q, arm);
  const T dist = local_sdf<T>(shape, local);
  const T influence = cpdeform::detail::tmin(exp(-dist * T(softness)), T(1));
  const Vec3T<T> normal = rotate<T>(q, local_sdf_gradient<T>(shape, local));
  const Vec3T<T> tool_v = u + w.cross(arm);
  const Vec3T<T> rel = v - tool_v;
  const T vn = rel.dot(normal);
  if (!(vn < T(0))) return v;
  Vec3T<T> vt = rel - vn * normal;
  const T vt_norm = vt.norm();
  if (vt_norm > T(1e-30)) {
    const T ratio = T(1) + T(friction) * vn / vt_norm;
    const T half(0.5 * smoothing);
    if (ratio <= -half) {
      vt *= T(0);
    } else if (ratio < half) {
      vt *= (ratio + half) * (ratio + half) / T(2.0 * smoothing);
    } else {
      vt *= ratio;
    }
  }
  return tool_v + rel * (T(1) - influence) + vt * influence;
}

inline bool in_contact_band(const ShapePrimitive& shape, const Vec3& node, const Vec3& t, const Vec4& q,
                            double softness) {
  const double dist = local_sdf<double>(shape, rotate_inverse<double>(q, Vec3(node - t)));
  return std::exp(-dist * softness) > kInfluenceCutoff;
}

struct CollideGrad {
  Vec3 v = Vec3::Zero();
  Vec3 t = Vec3::Zero();
  Vec4 q = Vec4::Zero();
  Vec3 u = Vec3::Zero();
  Vec3 w = Vec3::Zero();
};

/// Accumulates the pullback of out_bar through collide() into `grad`.
inline void collide_vjp(const ShapePrimitive& shape, const Vec3& node, const Vec3& v, const Vec3& t, const Vec4& q,
                        const Vec3& u, const Vec3& w, double softness, double friction, double smoothing,
                        const Vec3& out_bar, CollideGrad& grad) {
  using J = ceres::Jet<double, 16>;
  Vec3T<J> vj, tj, uj, wj;
  Eigen::Matrix<J, 4, 1> qj;
  for (int d = 0; d < 3; ++d) {
    vj[d] = J(v[d], d);
    tj[d] = J(t[d], 3 + d);
    uj[d] = J(u[d], 10 + d);
    wj[d] = J(w[d], 13 + d);
  }
  for (int d = 0; d < 4; ++d) qj[d] = J(q[d], 6 + d);
  const Vec3T<J> out = collide<J>(shape, node, vj, tj, qj, uj, wj, softness, friction, smoothing);
  Eigen::Matrix<double, 16, 1> g = Eigen::Matrix<double, 16, 1>::Zero();
  for (int c = 0; c < 3; ++c) g += out_bar[c] * out[c].v;
  grad.v += g.segment<3>(0);
  grad.t += g.segment<3>(3);
  grad.q += g.segment<4>(6);
  grad.u += g.segment<3>(10);
  grad.w += g.segment<3>(13);
}

// ---------------------------------------------------------------------------
// Manipulator orientation update: q' = normalize(exp(w dt / 2) * q)

template <class T>
Eigen::Matrix<T, 4, 1> advance_rotation(const Eigen::Matrix<T, 4, 1>& q, const Vec3T<T>& w, double dt) {
  using std::cos;
  using std::sin;
  using std::sqrt;
  const Vec3T<T> half = w * T(0.5 * dt);
  const T a2 = half.squaredNorm();
  T c, s;
  if (a2 < T(1e-20)) {
    c = T(1) - a2 / T(2);
    s = T(1) - a2 / T(6);
  } else {
    const T a = sqrt(a2);
    c = cos(a);
    s = sin(a) / a;
  }
  const Vec3T<T> e = half * s;
  const Vec3T<T> qv(q[1], q[2], q[3]);
  const T w0 = c * q[0] - e.dot(qv);
  const Vec3T<T> wv = c * qv + q[0] * e + e.cross(qv);
  Eigen::Matrix<T, 4, 1> out(w0, wv[0], wv[1], wv[2]);
  return out / out.norm();
}

/// Pulls back q'_bar to (q_bar, w_bar), accumulating.
inline void advance_rotation_vjp(const Vec4& q, const Vec3& w, double dt, const Vec4& out_bar, Vec4& q_bar,
                                 Vec3& w_bar) {
  using J = ceres::Jet<double, 7>;
  Eigen::Matrix<J, 4, 1> qj;
  Vec3T<J> wj;
  for (int d = 0; d < 4; ++d) qj[d] = J(q[d], d);
  for (int d = 0; d < 3; ++d) wj[d] = J(w[d], 4 + d);
  const auto out = advance_rotation<J>(qj, wj, dt);
  Eigen::Matrix<double, 7, 1> g = Eigen::Matrix<double, 7, 1>::Zero();
  for (int c = 0; c < 4; ++c) g += out_bar[c] * out[c].v;
  q_bar += g.segment<4>(0);
  w_bar += g.segment<3>(4);
}

}  // namespace cpdeform::sim
