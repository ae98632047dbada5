#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "cpdeform/errors.hpp"

namespace cpdeform {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Quat = Eigen::Quaterniond;

template <class T>
using Vec3T = Eigen::Matrix<T, 3, 1>;

/// Rigid transform: world = rotation * local + translation.
struct Pose {
  Vec3 translation = Vec3::Zero();
  Quat rotation = Quat::Identity();

  Vec3 to_world(const Vec3& local) const { return rotation * local + translation; }
  Vec3 to_local(const Vec3& world) const { return rotation.conjugate() * (world - translation); }
  Pose compose(const Pose& child) const {
    return {to_world(child.translation), (rotation * child.rotation).normalized()};
  }
};

enum class ShapeKind { box, sphere, capsule, rounded_box, composite_union };

inline std::string_view to_string(ShapeKind kind) {
  switch (kind) {
    case ShapeKind::box: return "box";
    case ShapeKind::sphere: return "sphere";
    case ShapeKind::capsule: return "capsule";
    case ShapeKind::rounded_box: return "rounded-box";
    case ShapeKind::composite_union: return "composite-union";
  }
  return "unknown";
}

inline ShapeKind shape_kind_from_string(std::string_view name) {
  if (name == "box") return ShapeKind::box;
  if (name == "sphere") return ShapeKind::sphere;
  if (name == "capsule") return ShapeKind::capsule;
  if (name == "rounded-box") return ShapeKind::rounded_box;
  if (name == "composite-union") return ShapeKind::composite_union;
  throw InvalidArgument("unknown shape kind '" + std::string(name) + "'");
}

/// A solid described by a signed distance function.
///
/// Size parameters by kind:
///  - box: half_extents
///  - sphere: radius
///  - capsule: radius, half_height (segment along local y)
///  - rounded-box: half_extents (outer) and radius (edge rounding, < min half extent)
///  - composite-union: children, each posed relative to this shape's frame
struct ShapePrimitive {
  ShapeKind kind = ShapeKind::sphere;
  Vec3 half_extents = Vec3::Zero();
  double radius = 0.0;
  double half_height = 0.0;
  Pose pose;
  std::vector<ShapePrimitive> children;

  static ShapePrimitive box(const Vec3& half_extents, const Pose& pose = {}) {
    ShapePrimitive s;
    s.kind = ShapeKind::box;
    s.half_extents = half_extents;
    s.pose = pose;
    return s;
  }
  static ShapePrimitive sphere(double radius, const Pose& pose = {}) {
    ShapePrimitive s;
    s.kind = ShapeKind::sphere;
    s.radius = radius;
    s.pose = pose;
    return s;
  }
  static ShapePrimitive capsule(double radius, double half_height, const Pose& pose = {}) {
    ShapePrimitive s;
    s.kind = ShapeKind::capsule;
    s.radius = radius;
    s.half_height = half_height;
    s.pose = pose;
    return s;
  }
  static ShapePrimitive rounded_box(const Vec3& half_extents, double radius, const Pose& pose = {}) {
    ShapePrimitive s;
    s.kind = ShapeKind::rounded_box;
    s.half_extents = half_extents;
    s.radius = radius;
    s.pose = pose;
    return s;
  }
  static ShapePrimitive composite(std::vector<ShapePrimitive> children, const Pose& pose = {}) {
    ShapePrimitive s;
    s.kind = ShapeKind::composite_union;
    s.children = std::move(children);
    s.pose = pose;
    return s;
  }

  void validate() const {
    if (std::abs(pose.rotation.norm() - 1.0) > 1e-9)
      throw InvalidArgument("shape rotation is not a unit quaternion");
    if (!pose.translation.allFinite()) throw InvalidArgument("shape translation is not finite");
    switch (kind) {
      case ShapeKind::box:
        if ((half_extents.array() <= 0.0).any()) throw InvalidArgument("box half extents must be positive");
        break;
      case ShapeKind::sphere:
        if (!(radius > 0.0)) throw InvalidArgument("sphere radius must be positive");
        break;
      case ShapeKind::capsule:
        if (!(radius > 0.0) || !(half_height > 0.0))
          throw InvalidArgument("capsule radius and half height must be positive");
        break;
      case ShapeKind::rounded_box:
        if ((half_extents.array() <= 0.0).any() || !(radius > 0.0))
          throw InvalidArgument("rounded-box sizes must be positive");
        if (radius >= half_extents.minCoeff())
          throw InvalidArgument("rounded-box radius must be smaller than every half extent");
        break;
      case ShapeKind::composite_union:
        if (children.empty()) throw InvalidArgument("composite-union needs at least one child");
        for (const auto& c : children) c.validate();
        break;
    }
  }

  /// Smallest and largest characteristic length, used for placement lattices.
  double smallest_dimension() const {
    switch (kind) {
      case ShapeKind::box:
      case ShapeKind::rounded_box: return 2.0 * half_extents.minCoeff();
      case ShapeKind::sphere:
      case ShapeKind::capsule: return 2.0 * radius;
      case ShapeKind::composite_union: {
        double m = children.front().smallest_dimension();
        for (const auto& c : children) m = std::min(m, c.smallest_dimension());
        return m;
      }
    }
    return 0.0;
  }
  double largest_dimension() const {
    switch (kind) {
      case ShapeKind::box:
      case ShapeKind::rounded_box: return 2.0 * half_extents.maxCoeff();
      case ShapeKind::sphere: return 2.0 * radius;
      case ShapeKind::capsule: return 2.0 * (radius + half_height);
      case ShapeKind::composite_union: {
        double m = 0.0;
        for (const auto& c : children) m = std::max(m, c.largest_dimension() + 2.0 * c.pose.translation.norm());
        return m;
      }
    }
    return 0.0;
  }
};

namespace detail {

template <class T>
T tmax(const T& a, const T& b) {
  return a < b ? b : a;
}
template <class T>
T tmin(const T& a, const T& b) {
  return b < a ? b : a;
}

// Rotates v by the unit quaternion (w, u).
template <class T>
Vec3T<T> quat_rotate(const T& w, const Vec3T<T>& u, const Vec3T<T>& v) {
  const Vec3T<T> t = T(2) * u.cross(v);
  return v + w * t + u.cross(t);
}

}  // namespace detail

/// Rotates v by q (components w, x, y, z) without normalizing q.
template <class T>
Vec3T<T> rotate(const Eigen::Matrix<T, 4, 1>& q, const Vec3T<T>& v) {
  return detail::quat_rotate<T>(q[0], Vec3T<T>(q[1], q[2], q[3]), v);
}
template <class T>
Vec3T<T> rotate_inverse(const Eigen::Matrix<T, 4, 1>& q, const Vec3T<T>& v) {
  return detail::quat_rotate<T>(q[0], Vec3T<T>(-q[1], -q[2], -q[3]), v);
}

inline Eigen::Vector4d quat_coeffs(const Quat& q) { return {q.w(), q.x(), q.y(), q.z()}; }
inline Quat quat_from_coeffs(const Eigen::Vector4d& c) { return Quat(c[0], c[1], c[2], c[3]); }

/// Signed distance of a point given in the shape's own frame (its pose is not applied).
template <class T>
T local_sdf(const ShapePrimitive& s, const Vec3T<T>& p) {
  using std::abs;
  using std::sqrt;
  using detail::tmax;
  using detail::tmin;
  switch (s.kind) {
    case ShapeKind::sphere: return p.norm() - T(s.radius);
    case ShapeKind::capsule: {
      const T y = tmin(tmax(p[1], T(-s.half_height)), T(s.half_height));
      const Vec3T<T> q(p[0], p[1] - y, p[2]);
      return q.norm() - T(s.radius);
    }
    case ShapeKind::box:
    case ShapeKind::rounded_box: {
      const double r = s.kind == ShapeKind::rounded_box ? s.radius : 0.0;
      Vec3T<T> q;
      for (int d = 0; d < 3; ++d) q[d] = abs(p[d]) - T(s.half_extents[d] - r);
      const Vec3T<T> outside(tmax(q[0], T(0)), tmax(q[1], T(0)), tmax(q[2], T(0)));
      const T inside = tmin(tmax(q[0], tmax(q[1], q[2])), T(0));
      // The norm of a zero vector has no derivative; keep Jet values finite.
      const T out_norm = (q[0] > T(0) || q[1] > T(0) || q[2] > T(0)) ? outside.norm() : T(0);
      return out_norm + inside - T(r);
    }
    case ShapeKind::composite_union: {
      T best{};
      bool first = true;
      for (const auto& c : s.children) {
        const Eigen::Matrix<T, 4, 1> q = quat_coeffs(c.pose.rotation).cast<T>();
        const Vec3T<T> local = rotate_inverse<T>(q, Vec3T<T>(p - c.pose.translation.cast<T>()));
        const T d = local_sdf<T>(c, local);
        if (first || d < best) best = d;
        first = false;
      }
      return best;
    }
  }
  return T(0);
}

/// Outward unit gradient of local_sdf (analytic; arbitrary unit vector at
/// the medial points where it is undefined).
template <class T>
Vec3T<T> local_sdf_gradient(const ShapePrimitive& s, const Vec3T<T>& p) {
  using std::abs;
  using detail::tmax;
  using detail::tmin;
  const Vec3T<T> fallback(T(0), T(1), T(0));
  switch (s.kind) {
    case ShapeKind::sphere: {
      const T n = p.norm();
      return n > T(1e-12) ? Vec3T<T>(p / n) : fallback;
    }
    case ShapeKind::capsule: {
      const T y = tmin(tmax(p[1], T(-s.half_height)), T(s.half_height));
      const Vec3T<T> q(p[0], p[1] - y, p[2]);
      const T n = q.norm();
      return n > T(1e-12) ? Vec3T<T>(q / n) : fallback;
    }
    case ShapeKind::box:
    case ShapeKind::rounded_box: {
      const double r = s.kind == ShapeKind::rounded_box ? s.radius : 0.0;
      Vec3T<T> q, sign;
      for (int d = 0; d < 3; ++d) {
        q[d] = abs(p[d]) - T(s.half_extents[d] - r);
        sign[d] = p[d] < T(0) ? T(-1) : T(1);
      }
      if (q[0] > T(0) || q[1] > T(0) || q[2] > T(0)) {
        const Vec3T<T> outside(tmax(q[0], T(0)), tmax(q[1], T(0)), tmax(q[2], T(0)));
        const Vec3T<T> g = outside.cwiseProduct(sign);
        return Vec3T<T>(g / outside.norm());
      }
      int axis = 0;
      if (q[1] > q[axis]) axis = 1;
      if (q[2] > q[axis]) axis = 2;
      Vec3T<T> g = Vec3T<T>::Zero();
      g[axis] = sign[axis];
      return g;
    }
    case ShapeKind::composite_union: {
      const ShapePrimitive* best = nullptr;
      T best_d{};
      Vec3T<T> best_local;
      Eigen::Matrix<T, 4, 1> best_q;
      for (const auto& c : s.children) {
        const Eigen::Matrix<T, 4, 1> q = quat_coeffs(c.pose.rotation).cast<T>();
        const Vec3T<T> local = rotate_inverse<T>(q, Vec3T<T>(p - c.pose.translation.cast<T>()));
        const T d = local_sdf<T>(c, local);
        if (best == nullptr || d < best_d) {
          best = &c;
          best_d = d;
          best_local = local;
          best_q = q;
        }
      }
      return rotate<T>(best_q, local_sdf_gradient<T>(*best, best_local));
    }
  }
  return fallback;
}

/// Signed distance of a world-space point: negative inside, positive outside.
inline double sdf(const ShapePrimitive& s, const Vec3& world) {
  return local_sdf<double>(s, s.pose.to_local(world));
}

inline Vec3 sdf_gradient(const ShapePrimitive& s, const Vec3& world) {
  return s.pose.rotation * local_sdf_gradient<double>(s, s.pose.to_local(world));
}

/// Support function in the shape's own frame: max over the solid of p . dir.
inline double local_support(const ShapePrimitive& s, const Vec3& dir) {
  switch (s.kind) {
    case ShapeKind::sphere: return s.radius * dir.norm();
    case ShapeKind::capsule: return s.radius * dir.norm() + s.half_height * std::abs(dir[1]);
    case ShapeKind::box: return s.half_extents.dot(dir.cwiseAbs());
    case ShapeKind::rounded_box:
      return (s.half_extents.array() - s.radius).matrix().dot(dir.cwiseAbs()) + s.radius * dir.norm();
    case ShapeKind::composite_union: {
      double best = -std::numeric_limits<double>::infinity();
      for (const auto& c : s.children)
        best = std::max(best, c.pose.translation.dot(dir) + local_support(c, c.pose.rotation.conjugate() * dir));
      return best;
    }
  }
  return 0.0;
}

/// World-space support function max_{p in shape} p . dir.
inline double support(const ShapePrimitive& s, const Vec3& dir) {
  return s.pose.translation.dot(dir) + local_support(s, s.pose.rotation.conjugate() * dir);
}

struct Aabb {
  Vec3 lower;
  Vec3 upper;
  Vec3 extent() const { return upper - lower; }
  bool contains(const Vec3& p) const {
    return (p.array() >= lower.array()).all() && (p.array() <= upper.array()).all();
  }
};

inline Aabb bounding_box(const ShapePrimitive& s) {
  Aabb box;
  for (int d = 0; d < 3; ++d) {
    const Vec3 e = Vec3::Unit(d);
    box.upper[d] = support(s, e);
    box.lower[d] = -support(s, -e);
  }
  return box;
}

/// Volume by midpoint counting on a resolution^3 lattice over the bounding box.
inline double estimate_volume(const ShapePrimitive& s, int resolution = 64) {
  const Aabb box = bounding_box(s);
  const Vec3 step = box.extent() / resolution;
  std::size_t inside = 0;
  for (int i = 0; i < resolution; ++i)
    for (int j = 0; j < resolution; ++j)
      for (int k = 0; k < resolution; ++k) {
        const Vec3 p = box.lower + Vec3((i + 0.5) * step[0], (j + 0.5) * step[1], (k + 0.5) * step[2]);
        if (sdf(s, p) < 0.0) ++inside;
      }
  return static_cast<double>(inside) * step.prod();
}

}  // namespace cpdeform
