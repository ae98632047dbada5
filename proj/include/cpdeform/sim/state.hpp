#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "cpdeform/errors.hpp"
#include "cpdeform/geometry.hpp"
#include "cpdeform/particle_cloud.hpp"

namespace cpdeform::sim {

/// Particle and manipulator state. Manipulator poses live in shape.pose.
struct SimState {
  std::vector<Vec3> x;
  std::vector<Vec3> v;
  std::vector<Mat3> C;  // APIC affine velocity
  std::vector<Mat3> F;  // elastic deformation gradient
  double particle_volume = 0.0;
  std::vector<ShapePrimitive> manipulators;
  int step = 0;

  std::size_t size() const { return x.size(); }

  /// Rest state: zero velocity, undeformed. The cloud's points become the
  /// particle positions; `volume` is the body's total volume.
  static SimState at_rest(const ParticleCloud& cloud, double volume, std::vector<ShapePrimitive> manipulators = {}) {
    cloud.validate();
    if (!(volume > 0.0)) throw InvalidArgument("body volume must be positive");
    SimState s;
    s.x = cloud.points;
    s.v.assign(cloud.size(), Vec3::Zero());
    s.C.assign(cloud.size(), Mat3::Zero());
    s.F.assign(cloud.size(), Mat3::Identity());
    s.particle_volume = volume / static_cast<double>(cloud.size());
    s.manipulators = std::move(manipulators);
    return s;
  }

  ParticleCloud cloud() const { return ParticleCloud(x); }

  /// Drops velocities and affine terms; keeps shape and strain.
  void settle() {
    for (auto& vi : v) vi.setZero();
    for (auto& c : C) c.setZero();
  }
};

/// Per-step, per-manipulator commands: linear velocity, then angular velocity
/// when rotation control is on.
class ActionSequence {
 public:
  ActionSequence() = default;
  ActionSequence(int steps, int manipulators, int dims)
      : steps_(steps), manipulators_(manipulators), dims_(dims),
        data_(static_cast<std::size_t>(steps) * manipulators * dims, 0.0) {
    if (steps < 0 || manipulators < 0 || (dims != 3 && dims != 6))
      throw InvalidArgument("bad action sequence shape");
  }

  int steps() const { return steps_; }
  int manipulators() const { return manipulators_; }
  int dims() const { return dims_; }
  std::size_t size() const { return data_.size(); }

  double& at(int t, int k, int d) { return data_[index(t, k, d)]; }
  double at(int t, int k, int d) const { return data_[index(t, k, d)]; }
  Vec3 linear(int t, int k) const { return {at(t, k, 0), at(t, k, 1), at(t, k, 2)}; }
  Vec3 angular(int t, int k) const {
    return dims_ == 6 ? Vec3(at(t, k, 3), at(t, k, 4), at(t, k, 5)) : Vec3::Zero();
  }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  void clamp(double bound) {
    for (auto& a : data_) a = std::clamp(a, -bound, bound);
  }
  void validate(double bound) const {
    for (double a : data_)
      if (!std::isfinite(a) || std::abs(a) > bound) throw InvalidArgument("action outside bounds");
  }

  /// Same commands over a longer or shorter horizon; new steps are zero.
  ActionSequence resized(int steps) const {
    ActionSequence out(steps, manipulators_, dims_);
    for (int t = 0; t < std::min(steps, steps_); ++t)
      for (int k = 0; k < manipulators_; ++k)
        for (int d = 0; d < dims_; ++d) out.at(t, k, d) = at(t, k, d);
    return out;
  }

 private:
  std::size_t index(int t, int k, int d) const {
    return (static_cast<std::size_t>(t) * manipulators_ + k) * dims_ + d;
  }
  int steps_ = 0;
  int manipulators_ = 0;
  int dims_ = 3;
  std::vector<double> data_;
};

}  // namespace cpdeform::sim
