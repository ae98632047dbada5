#pragma once

#include <cmath>
#include <string>

#include "cpdeform/errors.hpp"
#include "cpdeform/geometry.hpp"

namespace cpdeform::sim {

struct MaterialParams {
  double youngs_modulus = 10.0;
  double poisson_ratio = 0.3;
  double yield_stress = 0.2;  // von Mises, on the Hencky strain
  double density = 1.0;

  double mu() const { return youngs_modulus / (2.0 * (1.0 + poisson_ratio)); }
  double lambda() const {
    return youngs_modulus * poisson_ratio / ((1.0 + poisson_ratio) * (1.0 - 2.0 * poisson_ratio));
  }
  /// P-wave speed of the linearized material.
  double wave_speed() const { return std::sqrt((lambda() + 2.0 * mu()) / density); }
};

struct SimConfig {
  int grid_resolution = 32;  // cells per axis over [0,1]
  double dt = 4e-3;
  int substeps = 5;  // per action step
  MaterialParams material;
  double friction = 0.9;
  double friction_smoothing = 0.2;   // width of the stick/slip blend in slip ratio
  double plastic_smoothing = 0.25;   // width of the yield blend, relative to the yield strain
  double softness = 666.0;  // contact influence falloff, exp(-softness * sdf)
  Vec3 gravity = Vec3::Zero();
  double action_bound = 1.0;  // |a| <= action_bound per component
  bool rotation_control = false;
  int boundary_cells = 3;
  double max_cfl = 0.5;
  int threads = 1;

  double dx() const { return 1.0 / grid_resolution; }
  double inv_dx() const { return static_cast<double>(grid_resolution); }
  int action_dims() const { return rotation_control ? 6 : 3; }

  /// CFL number of the fastest signal: elastic waves or a manipulator moving
  /// at the action bound.
  double cfl() const {
    const double speed = std::max(material.wave_speed(), action_bound * (rotation_control ? std::sqrt(2.0) : 1.0));
    return speed * dt * inv_dx();
  }

  void validate() const {
    auto positive = [](double v, const char* what) {
      if (!(v > 0.0) || !std::isfinite(v)) throw InvalidArgument(std::string(what) + " must be positive");
    };
    if (grid_resolution < 8) throw InvalidArgument("grid resolution must be at least 8");
    if (substeps < 1) throw InvalidArgument("substeps must be >= 1");
    if (boundary_cells < 1 || 2 * boundary_cells >= grid_resolution)
      throw InvalidArgument("boundary cells out of range");
    positive(dt, "dt");
    positive(material.youngs_modulus, "Young's modulus");
    positive(material.yield_stress, "yield stress");
    positive(material.density, "density");
    if (!(material.poisson_ratio > 0.0 && material.poisson_ratio < 0.5))
      throw InvalidArgument("Poisson ratio must lie in (0, 0.5)");
    positive(friction, "friction");
    positive(friction_smoothing, "friction smoothing");
    if (friction_smoothing > 1.0) throw InvalidArgument("friction smoothing must be <= 1");
    positive(plastic_smoothing, "plastic smoothing");
    positive(softness, "softness");
    positive(action_bound, "action bound");
    if (!gravity.allFinite()) throw InvalidArgument("gravity must be finite");
    if (cfl() > max_cfl)
      throw InvalidArgument("dt violates the CFL bound: " + std::to_string(cfl()) + " > " + std::to_string(max_cfl));
  }
};

}  // namespace cpdeform::sim
