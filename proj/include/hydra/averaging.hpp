#pragma once

#include <span>
#include <vector>

#include "hydra/so3.hpp"

namespace hydra {

struct RotationSample {
  UnitQuaternion q;
  double weight = 1.0;
};

std::vector<RotationSample> to_samples(std::span<const UnitQuaternion> qs);

struct QuatMeanResult {
  UnitQuaternion mean;
  /// Set when some sample lies at or beyond pi/2 (angular) from the mean,
  /// where the closed form is no longer guaranteed to minimize the
  /// quaternionic cost. The mean is still returned.
  bool dispersion_warning = false;
};

/// Minimizer of the weighted sum of squared quaternionic distances: samples
/// are sign-aligned to the first one, summed, and normalized.
QuatMeanResult quat_mean(std::span<const RotationSample> samples);
QuatMeanResult quat_mean(std::span<const UnitQuaternion> samples);

/// Minimizer of the weighted sum of squared chordal distances, obtained by
/// projecting the arithmetic mean of rotation matrices onto SO(3).
RotationMatrix chordal_mean(std::span<const RotationSample> samples);

struct KarcherOptions {
  double tolerance = 1e-10;
  int max_iterations = 100;
};

struct KarcherResult {
  UnitQuaternion mean;
  int iterations = 0;
};

/// Minimizer of the weighted sum of squared angular distances (Karcher
/// mean) by fixed-point iteration in the tangent space, started from the
/// quaternionic mean.
KarcherResult karcher_mean(std::span<const RotationSample> samples,
                           const KarcherOptions& options = {});

}  // namespace hydra
