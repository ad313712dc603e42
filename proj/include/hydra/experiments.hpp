#pragma once

#include <Eigen/Core>
#include <array>
#include <string>
#include <utility>
#include <vector>

#include "hydra/hydranet.hpp"

namespace hydra {

// ---------------------------------------------------------------------------
// One-dimensional regression experiment
// ---------------------------------------------------------------------------

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
  double length() const { return hi - lo; }
  bool contains(double x) const { return x >= lo && x <= hi; }
};

struct Config1D {
  int n_train = 1000;
  std::vector<Interval> train_ranges{{0.0, 0.6}, {0.8, 1.0}};
  int n_test = 100;
  Interval test_range{-2.0, 2.0};
  /// Standard deviation of omega.
  double noise_sigma = 3.0;
  int repetitions = 100;
  std::uint64_t seed = 0;
  int epochs = 3000;
  int minibatch_size = 50;
  Options1D options;
  /// Evenly spaced points used for the uncertainty curves.
  int curve_points = 401;

  void validate() const;
};

/// y = x + sin(4 (x + w)) + sin(13 (x + w)) + w
double regression_target_1d(double x, double omega);

struct Data1D {
  Dataset1D train;
  Dataset1D test;
};

/// Train x is uniform over the union of train_ranges, test x uniform over
/// test_range; one omega per sample. Test points are sorted by x.
Data1D gen_1d(const Config1D& config, Rng& rng);

struct Row1D {
  Method1D method = Method1D::kHydraFull;
  int rep = 0;
  double test_nll = 0.0;      // mean Gaussian NLL (with 2 pi constant)
  double test_mse = 0.0;
  double train_mse = 0.0;     // fit quality on the training set
  double baseline_train_mse = 0.0;  // constant prediction at the train mean
  double sigma_e_ood = 0.0;   // mean sigma_e over curve points in [-2, -0.5]
  double sigma_e_in = 0.0;    // mean sigma_e over curve points in [0.1, 0.5]
};

struct Summary1D {
  Method1D method = Method1D::kHydraFull;
  double median_nll = 0.0;
  double q1_nll = 0.0;
  double q3_nll = 0.0;
  double min_nll = 0.0;
  double max_nll = 0.0;
  double median_mse = 0.0;
  double mean_mse = 0.0;
};

struct CurvePoint {
  Method1D method = Method1D::kHydraFull;
  double x = 0.0;
  double y_clean = 0.0;  // target with omega = 0
  Prediction1D pred;
};

struct Result1D {
  Data1D first_data;  // data of repetition 0
  std::vector<Row1D> rows;
  std::vector<Summary1D> summaries;
  std::vector<CurvePoint> curves;  // repetition 0
};

inline constexpr Interval kOodRange1D{-2.0, -0.5};
inline constexpr Interval kInRange1D{0.1, 0.5};

/// Mean Gaussian NLL 0.5 log(2 pi s^2) + 0.5 r^2 / s^2 with s^2 floored at
/// sigma_min^2.
double gaussian_nll_mean(std::span<const Prediction1D> preds,
                         std::span<const double> targets, double sigma_min);

/// Trains all five estimators per repetition on fresh data.
Result1D run_1d(const Config1D& config);

/// Linear-interpolated quantile of a sample (q in [0, 1]).
double quantile(std::vector<double> values, double q);

// ---------------------------------------------------------------------------
// Hemisphere world
// ---------------------------------------------------------------------------

struct CameraIntrinsics {
  double focal = 500.0;
  double cu = 250.0;
  double cv = 250.0;
  int width = 500;
  int height = 500;
};

/// Pinhole projection of a world landmark given the world-to-camera
/// transform. Throws kBehindCamera for non-positive depth.
Eigen::Vector2d project(const CameraIntrinsics& K, const PoseSE3& camera_from_world,
                        const Vec3& landmark);

struct HemisphereConfig {
  int grid_size = 6;
  double grid_spacing = 1.0;
  double radius = 25.0;
  CameraIntrinsics camera;
  double pixel_noise = 1.0;
  int n_train = 15000;
  double train_polar_max_deg = 60.0;
  int n_test = 500;
  double test_polar_max_deg = 80.0;
  std::uint64_t seed = 0;

  nn::TrainConfig train;
  So3Options net;

  HemisphereConfig();
  void validate() const;
};

std::vector<Vec3> landmark_grid(const HemisphereConfig& config);

/// Camera on the hemisphere at signed polar angle and azimuth, optical axis
/// through the grid centre, image "up" towards world +z (world +x at the
/// apex). Returns the world-to-camera transform.
PoseSE3 hemisphere_camera_pose(double radius, double polar_rad, double azimuth_rad);

struct HemisphereSample {
  double polar_deg = 0.0;
  double azimuth_deg = 0.0;
  PoseSE3 camera_from_world;
};

struct HemisphereDataset {
  So3Dataset data;  // inputs 2 * grid^2 rows; targets q_{c,w}
  std::vector<HemisphereSample> samples;
  /// pixel = offset + scale * normalized, per axis (u, v).
  std::array<double, 2> pixel_offset{0.0, 0.0};
  std::array<double, 2> pixel_scale{1.0, 1.0};
};

/// Samples n poses with signed polar angle uniform in [-max, max] and
/// azimuth uniform in [0, 360). Throws kProjectionOutOfBounds if any
/// noiseless projection leaves the sensor.
HemisphereDataset gen_hemisphere(const HemisphereConfig& config, int n,
                                 double polar_max_deg, Rng& rng);

struct HemisphereRow {
  int id = 0;
  double polar_deg = 0.0;
  UnitQuaternion target;
  So3Prediction prediction;
  Vec3 error = Vec3::Zero();  // Log(q_mean * q_target^-1)
  double angular_error_deg = 0.0;
  double nll = 0.0;           // so3_nll(mean, target, total)
};

struct HemisphereReport {
  std::vector<HemisphereRow> rows;  // sorted by polar angle
  double mean_angular_error_deg = 0.0;
  double mean_nll = 0.0;
  CalibrationReport calibration;     // against the total covariance
  double within_3sigma_all_axes = 0.0;  // pooled over axes
  double trace_epistemic_in = 0.0;   // |polar| <= train max
  double trace_epistemic_out = 0.0;  // |polar| > train max
  std::vector<double> train_loss;
  double runtime_seconds = 0.0;
};

HemisphereReport evaluate_hemisphere(const HydraNetSO3& net,
                                     const HemisphereDataset& test,
                                     double train_polar_max_deg);

HemisphereReport run_hemisphere(const HemisphereConfig& config);

}  // namespace hydra
