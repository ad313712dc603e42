#include "hydra/experiments.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

namespace hydra {
namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

Rng stream(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(b)};
  return Rng(seq);
}

double mean_sigma_in(std::span<const CurvePoint> curve, Method1D method, Interval range) {
  double sum = 0.0;
  int count = 0;
  for (const auto& c : curve) {
    if (c.method == method && range.contains(c.x)) {
      sum += std::sqrt(c.pred.var_e);
      ++count;
    }
  }
  return count > 0 ? sum / count : 0.0;
}

}  // namespace

// ---------------------------------------------------------------------------
// 1D
// ---------------------------------------------------------------------------

void Config1D::validate() const {
  if (n_train < 1 || n_test < 1 || repetitions < 1 || curve_points < 2) {
    throw Error(ErrorCode::kInvalidConfig, "1D sample counts must be positive");
  }
  if (train_ranges.empty()) throw Error(ErrorCode::kInvalidConfig, "no training ranges");
  for (const auto& r : train_ranges) {
    if (!(r.hi > r.lo)) throw Error(ErrorCode::kInvalidConfig, "empty training range");
  }
  if (!(test_range.hi > test_range.lo)) throw Error(ErrorCode::kInvalidConfig, "empty test range");
  if (!(noise_sigma >= 0.0)) throw Error(ErrorCode::kInvalidConfig, "negative noise");
  if (epochs < 1 || minibatch_size < 1) throw Error(ErrorCode::kInvalidConfig, "bad training schedule");
}

double regression_target_1d(double x, double omega) {
  return x + std::sin(4.0 * (x + omega)) + std::sin(13.0 * (x + omega)) + omega;
}

Data1D gen_1d(const Config1D& config, Rng& rng) {
  config.validate();
  std::normal_distribution<double> noise(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  double total_length = 0.0;
  for (const auto& r : config.train_ranges) total_length += r.length();

  Data1D d;
  for (int i = 0; i < config.n_train; ++i) {
    // Inverse CDF over the concatenated ranges.
    double u = unit(rng) * total_length;
    double x = config.train_ranges.back().hi;
    for (const auto& r : config.train_ranges) {
      if (u <= r.length()) {
        x = r.lo + u;
        break;
      }
      u -= r.length();
    }
    const double omega = config.noise_sigma * noise(rng);
    d.train.x.push_back(x);
    d.train.y.push_back(regression_target_1d(x, omega));
  }
  std::vector<double> xs(static_cast<std::size_t>(config.n_test));
  for (auto& x : xs) x = config.test_range.lo + unit(rng) * config.test_range.length();
  std::sort(xs.begin(), xs.end());
  for (double x : xs) {
    const double omega = config.noise_sigma * noise(rng);
    d.test.x.push_back(x);
    d.test.y.push_back(regression_target_1d(x, omega));
  }
  return d;
}

double gaussian_nll_mean(std::span<const Prediction1D> preds,
                         std::span<const double> targets, double sigma_min) {
  if (preds.size() != targets.size() || preds.empty()) {
    throw Error(ErrorCode::kLengthMismatch, "predictions and targets differ in count");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const double var = std::max(preds[i].var, sigma_min * sigma_min);
    const double r = targets[i] - preds[i].mean;
    total += 0.5 * std::log(2.0 * std::numbers::pi * var) + 0.5 * r * r / var;
  }
  return total / static_cast<double>(preds.size());
}

double quantile(std::vector<double> values, double q) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

Result1D run_1d(const Config1D& config) {
  config.validate();
  Result1D result;

  std::vector<double> grid(static_cast<std::size_t>(config.curve_points));
  for (std::size_t i = 0; i < grid.size(); ++i) {
    grid[i] = config.test_range.lo +
              config.test_range.length() * static_cast<double>(i) / static_cast<double>(grid.size() - 1);
  }

  for (int rep = 0; rep < config.repetitions; ++rep) {
    Rng data_rng = stream(config.seed, static_cast<std::uint64_t>(rep), 0);
    const Data1D data = gen_1d(config, data_rng);
    if (rep == 0) result.first_data = data;

    const double train_mean =
        std::accumulate(data.train.y.begin(), data.train.y.end(), 0.0) / data.train.y.size();
    double baseline = 0.0;
    for (double y : data.train.y) baseline += (y - train_mean) * (y - train_mean);
    baseline /= static_cast<double>(data.train.y.size());

    for (std::size_t m = 0; m < std::size(kAllMethods1D); ++m) {
      const Method1D method = kAllMethods1D[m];
      Rng rng = stream(config.seed, static_cast<std::uint64_t>(rep), m + 1);
      nn::TrainConfig tc = default_train_config_1d(method);
      tc.epochs = config.epochs;
      tc.minibatch_size = config.minibatch_size;
      tc.seed = config.seed;
      const Estimator1D est = train_1d(method, data.train, tc, config.options, rng);

      const auto test_pred = predict_1d(est, data.test.x, rng);
      const auto train_pred = predict_1d(est, data.train.x, rng);
      std::vector<CurvePoint> curve;
      const auto curve_pred = predict_1d(est, grid, rng);
      for (std::size_t i = 0; i < grid.size(); ++i) {
        curve.push_back({method, grid[i], regression_target_1d(grid[i], 0.0), curve_pred[i]});
      }

      Row1D row;
      row.method = method;
      row.rep = rep;
      row.test_nll = gaussian_nll_mean(test_pred, data.test.y, config.options.sigma_min);
      for (std::size_t i = 0; i < test_pred.size(); ++i) {
        const double r = test_pred[i].mean - data.test.y[i];
        row.test_mse += r * r;
      }
      row.test_mse /= static_cast<double>(test_pred.size());
      for (std::size_t i = 0; i < train_pred.size(); ++i) {
        const double r = train_pred[i].mean - data.train.y[i];
        row.train_mse += r * r;
      }
      row.train_mse /= static_cast<double>(train_pred.size());
      row.baseline_train_mse = baseline;
      row.sigma_e_ood = mean_sigma_in(curve, method, kOodRange1D);
      row.sigma_e_in = mean_sigma_in(curve, method, kInRange1D);
      result.rows.push_back(row);
      if (rep == 0) result.curves.insert(result.curves.end(), curve.begin(), curve.end());
    }
  }

  for (Method1D method : kAllMethods1D) {
    std::vector<double> nll;
    std::vector<double> mse;
    for (const auto& r : result.rows) {
      if (r.method == method) {
        nll.push_back(r.test_nll);
        mse.push_back(r.test_mse);
      }
    }
    Summary1D s;
    s.method = method;
    s.median_nll = quantile(nll, 0.5);
    s.q1_nll = quantile(nll, 0.25);
    s.q3_nll = quantile(nll, 0.75);
    s.min_nll = quantile(nll, 0.0);
    s.max_nll = quantile(nll, 1.0);
    s.median_mse = quantile(mse, 0.5);
    s.mean_mse = std::accumulate(mse.begin(), mse.end(), 0.0) / static_cast<double>(mse.size());
    result.summaries.push_back(s);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Hemisphere world
// ---------------------------------------------------------------------------

Eigen::Vector2d project(const CameraIntrinsics& K, const PoseSE3& camera_from_world,
                        const Vec3& landmark) {
  const Vec3 p = se3_apply(camera_from_world, landmark);
  if (!(p.z() > 0.0)) {
    std::ostringstream os;
    os << "landmark depth " << p.z() << " is not positive";
    throw Error(ErrorCode::kBehindCamera, os.str());
  }
  return {K.focal * p.x() / p.z() + K.cu, K.focal * p.y() / p.z() + K.cv};
}

HemisphereConfig::HemisphereConfig() {
  train.optimizer = nn::OptimizerKind::kAdam;
  train.learning_rate = 1e-3;
  train.momentum = 0.0;
  train.epochs = 300;
  train.minibatch_size = 64;
  train.loss = nn::LossKind::kSo3Nll;
  net.target_noise_sigma = 0.06;
}

void HemisphereConfig::validate() const {
  if (grid_size < 1 || !(grid_spacing > 0.0) || !(radius > 0.0)) {
    throw Error(ErrorCode::kInvalidConfig, "invalid landmark grid or radius");
  }
  if (!(camera.focal > 0.0) || camera.width < 1 || camera.height < 1) {
    throw Error(ErrorCode::kInvalidConfig, "invalid camera intrinsics");
  }
  if (!(pixel_noise >= 0.0)) throw Error(ErrorCode::kInvalidConfig, "negative pixel noise");
  if (n_train < 1 || n_test < 1) throw Error(ErrorCode::kInvalidConfig, "sample counts must be positive");
  if (!(train_polar_max_deg > 0.0 && train_polar_max_deg < 90.0) ||
      !(test_polar_max_deg > 0.0 && test_polar_max_deg < 90.0)) {
    throw Error(ErrorCode::kInvalidConfig, "polar bands must lie in (0, 90) degrees");
  }
  train.validate();
  net.validate();
}

std::vector<Vec3> landmark_grid(const HemisphereConfig& config) {
  std::vector<Vec3> points;
  const double half = 0.5 * (config.grid_size - 1) * config.grid_spacing;
  for (int r = 0; r < config.grid_size; ++r) {
    for (int c = 0; c < config.grid_size; ++c) {
      points.emplace_back(c * config.grid_spacing - half, r * config.grid_spacing - half, 0.0);
    }
  }
  return points;
}

PoseSE3 hemisphere_camera_pose(double radius, double polar_rad, double azimuth_rad) {
  const Vec3 position = radius * Vec3(std::sin(polar_rad) * std::cos(azimuth_rad),
                                      std::sin(polar_rad) * std::sin(azimuth_rad),
                                      std::cos(polar_rad));
  const Vec3 forward = -position.normalized();
  Vec3 up = Vec3::UnitZ() - Vec3::UnitZ().dot(forward) * forward;
  if (up.norm() < 1e-9) up = Vec3::UnitX() - Vec3::UnitX().dot(forward) * forward;
  const Vec3 down = -up.normalized();
  const Vec3 right = down.cross(forward);
  Mat3 world_from_camera;
  world_from_camera << right, down, forward;
  const UnitQuaternion q_cw = matrix_to_quat(world_from_camera.transpose());
  return PoseSE3{q_cw, -rotate(q_cw, position)};
}

HemisphereDataset gen_hemisphere(const HemisphereConfig& config, int n,
                                 double polar_max_deg, Rng& rng) {
  config.validate();
  const auto landmarks = landmark_grid(config);
  const auto& K = config.camera;
  std::uniform_real_distribution<double> polar(-polar_max_deg, polar_max_deg);
  std::uniform_real_distribution<double> azimuth(0.0, 360.0);
  std::normal_distribution<double> noise(0.0, 1.0);

  HemisphereDataset ds;
  ds.pixel_offset = {0.5 * K.width, 0.5 * K.height};
  ds.pixel_scale = {0.5 * K.width, 0.5 * K.height};
  ds.data.inputs.resize(2 * static_cast<Eigen::Index>(landmarks.size()), n);
  for (int i = 0; i < n; ++i) {
    HemisphereSample s;
    s.polar_deg = polar(rng);
    s.azimuth_deg = azimuth(rng);
    s.camera_from_world = hemisphere_camera_pose(config.radius, s.polar_deg * kDeg, s.azimuth_deg * kDeg);
    for (std::size_t l = 0; l < landmarks.size(); ++l) {
      const Eigen::Vector2d px = project(K, s.camera_from_world, landmarks[l]);
      if (px.x() < 0.0 || px.x() > K.width || px.y() < 0.0 || px.y() > K.height) {
        std::ostringstream os;
        os << "landmark " << l << " projects to (" << px.transpose() << ") at polar "
           << s.polar_deg << " deg";
        throw Error(ErrorCode::kProjectionOutOfBounds, os.str());
      }
      const double u = px.x() + config.pixel_noise * noise(rng);
      const double v = px.y() + config.pixel_noise * noise(rng);
      const auto row = 2 * static_cast<Eigen::Index>(l);
      ds.data.inputs(row, i) = (u - ds.pixel_offset[0]) / ds.pixel_scale[0];
      ds.data.inputs(row + 1, i) = (v - ds.pixel_offset[1]) / ds.pixel_scale[1];
    }
    ds.data.targets.push_back(s.camera_from_world.rotation);
    ds.samples.push_back(s);
  }
  return ds;
}

HemisphereReport evaluate_hemisphere(const HydraNetSO3& net, const HemisphereDataset& test,
                                     double train_polar_max_deg) {
  const auto preds = predict_so3(net, test.data.inputs);
  HemisphereReport report;
  std::vector<Vec3> errors;
  std::vector<CovSO3> covs;
  double in_sum = 0.0;
  double out_sum = 0.0;
  int in_count = 0;
  int out_count = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    HemisphereRow row;
    row.id = static_cast<int>(i);
    row.polar_deg = test.samples[i].polar_deg;
    row.target = test.data.targets[i];
    row.prediction = preds[i];
    const auto& b = row.prediction.belief;
    row.error = log_so3(quat_mul(b.mean, quat_inv(row.target)));
    row.angular_error_deg = row.error.norm() / kDeg;
    row.nll = so3_nll(b.mean, row.target, b.total);
    report.mean_angular_error_deg += row.angular_error_deg;
    report.mean_nll += row.nll;
    errors.push_back(row.error);
    covs.push_back(b.total);
    if (std::abs(row.polar_deg) > train_polar_max_deg) {
      out_sum += b.epistemic.trace();
      ++out_count;
    } else {
      in_sum += b.epistemic.trace();
      ++in_count;
    }
    report.rows.push_back(std::move(row));
  }
  const double n = static_cast<double>(preds.size());
  report.mean_angular_error_deg /= n;
  report.mean_nll /= n;
  report.calibration = calibration_report(errors, covs);
  report.within_3sigma_all_axes = report.calibration.within_3sigma.mean();
  report.trace_epistemic_in = in_count > 0 ? in_sum / in_count : 0.0;
  report.trace_epistemic_out = out_count > 0 ? out_sum / out_count : 0.0;
  std::stable_sort(report.rows.begin(), report.rows.end(),
                   [](const HemisphereRow& a, const HemisphereRow& b) { return a.polar_deg < b.polar_deg; });
  return report;
}

HemisphereReport run_hemisphere(const HemisphereConfig& config) {
  config.validate();
  const auto start = std::chrono::steady_clock::now();
  Rng data_rng = stream(config.seed, 1);
  const auto train = gen_hemisphere(config, config.n_train, config.train_polar_max_deg, data_rng);
  Rng test_rng = stream(config.seed, 2);
  const auto test = gen_hemisphere(config, config.n_test, config.test_polar_max_deg, test_rng);

  Rng train_rng = stream(config.seed, 3);
  nn::TrainConfig tc = config.train;
  tc.seed = config.seed;
  auto trained = train_so3(train.data, tc, config.net, train_rng);
  HemisphereReport report = evaluate_hemisphere(trained.net, test, config.train_polar_max_deg);
  report.train_loss = std::move(trained.history.epoch_loss);
  report.runtime_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

}  // namespace hydra
