#include "hydra/averaging.hpp"

#include <Eigen/LU>
#include <Eigen/SVD>
#include <cmath>
#include <numbers>
#include <sstream>

namespace hydra {
namespace {

void require_samples(std::span<const RotationSample> samples) {
  if (samples.empty()) {
    throw Error(ErrorCode::kTooFewSamples, "rotation mean of an empty set");
  }
  double total = 0.0;
  for (const auto& s : samples) {
    if (!(s.weight >= 0.0)) {
      throw Error(ErrorCode::kInvalidConfig, "negative sample weight");
    }
    total += s.weight;
  }
  if (!(total > 0.0)) {
    throw Error(ErrorCode::kInvalidConfig, "sample weights sum to zero");
  }
}

}  // namespace

std::vector<RotationSample> to_samples(std::span<const UnitQuaternion> qs) {
  std::vector<RotationSample> out;
  out.reserve(qs.size());
  for (const auto& q : qs) out.push_back({q, 1.0});
  return out;
}

QuatMeanResult quat_mean(std::span<const RotationSample> samples) {
  require_samples(samples);
  const Vec4& ref = samples.front().q.coeffs();
  Vec4 sum = Vec4::Zero();
  for (const auto& s : samples) {
    const Vec4& c = s.q.coeffs();
    sum += (c.dot(ref) < 0.0 ? -s.weight : s.weight) * c;
  }
  QuatMeanResult result{quat_normalize(sum), false};
  for (const auto& s : samples) {
    if (dist(Metric::kAngular, result.mean, s.q) >= 0.5 * std::numbers::pi) {
      result.dispersion_warning = true;
      break;
    }
  }
  return result;
}

QuatMeanResult quat_mean(std::span<const UnitQuaternion> samples) {
  const auto weighted = to_samples(samples);
  return quat_mean(std::span<const RotationSample>(weighted));
}

RotationMatrix chordal_mean(std::span<const RotationSample> samples) {
  require_samples(samples);
  Mat3 M = Mat3::Zero();
  double total = 0.0;
  for (const auto& s : samples) {
    M += s.weight * quat_to_matrix(s.q);
    total += s.weight;
  }
  M /= total;
  Eigen::JacobiSVD<Mat3> svd(M, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vec3 sv = svd.singularValues();
  if (sv[1] < 1e-9 && sv[2] < 1e-9) {
    std::ostringstream os;
    os << "mean rotation matrix singular values " << sv.transpose();
    throw Error(ErrorCode::kRankDeficient, os.str());
  }
  const Mat3 U = svd.matrixU();
  const Mat3 V = svd.matrixV();
  Vec3 d(1.0, 1.0, (U * V.transpose()).determinant() < 0.0 ? -1.0 : 1.0);
  return U * d.asDiagonal() * V.transpose();
}

KarcherResult karcher_mean(std::span<const RotationSample> samples,
                           const KarcherOptions& options) {
  require_samples(samples);
  double total = 0.0;
  for (const auto& s : samples) total += s.weight;

  UnitQuaternion mean = quat_mean(samples).mean;
  for (int it = 1; it <= options.max_iterations; ++it) {
    Vec3 update = Vec3::Zero();
    const UnitQuaternion inv = quat_inv(mean);
    for (const auto& s : samples) {
      update += s.weight * log_so3(quat_mul(s.q, inv));
    }
    update /= total;
    mean = quat_mul(exp_so3(update), mean);
    if (update.norm() < options.tolerance) return {mean, it};
  }
  std::ostringstream os;
  os << "Karcher mean did not converge in " << options.max_iterations
     << " iterations";
  throw Error(ErrorCode::kNoConvergence, os.str());
}

}  // namespace hydra
