#pragma once

#include <span>
#include <vector>

#include "hydra/so3.hpp"

namespace hydra {

inline constexpr double kSigmaMin = 1e-4;
inline constexpr double kCholeskyJitter = 1e-12;

/// Symmetric positive-semidefinite covariance over SO(3) tangent
/// coordinates (rad^2).
class CovSO3 {
 public:
  CovSO3() : m_(Mat3::Zero()) {}
  /// Symmetrizes and validates; throws kSingularCovariance if the matrix is
  /// not symmetric to 1e-12 (relative) or has a negative eigenvalue.
  explicit CovSO3(const Mat3& m);

  static CovSO3 zero() { return {}; }
  static CovSO3 diagonal(const Vec3& variances);

  const Mat3& matrix() const { return m_; }
  Vec3 diagonal() const { return m_.diagonal(); }
  double trace() const { return m_.trace(); }

 private:
  Mat3 m_;
};

struct RotationBelief {
  UnitQuaternion mean;
  CovSO3 epistemic;
  CovSO3 aleatoric;
  CovSO3 total;
};

/// Draws Exp(eps) * mean with eps ~ N(0, cov). A zero covariance returns the
/// mean exactly. Always consumes three normals from rng.
UnitQuaternion sample_rotation(const UnitQuaternion& mean, const CovSO3& cov,
                               Rng& rng);

/// (1 / (H - 1)) sum phi_i phi_i^T with phi_i = Log(q_i * mean^-1). Residuals
/// are taken about the provided mean without re-centering.
CovSO3 sample_covariance(const UnitQuaternion& mean,
                         std::span<const UnitQuaternion> samples);

/// 0.5 phi^T cov^-1 phi + 0.5 log det cov, phi = Log(q * q_target^-1). The
/// normalizing constant is omitted.
double so3_nll(const UnitQuaternion& q, const UnitQuaternion& q_target,
               const CovSO3& cov);

/// d NLL / d cov for a fixed tangent error.
Mat3 so3_nll_cov_gradient(const Vec3& phi, const CovSO3& cov);

/// NLL of a raw (unnormalized) network quaternion output under a diagonal
/// covariance given as logits, plus the gradients needed for training.
struct So3NllTerms {
  double value = 0.0;
  Vec3 phi = Vec3::Zero();
  Vec4 d_raw_quat = Vec4::Zero();
  Vec3 d_logits = Vec3::Zero();
};
So3NllTerms so3_nll_terms(const Vec4& raw_quat, const UnitQuaternion& q_target,
                          const Vec3& logits, double sigma_min = kSigmaMin);

/// Jacobian d Log(q) / d q (3x4) at the given unit quaternion, including the
/// sign canonicalization applied by log_so3.
Eigen::Matrix<double, 3, 4> log_so3_jacobian(const UnitQuaternion& q);

/// Diagonal covariance diag(s_k^2) with s_k = max(exp(u_k), sigma_min).
CovSO3 cov_from_logits(const Vec3& logits, double sigma_min = kSigmaMin);

CovSO3 combine(const CovSO3& epistemic, const CovSO3& aleatoric);

struct CalibrationReport {
  /// Per-axis fraction of |phi_k| <= 3 sqrt(cov_kk).
  Vec3 within_3sigma = Vec3::Zero();
  double mean_mahalanobis_sq = 0.0;
  /// Mean of 0.5 phi^T cov^-1 phi + 0.5 log det cov.
  double mean_nll = 0.0;
  std::size_t count = 0;
};

CalibrationReport calibration_report(std::span<const Vec3> errors,
                                     std::span<const CovSO3> covs);

}  // namespace hydra
