#include "hydra/uncertainty.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <cmath>
#include <sstream>

namespace hydra {
namespace {

Eigen::LLT<Mat3> jittered_cholesky(const Mat3& m) {
  Eigen::LLT<Mat3> llt(m + kCholeskyJitter * Mat3::Identity());
  if (llt.info() != Eigen::Success) {
    throw Error(ErrorCode::kSingularCovariance,
                "Cholesky factorization failed after jitter");
  }
  return llt;
}

// 0.5 phi^T S^-1 phi + 0.5 log det S via the Cholesky factor of S.
double gaussian_energy(const Vec3& phi, const Eigen::LLT<Mat3>& llt) {
  const Vec3 white = llt.matrixL().solve(phi);
  double half_logdet = 0.0;
  for (int i = 0; i < 3; ++i) half_logdet += std::log(llt.matrixL()(i, i));
  return 0.5 * white.squaredNorm() + half_logdet;
}

}  // namespace

CovSO3::CovSO3(const Mat3& m) {
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  if (!m.allFinite() || (m - m.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale) {
    throw Error(ErrorCode::kSingularCovariance, "covariance is not symmetric");
  }
  m_ = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Mat3> eig(m_, Eigen::EigenvaluesOnly);
  if (eig.eigenvalues().minCoeff() < -1e-12 * scale) {
    std::ostringstream os;
    os << "covariance has negative eigenvalue " << eig.eigenvalues().minCoeff();
    throw Error(ErrorCode::kSingularCovariance, os.str());
  }
}

CovSO3 CovSO3::diagonal(const Vec3& variances) {
  return CovSO3(Mat3(variances.asDiagonal()));
}

UnitQuaternion sample_rotation(const UnitQuaternion& mean, const CovSO3& cov,
                               Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  const Vec3 z(normal(rng), normal(rng), normal(rng));
  if (cov.matrix().isZero(0.0)) return mean;

  Mat3 factor;
  Eigen::LLT<Mat3> llt(cov.matrix());
  if (llt.info() == Eigen::Success) {
    factor = llt.matrixL();
  } else {
    // Semidefinite: fall back to the symmetric square root.
    Eigen::SelfAdjointEigenSolver<Mat3> eig(cov.matrix());
    factor = eig.eigenvectors() *
             eig.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
  }
  return quat_mul(exp_so3(factor * z), mean);
}

CovSO3 sample_covariance(const UnitQuaternion& mean,
                         std::span<const UnitQuaternion> samples) {
  if (samples.size() < 2) {
    throw Error(ErrorCode::kTooFewSamples,
                "sample covariance needs at least two samples");
  }
  const UnitQuaternion inv = quat_inv(mean);
  Mat3 acc = Mat3::Zero();
  for (const auto& q : samples) {
    const Vec3 phi = log_so3(quat_mul(q, inv));
    acc += phi * phi.transpose();
  }
  return CovSO3(acc / static_cast<double>(samples.size() - 1));
}

double so3_nll(const UnitQuaternion& q, const UnitQuaternion& q_target,
               const CovSO3& cov) {
  const Vec3 phi = log_so3(quat_mul(q, quat_inv(q_target)));
  return gaussian_energy(phi, jittered_cholesky(cov.matrix()));
}

Mat3 so3_nll_cov_gradient(const Vec3& phi, const CovSO3& cov) {
  const auto llt = jittered_cholesky(cov.matrix());
  const Mat3 inv = llt.solve(Mat3::Identity());
  const Vec3 a = inv * phi;
  return 0.5 * (inv - a * a.transpose());
}

Eigen::Matrix<double, 3, 4> log_so3_jacobian(const UnitQuaternion& q) {
  const double s = q.w() < 0.0 ? -1.0 : 1.0;
  const double w = s * q.w();
  const Vec3 v = s * q.vec();
  const double n2 = v.squaredNorm();
  const double n = std::sqrt(n2);
  const double r2 = n2 + w * w;

  // phi = f(n, w) v with f = 2 atan2(n, w) / n; g = (df/dn) / n.
  double f;
  double g;
  if (n < 1e-3) {
    const double w2 = w * w;
    f = 2.0 / w - 2.0 * n2 / (3.0 * w2 * w);
    g = -4.0 / (3.0 * w2 * w) + 8.0 * n2 / (5.0 * w2 * w2 * w);
  } else {
    const double angle = std::atan2(n, w);
    f = 2.0 * angle / n;
    g = 2.0 * (w / (r2 * n2) - angle / (n2 * n));
  }
  const double df_dw = -2.0 / r2;

  Eigen::Matrix<double, 3, 4> J;
  J.col(0) = df_dw * v;
  J.rightCols<3>() = f * Mat3::Identity() + g * v * v.transpose();
  return s * J;
}

So3NllTerms so3_nll_terms(const Vec4& raw_quat, const UnitQuaternion& q_target,
                          const Vec3& logits, double sigma_min) {
  const double raw_norm = raw_quat.norm();
  const UnitQuaternion q = quat_normalize(raw_quat);
  const UnitQuaternion p = quat_inv(q_target);
  const UnitQuaternion r = quat_mul(q, p);

  So3NllTerms out;
  out.phi = log_so3(r);

  Vec3 sigma2;
  Vec3 var;
  for (int k = 0; k < 3; ++k) {
    const double sigma = std::max(std::exp(logits[k]), sigma_min);
    sigma2[k] = sigma * sigma;
    var[k] = sigma2[k] + kCholeskyJitter;
  }
  out.value = 0.0;
  for (int k = 0; k < 3; ++k) {
    out.value += 0.5 * out.phi[k] * out.phi[k] / var[k] + 0.5 * std::log(var[k]);
    const bool floored = !(std::exp(logits[k]) > sigma_min);
    out.d_logits[k] =
        floored ? 0.0
                : sigma2[k] * (1.0 / var[k] -
                               out.phi[k] * out.phi[k] / (var[k] * var[k]));
  }

  const Vec3 d_phi = out.phi.cwiseQuotient(var);
  // r = M(p) q, the right-multiplication matrix of p.
  Eigen::Matrix4d M;
  M << p.w(), -p.x(), -p.y(), -p.z(),
       p.x(), p.w(), p.z(), -p.y(),
       p.y(), -p.z(), p.w(), p.x(),
       p.z(), p.y(), -p.x(), p.w();
  const Vec4& qc = q.coeffs();
  const Eigen::Matrix4d d_normalize =
      (Eigen::Matrix4d::Identity() - qc * qc.transpose()) / raw_norm;
  out.d_raw_quat =
      (d_phi.transpose() * log_so3_jacobian(r) * M * d_normalize).transpose();
  return out;
}

CovSO3 cov_from_logits(const Vec3& logits, double sigma_min) {
  Vec3 var;
  for (int k = 0; k < 3; ++k) {
    const double sigma = std::max(std::exp(logits[k]), sigma_min);
    var[k] = sigma * sigma;
  }
  return CovSO3::diagonal(var);
}

CovSO3 combine(const CovSO3& epistemic, const CovSO3& aleatoric) {
  return CovSO3(epistemic.matrix() + aleatoric.matrix());
}

CalibrationReport calibration_report(std::span<const Vec3> errors,
                                     std::span<const CovSO3> covs) {
  if (errors.size() != covs.size() || errors.empty()) {
    std::ostringstream os;
    os << errors.size() << " errors vs " << covs.size() << " covariances";
    throw Error(ErrorCode::kLengthMismatch, os.str());
  }
  CalibrationReport report;
  report.count = errors.size();
  for (std::size_t i = 0; i < errors.size(); ++i) {
    const Vec3& phi = errors[i];
    const Mat3& S = covs[i].matrix();
    for (int k = 0; k < 3; ++k) {
      if (std::abs(phi[k]) <= 3.0 * std::sqrt(S(k, k))) {
        report.within_3sigma[k] += 1.0;
      }
    }
    const auto llt = jittered_cholesky(S);
    report.mean_mahalanobis_sq += llt.matrixL().solve(phi).squaredNorm();
    report.mean_nll += gaussian_energy(phi, llt);
  }
  const double n = static_cast<double>(errors.size());
  report.within_3sigma /= n;
  report.mean_mahalanobis_sq /= n;
  report.mean_nll /= n;
  return report;
}

}  // namespace hydra
