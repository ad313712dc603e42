#include "hydra/so3.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <sstream>

namespace hydra {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kDegenerateNorm: return "DegenerateNorm";
    case ErrorCode::kNotARotation: return "NotARotation";
    case ErrorCode::kRankDeficient: return "RankDeficient";
    case ErrorCode::kNoConvergence: return "NoConvergence";
    case ErrorCode::kTooFewSamples: return "TooFewSamples";
    case ErrorCode::kSingularCovariance: return "SingularCovariance";
    case ErrorCode::kLengthMismatch: return "LengthMismatch";
    case ErrorCode::kDimMismatch: return "DimMismatch";
    case ErrorCode::kEmptyDataset: return "EmptyDataset";
    case ErrorCode::kNonUnitTarget: return "NonUnitTarget";
    case ErrorCode::kInvalidConfig: return "InvalidConfig";
    case ErrorCode::kBehindCamera: return "BehindCamera";
    case ErrorCode::kProjectionOutOfBounds: return "ProjectionOutOfBounds";
    case ErrorCode::kMissingEdge: return "MissingEdge";
    case ErrorCode::kSingularNormalEquations: return "SingularNormalEquations";
    case ErrorCode::kParseError: return "ParseError";
  }
  return "Unknown";
}

UnitQuaternion UnitQuaternion::from_coeffs(double w, double x, double y,
                                           double z, double eps) {
  return quat_normalize(Vec4(w, x, y, z), eps);
}

UnitQuaternion UnitQuaternion::from_coeffs(const Vec4& wxyz, double eps) {
  return quat_normalize(wxyz, eps);
}

UnitQuaternion UnitQuaternion::operator-() const {
  return UnitQuaternion(Vec4(-wxyz_));
}

UnitQuaternion quat_normalize(const Vec4& v, double eps) {
  const double n = v.norm();
  if (!(n > eps)) {
    std::ostringstream os;
    os << "quaternion norm " << n << " <= " << eps;
    throw Error(ErrorCode::kDegenerateNorm, os.str());
  }
  return UnitQuaternion(Vec4(v / n));
}

UnitQuaternion quat_mul(const UnitQuaternion& a, const UnitQuaternion& b) {
  const double aw = a.w(), ax = a.x(), ay = a.y(), az = a.z();
  const double bw = b.w(), bx = b.x(), by = b.y(), bz = b.z();
  return quat_normalize(Vec4(aw * bw - ax * bx - ay * by - az * bz,
                             aw * bx + ax * bw + ay * bz - az * by,
                             aw * by - ax * bz + ay * bw + az * bx,
                             aw * bz + ax * by - ay * bx + az * bw));
}

UnitQuaternion quat_inv(const UnitQuaternion& q) {
  return quat_normalize(Vec4(q.w(), -q.x(), -q.y(), -q.z()));
}

UnitQuaternion canonicalize(const UnitQuaternion& q) {
  const Vec4& c = q.coeffs();
  for (int i = 0; i < 4; ++i) {
    if (c[i] > 0.0) return q;
    if (c[i] < 0.0) return -q;
  }
  return q;
}

UnitQuaternion exp_so3(const Vec3& phi) {
  const double theta2 = phi.squaredNorm();
  const double theta = std::sqrt(theta2);
  double w;
  double s;  // sin(theta/2) / theta
  if (theta < kTaylorThreshold) {
    w = 1.0 - theta2 / 8.0;
    s = 0.5 - theta2 / 48.0;
  } else {
    w = std::cos(0.5 * theta);
    s = std::sin(0.5 * theta) / theta;
  }
  return quat_normalize(Vec4(w, s * phi.x(), s * phi.y(), s * phi.z()));
}

Vec3 log_so3(const UnitQuaternion& q_in) {
  const UnitQuaternion q = canonicalize(q_in);
  const double w = q.w();
  Vec3 v = q.vec();
  const double n = v.norm();
  if (n < kTaylorThreshold) {
    // 2 atan(n / w) / n ~ (2 / w) (1 - n^2 / (3 w^2)); w ~ 1 here.
    return (2.0 / w) * (1.0 - n * n / (3.0 * w * w)) * v;
  }
  if (w == 0.0) {
    Eigen::Index largest = 0;
    v.cwiseAbs().maxCoeff(&largest);
    if (v[largest] < 0.0) v = -v;
  }
  return (2.0 * std::atan2(n, w) / n) * v;
}

RotationMatrix quat_to_matrix(const UnitQuaternion& q) {
  const double w = q.w(), x = q.x(), y = q.y(), z = q.z();
  RotationMatrix R;
  R << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
      2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
      2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  return R;
}

UnitQuaternion matrix_to_quat(const RotationMatrix& R) {
  const double orth = (R.transpose() * R - Mat3::Identity()).norm();
  const double det = R.determinant();
  if (!(orth <= 1e-6) || !(std::abs(det - 1.0) <= 1e-6)) {
    std::ostringstream os;
    os << "|R^T R - I| = " << orth << ", det = " << det;
    throw Error(ErrorCode::kNotARotation, os.str());
  }
  // Shepperd: branch on the largest of (trace, diagonal) for stability.
  const double tr = R.trace();
  Vec4 q;
  if (tr >= R(0, 0) && tr >= R(1, 1) && tr >= R(2, 2)) {
    const double s = 2.0 * std::sqrt(1.0 + tr);
    q << 0.25 * s, (R(2, 1) - R(1, 2)) / s, (R(0, 2) - R(2, 0)) / s,
        (R(1, 0) - R(0, 1)) / s;
  } else if (R(0, 0) >= R(1, 1) && R(0, 0) >= R(2, 2)) {
    const double s = 2.0 * std::sqrt(1.0 + R(0, 0) - R(1, 1) - R(2, 2));
    q << (R(2, 1) - R(1, 2)) / s, 0.25 * s, (R(0, 1) + R(1, 0)) / s,
        (R(0, 2) + R(2, 0)) / s;
  } else if (R(1, 1) >= R(2, 2)) {
    const double s = 2.0 * std::sqrt(1.0 + R(1, 1) - R(0, 0) - R(2, 2));
    q << (R(0, 2) - R(2, 0)) / s, (R(0, 1) + R(1, 0)) / s, 0.25 * s,
        (R(1, 2) + R(2, 1)) / s;
  } else {
    const double s = 2.0 * std::sqrt(1.0 + R(2, 2) - R(0, 0) - R(1, 1));
    q << (R(1, 0) - R(0, 1)) / s, (R(0, 2) + R(2, 0)) / s,
        (R(1, 2) + R(2, 1)) / s, 0.25 * s;
  }
  return canonicalize(quat_normalize(q));
}

Mat3 skew(const Vec3& v) {
  Mat3 S;
  S << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
  return S;
}

Vec3 rotate(const UnitQuaternion& q, const Vec3& v) {
  // v' = v + 2 w (u x v) + 2 u x (u x v)
  const Vec3 u = q.vec();
  const Vec3 t = 2.0 * u.cross(v);
  return v + q.w() * t + u.cross(t);
}

double dist(Metric metric, const UnitQuaternion& a, const UnitQuaternion& b) {
  switch (metric) {
    case Metric::kAngular:
      return log_so3(quat_mul(a, quat_inv(b))).norm();
    case Metric::kChordal:
      return (quat_to_matrix(a) - quat_to_matrix(b)).norm();
    case Metric::kQuaternionic:
      return std::min((a.coeffs() - b.coeffs()).norm(),
                      (a.coeffs() + b.coeffs()).norm());
  }
  return 0.0;
}

double dist(Metric metric, const RotationMatrix& a, const RotationMatrix& b) {
  if (metric == Metric::kChordal) return (a - b).norm();
  return dist(metric, matrix_to_quat(a), matrix_to_quat(b));
}

UnitQuaternion random_rotation(Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  for (;;) {
    Vec4 v;
    for (int i = 0; i < 4; ++i) v[i] = normal(rng);
    if (v.norm() > 1e-6) return quat_normalize(v);
  }
}

// ---------------------------------------------------------------------------
// SE(3)
// ---------------------------------------------------------------------------

Eigen::Matrix4d PoseSE3::matrix() const {
  Eigen::Matrix4d T = Eigen::Matrix4d::Identity();
  T.topLeftCorner<3, 3>() = quat_to_matrix(rotation);
  T.topRightCorner<3, 1>() = translation;
  return T;
}

Mat3 so3_left_jacobian(const Vec3& phi) {
  const double theta2 = phi.squaredNorm();
  const double theta = std::sqrt(theta2);
  const Mat3 W = skew(phi);
  double a;
  double b;
  if (theta < 1e-4) {
    a = 0.5 - theta2 / 24.0;
    b = 1.0 / 6.0 - theta2 / 120.0;
  } else {
    a = (1.0 - std::cos(theta)) / theta2;
    b = (theta - std::sin(theta)) / (theta2 * theta);
  }
  return Mat3::Identity() + a * W + b * W * W;
}

Mat3 so3_left_jacobian_inverse(const Vec3& phi) {
  const double theta2 = phi.squaredNorm();
  const double theta = std::sqrt(theta2);
  const Mat3 W = skew(phi);
  double c;
  if (theta < 1e-4) {
    c = 1.0 / 12.0 + theta2 / 720.0;
  } else {
    // 1/theta^2 - (1 + cos theta) / (2 theta sin theta), written via the
    // half-angle cotangent so it stays finite as theta -> pi.
    const double half = 0.5 * theta;
    c = 1.0 / theta2 - std::cos(half) / (2.0 * theta * std::sin(half));
  }
  return Mat3::Identity() - 0.5 * W + c * W * W;
}

PoseSE3 se3_exp(const Vec6& xi) {
  const Vec3 rho = xi.head<3>();
  const Vec3 phi = xi.tail<3>();
  return PoseSE3{exp_so3(phi), so3_left_jacobian(phi) * rho};
}

Vec6 se3_log(const PoseSE3& T) {
  const Vec3 phi = log_so3(T.rotation);
  Vec6 xi;
  xi.head<3>() = so3_left_jacobian_inverse(phi) * T.translation;
  xi.tail<3>() = phi;
  return xi;
}

PoseSE3 se3_compose(const PoseSE3& a, const PoseSE3& b) {
  return PoseSE3{quat_mul(a.rotation, b.rotation),
                 rotate(a.rotation, b.translation) + a.translation};
}

PoseSE3 se3_inverse(const PoseSE3& T) {
  const UnitQuaternion r = quat_inv(T.rotation);
  return PoseSE3{r, -rotate(r, T.translation)};
}

Vec3 se3_apply(const PoseSE3& T, const Vec3& p) {
  return rotate(T.rotation, p) + T.translation;
}

}  // namespace hydra
