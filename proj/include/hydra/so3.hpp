#pragma once

#include <Eigen/Core>
#include <random>

#include "hydra/error.hpp"

namespace hydra {

using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat3 = Eigen::Matrix3d;
using Mat6 = Eigen::Matrix<double, 6, 6>;
using RotationMatrix = Eigen::Matrix3d;
using Rng = std::mt19937_64;

inline constexpr double kNormEpsilon = 1e-8;
inline constexpr double kTaylorThreshold = 1e-6;

/**
 * Unit quaternion stored scalar-first as (w, x, y, z) with the Hamilton
 * product convention. q and -q encode the same rotation; no sign is imposed
 * unless canonicalize() is called.
 */
class UnitQuaternion {
 public:
  UnitQuaternion() : wxyz_(1.0, 0.0, 0.0, 0.0) {}

  /// Normalizes the given coefficients. Throws kDegenerateNorm when the
  /// input norm is at or below eps.
  static UnitQuaternion from_coeffs(double w, double x, double y, double z,
                                    double eps = kNormEpsilon);
  static UnitQuaternion from_coeffs(const Vec4& wxyz,
                                    double eps = kNormEpsilon);
  static UnitQuaternion identity() { return {}; }

  double w() const { return wxyz_[0]; }
  double x() const { return wxyz_[1]; }
  double y() const { return wxyz_[2]; }
  double z() const { return wxyz_[3]; }
  const Vec4& coeffs() const { return wxyz_; }
  Vec3 vec() const { return wxyz_.tail<3>(); }

  UnitQuaternion operator-() const;

 private:
  explicit UnitQuaternion(const Vec4& unit) : wxyz_(unit) {}
  friend UnitQuaternion quat_normalize(const Vec4& v, double eps);

  Vec4 wxyz_;
};

/// v / |v| with the sign of v preserved.
UnitQuaternion quat_normalize(const Vec4& v, double eps = kNormEpsilon);

/// Hamilton product a * b, renormalized.
UnitQuaternion quat_mul(const UnitQuaternion& a, const UnitQuaternion& b);
UnitQuaternion quat_inv(const UnitQuaternion& q);

/// Flips sign so that w >= 0; when w == 0 the first nonzero vector
/// component is made positive.
UnitQuaternion canonicalize(const UnitQuaternion& q);

/// Rotation vector -> quaternion. The rotation angle equals |phi|.
UnitQuaternion exp_so3(const Vec3& phi);

/// Principal logarithm with |phi| in [0, pi]. The input sign is ignored.
/// At exactly pi the axis sign makes its largest-magnitude component
/// positive, so the map is discontinuous there.
Vec3 log_so3(const UnitQuaternion& q);

RotationMatrix quat_to_matrix(const UnitQuaternion& q);

/// Throws kNotARotation if |R^T R - I| or |det R - 1| exceeds 1e-6.
UnitQuaternion matrix_to_quat(const RotationMatrix& R);

Mat3 skew(const Vec3& v);

/// Rotates a vector by q.
Vec3 rotate(const UnitQuaternion& q, const Vec3& v);

enum class Metric { kAngular, kChordal, kQuaternionic };

/// d_ang in radians; chordal and quaternionic distances are dimensionless.
double dist(Metric metric, const UnitQuaternion& a, const UnitQuaternion& b);
double dist(Metric metric, const RotationMatrix& a, const RotationMatrix& b);

/// Uniform on SO(3): normalized 4-vector of iid standard normals.
UnitQuaternion random_rotation(Rng& rng);

// ---------------------------------------------------------------------------
// SE(3)
// ---------------------------------------------------------------------------

/// Rigid transform x -> R x + t.
struct PoseSE3 {
  UnitQuaternion rotation;
  Vec3 translation = Vec3::Zero();

  static PoseSE3 identity() { return {}; }
  Eigen::Matrix4d matrix() const;
};

/// Tangent ordering is (translation rho, rotation phi).
PoseSE3 se3_exp(const Vec6& xi);
Vec6 se3_log(const PoseSE3& T);
PoseSE3 se3_compose(const PoseSE3& a, const PoseSE3& b);
PoseSE3 se3_inverse(const PoseSE3& T);
Vec3 se3_apply(const PoseSE3& T, const Vec3& p);

/// Left Jacobian of SO(3) and its inverse.
Mat3 so3_left_jacobian(const Vec3& phi);
Mat3 so3_left_jacobian_inverse(const Vec3& phi);

}  // namespace hydra
