#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "hydra/so3.hpp"
#include "oracles.hpp"

using namespace hydra;

namespace {

constexpr double kPi = std::numbers::pi;

void expect_quat_near(const UnitQuaternion& a, const UnitQuaternion& b, double tol) {
  EXPECT_LE((a.coeffs() - b.coeffs()).cwiseAbs().maxCoeff(), tol)
      << a.coeffs().transpose() << " vs " << b.coeffs().transpose();
}

Vec3 random_vector(Rng& rng, double max_norm) {
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> uniform(0.0, max_norm);
  Vec3 v(normal(rng), normal(rng), normal(rng));
  return v.normalized() * uniform(rng);
}

}  // namespace

TEST(QuatNormalize, Examples) {
  expect_quat_near(quat_normalize(Vec4(2, 0, 0, 0)), UnitQuaternion::from_coeffs(1, 0, 0, 0), 0);
  const auto q = quat_normalize(Vec4(0, 0, 0, -3));
  EXPECT_EQ(q.z(), -1.0);
  expect_quat_near(quat_normalize(Vec4(1, 1, 1, 1)), quat_normalize(Vec4(0.5, 0.5, 0.5, 0.5)), 1e-15);
  EXPECT_DOUBLE_EQ(quat_normalize(Vec4(1, 1, 1, 1)).w(), 0.5);
}

TEST(QuatNormalize, DegenerateNorm) {
  EXPECT_HYDRA_ERROR(quat_normalize(Vec4::Zero()), ErrorCode::kDegenerateNorm);
  EXPECT_HYDRA_ERROR(quat_normalize(Vec4(1e-9, 0, 0, 0)), ErrorCode::kDegenerateNorm);
  EXPECT_NO_THROW(quat_normalize(Vec4(1e-9, 0, 0, 0), 1e-12));
}

TEST(QuatMul, Examples) {
  Rng rng(3);
  const auto q = random_rotation(rng);
  expect_quat_near(quat_mul(UnitQuaternion::identity(), q), q, 1e-15);
  expect_quat_near(canonicalize(quat_mul(q, quat_inv(q))), UnitQuaternion::identity(), 1e-15);
  const auto half = exp_so3(Vec3(0, 0, kPi / 2));
  const auto full = quat_mul(half, half);
  EXPECT_NEAR(std::abs(full.z()), 1.0, 1e-15);
  EXPECT_NEAR(full.w(), 0.0, 1e-15);
}

TEST(QuatInv, Examples) {
  expect_quat_near(quat_inv(UnitQuaternion::identity()), UnitQuaternion::identity(), 0);
  expect_quat_near(canonicalize(-UnitQuaternion::identity()), UnitQuaternion::identity(), 0);
  expect_quat_near(quat_inv(exp_so3(Vec3(0.7, 0, 0))), exp_so3(Vec3(-0.7, 0, 0)), 1e-15);
}

TEST(Canonicalize, ZeroScalarTieBreak) {
  const auto q = canonicalize(UnitQuaternion::from_coeffs(0, 0, -1, 0));
  EXPECT_EQ(q.y(), 1.0);
  const auto r = canonicalize(UnitQuaternion::from_coeffs(0, -0.6, 0.8, 0));
  EXPECT_GT(r.x(), 0.0);
  Rng rng(11);
  for (int i = 0; i < 100; ++i) {
    const auto p = random_rotation(rng);
    expect_quat_near(canonicalize(p), canonicalize(-p), 0);
    EXPECT_GE(canonicalize(p).w(), 0.0);
  }
}

TEST(ExpSo3, Examples) {
  expect_quat_near(exp_so3(Vec3::Zero()), UnitQuaternion::identity(), 0);
  const auto q = exp_so3(Vec3(0, 0, kPi / 2));
  EXPECT_NEAR(q.w(), std::sqrt(0.5), 1e-15);
  EXPECT_NEAR(q.z(), std::sqrt(0.5), 1e-15);
  // Series oracle: sin(t/2)/t = 1/2 - t^2/48 + ..., cos(t/2) = 1 - t^2/8
  const double t = 1e-9;
  const auto small = exp_so3(Vec3(t, 0, 0));
  EXPECT_NEAR(small.x(), t * (0.5 - t * t / 48.0), 1e-15);
  EXPECT_NEAR(small.w(), 1.0 - t * t / 8.0, 1e-15);
}

TEST(ExpSo3, AgreesWithAngleAxis) {
  Rng rng(5);
  for (int i = 0; i < 200; ++i) {
    const Vec3 phi = random_vector(rng, kPi);
    const Eigen::Quaterniond ref(Eigen::AngleAxisd(phi.norm(), phi.normalized()));
    const auto q = exp_so3(phi);
    EXPECT_LT(oracle::angle_between(oracle::to_eigen(q), ref), 1e-7);
  }
}

TEST(LogSo3, Examples) {
  EXPECT_EQ(log_so3(UnitQuaternion::identity()), Vec3::Zero());
  const Vec3 phi = log_so3(UnitQuaternion::from_coeffs(std::sqrt(0.5), 0, 0, std::sqrt(0.5)));
  EXPECT_NEAR((phi - Vec3(0, 0, kPi / 2)).norm(), 0.0, 1e-15);
  Rng rng(7);
  for (int i = 0; i < 100; ++i) {
    const auto q = random_rotation(rng);
    EXPECT_EQ(log_so3(q), log_so3(-q));
    EXPECT_LE(log_so3(q).norm(), kPi + 1e-15);
  }
}

TEST(LogSo3, HalfTurnAxisSign) {
  const Vec3 a = log_so3(UnitQuaternion::from_coeffs(0, 0, -1, 0));
  EXPECT_NEAR((a - Vec3(0, kPi, 0)).norm(), 0, 1e-15);
  const Vec3 b = log_so3(UnitQuaternion::from_coeffs(0, 0.6, -0.8, 0));
  EXPECT_GT(b.y(), 0.0);
  EXPECT_NEAR(b.norm(), kPi, 1e-15);
}

TEST(ExpLog, RoundTrip) {
  Rng rng(9);
  for (int i = 0; i < 2000; ++i) {
    const Vec3 phi = random_vector(rng, kPi - 1e-6);
    EXPECT_LT((log_so3(exp_so3(phi)) - phi).norm(), 1e-9);
  }
  for (double n : {1e-12, 1e-8, 1e-6, 1e-5, kPi - 1e-6}) {
    const Vec3 phi = n * Vec3(1, -2, 0.5).normalized();
    EXPECT_LT((log_so3(exp_so3(phi)) - phi).norm(), 1e-9) << n;
  }
}

TEST(Matrix, Examples) {
  EXPECT_EQ(quat_to_matrix(UnitQuaternion::identity()), Mat3::Identity());
  const Mat3 R = quat_to_matrix(exp_so3(Vec3(0, 0, kPi)));
  EXPECT_LT((R - Vec3(-1, -1, 1).asDiagonal().toDenseMatrix()).cwiseAbs().maxCoeff(), 1e-15);
  Rng rng(13);
  for (int i = 0; i < 1000; ++i) {
    const auto q = random_rotation(rng);
    const auto back = matrix_to_quat(quat_to_matrix(q));
    EXPECT_GE(back.w(), 0.0);
    EXPECT_LT(oracle::angle_between(q, back), 1e-7);
    EXPECT_LT(std::min((q.coeffs() - back.coeffs()).norm(), (q.coeffs() + back.coeffs()).norm()),
              1e-12);
    const Mat3 ref = oracle::to_eigen(q).toRotationMatrix();
    EXPECT_LT((quat_to_matrix(q) - ref).cwiseAbs().maxCoeff(), 1e-14);
  }
}

TEST(Matrix, NotARotation) {
  EXPECT_HYDRA_ERROR(matrix_to_quat(2.0 * Mat3::Identity()), ErrorCode::kNotARotation);
  EXPECT_HYDRA_ERROR(matrix_to_quat(Vec3(1, 1, -1).asDiagonal().toDenseMatrix()),
                     ErrorCode::kNotARotation);
}

TEST(Matrix, Homomorphism) {
  Rng rng(17);
  for (int i = 0; i < 200; ++i) {
    const auto a = random_rotation(rng);
    const auto b = random_rotation(rng);
    EXPECT_LT((quat_to_matrix(quat_mul(a, b)) - quat_to_matrix(a) * quat_to_matrix(b))
                  .cwiseAbs()
                  .maxCoeff(),
              1e-10);
  }
}

TEST(Dist, Examples) {
  Rng rng(19);
  const auto q = random_rotation(rng);
  for (Metric m : {Metric::kAngular, Metric::kChordal, Metric::kQuaternionic}) {
    EXPECT_NEAR(dist(m, q, q), 0.0, 1e-7);
  }
  const auto half_turn = exp_so3(Vec3(0, kPi, 0));
  const auto id = UnitQuaternion::identity();
  EXPECT_NEAR(dist(Metric::kQuaternionic, half_turn, id), std::sqrt(2.0), 1e-12);
  EXPECT_NEAR(dist(Metric::kChordal, half_turn, id), 2.0 * std::sqrt(2.0), 1e-12);
  EXPECT_NEAR(dist(Metric::kAngular, half_turn, id), kPi, 1e-12);
  EXPECT_EQ(dist(Metric::kQuaternionic, q, -q), 0.0);
}

TEST(Dist, HalfAngleIdentitiesAndLeftInvariance) {
  Rng rng(23);
  for (int i = 0; i < 1000; ++i) {
    const auto a = random_rotation(rng);
    const auto b = random_rotation(rng);
    const double theta = dist(Metric::kAngular, a, b);
    EXPECT_NEAR(theta, oracle::angle_between(a, b), 1e-7);
    EXPECT_NEAR(dist(Metric::kQuaternionic, a, b), 2.0 * std::sin(theta / 4.0), 1e-9);
    EXPECT_NEAR(dist(Metric::kChordal, a, b), 2.0 * std::sqrt(2.0) * std::sin(theta / 2.0), 1e-9);
    const auto c = random_rotation(rng);
    for (Metric m : {Metric::kAngular, Metric::kChordal, Metric::kQuaternionic}) {
      EXPECT_NEAR(dist(m, a, b), dist(m, quat_mul(c, a), quat_mul(c, b)), 1e-9);
    }
    EXPECT_NEAR(dist(Metric::kChordal, quat_to_matrix(a), quat_to_matrix(b)),
                dist(Metric::kChordal, a, b), 1e-12);
  }
}

TEST(RandomRotation, DeterministicUnitAndUniform) {
  Rng r1(99), r2(99);
  for (int i = 0; i < 10; ++i) EXPECT_EQ(random_rotation(r1).coeffs(), random_rotation(r2).coeffs());
  Rng rng(5);
  Vec3 mean = Vec3::Zero();
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const auto q = random_rotation(rng);
    EXPECT_NEAR(q.coeffs().norm(), 1.0, 1e-12);
    mean += rotate(q, Vec3::UnitX());
  }
  mean /= n;
  EXPECT_LT(mean.cwiseAbs().maxCoeff(), 0.02);
}

TEST(Se3, Examples) {
  const PoseSE3 id = se3_exp(Vec6::Zero());
  EXPECT_EQ(id.translation, Vec3::Zero());
  EXPECT_EQ(id.rotation.coeffs(), UnitQuaternion::identity().coeffs());
  Vec6 xi;
  xi << 1, 2, 3, 0, 0, 0;
  const PoseSE3 t = se3_exp(xi);
  EXPECT_EQ(t.translation, Vec3(1, 2, 3));
  EXPECT_EQ(t.rotation.coeffs(), UnitQuaternion::identity().coeffs());
}

TEST(Se3, RoundTripAndGroupLaws) {
  Rng rng(29);
  std::normal_distribution<double> normal;
  for (int i = 0; i < 1000; ++i) {
    Vec6 xi;
    xi.head<3>() = 5.0 * Vec3(normal(rng), normal(rng), normal(rng));
    xi.tail<3>() = random_vector(rng, kPi - 1e-3);
    EXPECT_LT((se3_log(se3_exp(xi)) - xi).norm(), 1e-9);

    const PoseSE3 a{random_rotation(rng), Vec3(normal(rng), normal(rng), normal(rng))};
    const PoseSE3 b{random_rotation(rng), Vec3(normal(rng), normal(rng), normal(rng))};
    const PoseSE3 c{random_rotation(rng), Vec3(normal(rng), normal(rng), normal(rng))};
    const Eigen::Matrix4d lhs = se3_compose(se3_compose(a, b), c).matrix();
    const Eigen::Matrix4d rhs = se3_compose(a, se3_compose(b, c)).matrix();
    EXPECT_LT((lhs - rhs).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_LT((se3_compose(se3_inverse(a), a).matrix() - Eigen::Matrix4d::Identity())
                  .cwiseAbs()
                  .maxCoeff(),
              1e-10);
    EXPECT_LT((a.matrix() * b.matrix() - se3_compose(a, b).matrix()).cwiseAbs().maxCoeff(), 1e-10);
    const Vec3 p(normal(rng), normal(rng), normal(rng));
    EXPECT_LT((se3_apply(a, p) - (quat_to_matrix(a.rotation) * p + a.translation)).norm(), 1e-12);
  }
}

TEST(Se3, ExpMatchesMatrixExponentialSeries) {
  Rng rng(31);
  for (int i = 0; i < 20; ++i) {
    Vec6 xi;
    xi.head<3>() = random_vector(rng, 3.0);
    xi.tail<3>() = random_vector(rng, 2.5);
    Eigen::Matrix4d X = Eigen::Matrix4d::Zero();
    X.topLeftCorner<3, 3>() = skew(xi.tail<3>());
    X.topRightCorner<3, 1>() = xi.head<3>();
    Eigen::Matrix4d term = Eigen::Matrix4d::Identity(), sum = Eigen::Matrix4d::Identity();
    for (int k = 1; k < 60; ++k) {
      term = term * X / k;
      sum += term;
    }
    EXPECT_LT((se3_exp(xi).matrix() - sum).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(LeftJacobian, InverseAndSmallAngle) {
  Rng rng(37);
  for (int i = 0; i < 100; ++i) {
    const Vec3 phi = random_vector(rng, 3.0);
    EXPECT_LT((so3_left_jacobian(phi) * so3_left_jacobian_inverse(phi) - Mat3::Identity())
                  .cwiseAbs()
                  .maxCoeff(),
              1e-10);
  }
  EXPECT_LT((so3_left_jacobian(Vec3(1e-9, 0, 0)) - Mat3::Identity()).norm(), 1e-8);
}
