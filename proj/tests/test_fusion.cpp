#include <gtest/gtest.h>

#include <Eigen/LU>
#include <numbers>
#include <sstream>

#include "hydra/fusion.hpp"
#include "oracles.hpp"

using namespace hydra;

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

PoseSE3 random_pose(Rng& rng, double scale = 3.0) {
  std::uniform_real_distribution<double> u(-scale, scale);
  return PoseSE3{random_rotation(rng), Vec3(u(rng), u(rng), u(rng))};
}

PoseSE3 yaw_pose(double yaw, const Vec3& t = Vec3::Zero()) {
  return PoseSE3{exp_so3(Vec3(0.0, 0.0, yaw)), t};
}

// Relative measurement T_{to,from} computed with plain 4x4 matrices.
Eigen::Matrix4d relative_matrix(const PoseSE3& world_from_from, const PoseSE3& world_from_to) {
  return world_from_to.matrix().inverse() * world_from_from.matrix();
}

double pose_gap(const PoseSE3& a, const PoseSE3& b) {
  return (a.matrix() - b.matrix()).cwiseAbs().maxCoeff();
}

OdomEdge odom_edge(const PoseSE3& m, double sigma_t, double sigma_r) {
  OdomEdge e;
  e.from = 0;
  e.to = 1;
  e.measurement = m;
  e.covariance = Mat6::Zero();
  e.covariance.diagonal() << Vec3::Constant(sigma_t * sigma_t), Vec3::Constant(sigma_r * sigma_r);
  return e;
}

RotEdge rot_edge(const UnitQuaternion& m, double sigma) {
  RotEdge e;
  e.from = 0;
  e.to = 1;
  e.measurement = m;
  e.covariance = CovSO3::diagonal(Vec3::Constant(sigma * sigma));
  return e;
}

}  // namespace

TEST(PairResiduals, Examples) {
  Rng rng(1);
  const PoseSE3 T1 = random_pose(rng);
  const PoseSE3 T2 = random_pose(rng);
  const PoseSE3 rel = se3_compose(se3_inverse(T2), T1);
  EXPECT_LT((rel.matrix() - relative_matrix(T1, T2)).cwiseAbs().maxCoeff(), 1e-12);
  const auto exact = pair_residuals(T1, T2, rel, rel.rotation);
  EXPECT_LT(exact.dxi.norm(), 1e-12);
  EXPECT_LT(exact.dphi.norm(), 1e-12);

  const PoseSE3 shift{UnitQuaternion::identity(), Vec3(1.0, 0.0, 0.0)};
  const auto r = pair_residuals(PoseSE3::identity(), PoseSE3::identity(), shift, UnitQuaternion::identity());
  Vec6 expected;
  expected << -1, 0, 0, 0, 0, 0;
  EXPECT_LT((r.dxi - expected).norm(), 1e-15);
  EXPECT_EQ(r.dphi, Vec3::Zero());

  const auto m = random_rotation(rng);
  const auto a = pair_residuals(T1, T2, rel, m);
  const auto b = pair_residuals(T1, T2, rel, -m);
  EXPECT_LT((a.dphi - b.dphi).norm(), 1e-12);
}

TEST(PairResiduals, GraphLookup) {
  PoseGraph g;
  g.nodes[0] = PoseSE3::identity();
  g.nodes[1] = yaw_pose(0.1);
  g.odom.push_back(odom_edge(yaw_pose(-0.1), 0.1, 0.01));
  EXPECT_HYDRA_ERROR(pair_residuals(g, 0, 1), ErrorCode::kMissingEdge);
  g.rot.push_back(rot_edge(exp_so3(Vec3(0, 0, -0.1)), 0.01));
  const auto r = pair_residuals(g, 0, 1);
  EXPECT_LT(r.dxi.norm(), 1e-12);
  EXPECT_LT(r.dphi.norm(), 1e-12);
}

TEST(FusePair, UninformativeRotationKeepsOdometry) {
  Rng rng(2);
  for (int trial = 0; trial < 10; ++trial) {
    const PoseSE3 T1 = random_pose(rng);
    const PoseSE3 meas = se3_exp(0.3 * Vec6::Random());
    auto rot = rot_edge(random_rotation(rng), 1.0);
    rot.covariance = CovSO3::diagonal(Vec3::Constant(1e6));
    const auto odom = odom_edge(meas, 0.1, 0.01);
    const auto r = fuse_pair(T1, random_pose(rng, 0.5), odom, rot);
    const Eigen::Matrix4d expected = T1.matrix() * meas.matrix().inverse();
    EXPECT_LT((r.world_from_2.matrix() - expected).cwiseAbs().maxCoeff(), 1e-6);
  }
}

TEST(FusePair, AgreeingRotationGivesDeadReckoning) {
  Rng rng(3);
  const PoseSE3 T1 = random_pose(rng);
  const PoseSE3 meas = se3_exp(0.3 * Vec6::Random());
  const auto r = fuse_pair(T1, PoseSE3::identity(), odom_edge(meas, 0.1, 0.02), rot_edge(meas.rotation, 0.01));
  EXPECT_LT(pose_gap(r.world_from_2, dead_reckon(T1, meas)), 1e-9);
  EXPECT_LT(r.cost, 1e-18);
}

TEST(FusePair, PrecisionWeightedYawOracle) {
  const double s_vo = 0.5 * kDeg, s_hn = 0.15 * kDeg;
  const double yaw_vo = 0.05, yaw_hn = 0.04;
  const double w_vo = 1.0 / (s_vo * s_vo), w_hn = 1.0 / (s_hn * s_hn);
  const double expected = (w_vo * yaw_vo + w_hn * yaw_hn) / (w_vo + w_hn);
  const auto r = fuse_pair(PoseSE3::identity(), PoseSE3::identity(), odom_edge(yaw_pose(yaw_vo), 0.05, s_vo),
                           rot_edge(exp_so3(Vec3(0, 0, yaw_hn)), s_hn));
  const PoseSE3 rel = se3_compose(se3_inverse(r.world_from_2), PoseSE3::identity());
  const Vec3 phi = log_so3(rel.rotation);
  EXPECT_NEAR(phi.z(), expected, 1e-6);
  EXPECT_NEAR(phi.x(), 0.0, 1e-9);
  EXPECT_NEAR(phi.y(), 0.0, 1e-9);
  EXPECT_LT(rel.translation.norm(), 1e-9);
}

TEST(FusePair, CostNonIncreasing) {
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const PoseSE3 T1 = random_pose(rng);
    const PoseSE3 meas = se3_exp(0.5 * Vec6::Random());
    const auto rot = rot_edge(quat_mul(exp_so3(0.05 * Vec3::Random()), meas.rotation), 0.01);
    const auto r = fuse_pair(T1, random_pose(rng), odom_edge(meas, 0.05, 0.01), rot);
    ASSERT_GE(r.cost_history.size(), 1u);
    for (std::size_t i = 1; i < r.cost_history.size(); ++i) {
      EXPECT_LE(r.cost_history[i], r.cost_history[i - 1] * (1.0 + 1e-12));
    }
    EXPECT_NEAR(r.cost, pair_cost(T1, r.world_from_2, odom_edge(meas, 0.05, 0.01), rot), 1e-12);
  }
}

TEST(FusePair, GaugeAndScaleInvariance) {
  Rng rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    const PoseSE3 T1 = random_pose(rng);
    const PoseSE3 meas = se3_exp(0.4 * Vec6::Random());
    const auto odom = odom_edge(meas, 0.05, 0.02);
    const auto rot = rot_edge(quat_mul(exp_so3(0.03 * Vec3::Random()), meas.rotation), 0.01);
    const auto base = fuse_pair(T1, dead_reckon(T1, meas), odom, rot);
    const PoseSE3 rel = se3_compose(se3_inverse(base.world_from_2), T1);

    const PoseSE3 G = random_pose(rng);
    const PoseSE3 T1g = se3_compose(G, T1);
    const auto moved = fuse_pair(T1g, dead_reckon(T1g, meas), odom, rot);
    EXPECT_LT(pose_gap(se3_compose(se3_inverse(moved.world_from_2), T1g), rel), 1e-8);

    auto odom_s = odom;
    auto rot_s = rot;
    odom_s.covariance *= 7.5;
    rot_s.covariance = CovSO3(7.5 * rot.covariance.matrix());
    const auto scaled = fuse_pair(T1, dead_reckon(T1, meas), odom_s, rot_s);
    EXPECT_LT(pose_gap(scaled.world_from_2, base.world_from_2), 1e-8);
    EXPECT_NEAR(scaled.cost * 7.5, base.cost, 1e-9 * (1.0 + base.cost));
  }
}

TEST(FusePair, Errors) {
  auto odom = odom_edge(PoseSE3::identity(), 0.1, 0.1);
  odom.covariance(0, 0) = 0.0;
  EXPECT_HYDRA_ERROR(fuse_pair(PoseSE3::identity(), PoseSE3::identity(), odom,
                               rot_edge(UnitQuaternion::identity(), 0.1)),
                     ErrorCode::kSingularCovariance);
  SolverOptions tight;
  tight.max_iterations = 1;
  tight.update_tolerance = 0.0;
  EXPECT_HYDRA_ERROR(fuse_pair(PoseSE3::identity(), yaw_pose(1.0, Vec3(3, 2, 1)),
                               odom_edge(yaw_pose(0.2), 0.1, 0.1), rot_edge(exp_so3(Vec3(0, 0, 0.3)), 0.1),
                               tight),
                     ErrorCode::kNoConvergence);
}

TEST(RelaxGraph, WithoutRotationEdgesIsDeadReckoning) {
  const auto gt = simulate_trajectory(50, 1.0);
  Rng rng(6);
  auto edges = simulate_odometry(gt, 0.05, CovSO3::diagonal(Vec3::Constant(1e-4)),
                                 CovSO3::diagonal(Vec3::Constant(1e-5)), UnitQuaternion::identity(), rng);
  edges.rot.clear();
  const auto fused = relax_graph(make_graph(gt, edges));
  Eigen::Matrix4d T = gt[0].matrix();
  for (int i = 1; i < 50; ++i) {
    T = T * edges.odom[static_cast<std::size_t>(i - 1)].measurement.matrix().inverse();
    EXPECT_LT((fused.at(i).matrix() - T).cwiseAbs().maxCoeff(), 1e-9) << i;
  }
}

TEST(RelaxGraph, PerfectMeasurementsRecoverTrajectory) {
  const auto gt = simulate_trajectory(60, 1.0);
  Rng rng(7);
  const auto edges = simulate_odometry(gt, 0.0, CovSO3::zero(), CovSO3::zero(), UnitQuaternion::identity(), rng);
  auto with_cov = edges;
  for (auto& o : with_cov.odom) o.covariance = 1e-4 * Mat6::Identity();
  for (auto& r : with_cov.rot) r.covariance = CovSO3::diagonal(Vec3::Constant(1e-6));
  Trajectory start(gt.size(), PoseSE3::identity());
  start[0] = gt[0];
  const auto fused = to_trajectory(relax_graph(make_graph(start, with_cov)));
  for (std::size_t i = 0; i < gt.size(); ++i) EXPECT_LT(pose_gap(fused[i], gt[i]), 1e-8) << i;
}

TEST(RelaxGraph, ChainRequirements) {
  const auto gt = simulate_trajectory(5, 1.0);
  Rng rng(8);
  auto edges = simulate_odometry(gt, 0.01, CovSO3::diagonal(Vec3::Constant(1e-4)),
                                 CovSO3::diagonal(Vec3::Constant(1e-4)), UnitQuaternion::identity(), rng);
  auto g = make_graph(gt, edges);
  g.fixed_id = 2;
  EXPECT_HYDRA_ERROR(relax_graph(g), ErrorCode::kInvalidConfig);
  edges.odom.erase(edges.odom.begin() + 2);
  EXPECT_HYDRA_ERROR(relax_graph(make_graph(gt, edges)), ErrorCode::kMissingEdge);
  auto bad = make_graph(gt, edges);
  bad.rot[0].to = 99;
  EXPECT_ANY_THROW(bad.validate());
}

TEST(SimulateOdometry, ZeroNoiseGivesTruth) {
  const auto gt = simulate_trajectory(30, 1.0);
  Rng rng(9);
  const auto rot_vo = CovSO3::diagonal(Vec3(1e-4, 2e-4, 3e-4));
  const auto e = simulate_odometry(gt, 0.0, CovSO3::zero(), CovSO3::zero(), UnitQuaternion::identity(), rng);
  ASSERT_EQ(e.odom.size(), 29u);
  ASSERT_EQ(e.rot.size(), 29u);
  for (std::size_t i = 0; i < e.odom.size(); ++i) {
    const Eigen::Matrix4d rel = relative_matrix(gt[i], gt[i + 1]);
    EXPECT_LT((e.odom[i].measurement.matrix() - rel).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT(oracle::angle_between(e.rot[i].measurement, e.odom[i].measurement.rotation), 1e-12);
    EXPECT_EQ(e.odom[i].from, static_cast<int>(i));
    EXPECT_EQ(e.odom[i].to, static_cast<int>(i + 1));
  }
  Rng rng2(9);
  const auto noisy = simulate_odometry(gt, 0.2, rot_vo, CovSO3::zero(), UnitQuaternion::identity(), rng2);
  Mat6 expected = Mat6::Zero();
  expected.diagonal() << 0.04, 0.04, 0.04, 1e-4, 2e-4, 3e-4;
  EXPECT_LT((noisy.odom[0].covariance - expected).cwiseAbs().maxCoeff(), 1e-17);
}

TEST(SimulateOdometry, MonteCarloCovariances) {
  const int n = 10001;
  Trajectory gt;
  Rng pose_rng(10);
  for (int i = 0; i < n; ++i) gt.push_back(random_pose(pose_rng));
  const Vec3 hn(1e-4, 4e-4, 9e-4);
  const Vec3 vo(2e-4, 5e-4, 1e-3);
  const double st = 0.1;
  Rng rng(11);
  const auto bias = exp_so3(Vec3(0.0, 0.0, 0.01));
  const auto e = simulate_odometry(gt, st, CovSO3::diagonal(vo), CovSO3::diagonal(hn), bias, rng);
  Mat3 rot_cov = Mat3::Zero();
  Mat6 odom_cov = Mat6::Zero();
  for (std::size_t i = 0; i < e.odom.size(); ++i) {
    const PoseSE3 truth = se3_compose(se3_inverse(gt[i + 1]), gt[i]);
    const Vec3 phi = log_so3(quat_mul(e.rot[i].measurement, quat_inv(quat_mul(bias, truth.rotation))));
    rot_cov += phi * phi.transpose();
    const Vec6 xi = se3_log(se3_compose(e.odom[i].measurement, se3_inverse(truth)));
    odom_cov += xi * xi.transpose();
  }
  rot_cov /= static_cast<double>(e.odom.size());
  odom_cov /= static_cast<double>(e.odom.size());
  for (int k = 0; k < 3; ++k) {
    EXPECT_NEAR(rot_cov(k, k) / hn[k], 1.0, 0.05) << k;
    EXPECT_NEAR(odom_cov(k, k) / (st * st), 1.0, 0.05) << k;
    EXPECT_NEAR(odom_cov(k + 3, k + 3) / vo[k], 1.0, 0.05) << k;
  }
}

TEST(TrajMetrics, Fixtures) {
  const auto gt = simulate_trajectory(200, 1.0);
  const auto same = traj_metrics(gt, gt);
  EXPECT_EQ(same.ate_translation_m, 0.0);
  EXPECT_LT(same.ate_rotation_deg, 1e-6);
  EXPECT_LT(same.segment_translation_pct, 1e-9);
  EXPECT_GT(same.segments, 0);

  // A rigid motion of the whole estimate is removed by aligning frame 0.
  const PoseSE3 G{exp_so3(Vec3(0.1, -0.2, 0.3)), Vec3(5, -3, 2)};
  Trajectory moved;
  for (const auto& p : gt) moved.push_back(se3_compose(G, p));
  EXPECT_LT(traj_metrics(moved, gt).ate_translation_m, 1e-9);

  Trajectory offset = gt;
  for (std::size_t i = 1; i < offset.size(); ++i) offset[i].translation += Vec3(0.0, 1.0, 0.0);
  EXPECT_NEAR(traj_metrics(offset, gt).ate_translation_m, 199.0 / 200.0, 1e-12);

  EXPECT_HYDRA_ERROR(traj_metrics(Trajectory(3), Trajectory(4)), ErrorCode::kLengthMismatch);
}

TEST(TrajMetrics, StretchedStraightLine) {
  Trajectory gt, est;
  for (int i = 0; i <= 1000; ++i) {
    gt.push_back(PoseSE3{UnitQuaternion::identity(), Vec3(i, 0.0, 0.0)});
    est.push_back(PoseSE3{UnitQuaternion::identity(), Vec3(1.01 * i, 0.0, 0.0)});
  }
  const auto m = traj_metrics(est, gt);
  EXPECT_NEAR(m.segment_translation_pct, 1.0, 1e-9);
  EXPECT_EQ(m.segment_rotation_deg_per_100m, 0.0);
  EXPECT_NEAR(m.ate_translation_m, 0.01 * 500.0, 1e-9);
  // Starts every 10 frames; a segment of length 100 k fits if start + 100 k <= 1000.
  int expected_segments = 0;
  for (int start = 0; start <= 1000; start += 10) {
    for (int k = 1; k <= 8; ++k) expected_segments += start + 100 * k <= 1000 ? 1 : 0;
  }
  EXPECT_EQ(m.segments, expected_segments);
}

TEST(TrajMetrics, ConstantYawDriftOnSquare) {
  // Closed 400 m square; the estimate turns an extra delta at every corner.
  const double delta = 0.01;
  Trajectory gt, est;
  double heading_gt = 0.0, heading_est = 0.0;
  Vec3 p_gt = Vec3::Zero(), p_est = Vec3::Zero();
  for (int i = 0; i <= 400; ++i) {
    gt.push_back(yaw_pose(heading_gt, p_gt));
    est.push_back(yaw_pose(heading_est, p_est));
    if (i % 100 == 99) {
      heading_gt += std::numbers::pi / 2.0;
      heading_est += std::numbers::pi / 2.0 + delta;
    }
    p_gt += Vec3(std::cos(heading_gt), std::sin(heading_gt), 0.0);
    p_est += Vec3(std::cos(heading_est), std::sin(heading_est), 0.0);
  }
  const auto m = traj_metrics(est, gt);
  // Frame i has accumulated floor(i / 100) corner errors.
  double rot_sum = 0.0;
  for (int i = 0; i <= 400; ++i) rot_sum += (i / 100) * delta;
  EXPECT_NEAR(m.ate_rotation_deg, rot_sum / 401.0 / kDeg, 1e-9);
  EXPECT_GT(m.segment_rotation_deg_per_100m, 0.0);
}

TEST(GraphIo, RoundTripIsExact) {
  const auto gt = simulate_trajectory(8, 1.0);
  Rng rng(12);
  const auto e = simulate_odometry(gt, 0.05, CovSO3::diagonal(Vec3(1e-4, 2e-4, 3e-4)),
                                   CovSO3(Mat3{{2e-5, 1e-6, 0}, {1e-6, 3e-5, 0}, {0, 0, 1e-5}}),
                                   UnitQuaternion::identity(), rng);
  const auto g = make_graph(gt, e);
  std::stringstream ss;
  write_graph(ss, g);
  const auto back = read_graph(ss);
  ASSERT_EQ(back.nodes.size(), g.nodes.size());
  ASSERT_EQ(back.odom.size(), g.odom.size());
  ASSERT_EQ(back.rot.size(), g.rot.size());
  EXPECT_EQ(back.gauge_id(), 0);
  for (const auto& [id, p] : g.nodes) {
    EXPECT_EQ(back.nodes.at(id).translation, p.translation);
    // Reading renormalizes quaternions, which may move the last bit.
    EXPECT_LT((back.nodes.at(id).rotation.coeffs() - p.rotation.coeffs()).cwiseAbs().maxCoeff(), 1e-15);
  }
  for (std::size_t i = 0; i < g.odom.size(); ++i) {
    EXPECT_EQ(back.odom[i].covariance, g.odom[i].covariance);
    EXPECT_EQ(back.odom[i].measurement.translation, g.odom[i].measurement.translation);
    EXPECT_EQ(back.rot[i].covariance.matrix(), g.rot[i].covariance.matrix());
    EXPECT_LT((back.rot[i].measurement.coeffs() - g.rot[i].measurement.coeffs()).cwiseAbs().maxCoeff(), 1e-15);
  }
}

TEST(GraphIo, ParsesCommentsAndRejectsMalformedLines) {
  std::istringstream ok(
      "# two nodes\n"
      "NODE 0 0 0 0 1 0 0 0\n"
      "NODE 1 1 0 0 1 0 0 0\n"
      "\n"
      "EDGE_SE3 0 1 -1 0 0 1 0 0 0 1 0 0 0 0 0 1 0 0 0 0 1 0 0 0 1 0 0 1 0 1\n"
      "FIX 0\n");
  const auto g = read_graph(ok);
  EXPECT_EQ(g.nodes.size(), 2u);
  ASSERT_EQ(g.odom.size(), 1u);
  EXPECT_EQ(g.odom[0].covariance, Mat6::Identity());
  EXPECT_TRUE(g.rot.empty());

  for (const char* bad : {"NODE 0 0 0 0 1 0 0\n", "NODE 0 0 0 0 1 0 0 0 7\n", "VERTEX 0\n",
                          "EDGE_ROT 0 1 1 0 0 0 1 0 0 1 0\n", "NODE x 0 0 0 1 0 0 0\n"}) {
    std::istringstream in(bad);
    EXPECT_HYDRA_ERROR(read_graph(in), ErrorCode::kParseError);
  }
  EXPECT_HYDRA_ERROR(read_graph_file("/nonexistent/graph.txt"), ErrorCode::kParseError);
}
