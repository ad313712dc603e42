#pragma once

#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "hydra/uncertainty.hpp"

namespace hydra {

/**
 * Pose conventions used throughout fusion:
 *
 *  - Graph nodes store T_{w,i}, the pose of frame i in the world (its
 *    translation is the frame position).
 *  - Edge measurements are T_{to,from} = T_{to,w} T_{from,w}^-1, i.e. they map
 *    coordinates of the "from" frame into the "to" frame. Hence the
 *    dead-reckoned successor is T_{w,to} = T_{w,from} * T_{to,from}^-1.
 *  - Tangent vectors order translation first, rotation second.
 */
struct OdomEdge {
  int from = 0;
  int to = 0;
  PoseSE3 measurement;
  Mat6 covariance = Mat6::Identity();
};

struct RotEdge {
  int from = 0;
  int to = 0;
  UnitQuaternion measurement;
  CovSO3 covariance;
};

struct PoseGraph {
  std::map<int, PoseSE3> nodes;
  std::vector<OdomEdge> odom;
  std::vector<RotEdge> rot;
  std::optional<int> fixed_id;  // defaults to the smallest node id

  int gauge_id() const;
  const OdomEdge* find_odom(int from, int to) const;
  const RotEdge* find_rot(int from, int to) const;
  /// Edges must reference existing nodes and covariances must be valid.
  void validate() const;
};

struct PairResiduals {
  Vec6 dxi = Vec6::Zero();  // Log((T_{2,w} T_{1,w}^-1) That_{2,1}^-1)
  Vec3 dphi = Vec3::Zero();  // Log((R_{2,w} R_{1,w}^T) Rhat_{2,1}^T)
};

/// Residuals for node poses T_{w,1}, T_{w,2}.
PairResiduals pair_residuals(const PoseSE3& world_from_1, const PoseSE3& world_from_2,
                             const PoseSE3& odom_measurement,
                             const UnitQuaternion& rot_measurement);

/// Looks both edges up in the graph; throws kMissingEdge if either is absent.
PairResiduals pair_residuals(const PoseGraph& graph, int from, int to);

/// T_{w,to} implied by T_{w,from} and a relative measurement T_{to,from}.
PoseSE3 dead_reckon(const PoseSE3& world_from_prev, const PoseSE3& measurement);

struct SolverOptions {
  int max_iterations = 50;
  double update_tolerance = 1e-10;
  double jacobian_step = 1e-7;
  double damping = 1e-8;
};

struct FuseResult {
  PoseSE3 world_from_2;
  double cost = 0.0;
  int iterations = 0;
  std::vector<double> cost_history;  // cost before the first and after each accepted step
};

/// Gauss-Newton on T_{w,2} (left perturbation) minimizing
/// dxi^T S_vo^-1 dxi + dphi^T S_hn^-1 dphi with T_{w,1} held fixed.
/// Jacobians are central finite differences.
FuseResult fuse_pair(const PoseSE3& world_from_1, const PoseSE3& world_from_2_init,
                     const OdomEdge& odom, const RotEdge& rot,
                     const SolverOptions& options = {});

/// Cost of the two-pose loss at the given poses.
double pair_cost(const PoseSE3& world_from_1, const PoseSE3& world_from_2,
                 const OdomEdge& odom, const RotEdge& rot);

using Trajectory = std::vector<PoseSE3>;

/// Sequential two-pose fusion along a chain of consecutive node ids starting
/// at the gauge node. Pairs without a rotation edge are dead-reckoned.
std::map<int, PoseSE3> relax_graph(const PoseGraph& graph, const SolverOptions& options = {});

struct SimulatedEdges {
  std::vector<OdomEdge> odom;
  std::vector<RotEdge> rot;
};

/// Odometry edges get That = Exp(eps) * T_true with eps ~ N(0, blockdiag(
/// s_trans^2 I, rot_vo)); rotation edges get Exp(eps) * bias * R_true with
/// eps ~ N(0, rot_hn). Reported covariances equal the sampling ones.
SimulatedEdges simulate_odometry(const Trajectory& ground_truth, double sigma_trans,
                                 const CovSO3& rot_vo, const CovSO3& rot_hn,
                                 const UnitQuaternion& rot_bias, Rng& rng);

/// Planar drive with 1 m-scale steps and smoothly varying heading, used by
/// the fusion simulations.
Trajectory simulate_trajectory(int poses, double step_length);

PoseGraph make_graph(const Trajectory& initial, const SimulatedEdges& edges);

struct TrajectoryMetrics {
  double ate_translation_m = 0.0;
  double ate_rotation_deg = 0.0;
  double segment_translation_pct = 0.0;
  double segment_rotation_deg_per_100m = 0.0;
  int segments = 0;
};

/// Mean translational / angular deviation after aligning frame 0, plus
/// KITTI-style segment errors over lengths {100, ..., 800} m scaled by
/// min(1, path_length / 900 m).
TrajectoryMetrics traj_metrics(const Trajectory& estimate, const Trajectory& ground_truth);

Trajectory to_trajectory(const std::map<int, PoseSE3>& nodes);

struct FusionSimConfig {
  int poses = 500;
  double step_length = 1.0;
  double sigma_trans = 0.05;     // m
  double rot_vo_sigma_deg = 0.5;
  double rot_hn_sigma_deg = 0.15;
  Vec3 rot_bias_deg = Vec3::Zero();
  std::uint64_t seed = 0;
  SolverOptions solver;

  void validate() const;
};

struct FusionSimResult {
  Trajectory ground_truth;
  Trajectory odometry;  // dead reckoning of the odometry edges
  Trajectory fused;
  TrajectoryMetrics odometry_metrics;
  TrajectoryMetrics fused_metrics;
};

/// Simulates one drive, then dead-reckons and relaxes it from the true start.
FusionSimResult run_fusion_simulation(const FusionSimConfig& config);

// Text format: NODE / EDGE_SE3 / EDGE_ROT / FIX lines, '#' comments.
PoseGraph read_graph(std::istream& in);
PoseGraph read_graph_file(const std::string& path);
void write_graph(std::ostream& out, const PoseGraph& graph);
void write_nodes(std::ostream& out, const std::map<int, PoseSE3>& nodes);

}  // namespace hydra
