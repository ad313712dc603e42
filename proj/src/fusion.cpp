#include "hydra/fusion.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

namespace hydra {
namespace {

constexpr double kRadToDeg = 180.0 / std::numbers::pi;

template <int N>
Eigen::Matrix<double, N, N> lower_factor(const Eigen::Matrix<double, N, N>& cov,
                                         const char* what) {
  Eigen::LLT<Eigen::Matrix<double, N, N>> llt(cov);
  if (llt.info() != Eigen::Success) {
    throw Error(ErrorCode::kSingularCovariance, std::string(what) + " is not positive definite");
  }
  return llt.matrixL();
}

// Stacked whitened residual [L_vo^-1 dxi; L_hn^-1 dphi].
struct WhitenedProblem {
  PoseSE3 world_from_1;
  PoseSE3 odom;
  UnitQuaternion rot;
  Mat6 L_vo;
  Mat3 L_hn;

  Eigen::Matrix<double, 9, 1> residual(const PoseSE3& world_from_2) const {
    const PairResiduals r = pair_residuals(world_from_1, world_from_2, odom, rot);
    Eigen::Matrix<double, 9, 1> out;
    out.head<6>() = L_vo.triangularView<Eigen::Lower>().solve(r.dxi);
    out.tail<3>() = L_hn.triangularView<Eigen::Lower>().solve(r.dphi);
    return out;
  }
};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

int PoseGraph::gauge_id() const {
  if (fixed_id) return *fixed_id;
  if (nodes.empty()) throw Error(ErrorCode::kInvalidConfig, "graph has no nodes");
  return nodes.begin()->first;
}

const OdomEdge* PoseGraph::find_odom(int from, int to) const {
  for (const auto& e : odom) {
    if (e.from == from && e.to == to) return &e;
  }
  return nullptr;
}

const RotEdge* PoseGraph::find_rot(int from, int to) const {
  for (const auto& e : rot) {
    if (e.from == from && e.to == to) return &e;
  }
  return nullptr;
}

void PoseGraph::validate() const {
  auto require = [&](int id) {
    if (!nodes.contains(id)) {
      throw Error(ErrorCode::kMissingEdge, "edge references unknown node " + std::to_string(id));
    }
  };
  if (nodes.empty()) throw Error(ErrorCode::kInvalidConfig, "graph has no nodes");
  require(gauge_id());
  for (const auto& e : odom) {
    require(e.from);
    require(e.to);
    if ((e.covariance - e.covariance.transpose()).cwiseAbs().maxCoeff() > 1e-10) {
      throw Error(ErrorCode::kSingularCovariance, "odometry covariance is not symmetric");
    }
    Eigen::SelfAdjointEigenSolver<Mat6> eig(e.covariance, Eigen::EigenvaluesOnly);
    if (eig.eigenvalues().minCoeff() < -1e-10) {
      throw Error(ErrorCode::kSingularCovariance, "odometry covariance is not PSD");
    }
  }
  for (const auto& e : rot) {
    require(e.from);
    require(e.to);
  }
}

PairResiduals pair_residuals(const PoseSE3& world_from_1, const PoseSE3& world_from_2,
                             const PoseSE3& odom_measurement,
                             const UnitQuaternion& rot_measurement) {
  // T_{2,w} T_{1,w}^-1 = T_{w,2}^-1 T_{w,1}
  const PoseSE3 relative = se3_compose(se3_inverse(world_from_2), world_from_1);
  PairResiduals r;
  r.dxi = se3_log(se3_compose(relative, se3_inverse(odom_measurement)));
  r.dphi = log_so3(quat_mul(relative.rotation, quat_inv(rot_measurement)));
  return r;
}

PairResiduals pair_residuals(const PoseGraph& graph, int from, int to) {
  const OdomEdge* odom = graph.find_odom(from, to);
  const RotEdge* rot = graph.find_rot(from, to);
  if (!odom || !rot) {
    std::ostringstream os;
    os << "pair " << from << "->" << to << " lacks " << (odom ? "a rotation" : "an odometry")
       << " edge";
    throw Error(ErrorCode::kMissingEdge, os.str());
  }
  return pair_residuals(graph.nodes.at(from), graph.nodes.at(to), odom->measurement,
                        rot->measurement);
}

PoseSE3 dead_reckon(const PoseSE3& world_from_prev, const PoseSE3& measurement) {
  return se3_compose(world_from_prev, se3_inverse(measurement));
}

double pair_cost(const PoseSE3& world_from_1, const PoseSE3& world_from_2,
                 const OdomEdge& odom, const RotEdge& rot) {
  const WhitenedProblem p{world_from_1, odom.measurement, rot.measurement,
                          lower_factor<6>(odom.covariance, "odometry covariance"),
                          lower_factor<3>(rot.covariance.matrix(), "rotation covariance")};
  return p.residual(world_from_2).squaredNorm();
}

FuseResult fuse_pair(const PoseSE3& world_from_1, const PoseSE3& world_from_2_init,
                     const OdomEdge& odom, const RotEdge& rot, const SolverOptions& options) {
  const WhitenedProblem problem{world_from_1, odom.measurement, rot.measurement,
                                lower_factor<6>(odom.covariance, "odometry covariance"),
                                lower_factor<3>(rot.covariance.matrix(), "rotation covariance")};
  using Vec9 = Eigen::Matrix<double, 9, 1>;
  using Jac = Eigen::Matrix<double, 9, 6>;

  FuseResult result;
  result.world_from_2 = world_from_2_init;
  Vec9 r = problem.residual(result.world_from_2);
  result.cost = r.squaredNorm();
  result.cost_history.push_back(result.cost);

  const double h = options.jacobian_step;
  for (int it = 1; it <= options.max_iterations; ++it) {
    result.iterations = it;
    Jac J;
    for (int k = 0; k < 6; ++k) {
      Vec6 d = Vec6::Zero();
      d[k] = h;
      const Vec9 plus = problem.residual(se3_compose(se3_exp(d), result.world_from_2));
      const Vec9 minus = problem.residual(se3_compose(se3_exp(-d), result.world_from_2));
      J.col(k) = (plus - minus) / (2.0 * h);
    }
    const Mat6 H = J.transpose() * J;
    const Vec6 g = J.transpose() * r;

    double lambda = 0.0;
    for (;;) {
      const Mat6 A = H + lambda * Mat6::Identity();
      Eigen::LLT<Mat6> llt(A);
      const bool singular = llt.info() != Eigen::Success || llt.rcond() < 1e-14;
      if (singular) {
        if (lambda >= options.damping && lambda > 0.0 && lambda * 10.0 > 1e8) {
          throw Error(ErrorCode::kSingularNormalEquations, "normal equations stay singular under damping");
        }
        lambda = lambda == 0.0 ? options.damping : lambda * 10.0;
        continue;
      }
      const Vec6 delta = llt.solve(-g);
      const PoseSE3 candidate = se3_compose(se3_exp(delta), result.world_from_2);
      const Vec9 r_new = problem.residual(candidate);
      const double cost_new = r_new.squaredNorm();
      if (cost_new <= result.cost) {
        result.world_from_2 = candidate;
        result.cost = cost_new;
        result.cost_history.push_back(cost_new);
        r = r_new;
        if (delta.norm() < options.update_tolerance) return result;
        break;
      }
      if (delta.norm() < options.update_tolerance || lambda > 1e10) {
        // No decrease is available at this resolution: converged.
        return result;
      }
      lambda = lambda == 0.0 ? options.damping : lambda * 10.0;
    }
  }
  std::ostringstream os;
  os << "fuse_pair did not converge in " << options.max_iterations << " iterations";
  throw Error(ErrorCode::kNoConvergence, os.str());
}

std::map<int, PoseSE3> relax_graph(const PoseGraph& graph, const SolverOptions& options) {
  graph.validate();
  const int gauge = graph.gauge_id();
  if (graph.nodes.begin()->first != gauge) {
    throw Error(ErrorCode::kInvalidConfig, "chain relaxation needs the gauge at the first node");
  }
  std::map<int, PoseSE3> fused;
  fused[gauge] = graph.nodes.at(gauge);
  auto prev = graph.nodes.begin();
  for (auto it = std::next(prev); it != graph.nodes.end(); prev = it, ++it) {
    const int from = prev->first;
    const int to = it->first;
    const OdomEdge* odom = graph.find_odom(from, to);
    if (!odom) {
      throw Error(ErrorCode::kMissingEdge, "no odometry edge " + std::to_string(from) + "->" +
                                               std::to_string(to) + " in chain");
    }
    const PoseSE3 guess = dead_reckon(fused.at(from), odom->measurement);
    const RotEdge* rot = graph.find_rot(from, to);
    fused[to] = rot ? fuse_pair(fused.at(from), guess, *odom, *rot, options).world_from_2 : guess;
  }
  return fused;
}

SimulatedEdges simulate_odometry(const Trajectory& gt, double sigma_trans, const CovSO3& rot_vo,
                                 const CovSO3& rot_hn, const UnitQuaternion& rot_bias, Rng& rng) {
  if (gt.size() < 2) throw Error(ErrorCode::kTooFewSamples, "need at least two poses");
  if (!(sigma_trans >= 0.0)) throw Error(ErrorCode::kInvalidConfig, "negative translation noise");
  Mat6 cov_vo = Mat6::Zero();
  cov_vo.topLeftCorner<3, 3>() = sigma_trans * sigma_trans * Mat3::Identity();
  cov_vo.bottomRightCorner<3, 3>() = rot_vo.matrix();
  Eigen::SelfAdjointEigenSolver<Mat6> eig(cov_vo);
  const Mat6 factor =
      eig.eigenvectors() * eig.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();

  std::normal_distribution<double> normal(0.0, 1.0);
  SimulatedEdges edges;
  for (std::size_t i = 1; i < gt.size(); ++i) {
    const PoseSE3 truth = se3_compose(se3_inverse(gt[i]), gt[i - 1]);
    Vec6 z;
    for (int k = 0; k < 6; ++k) z[k] = normal(rng);
    const Vec6 eps = factor * z;
    OdomEdge o;
    o.from = static_cast<int>(i - 1);
    o.to = static_cast<int>(i);
    o.measurement = eps.isZero(0.0) ? truth : se3_compose(se3_exp(eps), truth);
    o.covariance = cov_vo;
    edges.odom.push_back(o);

    RotEdge r;
    r.from = o.from;
    r.to = o.to;
    r.measurement = sample_rotation(quat_mul(rot_bias, truth.rotation), rot_hn, rng);
    r.covariance = rot_hn;
    edges.rot.push_back(r);
  }
  return edges;
}

Trajectory simulate_trajectory(int poses, double step_length) {
  Trajectory traj;
  traj.reserve(static_cast<std::size_t>(std::max(poses, 0)));
  double heading = 0.0;
  Vec3 position = Vec3::Zero();
  for (int k = 0; k < poses; ++k) {
    traj.push_back(PoseSE3{exp_so3(Vec3(0.0, 0.0, heading)), position});
    const double turn = 0.02 * std::sin(2.0 * std::numbers::pi * k / 160.0) +
                        0.01 * std::sin(2.0 * std::numbers::pi * k / 47.0);
    position += step_length * Vec3(std::cos(heading), std::sin(heading), 0.0);
    heading += turn;
  }
  return traj;
}

PoseGraph make_graph(const Trajectory& initial, const SimulatedEdges& edges) {
  PoseGraph g;
  for (std::size_t i = 0; i < initial.size(); ++i) g.nodes[static_cast<int>(i)] = initial[i];
  g.odom = edges.odom;
  g.rot = edges.rot;
  g.fixed_id = 0;
  return g;
}

TrajectoryMetrics traj_metrics(const Trajectory& est, const Trajectory& gt) {
  if (est.size() != gt.size()) {
    std::ostringstream os;
    os << "estimate has " << est.size() << " poses, ground truth " << gt.size();
    throw Error(ErrorCode::kLengthMismatch, os.str());
  }
  TrajectoryMetrics m;
  if (gt.empty()) return m;

  const PoseSE3 align = se3_compose(gt.front(), se3_inverse(est.front()));
  Trajectory aligned;
  aligned.reserve(est.size());
  for (const auto& p : est) aligned.push_back(se3_compose(align, p));
  for (std::size_t i = 0; i < gt.size(); ++i) {
    m.ate_translation_m += (aligned[i].translation - gt[i].translation).norm();
    m.ate_rotation_deg += dist(Metric::kAngular, aligned[i].rotation, gt[i].rotation) * kRadToDeg;
  }
  m.ate_translation_m /= static_cast<double>(gt.size());
  m.ate_rotation_deg /= static_cast<double>(gt.size());

  std::vector<double> distance(gt.size(), 0.0);
  for (std::size_t i = 1; i < gt.size(); ++i) {
    distance[i] = distance[i - 1] + (gt[i].translation - gt[i - 1].translation).norm();
  }
  const double scale = std::min(1.0, distance.back() / 900.0);
  if (!(scale > 0.0)) return m;
  constexpr std::size_t kFrameStep = 10;
  double t_sum = 0.0;
  double r_sum = 0.0;
  for (std::size_t first = 0; first < gt.size(); first += kFrameStep) {
    for (int k = 1; k <= 8; ++k) {
      const double len = 100.0 * k * scale;
      std::size_t last = first;
      while (last < gt.size() && distance[last] < distance[first] + len) ++last;
      if (last >= gt.size()) continue;
      const PoseSE3 delta_gt = se3_compose(se3_inverse(gt[first]), gt[last]);
      const PoseSE3 delta_est = se3_compose(se3_inverse(est[first]), est[last]);
      const PoseSE3 err = se3_compose(se3_inverse(delta_est), delta_gt);
      t_sum += err.translation.norm() / len;
      r_sum += log_so3(err.rotation).norm() / len;
      ++m.segments;
    }
  }
  if (m.segments > 0) {
    m.segment_translation_pct = 100.0 * t_sum / m.segments;
    m.segment_rotation_deg_per_100m = 100.0 * kRadToDeg * r_sum / m.segments;
  }
  return m;
}

Trajectory to_trajectory(const std::map<int, PoseSE3>& nodes) {
  Trajectory t;
  t.reserve(nodes.size());
  for (const auto& [id, pose] : nodes) t.push_back(pose);
  return t;
}

void FusionSimConfig::validate() const {
  if (poses < 2) throw Error(ErrorCode::kInvalidConfig, "fusion simulation needs at least two poses");
  if (!(step_length > 0.0)) throw Error(ErrorCode::kInvalidConfig, "step length must be positive");
  if (!(sigma_trans > 0.0 && rot_vo_sigma_deg > 0.0 && rot_hn_sigma_deg > 0.0)) {
    throw Error(ErrorCode::kInvalidConfig, "simulation noise levels must be positive");
  }
}

FusionSimResult run_fusion_simulation(const FusionSimConfig& config) {
  config.validate();
  FusionSimResult r;
  r.ground_truth = simulate_trajectory(config.poses, config.step_length);
  const double vo = config.rot_vo_sigma_deg / kRadToDeg;
  const double hn = config.rot_hn_sigma_deg / kRadToDeg;
  Rng rng(config.seed);
  const SimulatedEdges edges =
      simulate_odometry(r.ground_truth, config.sigma_trans, CovSO3::diagonal(Vec3::Constant(vo * vo)),
                        CovSO3::diagonal(Vec3::Constant(hn * hn)), exp_so3(config.rot_bias_deg / kRadToDeg), rng);

  Trajectory start(r.ground_truth.size(), PoseSE3::identity());
  start.front() = r.ground_truth.front();
  SimulatedEdges odom_only{edges.odom, {}};
  r.odometry = to_trajectory(relax_graph(make_graph(start, odom_only), config.solver));
  r.fused = to_trajectory(relax_graph(make_graph(start, edges), config.solver));
  r.odometry_metrics = traj_metrics(r.odometry, r.ground_truth);
  r.fused_metrics = traj_metrics(r.fused, r.ground_truth);
  return r;
}

// ---------------------------------------------------------------------------
// Text I/O
// ---------------------------------------------------------------------------

namespace {

template <int N>
Eigen::Matrix<double, N, N> read_upper(std::istringstream& is, const std::string& line) {
  Eigen::Matrix<double, N, N> m;
  for (int i = 0; i < N; ++i) {
    for (int j = i; j < N; ++j) {
      if (!(is >> m(i, j))) throw Error(ErrorCode::kParseError, "truncated covariance: " + line);
      m(j, i) = m(i, j);
    }
  }
  return m;
}

template <int N>
void write_upper(std::ostream& out, const Eigen::Matrix<double, N, N>& m) {
  for (int i = 0; i < N; ++i) {
    for (int j = i; j < N; ++j) out << ' ' << fmt(m(i, j));
  }
}

void write_pose(std::ostream& out, const PoseSE3& p) {
  out << ' ' << fmt(p.translation.x()) << ' ' << fmt(p.translation.y()) << ' '
      << fmt(p.translation.z()) << ' ' << fmt(p.rotation.w()) << ' ' << fmt(p.rotation.x())
      << ' ' << fmt(p.rotation.y()) << ' ' << fmt(p.rotation.z());
}

PoseSE3 read_pose(std::istringstream& is, const std::string& line) {
  double v[7];
  for (double& x : v) {
    if (!(is >> x)) throw Error(ErrorCode::kParseError, "truncated pose: " + line);
  }
  return PoseSE3{UnitQuaternion::from_coeffs(v[3], v[4], v[5], v[6]), Vec3(v[0], v[1], v[2])};
}

}  // namespace

PoseGraph read_graph(std::istream& in) {
  PoseGraph g;
  std::string line;
  while (std::getline(in, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    std::istringstream is(line);
    std::string tag;
    if (!(is >> tag)) continue;
    if (tag == "NODE") {
      int id;
      if (!(is >> id)) throw Error(ErrorCode::kParseError, "bad NODE line: " + line);
      g.nodes[id] = read_pose(is, line);
    } else if (tag == "EDGE_SE3") {
      OdomEdge e;
      if (!(is >> e.from >> e.to)) throw Error(ErrorCode::kParseError, "bad EDGE_SE3 line: " + line);
      e.measurement = read_pose(is, line);
      e.covariance = read_upper<6>(is, line);
      g.odom.push_back(e);
    } else if (tag == "EDGE_ROT") {
      RotEdge e;
      double q[4];
      if (!(is >> e.from >> e.to >> q[0] >> q[1] >> q[2] >> q[3])) {
        throw Error(ErrorCode::kParseError, "bad EDGE_ROT line: " + line);
      }
      e.measurement = UnitQuaternion::from_coeffs(q[0], q[1], q[2], q[3]);
      e.covariance = CovSO3(read_upper<3>(is, line));
      g.rot.push_back(e);
    } else if (tag == "FIX") {
      int id;
      if (!(is >> id)) throw Error(ErrorCode::kParseError, "bad FIX line: " + line);
      g.fixed_id = id;
    } else {
      throw Error(ErrorCode::kParseError, "unknown record '" + tag + "'");
    }
    std::string extra;
    if (is >> extra) throw Error(ErrorCode::kParseError, "trailing tokens: " + line);
  }
  g.validate();
  return g;
}

PoseGraph read_graph_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kParseError, "cannot read " + path);
  return read_graph(in);
}

void write_nodes(std::ostream& out, const std::map<int, PoseSE3>& nodes) {
  for (const auto& [id, pose] : nodes) {
    out << "NODE " << id;
    write_pose(out, pose);
    out << '\n';
  }
}

void write_graph(std::ostream& out, const PoseGraph& graph) {
  write_nodes(out, graph.nodes);
  if (graph.fixed_id) out << "FIX " << *graph.fixed_id << '\n';
  for (const auto& e : graph.odom) {
    out << "EDGE_SE3 " << e.from << ' ' << e.to;
    write_pose(out, e.measurement);
    write_upper<6>(out, e.covariance);
    out << '\n';
  }
  for (const auto& e : graph.rot) {
    out << "EDGE_ROT " << e.from << ' ' << e.to << ' ' << fmt(e.measurement.w()) << ' '
        << fmt(e.measurement.x()) << ' ' << fmt(e.measurement.y()) << ' '
        << fmt(e.measurement.z());
    write_upper<3>(out, e.covariance.matrix());
    out << '\n';
  }
}

}  // namespace hydra
