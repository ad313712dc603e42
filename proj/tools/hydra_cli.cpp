#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "CLI11.hpp"
#include "cli_config.hpp"

#include "hydra/averaging.hpp"
#include "hydra/experiments.hpp"
#include "hydra/fusion.hpp"

namespace fs = std::filesystem;
using namespace hydra;
using hydra::cli::json;

#ifndef HYDRA_VERSION
#define HYDRA_VERSION "0.0.0"
#endif

namespace {

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

class Csv {
 public:
  Csv(const fs::path& path, const std::vector<std::string>& header) : out_(path) {
    if (!out_) throw Error(ErrorCode::kParseError, "cannot write " + path.string());
    for (std::size_t i = 0; i < header.size(); ++i) out_ << (i ? "," : "") << header[i];
    out_ << '\n';
  }

  Csv& operator<<(double v) { return cell(num(v)); }
  Csv& operator<<(int v) { return cell(std::to_string(v)); }
  Csv& operator<<(std::size_t v) { return cell(std::to_string(v)); }
  Csv& operator<<(const std::string& v) { return cell(v); }
  Csv& operator<<(std::string_view v) { return cell(std::string(v)); }
  Csv& operator<<(const char* v) { return cell(v); }
  void end() {
    out_ << '\n';
    first_ = true;
  }

 private:
  Csv& cell(const std::string& s) {
    if (!first_) out_ << ',';
    out_ << s;
    first_ = false;
    return *this;
  }
  std::ofstream out_;
  bool first_ = true;
};

struct Common {
  std::string config_path;
  std::string out_dir = "out";
  std::optional<std::uint64_t> seed;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config_path, "JSON config file")->check(CLI::ExistingFile);
  app->add_option("--out", c.out_dir, "output directory (created if absent)");
  app->add_option("--seed", c.seed, "seed override");
  app->add_option("--set", c.overrides, "field override key.path=value (repeatable)");
}

/// Defaults, then the config file, then --set, then --seed. Dedicated
/// subcommand flags are applied last by the caller.
json resolve(json defaults, const Common& c) {
  if (!c.config_path.empty()) cli::merge_strict(defaults, cli::load_json_file(c.config_path));
  cli::apply_overrides(defaults, c.overrides);
  if (c.seed && defaults.contains("seed")) defaults["seed"] = *c.seed;
  return defaults;
}

fs::path prepare_out(const std::string& dir) {
  fs::path p(dir);
  fs::create_directories(p);
  return p;
}

void write_manifest(const fs::path& dir, const std::string& subcommand, const json& config,
                    std::uint64_t seed, const json& extra = json::object()) {
  json m{
      {"subcommand", subcommand},
      {"seed", seed},
      {"config", config},
      {"versions",
       {{"hydra", HYDRA_VERSION},
        {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                      std::to_string(EIGEN_MINOR_VERSION)},
        {"compiler", __VERSION__},
        {"cxx_standard", static_cast<long>(__cplusplus)}}},
  };
  if (!extra.empty()) m["inputs"] = extra;
  std::ofstream(dir / "manifest.json") << m.dump(2) << '\n';
}

// ---------------------------------------------------------------------------

int run_exp1d(const Common& common, std::optional<int> reps, std::optional<int> epochs) {
  json j = resolve(cli::to_json(Config1D{}), common);
  if (reps) j["repetitions"] = *reps;
  if (epochs) j["epochs"] = *epochs;
  const Config1D config = cli::config_1d_from_json(j);
  const fs::path dir = prepare_out(common.out_dir);
  write_manifest(dir, "exp1d", j, config.seed);

  const Result1D r = run_1d(config);

  Csv rows(dir / "exp1d_rows.csv", {"method", "rep", "test_nll", "test_mse", "train_mse",
                                    "baseline_train_mse", "sigma_e_ood", "sigma_e_in"});
  for (const auto& row : r.rows) {
    rows << to_string(row.method) << row.rep << row.test_nll << row.test_mse << row.train_mse
         << row.baseline_train_mse << row.sigma_e_ood << row.sigma_e_in;
    rows.end();
  }
  Csv summary(dir / "exp1d_summary.csv", {"method", "median_nll", "q1_nll", "q3_nll", "min_nll",
                                          "max_nll", "median_mse", "mean_mse"});
  for (const auto& s : r.summaries) {
    summary << to_string(s.method) << s.median_nll << s.q1_nll << s.q3_nll << s.min_nll << s.max_nll
            << s.median_mse << s.mean_mse;
    summary.end();
  }
  Csv curves(dir / "exp1d_curves.csv", {"method", "x", "y_clean", "mean", "var_e", "var_a", "var"});
  for (const auto& c : r.curves) {
    curves << to_string(c.method) << c.x << c.y_clean << c.pred.mean << c.pred.var_e << c.pred.var_a
           << c.pred.var;
    curves.end();
  }
  Csv data(dir / "exp1d_data.csv", {"split", "x", "y"});
  for (std::size_t i = 0; i < r.first_data.train.x.size(); ++i) {
    data << "train" << r.first_data.train.x[i] << r.first_data.train.y[i];
    data.end();
  }
  for (std::size_t i = 0; i < r.first_data.test.x.size(); ++i) {
    data << "test" << r.first_data.test.x[i] << r.first_data.test.y[i];
    data.end();
  }

  for (const auto& s : r.summaries) {
    std::printf("%-13s median NLL %.4f  median MSE %.4f\n", std::string(to_string(s.method)).c_str(),
                s.median_nll, s.median_mse);
  }
  return 0;
}

// ---------------------------------------------------------------------------

void quat_cells(Csv& csv, const UnitQuaternion& q) { csv << q.w() << q.x() << q.y() << q.z(); }

void diag_cells(Csv& csv, const CovSO3& c) {
  const Vec3 d = c.diagonal();
  csv << d.x() << d.y() << d.z();
}

int run_hemisphere_cmd(const Common& common) {
  json j = resolve(cli::to_json(HemisphereConfig{}), common);
  const HemisphereConfig config = cli::hemisphere_config_from_json(j);
  const fs::path dir = prepare_out(common.out_dir);
  write_manifest(dir, "hemisphere", j, config.seed);

  const HemisphereReport r = run_hemisphere(config);

  Csv poses(dir / "hemisphere_test.csv",
            {"id", "polar_deg", "target_w", "target_x", "target_y", "target_z", "mean_w", "mean_x",
             "mean_y", "mean_z", "err_x", "err_y", "err_z", "angular_error_deg", "nll", "cov_t_xx",
             "cov_t_yy", "cov_t_zz", "cov_e_xx", "cov_e_yy", "cov_e_zz", "cov_a_xx", "cov_a_yy",
             "cov_a_zz", "trace_e", "trace_a", "trace_t"});
  for (const auto& row : r.rows) {
    const RotationBelief& b = row.prediction.belief;
    poses << row.id << row.polar_deg;
    quat_cells(poses, row.target);
    quat_cells(poses, b.mean);
    poses << row.error.x() << row.error.y() << row.error.z() << row.angular_error_deg << row.nll;
    diag_cells(poses, b.total);
    diag_cells(poses, b.epistemic);
    diag_cells(poses, b.aleatoric);
    poses << b.epistemic.trace() << b.aleatoric.trace() << b.total.trace();
    poses.end();
  }

  const double ratio = r.trace_epistemic_out / r.trace_epistemic_in;
  Csv summary(dir / "hemisphere_summary.csv",
              {"mean_angular_error_deg", "mean_nll", "within_3sigma_x", "within_3sigma_y",
               "within_3sigma_z", "within_3sigma_all", "trace_e_in", "trace_e_out", "trace_e_ratio"});
  summary << r.mean_angular_error_deg << r.mean_nll << r.calibration.within_3sigma.x()
          << r.calibration.within_3sigma.y() << r.calibration.within_3sigma.z()
          << r.within_3sigma_all_axes << r.trace_epistemic_in << r.trace_epistemic_out << ratio;
  summary.end();

  Csv loss(dir / "hemisphere_loss.csv", {"epoch", "loss"});
  for (std::size_t e = 0; e < r.train_loss.size(); ++e) {
    loss << e << r.train_loss[e];
    loss.end();
  }

  std::printf("mean angular error %.3f deg, within 3 sigma %.4f, trace ratio out/in %.2f\n",
              r.mean_angular_error_deg, r.within_3sigma_all_axes, ratio);
  return 0;
}

// ---------------------------------------------------------------------------

std::vector<RotationSample> read_quaternion_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kParseError, "cannot read " + path);
  std::vector<RotationSample> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::vector<double> v;
    std::stringstream ss(line);
    std::string cell;
    bool numeric = true;
    while (std::getline(ss, cell, ',')) {
      try {
        std::size_t used = 0;
        v.push_back(std::stod(cell, &used));
        if (cell.find_first_not_of(" \t\r", used) != std::string::npos) numeric = false;
      } catch (const std::exception&) {
        numeric = false;
      }
    }
    if (!numeric) {
      if (out.empty() && line_no == 1) continue;  // header
      throw Error(ErrorCode::kParseError, path + ":" + std::to_string(line_no) + ": not numeric");
    }
    if (v.size() != 4 && v.size() != 5) {
      throw Error(ErrorCode::kParseError,
                  path + ":" + std::to_string(line_no) + ": expected w,x,y,z[,weight]");
    }
    out.push_back({UnitQuaternion::from_coeffs(v[0], v[1], v[2], v[3]), v.size() == 5 ? v[4] : 1.0});
  }
  return out;
}

int run_average(const Common& common, const std::string& input, const std::optional<std::string>& metric) {
  json j = resolve(json{{"metric", "quat"}, {"seed", 0}, {"karcher", {{"tolerance", 1e-10}, {"max_iterations", 100}}}},
                   common);
  if (metric) j["metric"] = *metric;
  const std::string m = j.at("metric").get<std::string>();
  if (m != "quat" && m != "chordal" && m != "karcher") {
    throw Error(ErrorCode::kInvalidConfig, "metric must be quat, chordal or karcher");
  }
  KarcherOptions ko;
  ko.tolerance = j.at("karcher").at("tolerance").get<double>();
  ko.max_iterations = j.at("karcher").at("max_iterations").get<int>();

  const auto samples = read_quaternion_csv(input);
  const fs::path dir = prepare_out(common.out_dir);
  write_manifest(dir, "average", j, j.at("seed").get<std::uint64_t>(),
                 {{"input", input}, {"samples", samples.size()}});

  UnitQuaternion mean;
  int iterations = 0;
  bool warning = false;
  if (m == "quat") {
    const auto r = quat_mean(samples);
    mean = r.mean;
    warning = r.dispersion_warning;
  } else if (m == "chordal") {
    mean = matrix_to_quat(chordal_mean(samples));
  } else {
    const auto r = karcher_mean(samples, ko);
    mean = r.mean;
    iterations = r.iterations;
  }
  mean = canonicalize(mean);

  Csv out(dir / "average.csv", {"metric", "w", "x", "y", "z", "samples", "iterations", "dispersion_warning"});
  out << m;
  quat_cells(out, mean);
  out << samples.size() << iterations << (warning ? 1 : 0);
  out.end();
  std::printf("%s mean: %.17g %.17g %.17g %.17g\n", m.c_str(), mean.w(), mean.x(), mean.y(), mean.z());
  return 0;
}

// ---------------------------------------------------------------------------

void write_trajectory_csv(const fs::path& path, const std::vector<std::pair<std::string, const Trajectory*>>& ts) {
  Csv csv(path, {"estimate", "frame", "tx", "ty", "tz", "qw", "qx", "qy", "qz"});
  for (const auto& [name, t] : ts) {
    for (std::size_t i = 0; i < t->size(); ++i) {
      const PoseSE3& p = (*t)[i];
      csv << name << i << p.translation.x() << p.translation.y() << p.translation.z();
      quat_cells(csv, p.rotation);
      csv.end();
    }
  }
}

void write_nodes_csv(const fs::path& path, const std::map<int, PoseSE3>& nodes) {
  Csv csv(path, {"id", "tx", "ty", "tz", "qw", "qx", "qy", "qz"});
  for (const auto& [id, p] : nodes) {
    csv << id << p.translation.x() << p.translation.y() << p.translation.z();
    quat_cells(csv, p.rotation);
    csv.end();
  }
}

int run_fuse(const Common& common, const std::string& graph_path) {
  json j = resolve(cli::to_json(FusionSimConfig{}), common);
  const FusionSimConfig config = cli::fusion_config_from_json(j);
  const fs::path dir = prepare_out(common.out_dir);

  if (!graph_path.empty()) {
    const PoseGraph graph = read_graph_file(graph_path);
    write_manifest(dir, "fuse", j, config.seed,
                   {{"graph", graph_path}, {"nodes", graph.nodes.size()}, {"odom_edges", graph.odom.size()},
                    {"rot_edges", graph.rot.size()}});
    const auto nodes = relax_graph(graph, config.solver);
    write_nodes_csv(dir / "fused_nodes.csv", nodes);
    std::ofstream txt(dir / "fused_nodes.txt");
    write_nodes(txt, nodes);
    std::printf("relaxed %zu nodes (%zu odometry, %zu rotation edges)\n", nodes.size(), graph.odom.size(),
                graph.rot.size());
    return 0;
  }

  write_manifest(dir, "fuse", j, config.seed);
  const FusionSimResult r = run_fusion_simulation(config);
  write_trajectory_csv(dir / "fusion_trajectories.csv",
                       {{"ground_truth", &r.ground_truth}, {"odometry", &r.odometry}, {"fused", &r.fused}});
  Csv metrics(dir / "fusion_metrics.csv", {"estimate", "ate_translation_m", "ate_rotation_deg",
                                           "segment_translation_pct", "segment_rotation_deg_per_100m",
                                           "segments"});
  for (const auto& [name, m] : {std::pair{"odometry", r.odometry_metrics}, std::pair{"fused", r.fused_metrics}}) {
    metrics << name << m.ate_translation_m << m.ate_rotation_deg << m.segment_translation_pct
            << m.segment_rotation_deg_per_100m << m.segments;
    metrics.end();
  }
  std::printf("m-ATE odometry %.4f m, fused %.4f m\n", r.odometry_metrics.ate_translation_m,
              r.fused_metrics.ate_translation_m);
  return 0;
}

// ---------------------------------------------------------------------------

int run_gradcheck(const Common& common) {
  json j = resolve(json{{"seed", 0}, {"tolerance", 1e-4}}, common);
  const auto seed = j.at("seed").get<std::uint64_t>();
  const double tol = j.at("tolerance").get<double>();
  const fs::path dir = prepare_out(common.out_dir);
  write_manifest(dir, "gradcheck", j, seed);

  const auto checks = standard_grad_checks(seed);
  Csv csv(dir / "gradcheck.csv", {"name", "checked", "max_relative_error", "pass"});
  bool ok = true;
  for (const auto& c : checks) {
    const bool pass = c.result.max_relative_error < tol;
    ok = ok && pass;
    csv << c.name << c.result.checked << c.result.max_relative_error << (pass ? 1 : 0);
    csv.end();
    std::printf("%-18s %6zu params  max rel err %.3e  %s\n", c.name.c_str(), c.result.checked,
                c.result.max_relative_error, pass ? "ok" : "FAIL");
  }
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"HydraNet rotation regression toolkit"};
  app.set_version_flag("--version", HYDRA_VERSION);
  app.require_subcommand(1);

  Common common;
  std::optional<int> reps, epochs;
  std::string input, metric, graph;

  auto* exp1d = app.add_subcommand("exp1d", "1D regression experiment");
  add_common(exp1d, common);
  exp1d->add_option("--reps", reps, "repetitions");
  exp1d->add_option("--epochs", epochs, "training epochs per estimator");

  auto* hemi = app.add_subcommand("hemisphere", "hemisphere camera-pose experiment");
  add_common(hemi, common);

  auto* avg = app.add_subcommand("average", "average quaternions from a CSV file");
  add_common(avg, common);
  avg->add_option("--input", input, "CSV of w,x,y,z[,weight]")->required()->check(CLI::ExistingFile);
  avg->add_option("--metric", metric, "quat | chordal | karcher")
      ->check(CLI::IsMember({"quat", "chordal", "karcher"}));

  auto* fuse = app.add_subcommand("fuse", "relax a pose graph, or simulate and fuse a drive");
  add_common(fuse, common);
  fuse->add_option("--graph", graph, "pose graph text file")->check(CLI::ExistingFile);

  auto* grad = app.add_subcommand("gradcheck", "finite-difference gradient checks");
  add_common(grad, common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*exp1d) return run_exp1d(common, reps, epochs);
    if (*hemi) return run_hemisphere_cmd(common);
    if (*avg) return run_average(common, input, avg->count("--metric") ? std::optional(metric) : std::nullopt);
    if (*fuse) return run_fuse(common, graph);
    if (*grad) return run_gradcheck(common);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.code() == ErrorCode::kInvalidConfig ? 2 : 1;
  } catch (const json::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
