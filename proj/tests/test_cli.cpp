#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "hydra/fusion.hpp"

namespace fs = std::filesystem;
using namespace hydra;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("hydra_cli_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

int run(const std::string& args) {
  const std::string cmd = std::string(HYDRA_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST(Cli, Exp1dRepeatsByteIdentical) {
  const fs::path dir = scratch("exp1d");
  const std::string common = "exp1d --reps 2 --seed 7 --epochs 20 --set n_train=200 --set curve_points=41";
  ASSERT_EQ(run(common + " --out " + (dir / "a").string()), 0);
  ASSERT_EQ(run(common + " --out " + (dir / "b").string()), 0);
  int compared = 0;
  for (const auto& entry : fs::directory_iterator(dir / "a")) {
    const fs::path other = dir / "b" / entry.path().filename();
    ASSERT_TRUE(fs::exists(other)) << other;
    EXPECT_EQ(slurp(entry.path()), slurp(other)) << entry.path().filename();
    ++compared;
  }
  EXPECT_EQ(compared, 5);  // four CSVs and the manifest
  EXPECT_NE(slurp(dir / "a" / "manifest.json").find("\"seed\": 7"), std::string::npos);
}

TEST(Cli, AverageOfIdenticalQuaternions) {
  const fs::path dir = scratch("average");
  const double n = std::sqrt(0.5 * 0.5 + 0.1 * 0.1 + 0.3 * 0.3 + 0.8 * 0.8);
  {
    std::ofstream in(dir / "q.csv");
    in << "w,x,y,z\n";
    for (int i = 0; i < 3; ++i) in << "0.5,-0.1,0.3,0.8\n";
  }
  for (const std::string metric : {"quat", "chordal", "karcher"}) {
    ASSERT_EQ(run("average --input " + (dir / "q.csv").string() + " --metric " + metric + " --out " +
                  (dir / metric).string()),
              0);
    std::ifstream out(dir / metric / "average.csv");
    std::string header, line;
    std::getline(out, header);
    std::getline(out, line);
    std::stringstream ss(line);
    std::string cell;
    std::getline(ss, cell, ',');
    EXPECT_EQ(cell, metric);
    const double expected[4] = {0.5 / n, -0.1 / n, 0.3 / n, 0.8 / n};
    for (double e : expected) {
      std::getline(ss, cell, ',');
      EXPECT_NEAR(std::stod(cell), e, 1e-12) << metric;
    }
  }
}

TEST(Cli, FuseWithoutRotationEdgesIsDeadReckoning) {
  const fs::path dir = scratch("fuse");
  Rng rng(3);
  const Trajectory gt = simulate_trajectory(30, 1.0);
  const auto edges = simulate_odometry(gt, 0.05, CovSO3::diagonal(Vec3::Constant(1e-4)),
                                       CovSO3::diagonal(Vec3::Constant(1e-5)), UnitQuaternion(), rng);
  Trajectory init(gt.size(), PoseSE3{});
  init[0] = gt[0];
  PoseGraph graph = make_graph(init, {edges.odom, {}});
  {
    std::ofstream g(dir / "g.txt");
    write_graph(g, graph);
  }
  ASSERT_EQ(run("fuse --graph " + (dir / "g.txt").string() + " --out " + (dir / "out").string()), 0);

  std::ifstream in(dir / "out" / "fused_nodes.txt");
  const PoseGraph fused = read_graph(in);
  ASSERT_EQ(fused.nodes.size(), gt.size());
  PoseSE3 expected = gt[0];
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (i > 0) expected = dead_reckon(expected, edges.odom[i - 1].measurement);
    const PoseSE3& got = fused.nodes.at(static_cast<int>(i));
    EXPECT_LT((got.translation - expected.translation).norm(), 1e-9) << i;
    EXPECT_LT(dist(Metric::kAngular, got.rotation, expected.rotation), 1e-9) << i;
  }
}

TEST(Cli, ExitCodes) {
  const fs::path dir = scratch("codes");
  EXPECT_EQ(run("gradcheck --out " + (dir / "g").string()), 0);
  EXPECT_TRUE(fs::exists(dir / "g" / "gradcheck.csv"));
  EXPECT_TRUE(fs::exists(dir / "g" / "manifest.json"));
  EXPECT_EQ(run(""), 2);
  EXPECT_EQ(run("exp1d --no-such-flag"), 2);
  EXPECT_EQ(run("exp1d --set no_such_field=1 --out " + (dir / "x").string()), 2);
  EXPECT_EQ(run("exp1d --set epochs=-1 --out " + (dir / "x").string()), 2);
  {
    std::ofstream bad(dir / "bad.txt");
    bad << "NODE 0 0 0 0 1 0 0 0\nEDGE_SE3 0 1 0 0\n";
  }
  EXPECT_EQ(run("fuse --graph " + (dir / "bad.txt").string() + " --out " + (dir / "y").string()), 1);
}

TEST(Cli, ConfigFileAndOverridesCompose) {
  const fs::path dir = scratch("config");
  {
    std::ofstream c(dir / "fuse.json");
    c << R"({"poses": 60, "seed": 4, "solver": {"max_iterations": 20}})";
  }
  ASSERT_EQ(run("fuse --config " + (dir / "fuse.json").string() + " --seed 9 --set step_length=2 --out " +
                (dir / "out").string()),
            0);
  const std::string manifest = slurp(dir / "out" / "manifest.json");
  EXPECT_NE(manifest.find("\"poses\": 60"), std::string::npos);
  EXPECT_NE(manifest.find("\"seed\": 9"), std::string::npos);
  EXPECT_NE(manifest.find("\"step_length\": 2"), std::string::npos);
  EXPECT_NE(manifest.find("\"max_iterations\": 20"), std::string::npos);
}
