#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sys/wait.h>

#include "reart/cloud.hpp"

namespace fs = std::filesystem;

namespace {

const fs::path& workdir() {
  static const fs::path dir = [] {
    const fs::path d = fs::temp_directory_path() / "reart_cli_test";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

int run(const std::string& args) {
  const std::string cmd = std::string(REART_CLI) + " " + args + " > " + (workdir() / "stdout.txt").string() + " 2> " +
                          (workdir() / "stderr.txt").string();
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string path(const std::string& name) { return (workdir() / name).string(); }

}  // namespace

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run("--help"), 0);
  EXPECT_EQ(run("generate"), 2);
  EXPECT_EQ(run("generate --parts 3 --topology ring --out " + path("bad")), 2);
  EXPECT_EQ(run("frobnicate"), 2);
}

TEST(Cli, RuntimeErrorsExitOne) {
  EXPECT_EQ(run("fit --input " + path("missing") + " --out " + path("m.json")), 1);
  EXPECT_EQ(run("generate --parts 20 --out " + path("bad")), 1);
}

TEST(Cli, GenerateFitEvalRetarget) {
  ASSERT_EQ(run("generate --parts 2 --frames 3 --points 256 --seed 3 --out " + path("data")), 0);
  EXPECT_TRUE(fs::exists(workdir() / "data" / "ground_truth.json"));
  ASSERT_EQ(run("fit --input " + path("data") + " --out " + path("model/model.json") +
                " --canonical 0 --max-parts 4 --iters-stage1 40 --iters-final 5 --log-every 0 --threads 1"),
            0);
  EXPECT_EQ(run("fit --input " + path("data") + " --out " + path("x.json") + " --canonical 7"), 2);
  ASSERT_EQ(run("eval --model " + path("model/model.json") + " --gt " + path("data") + " --report " +
                path("report.json")),
            0);
  const auto report = nlohmann::json::parse(reart::read_file_bytes(workdir() / "report.json"));
  EXPECT_TRUE(report.contains("recon_error"));
  EXPECT_GE(report["rand_index_per_scan"].get<double>(), 0.0);

  std::ofstream(workdir() / "constraints.json") << R"({"constraints": [{"point_index": 0, "target": [0, 0, 0]}]})";
  EXPECT_EQ(run("retarget --model " + path("model/model.json") + " --constraints " + path("constraints.json") +
                " --out " + path("posed.ply")),
            0);
  EXPECT_EQ(reart::read_ply(workdir() / "posed.ply").points.size(), 256u);
  std::ofstream(workdir() / "broken.json") << "{";
  EXPECT_EQ(run("retarget --model " + path("model/model.json") + " --constraints " + path("broken.json") +
                " --out " + path("posed.ply")),
            2);
}
