#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Result {
  int code;
  std::string err;
};

Result run(const std::string& args, const fs::path& dir, const std::string& env = "") {
  const auto err = dir / "stderr.txt";
  const std::string cmd = env + " " HETFX_CLI_PATH " " + args + " > /dev/null 2> " + err.string();
  const int status = std::system(cmd.c_str());
  std::ifstream in(err);
  std::stringstream ss;
  ss << in.rdbuf();
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, ss.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path fresh_dir(const std::string& name) {
  const auto d = fs::temp_directory_path() / ("hetfx_cli_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

void pipeline(const fs::path& d) {
  const std::string o = " --out-dir " + d.string();
  const std::string data = " --input " + (d / "cohort.csv").string() + " --pairs " + (d / "pairs.csv").string();
  const std::string split = " --split " + (d / "split.json").string();
  const std::string tree = " --tree " + (d / "tree_ct.json").string();
  ASSERT_EQ(run("simulate --outcome continuous --scenario s2 --reps 2 --n-pairs 3000 --seed 5 --threads 1 --emit-data" + o, d).code, 0);
  ASSERT_EQ(run("split --ratio 0.5 --seed 3" + data + o, d).code, 0);
  ASSERT_EQ(run("discover --method both --seed 3" + data + split + o, d).code, 0);
  const auto t = run("test" + data + split + tree + o, d);
  ASSERT_EQ(t.code, 0) << t.err;
  ASSERT_EQ(run("subgroup --nodes 1" + data + split + tree + o, d).code, 0);
  ASSERT_EQ(run("sensitivity --gamma-grid 1:1.5:0.25 --delta-grid 2,3" + data + split + tree + o, d).code, 0);
  ASSERT_EQ(run("report" + data + split + tree + o, d).code, 0);
}

}  // namespace

TEST(Cli, PipelineWritesArtifactsAndManifests) {
  const auto d = fresh_dir("pipeline");
  pipeline(d);
  for (const char* f : {"power.csv", "discovery.csv", "split.json", "tree_ct.json", "tree_cart.json", "discover.json",
                        "test.json", "scan.csv", "subgroup.json", "sensitivity.csv", "sensitivity.json",
                        "report.dot", "report.json"})
    EXPECT_TRUE(fs::exists(d / f)) << f;
  const auto test = json::parse(slurp(d / "test.json"));
  EXPECT_TRUE(test.contains("reject"));
  const auto m = json::parse(slurp(d / "test.manifest.json"));
  EXPECT_EQ(m["subcommand"], "test");
  EXPECT_EQ(m["inputs"].size(), 4u);
  for (const auto& out : m["outputs"]) EXPECT_EQ(out["sha256"].get<std::string>().size(), 64u);
  EXPECT_NE(slurp(d / "report.dot").find("digraph"), std::string::npos);
  fs::remove_all(d);
}

TEST(Cli, ArtifactsAreByteIdenticalAcrossRuns) {
  const auto a = fresh_dir("det_a"), b = fresh_dir("det_b");
  pipeline(a);
  pipeline(b);
  std::size_t compared = 0;
  for (const auto& e : fs::directory_iterator(a)) {
    const auto name = e.path().filename().string();
    if (name.ends_with(".manifest.json") || name == "stderr.txt") continue;
    EXPECT_EQ(slurp(e.path()), slurp(b / name)) << name;
    ++compared;
  }
  EXPECT_GE(compared, 15u);
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(Cli, InferenceWithoutSplitIsRefused) {
  const auto d = fresh_dir("honest");
  const std::string o = " --out-dir " + d.string();
  ASSERT_EQ(run("simulate --scenario s2 --reps 1 --n-pairs 400 --no-test --emit-data" + o, d).code, 0);
  const std::string data = " --input " + (d / "cohort.csv").string() + " --pairs " + (d / "pairs.csv").string();
  const auto r = run("test --tree " + (d / "missing.json").string() + data + o, d);
  EXPECT_EQ(r.code, 2);
  const auto e = json::parse(r.err.substr(0, r.err.find('\n')));
  EXPECT_EQ(e["error"]["kind"], "config");
  fs::remove_all(d);
}

TEST(Cli, MissingInputIsADataError) {
  const auto d = fresh_dir("missing");
  const auto r = run("balance --input /nonexistent/cohort.csv --pairs /nonexistent/pairs.csv --out-dir " + d.string(), d);
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("\"kind\":\"data\""), std::string::npos);
  fs::remove_all(d);
}

TEST(Cli, BadOptionIsAConfigError) {
  const auto d = fresh_dir("badopt");
  EXPECT_EQ(run("split --ratio 2", d).code, 2);
  EXPECT_EQ(run("frobnicate", d).code, 2);
  fs::remove_all(d);
}

TEST(Cli, EnvironmentSeedOverridesFlag) {
  const auto d = fresh_dir("seed");
  const std::string o = " --out-dir " + d.string();
  ASSERT_EQ(run("simulate --scenario s1 --reps 1 --n-pairs 300 --no-test --emit-data" + o, d).code, 0);
  const std::string data = " --input " + (d / "cohort.csv").string() + " --pairs " + (d / "pairs.csv").string();
  ASSERT_EQ(run("split --ratio 0.5 --seed 9" + data + o, d).code, 0);
  const auto nine = slurp(d / "split.json");
  ASSERT_EQ(run("split --ratio 0.5 --seed 1" + data + o, d, "HETFX_SEED=9").code, 0);
  EXPECT_EQ(slurp(d / "split.json"), nine);
  ASSERT_EQ(run("split --ratio 0.5 --seed 1" + data + o, d).code, 0);
  EXPECT_NE(slurp(d / "split.json"), nine);
  fs::remove_all(d);
}
