#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <gtest/gtest.h>
#include <json.hpp>

#include "pgm/proxnet.hpp"

namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out;
};

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("pgm_cli_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

Run cli(const std::string& args, const fs::path& dir) {
  const fs::path log = dir / "stdout.txt";
  const std::string cmd =
      std::string(PGM_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  std::ifstream in(log);
  std::stringstream ss;
  ss << in.rdbuf();
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, ss.str()};
}

fs::path write(const fs::path& p, const std::string& text) {
  std::ofstream(p) << text;
  return p;
}

std::size_t count_lines(const fs::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  for (std::string line; std::getline(in, line);) ++n;
  return n;
}

}  // namespace

TEST(Cli, NoSubcommandIsUsageError) {
  const auto dir = scratch("usage");
  EXPECT_EQ(cli("", dir).code, 1);
  EXPECT_EQ(cli("frobnicate", dir).code, 1);
  EXPECT_EQ(cli("--help", dir).code, 0);
}

TEST(Cli, SampleWritesCsvAndSidecar) {
  const auto dir = scratch("sample");
  const auto cfg = write(dir / "cfg.json", R"({
    "potential": {"f": {"kind": "half_square", "dim": 1},
                  "g": {"kind": "interval", "lo": -1, "hi": 1}, "beta": 10},
    "schedule": {"kind": "ve", "K": 20},
    "sampler": {"kind": "pgm"},
    "chains": 50, "seed": 3})");
  const auto r = cli("sample --config " + cfg.string() + " --out " + (dir / "o").string() +
                         " --emit-hist 10",
                     dir);
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_EQ(count_lines(dir / "o" / "samples.csv"), 51u);
  EXPECT_TRUE(fs::exists(dir / "o" / "histogram.csv"));
  std::ifstream meta(dir / "o" / "samples.json");
  const auto j = nlohmann::json::parse(meta);
  EXPECT_EQ(j.at("sampler"), "pgm");
  EXPECT_EQ(j.at("chains"), 50);
  EXPECT_EQ(j.at("seed"), 3);

  // --chains and --seed override the file.
  const auto r2 = cli("sample --config " + cfg.string() + " --out " + (dir / "p").string() +
                          " --chains 7 --seed 9",
                      dir);
  ASSERT_EQ(r2.code, 0) << r2.out;
  EXPECT_EQ(count_lines(dir / "p" / "samples.csv"), 8u);
}

TEST(Cli, MalformedJsonReportsLine) {
  const auto dir = scratch("malformed");
  const auto cfg = write(dir / "bad.json", "{\n  \"epochs\": 3,\n  oops\n}\n");
  const auto r = cli("train --config " + cfg.string() + " --out " + dir.string(), dir);
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.out.find("line 3"), std::string::npos) << r.out;
  EXPECT_EQ(cli("sample --config " + (dir / "missing.json").string(), dir).code, 1);
}

TEST(Cli, TrainZeroEpochsWritesInitialisation) {
  const auto dir = scratch("train0");
  const auto cfg = write(dir / "t.json",
                         R"({"epochs": 0, "hidden": 8, "seed": 5, "prior": {"kind": "interval"}})");
  const auto r = cli("train --config " + cfg.string() + " --out " + dir.string(), dir);
  ASSERT_EQ(r.code, 0) << r.out;
  const auto p = pgm::load_params((dir / "params.json").string());
  const auto init = pgm::init_params(1, 8, 5, pgm::TrainConfig{}.skip, 0.1);
  EXPECT_EQ(p.flatten(), init.flatten());
  EXPECT_EQ(count_lines(dir / "training_curve.csv"), 1u);
}

TEST(Cli, TrainShortRunWritesCurve) {
  const auto dir = scratch("train");
  const auto cfg = write(dir / "t.json",
                         R"({"epochs": 5, "realizations": 256, "hidden": 8,
                             "prior": {"kind": "ball", "dim": 2}})");
  const auto r = cli("train --config " + cfg.string() + " --out " + dir.string(), dir);
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_EQ(count_lines(dir / "training_curve.csv"), 6u);
  EXPECT_EQ(pgm::load_params((dir / "params.json").string()).dim(), 2u);
}

TEST(Cli, ExperimentFromSpecFile) {
  const auto dir = scratch("experiment");
  const auto spec = write(dir / "e.json", R"({
    "name": "tiny",
    "potential": {"f": {"kind": "half_square", "dim": 1}, "g": {"kind": "zero"}, "beta": 1},
    "schedule": {"kind": "ve", "K": 10},
    "samplers": [{"label": "a", "kind": "pgm"}, {"label": "b", "kind": "pgm", "K": 20}],
    "metrics": ["w1", "mean"],
    "seeds": [0, 1],
    "chains": 40})");
  const auto r = cli("experiment --config " + spec.string() + " --out " + dir.string(), dir);
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_EQ(count_lines(dir / "tiny" / "summary.csv"), 5u);
  EXPECT_EQ(count_lines(dir / "tiny" / "b" / "1" / "samples.csv"), 41u);
  std::ifstream rep(dir / "tiny" / "report.json");
  const auto j = nlohmann::json::parse(rep);
  EXPECT_EQ(j.at("status"), "ok");
  EXPECT_EQ(j.at("cells").size(), 4u);
  EXPECT_TRUE(j.at("header").contains("version"));
}

TEST(Cli, EmptySamplerListGivesEmptyReport) {
  const auto dir = scratch("empty");
  const auto spec = write(dir / "e.json", R"({
    "name": "nothing",
    "potential": {"f": {"kind": "half_square", "dim": 1}},
    "samplers": []})");
  const auto r = cli("experiment --config " + spec.string() + " --out " + dir.string(), dir);
  ASSERT_EQ(r.code, 0) << r.out;
  std::ifstream rep(dir / "nothing" / "report.json");
  EXPECT_TRUE(nlohmann::json::parse(rep).at("cells").empty());
}

TEST(Cli, FailingCellGivesExitTwo) {
  const auto dir = scratch("failcell");
  // P-ULA without a step size is rejected inside the cell.
  const auto spec = write(dir / "e.json", R"({
    "name": "broken",
    "potential": {"f": {"kind": "half_square", "dim": 1}},
    "samplers": [{"label": "ok", "kind": "pgm", "K": 5},
                 {"label": "bad", "kind": "pula", "delta_L": 0}],
    "chains": 10})");
  const auto r = cli("experiment --config " + spec.string() + " --out " + dir.string(), dir);
  EXPECT_EQ(r.code, 2) << r.out;
  EXPECT_NE(r.out.find("bad seed=0 FAILED"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("ok seed=0 ok"), std::string::npos);
}

TEST(Cli, BuiltinExperimentRuns) {
  const auto dir = scratch("builtin");
  const auto r = cli("experiment table1-feasibility --chains 200 --out " + dir.string(), dir);
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_TRUE(fs::exists(dir / "table1-feasibility" / "pgm-K20" / "0" / "samples.csv"));
  EXPECT_EQ(cli("experiment no-such-study", dir).code, 1);
  EXPECT_EQ(cli("experiment", dir).code, 1);
}

TEST(Cli, VerifyPassesAndWritesReport) {
  const auto dir = scratch("verify");
  const auto r = cli("verify --out " + dir.string(), dir);
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_EQ(r.out.find("FAIL"), std::string::npos);
  std::ifstream rep(dir / "verify.json");
  const auto j = nlohmann::json::parse(rep);
  EXPECT_TRUE(j.at("passed").get<bool>());
  EXPECT_EQ(j.at("failures"), 0);
}
