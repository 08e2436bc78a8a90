#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

#include "stnet/cli.hpp"
#include "stnet/io.hpp"

using namespace stnet;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::filesystem::path fresh_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / name;
  std::filesystem::remove_all(dir);
  return dir;
}

}  // namespace

TEST(Cli, DescribeDefaultModel) {
  const auto r = run({"describe"});
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("12480"), std::string::npos);
  EXPECT_NE(r.out.find("temporal3"), std::string::npos);
}

TEST(Cli, DescribeWritesOnlyUnderOut) {
  const auto dir = fresh_dir("stnet_cli_describe");
  const auto r = run({"describe", "--model", "itxn", "--out", dir.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(std::filesystem::exists(dir / "describe.json"));
  const auto cfg = io::read_json(dir / "config.json");
  EXPECT_EQ(cfg.at("model"), "itxn");
  EXPECT_EQ(cfg.at("seed"), 0);
  EXPECT_TRUE(cfg.contains("sequence_optim"));
  EXPECT_TRUE(std::filesystem::exists(dir / "meta.json"));
  std::filesystem::remove_all(dir);
}

TEST(Cli, ConfigFileAndOverrides) {
  const auto dir = fresh_dir("stnet_cli_config");
  std::filesystem::create_directories(dir);
  io::write_json(dir / "in.json", {{"n_frames", 3}, {"seed", 4}});
  const auto r = run({"describe", "--config", (dir / "in.json").string(), "--seed", "9", "--out", (dir / "o").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto cfg = io::read_json(dir / "o" / "config.json");
  EXPECT_EQ(cfg.at("n_frames"), 3);
  EXPECT_EQ(cfg.at("seed"), 9);
  io::write_json(dir / "bad.json", {{"no_such_field", 1}});
  EXPECT_EQ(run({"describe", "--config", (dir / "bad.json").string()}).code, 1);
  std::filesystem::remove_all(dir);
}

TEST(Cli, InvalidInputExitsWithOne) {
  EXPECT_EQ(run({"describe", "--bogus"}).code, 1);
  EXPECT_EQ(run({"frobnicate"}).code, 1);
  EXPECT_EQ(run({"describe", "--model", "nope"}).code, 1);
  EXPECT_EQ(run({"describe", "--n-frames", "0"}).code, 1);
  EXPECT_EQ(run({"ablate"}).code, 1);
  EXPECT_EQ(run({"ablate", "--name", "unknown"}).code, 1);
  const auto r = run({"gradcheck", "--dtype", "f32"});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("f64"), std::string::npos);
  EXPECT_EQ(run({"eval", "--params", "/nonexistent/params", "--out", fresh_dir("stnet_cli_eval").string()}).code, 1);
}

TEST(Cli, GradcheckPasses) {
  const auto dir = fresh_dir("stnet_cli_gradcheck");
  const auto r = run({"gradcheck", "--model", "txn:audio", "--dtype", "f64", "--out", dir.string()});
  EXPECT_EQ(r.code, 0) << r.out << r.err;
  const auto j = io::read_json(dir / "gradcheck.json");
  EXPECT_TRUE(j.at("passed").get<bool>());
  EXPECT_LT(j.at("max_rel_err").get<double>(), 1e-5);
  std::filesystem::remove_all(dir);
}

TEST(Cli, GenTrainEvalEnsemble) {
  const auto dir = fresh_dir("stnet_cli_pipeline");
  std::filesystem::create_directories(dir);
  io::write_json(dir / "cfg.json", {{"multimodal_xor", {{"train", 64}, {"test", 32}, {"probe_limit", 1.0}}},
                                     {"sequence_optim", {{"epochs", 1}, {"milestones", nlohmann::json::array()}}},
                                     {"txn", {{"bottleneck_channels", 8}}}});
  const std::string cfg = (dir / "cfg.json").string();
  ASSERT_EQ(run({"gen-data", "--config", cfg, "--dataset", "multimodal_xor", "--out", (dir / "data").string()}).code, 0);
  for (const std::string m : {"audio", "rgb"}) {
    const auto r = run({"train", "--config", cfg, "--model", "txn:" + m, "--data", (dir / "data").string(), "--out",
                        (dir / m).string()});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_TRUE(std::filesystem::exists(dir / m / "scores.json"));
    EXPECT_TRUE(std::filesystem::exists(dir / m / "curve.csv"));
  }
  const auto rep = io::read_json(dir / "audio" / "report.json");
  const auto ev = run({"eval", "--config", cfg, "--model", "txn:audio", "--data", (dir / "data").string(), "--params",
                       (dir / "audio" / "params").string(), "--out", (dir / "audio_eval").string()});
  ASSERT_EQ(ev.code, 0) << ev.err;
  const auto rep2 = io::read_json(dir / "audio_eval" / "report.json");
  EXPECT_EQ(rep.at("eval").at("test"), rep2.at("eval").at("test"));

  const auto wrong = run({"eval", "--config", cfg, "--model", "txn:rgb", "--data", (dir / "data").string(),
                          "--params", (dir / "audio" / "params").string(), "--out", (dir / "wrong").string()});
  EXPECT_EQ(wrong.code, 1);
  EXPECT_NE(wrong.err.find("shape"), std::string::npos) << wrong.err;

  const auto ens = run({"ensemble", "--runs", (dir / "audio").string() + "," + (dir / "rgb").string(), "--weights",
                        "1,1", "--out", (dir / "ens").string()});
  ASSERT_EQ(ens.code, 0) << ens.err;
  EXPECT_NE(ens.out.find("ensemble"), std::string::npos);
  EXPECT_EQ(run({"ensemble", "--runs", (dir / "audio").string(), "--weights", "1,2", "--out", (dir / "ens2").string()}).code, 1);
  std::filesystem::remove_all(dir);
}
