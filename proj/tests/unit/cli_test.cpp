// Copyright 2026 The FSVG Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "cli.hpp"
#include "support/temp_dir.hpp"

namespace fsvg {
namespace {

namespace fs = std::filesystem;

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<nlohmann::json> json_lines(const std::string& text) {
  std::vector<nlohmann::json> out;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) out.push_back(nlohmann::json::parse(line));
  return out;
}

// Small dataset plus the model flags that fit it.
struct Workspace {
  test::TempDir dir;
  std::string data = (dir.path() / "data").string();
  std::vector<std::string> model_flags = {"--patch", "4", "--dim", "16", "--depth", "3", "--heads", "2",
                                          "--ffn-mult", "2", "--text-len", "4", "--head-hidden", "16",
                                          "--fs-layers", "1,2"};
  Workspace() {
    const auto r = run({"gen-data", "--out", data, "--train", "12", "--val", "4", "--image-size", "32", "--patch",
                        "4", "--seed", "1"});
    EXPECT_EQ(r.code, 0) << r.err;
  }
  std::vector<std::string> train_args(const std::string& ckpt, std::vector<std::string> extra = {}) const {
    std::vector<std::string> a = {"train", "--data", data, "--ckpt-out", ckpt, "--epochs", "1", "--batch", "4"};
    a.insert(a.end(), model_flags.begin(), model_flags.end());
    a.insert(a.end(), extra.begin(), extra.end());
    return a;
  }
};

TEST(Cli, GenDataIsDeterministic) {
  Workspace w;
  const std::string other = (w.dir.path() / "again").string();
  ASSERT_EQ(run({"gen-data", "--out", other, "--train", "12", "--val", "4", "--image-size", "32", "--patch", "4",
                 "--seed", "1"})
                .code,
            0);
  for (const char* f : {"train.jsonl", "val.jsonl", "vocab.json", "images/train_000003.ppm"}) {
    EXPECT_EQ(slurp(fs::path(w.data) / f), slurp(fs::path(other) / f)) << f;
  }
}

TEST(Cli, GenDataReportsCounts) {
  test::TempDir dir;
  const auto r = run({"gen-data", "--out", (dir.path() / "d").string(), "--train", "3", "--val", "2",
                      "--image-size", "32", "--patch", "4"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("wrote 3 train and 2 val"), std::string::npos);
}

TEST(Cli, GenDataRejectsBadGeometry) {
  test::TempDir dir;
  const auto r = run({"gen-data", "--out", (dir.path() / "d").string(), "--image-size", "15", "--patch", "4"});
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.err.find("error:"), std::string::npos);
}

TEST(Cli, TrainLogsJsonLinesAndWritesCheckpoint) {
  Workspace w;
  const std::string ckpt = (w.dir.path() / "m.ckpt").string();
  const auto r = run(w.train_args(ckpt));
  ASSERT_EQ(r.code, 0) << r.err;
  const auto lines = json_lines(r.out);
  ASSERT_EQ(lines.size(), 3u);
  EXPECT_EQ(lines[0]["event"], "start");
  EXPECT_EQ(lines[1]["event"], "epoch");
  EXPECT_EQ(lines[1]["epoch"], 1);
  EXPECT_TRUE(lines[1]["val_acc"].is_number());
  EXPECT_EQ(lines[1]["config"]["model"]["lambda_l1"], 5.0);
  EXPECT_EQ(lines[1]["config"]["model"]["lambda_giou"], 2.0);
  EXPECT_EQ(lines[2]["event"], "done");
  EXPECT_EQ(lines[2]["steps"], 3);
  EXPECT_TRUE(fs::exists(ckpt));
}

TEST(Cli, TrainIsReproducible) {
  Workspace w;
  const std::string a = (w.dir.path() / "a.ckpt").string(), b = (w.dir.path() / "b.ckpt").string();
  ASSERT_EQ(run(w.train_args(a)).code, 0);
  ASSERT_EQ(run(w.train_args(b)).code, 0);
  EXPECT_EQ(slurp(a), slurp(b));
}

TEST(Cli, TrainRejectsBadArgumentsBeforeStepOne) {
  Workspace w;
  const std::string ckpt = (w.dir.path() / "m.ckpt").string();
  for (const char* rho : {"0", "1.5", "-0.2"}) {
    const auto r = run(w.train_args(ckpt, {"--rho", rho}));
    EXPECT_NE(r.code, 0) << rho;
    EXPECT_EQ(r.out.find("\"epoch\""), std::string::npos);
  }
  EXPECT_NE(run(w.train_args(ckpt, {"--fs-layers", "9"})).code, 0);
  EXPECT_NE(run(w.train_args(ckpt, {"--lr", "0"})).code, 0);
  const auto missing = run({"train", "--data", (w.dir.path() / "nope").string(), "--ckpt-out", ckpt});
  EXPECT_NE(missing.code, 0);
  EXPECT_FALSE(fs::exists(ckpt));
}

TEST(Cli, ResumeNeedsOptimizerStateAndMatchingShape) {
  Workspace w;
  const std::string ckpt = (w.dir.path() / "m.ckpt").string();
  ASSERT_EQ(run(w.train_args(ckpt)).code, 0);
  const std::string out2 = (w.dir.path() / "m2.ckpt").string();
  auto args = w.train_args(out2, {"--resume", ckpt});
  args[6] = "2";  // --epochs
  const auto r = run(args);
  ASSERT_EQ(r.code, 0) << r.err;
  const auto lines = json_lines(r.out);
  EXPECT_EQ(lines[1]["epoch"], 2);

  auto wrong = w.train_args(out2, {"--resume", ckpt});
  wrong[12] = "32";  // --dim
  const auto bad = run(wrong);
  EXPECT_NE(bad.code, 0);
  EXPECT_NE(bad.err.find("mismatch"), std::string::npos) << bad.err;
}

TEST(Cli, EvalPrintsAccuracy) {
  Workspace w;
  const std::string ckpt = (w.dir.path() / "m.ckpt").string();
  ASSERT_EQ(run(w.train_args(ckpt)).code, 0);
  const auto r = run({"eval", "--data", w.data, "--ckpt", ckpt});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out.rfind("Acc@0.5 ", 0), 0u);
  EXPECT_NE(r.out.find("over 4 examples (rho 0.7"), std::string::npos) << r.out;
  const auto dense = run({"eval", "--data", w.data, "--ckpt", ckpt, "--rho", "1", "--split", "train"});
  EXPECT_NE(dense.out.find("over 12 examples (rho 1,"), std::string::npos) << dense.out;
}

TEST(Cli, EvalOnEmptySplitFails) {
  Workspace w;
  const std::string ckpt = (w.dir.path() / "m.ckpt").string();
  ASSERT_EQ(run(w.train_args(ckpt)).code, 0);
  std::ofstream(fs::path(w.data) / "val.jsonl", std::ios::trunc).close();
  const auto r = run({"eval", "--data", w.data, "--ckpt", ckpt});
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.err.find("empty"), std::string::npos) << r.err;
  EXPECT_NE(run({"eval", "--data", w.data, "--ckpt", ckpt, "--split", "test"}).code, 0);
}

TEST(Cli, FlopsTableForVitb) {
  const auto r = run({"flops"});
  ASSERT_EQ(r.code, 0) << r.err;
  std::istringstream in(r.out);
  std::vector<std::string> rows;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && std::isdigit(static_cast<unsigned char>(line[0]))) rows.push_back(line);
  }
  ASSERT_EQ(rows.size(), 6u) << r.out;
  EXPECT_EQ(rows[0].rfind("1.00", 0), 0u);
  EXPECT_NE(rows[0].find("1.0000"), std::string::npos);
  EXPECT_EQ(rows[3].rfind("0.70", 0), 0u);
}

TEST(Cli, FlopsJsonAndErrors) {
  const auto r = run({"flops", "--preset", "toy", "--rho-list", "1,0.5", "--json"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto lines = json_lines(r.out);
  ASSERT_EQ(lines.size(), 2u);
  EXPECT_EQ(lines[0]["ratio"], 1.0);
  EXPECT_LT(lines[1]["ratio"].get<double>(), 1.0);
  EXPECT_NE(run({"flops", "--rho-list", "0.5,abc"}).code, 0);
  EXPECT_NE(run({"flops", "--rho-list", "1.2"}).code, 0);
  EXPECT_NE(run({"flops", "--preset", "vitl"}).code, 0);
}

TEST(Cli, VizWritesFilesAndChecksIndex) {
  Workspace w;
  const std::string ckpt = (w.dir.path() / "m.ckpt").string();
  ASSERT_EQ(run(w.train_args(ckpt)).code, 0);
  const std::string prefix = (w.dir.path() / "v").string();
  const auto r = run({"viz", "--ckpt", ckpt, "--data", w.data, "--index", "1", "--out", prefix});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(prefix + "_stage1_layer1.ppm"));
  EXPECT_TRUE(fs::exists(prefix + "_stage2_layer2.ppm"));
  EXPECT_TRUE(fs::exists(prefix + "_overlay.ppm"));
  // 64 patches, keep 0.7 twice: 45 then 32
  EXPECT_NE(r.out.find("kept 45/64  black 19"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("kept 32/64  black 32"), std::string::npos) << r.out;

  const auto bad = run({"viz", "--ckpt", ckpt, "--data", w.data, "--index", "4", "--out", prefix});
  EXPECT_NE(bad.code, 0);
  EXPECT_NE(bad.err.find("out of range"), std::string::npos);
}

TEST(Cli, GradCheckPasses) {
  const auto r = run({"grad-check"});
  EXPECT_EQ(r.code, 0) << r.out << r.err;
  EXPECT_NE(r.out.find("PASS"), std::string::npos);
  // full precision: 17 significant digits
  const auto at = r.out.find("max relative error ");
  ASSERT_EQ(at, 0u);
  const double v = std::stod(r.out.substr(19));
  EXPECT_LT(v, 1e-4);
}

TEST(Cli, UnknownSubcommandAndHelp) {
  EXPECT_NE(run({"frobnicate"}).code, 0);
  EXPECT_NE(run({}).code, 0);
  const auto help = run({"--help"});
  EXPECT_EQ(help.code, 0);
  EXPECT_NE(help.out.find("gen-data"), std::string::npos);
}

}  // namespace
}  // namespace fsvg
