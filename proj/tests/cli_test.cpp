// Copyright (c) 2026 The KDAR Lab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Drives the kdar_cli binary end to end in scratch directories.

#include <gtest/gtest.h>
#include <sys/wait.h>

#include <chrono>
#include <cstdio>
#include <fstream>
#include <json.hpp>
#include <sstream>
#include <string>
#include <vector>

#include "kdar/checkpoint.hpp"
#include "kdar/experiments.hpp"
#include "kdar/train.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;

namespace {

struct RunResult {
  int code = -1;
  std::string output;
};

RunResult run_cli(const std::string& args, const std::string& env = "") {
  const std::string cmd = env + " \"" KDAR_CLI_PATH "\" " + args + " 2>&1";
  RunResult r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return r;
  char buf[4096];
  std::size_t n;
  while ((n = fread(buf, 1, sizeof buf, pipe)) > 0) r.output.append(buf, n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) { return kdar::read_file_bytes(p.string()); }

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

// History CSV without the wall-clock column.
std::string strip_seconds(const std::string& csv) {
  std::string out;
  for (const std::string& l : lines(csv)) out += l.substr(0, l.rfind(',')) + "\n";
  return out;
}

nlohmann::json read_json(const fs::path& p) { return nlohmann::json::parse(slurp(p)); }

const char* kSmallData = "--n-train 800 --n-test 300";
const char* kFast = "--epochs 2 --hidden 8 --batch-size 64";

// One small dataset + teacher shared by the tests that only read them.
class CliFixture : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = testutil::scratch_dir("cli_shared");
    ASSERT_EQ(run_cli("gen-data " + std::string(kSmallData) + " --out-dir " + data()).code, 0);
    ASSERT_EQ(run_cli("train-teacher --data-dir " + data() + " --out-dir " + (root_ / "t").string() +
                      " " + kFast)
                  .code,
              0);
  }
  static std::string data() { return (root_ / "data").string(); }
  static std::string teacher() { return (root_ / "t" / "teacher.ckpt").string(); }

  static fs::path root_;
};

fs::path CliFixture::root_;

}  // namespace

TEST(Cli, RequiresSubcommand) {
  EXPECT_EQ(run_cli("").code, 2);
  EXPECT_EQ(run_cli("no-such-command").code, 2);
  EXPECT_EQ(run_cli("--version").code, 0);
  EXPECT_EQ(run_cli("gen-data --help").code, 0);
}

TEST(Cli, GenDataWritesSplitsAndManifest) {
  const fs::path dir = testutil::scratch_dir("cli_gen") / "out";
  const RunResult r = run_cli("gen-data " + std::string(kSmallData) + " --out-dir " + dir.string());
  ASSERT_EQ(r.code, 0) << r.output;
  for (const char* f : {"train.jsonl", "test_ood.jsonl", "test_iid.jsonl", "manifest.json"}) {
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  }
  const auto m = read_json(dir / "manifest.json");
  EXPECT_EQ(m["command"], "gen-data");
  EXPECT_EQ(m["config"]["n-train"], 800);
  EXPECT_EQ(m["config"]["skew"], 3.0);
  EXPECT_EQ(m["config"]["shift-mode"], "inverted");
  EXPECT_TRUE(m.contains("started_at"));
  EXPECT_TRUE(m.contains("finished_at"));
  EXPECT_TRUE(m.contains("tool_version"));
  EXPECT_EQ(lines(slurp(dir / "train.jsonl")).size(), 801u);
}

TEST(Cli, GenDataIsDeterministic) {
  const fs::path root = testutil::scratch_dir("cli_gen_det");
  for (const char* d : {"a", "b"}) {
    ASSERT_EQ(run_cli("gen-data --seed 7 " + std::string(kSmallData) + " --out-dir " + (root / d).string()).code, 0);
  }
  for (const char* f : {"train.jsonl", "test_ood.jsonl", "test_iid.jsonl"}) {
    EXPECT_EQ(slurp(root / "a" / f), slurp(root / "b" / f)) << f;
  }
}

TEST(Cli, GenDataRejectsInvalidSpec) {
  const fs::path root = testutil::scratch_dir("cli_gen_bad");
  const RunResult r = run_cli("gen-data --skew 0.5 --out-dir " + (root / "x").string());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("skew"), std::string::npos) << r.output;
  EXPECT_FALSE(fs::exists(root / "x" / "train.jsonl"));
}

TEST(Cli, ConfigFileMergesUnderFlags) {
  const fs::path root = testutil::scratch_dir("cli_config");
  std::ofstream(root / "cfg.json") << R"({"n_train": 300, "n-test": 100, "skew": 2, "seed": 4})";
  const RunResult r = run_cli("gen-data --config " + (root / "cfg.json").string() +
                              " --seed 9 --out-dir " + (root / "out").string());
  ASSERT_EQ(r.code, 0) << r.output;
  const auto m = read_json(root / "out" / "manifest.json");
  EXPECT_EQ(m["config"]["n-train"], 300);
  EXPECT_EQ(m["config"]["skew"], 2.0);
  EXPECT_EQ(m["config"]["seed"], 9);

  std::ofstream(root / "bad.json") << R"({"bogus": 1})";
  EXPECT_EQ(run_cli("gen-data --config " + (root / "bad.json").string()).code, 2);
  std::ofstream(root / "broken.json") << "{not json";
  EXPECT_EQ(run_cli("gen-data --spec " + (root / "broken.json").string()).code, 2);
  EXPECT_EQ(run_cli("gen-data --config " + (root / "missing.json").string()).code, 2);
}

TEST(Cli, OutputDirectoryFromEnvironment) {
  const fs::path root = testutil::scratch_dir("cli_env");
  const RunResult r = run_cli("gen-data " + std::string(kSmallData), "KDAR_OUT_DIR=" + root.string());
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_TRUE(fs::exists(root / "gen-data" / "manifest.json"));
}

TEST_F(CliFixture, StudentTeacherRequirement) {
  const fs::path root = testutil::scratch_dir("cli_student_req");
  const std::string base = "train-student --data-dir " + data() + " " + kFast + " --out-dir ";
  const RunResult missing = run_cli(base + (root / "a").string() + " --loss-mode kdar");
  EXPECT_EQ(missing.code, 2);
  EXPECT_NE(missing.output.find("--teacher"), std::string::npos);
  EXPECT_EQ(run_cli(base + (root / "b").string() + " --loss-mode apt_only").code, 2);
  EXPECT_EQ(run_cli(base + (root / "c").string() + " --loss-mode bce_only").code, 0);
  EXPECT_EQ(run_cli(base + (root / "d").string() + " --loss-mode nonsense").code, 2);
  EXPECT_EQ(run_cli(base + (root / "e").string() + " --teacher " + (root / "nope.ckpt").string()).code, 2);
}

TEST_F(CliFixture, StudentArtifactsAndManifestReplay) {
  const fs::path root = testutil::scratch_dir("cli_student");
  const RunResult r = run_cli("train-student --data-dir " + data() + " --teacher " + teacher() + " " +
                              kFast + " --tau 3 --out-dir " + (root / "s").string());
  ASSERT_EQ(r.code, 0) << r.output;
  const auto m = read_json(root / "s" / "manifest.json");
  EXPECT_EQ(m["config"]["tau"], 3.0);
  EXPECT_EQ(m["config"]["beta"], 3.0);
  EXPECT_EQ(m["config"]["alpha"], 0.5);
  EXPECT_EQ(m["config"]["loss-mode"], "kdar");
  EXPECT_EQ(m["config"]["epochs"], 2);

  const auto hist = lines(slurp(root / "s" / "history.csv"));
  ASSERT_EQ(hist.size(), 3u);
  EXPECT_EQ(hist[0], kdar::kHistoryCsvHeader);

  const RunResult replay =
      run_cli("train-student --config " + (root / "s" / "manifest.json").string() + " --out-dir " +
              (root / "replay").string());
  ASSERT_EQ(replay.code, 0) << replay.output;
  EXPECT_EQ(slurp(root / "s" / "student.ckpt"), slurp(root / "replay" / "student.ckpt"));
  EXPECT_EQ(strip_seconds(slurp(root / "s" / "history.csv")),
            strip_seconds(slurp(root / "replay" / "history.csv")));
}

TEST_F(CliFixture, EvalWritesRowsDeterministically) {
  const fs::path root = testutil::scratch_dir("cli_eval");
  for (const char* d : {"a", "b"}) {
    const RunResult r = run_cli("eval --checkpoint " + teacher() + " --data-dir " + data() +
                                " --out-dir " + (root / d).string());
    ASSERT_EQ(r.code, 0) << r.output;
    EXPECT_NE(r.output.find("ood gap"), std::string::npos);
  }
  const std::string csv = slurp(root / "a" / "metrics.csv");
  EXPECT_EQ(csv, slurp(root / "b" / "metrics.csv"));
  const auto rows = lines(csv);
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0], "label,n,overall,head_acc,tail_acc,qtype_0,qtype_1,qtype_2,qtype_3");
  EXPECT_EQ(rows[1].rfind("test_iid,300,", 0), 0u);
  EXPECT_EQ(rows[2].rfind("test_ood,300,", 0), 0u);
  EXPECT_TRUE(read_json(root / "a" / "manifest.json").contains("ood_gap"));
}

TEST_F(CliFixture, EvalErrors) {
  const fs::path root = testutil::scratch_dir("cli_eval_err");
  const std::string missing = (root / "missing.ckpt").string();
  const RunResult r = run_cli("eval --checkpoint " + missing + " --data-dir " + data() +
                              " --out-dir " + (root / "x").string());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find(missing), std::string::npos) << r.output;

  ASSERT_EQ(run_cli("gen-data --n-qtypes 3 --n-train 200 --n-test 50 --out-dir " + (root / "d3").string()).code, 0);
  const RunResult dims = run_cli("eval --checkpoint " + teacher() + " --data-dir " + (root / "d3").string() +
                                 " --out-dir " + (root / "y").string());
  EXPECT_EQ(dims.code, 2) << dims.output;
  EXPECT_NE(dims.output.find("dims"), std::string::npos) << dims.output;
}

TEST_F(CliFixture, SweepCardinalityAndParallelBytes) {
  const fs::path root = testutil::scratch_dir("cli_sweep");
  const std::string base = "sweep --data-dir " + data() + " --teacher " + teacher() +
                           " --epochs 1 --hidden 8 --batch-size 128 --out-dir ";
  const RunResult seq = run_cli(base + (root / "seq").string());
  ASSERT_EQ(seq.code, 0) << seq.output;
  const auto rows = lines(slurp(root / "seq" / "sweep.csv"));
  ASSERT_EQ(rows.size(), 37u);
  EXPECT_EQ(rows[0], "beta,tau,seed,acc_ood,acc_iid,status");
  for (std::size_t i = 1; i < rows.size(); ++i) EXPECT_TRUE(rows[i].ends_with(",ok")) << rows[i];

  const RunResult par = run_cli(base + (root / "par").string() + " --parallel 3");
  ASSERT_EQ(par.code, 0) << par.output;
  EXPECT_EQ(slurp(root / "seq" / "sweep.csv"), slurp(root / "par" / "sweep.csv"));
  EXPECT_EQ(read_json(root / "par" / "manifest.json")["teacher_unchanged"], true);
}

TEST_F(CliFixture, SweepRecordsFailuresAndContinues) {
  const fs::path root = testutil::scratch_dir("cli_sweep_fail");
  const RunResult r = run_cli("sweep --data-dir " + data() + " --teacher " + teacher() +
                              " --epochs 1 --hidden 8 --beta 3 --tau 0,2.5 --seed 0 --out-dir " +
                              (root / "s").string());
  EXPECT_EQ(r.code, 1) << r.output;
  const auto rows = lines(slurp(root / "s" / "sweep.csv"));
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[1], "3,0,0,,,failed");
  EXPECT_TRUE(rows[2].ends_with(",ok"));
  const auto m = read_json(root / "s" / "manifest.json");
  EXPECT_EQ(m["status"], "completed_with_failures");
  EXPECT_EQ(m["failures"].size(), 1u);
}

TEST_F(CliFixture, SweepUsageErrors) {
  const fs::path root = testutil::scratch_dir("cli_sweep_usage");
  const std::string base = "sweep --data-dir " + data() + " --out-dir " + (root / "s").string();
  EXPECT_EQ(run_cli(base + " --teacher " + teacher() + " --tau \"\"").code, 2);
  EXPECT_EQ(run_cli(base + " --teacher " + teacher() + " --beta x").code, 2);
  EXPECT_EQ(run_cli(base).code, 2);
}

TEST_F(CliFixture, AblateWritesFourRows) {
  const fs::path root = testutil::scratch_dir("cli_ablate");
  const RunResult r = run_cli("ablate --data-dir " + data() + " --teacher " + teacher() +
                              " --epochs 1 --hidden 8 --seed 0,1 --out-dir " + (root / "a").string());
  ASSERT_EQ(r.code, 0) << r.output;
  const auto rows = lines(slurp(root / "a" / "ablate.csv"));
  ASSERT_EQ(rows.size(), 5u);
  EXPECT_EQ(rows[0], kdar::kAblationCsvHeader);
  EXPECT_EQ(rows[1].rfind("bce_only,2,", 0), 0u);
  EXPECT_EQ(rows[2].rfind("apt_only,2,", 0), 0u);
  EXPECT_EQ(rows[3].rfind("kd_only,2,", 0), 0u);
  EXPECT_EQ(rows[4].rfind("kdar,2,", 0), 0u);
  EXPECT_EQ(lines(slurp(root / "a" / "ablate_runs.csv")).size(), 9u);
  EXPECT_EQ(read_json(root / "a" / "manifest.json")["teacher_unchanged"], true);
}

// Default benchmark, default epochs: the whole pipeline stays well inside a
// two-minute budget on one core.
TEST(CliPipeline, DefaultPipelineWithinBudget) {
  const fs::path root = testutil::scratch_dir("cli_default_pipeline");
  const auto t0 = std::chrono::steady_clock::now();
  ASSERT_EQ(run_cli("gen-data --out-dir " + (root / "data").string()).code, 0);
  ASSERT_EQ(run_cli("train-teacher --data-dir " + (root / "data").string() + " --out-dir " +
                    (root / "t").string())
                .code,
            0);
  const RunResult s = run_cli("train-student --data-dir " + (root / "data").string() + " --teacher " +
                              (root / "t" / "teacher.ckpt").string() + " --out-dir " +
                              (root / "s").string());
  ASSERT_EQ(s.code, 0) << s.output;
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  EXPECT_LT(seconds, 120.0);
  EXPECT_EQ(lines(slurp(root / "s" / "history.csv")).size(), 21u);
  std::printf("default pipeline wall time: %.1f s\n", seconds);
}
