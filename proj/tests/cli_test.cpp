// Drives the rrwkv executable end to end and checks exit codes and outputs.
#include <gtest/gtest.h>

#include <json.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "rrwkv/checkpoint.hpp"
#include "rrwkv/data.hpp"

namespace fs = std::filesystem;

namespace rrwkv {
namespace {

struct CliRun {
  int code = -1;
  std::string out;
};

CliRun run(const std::string& args) {
  const std::string cmd = std::string(RRWKV_CLI) + " " + args + " 2>&1";
  CliRun r;
  FILE* p = popen(cmd.c_str(), "r");
  if (!p) return r;
  char buf[4096];
  while (std::size_t n = fread(buf, 1, sizeof buf, p)) r.out.append(buf, n);
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = fs::temp_directory_path() / ("rrwkv_cli_" + std::to_string(::getpid()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  static void TearDownTestSuite() { fs::remove_all(dir_); }
  static fs::path dir_;
};
fs::path Cli::dir_;

TEST_F(Cli, VersionAndUsage) {
  const CliRun v = run("--version");
  EXPECT_EQ(v.code, 0);
  EXPECT_NE(v.out.find("rrwkv "), std::string::npos);
  EXPECT_EQ(run("").code, 1);
  EXPECT_EQ(run("frobnicate").code, 1);
  EXPECT_EQ(run("params --bogus-flag").code, 1);
  EXPECT_EQ(run("train --config x").code, 1);  // missing required options
}

TEST_F(Cli, ParamsReport) {
  const CliRun r = run("params --variant light --out " + (dir_ / "p.csv").string());
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("within 15%"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("bottleneck"), std::string::npos);
  EXPECT_NE(slurp(dir_ / "p.csv").find("total,"), std::string::npos);
  EXPECT_TRUE(fs::exists(dir_ / "p.csv.manifest.json"));
  EXPECT_EQ(run("params --variant huge").code, 1);
}

TEST_F(Cli, FuseCheck) {
  const CliRun r = run("fuse-check --trials 100");
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("100/100 within 1e-12"), std::string::npos) << r.out;
  // An impossible tolerance is a numeric failure.
  EXPECT_EQ(run("fuse-check --trials 8 --tol 0").code, 3);
}

TEST_F(Cli, BenchWritesCsvAndManifest) {
  const fs::path csv = dir_ / "bench.csv";
  const CliRun r = run("bench --op bi-wkv --sizes 32,64 --repeats 2 --out " + csv.string());
  EXPECT_EQ(r.code, 0) << r.out;
  const std::string text = slurp(csv);
  EXPECT_EQ(text.substr(0, text.find('\n')), "T,C,variant,mean_ns,std_ns");
  EXPECT_NE(text.find("64,8,oracle,"), std::string::npos) << text;
  EXPECT_TRUE(fs::exists(csv.string() + ".manifest.json"));
  EXPECT_EQ(run("bench --op tri-wkv --sizes 8").code, 1);
}

TEST_F(Cli, DegradeAtFullFractionKeepsImages) {
  const fs::path data = dir_ / "deg_in", out = dir_ / "deg_out";
  ASSERT_EQ(run("synth --out " + data.string() + " --count 3 --val 1 --size 16").code, 0);
  const CliRun r = run("degrade --in " + data.string() + " --spec kspace:1.0 --out " + out.string());
  ASSERT_EQ(r.code, 0) << r.out;
  for (int i = 0; i < 3; ++i) {
    const std::string name = "phantom" + std::to_string(i) + ".pgm";
    const Tensor a = load_pgm(data / name), b = load_pgm(out / name);
    for (std::size_t j = 0; j < a.numel(); ++j) ASSERT_LE(std::abs(a[j] - b[j]), 1.0 / 65535);
  }
  const auto m = nlohmann::json::parse(slurp(out / "manifest.json"));
  EXPECT_EQ(m["subcommand"], "degrade");
  EXPECT_EQ(m["config"]["spec"], "kspace:1");
  EXPECT_TRUE(m.contains("started") && m.contains("finished") && m.contains("version"));
  EXPECT_EQ(run("degrade --in " + (dir_ / "missing").string() + " --out " + out.string()).code, 2);
  EXPECT_EQ(run("degrade --in " + data.string() + " --spec blur:3 --out " + out.string()).code, 1);
}

TEST_F(Cli, TrainEvalErfWorkflow) {
  const fs::path data = dir_ / "wf_data", run_dir = dir_ / "wf_run", eval_dir = dir_ / "wf_eval",
                 erf_dir = dir_ / "wf_erf", cfg = dir_ / "wf.cfg";
  ASSERT_EQ(run("synth --out " + data.string() + " --count 4 --val 1 --size 16 --seed 3").code, 0);
  std::ofstream(cfg) << "# tiny\nbase_channels = 8\npatch = 16\nbatch = 1\niterations = 3\n"
                        "val_every = 2\ncheckpoint_every = 2\nseed = 5\n";
  const std::string train_args = "train --config " + cfg.string() + " --data " +
                                 (data / "manifest.tsv").string() + " --out " + run_dir.string();
  const CliRun t = run(train_args);
  ASSERT_EQ(t.code, 0) << t.out;
  for (const char* f : {"log.csv", "final.ckpt", "iter_2.ckpt", "manifest.json", "config.txt", "summary.json"})
    EXPECT_TRUE(fs::exists(run_dir / f)) << f;
  const std::string log = slurp(run_dir / "log.csv");
  EXPECT_EQ(std::count(log.begin(), log.end(), '\n'), 4);
  const auto ck = read_checkpoint(run_dir / "final.ckpt");
  EXPECT_EQ(ck.iteration, 3u);
  EXPECT_TRUE(ck.contains("adam.step"));

  // Re-running from the echoed config reproduces the curve exactly.
  const fs::path again = dir_ / "wf_again", echo = dir_ / "wf_echo.cfg";
  const auto man = nlohmann::json::parse(slurp(run_dir / "manifest.json"));
  std::ofstream(echo) << man["config"]["resolved"].get<std::string>();
  ASSERT_EQ(run("train --config " + echo.string() + " --data " + (data / "manifest.tsv").string() +
                " --out " + again.string()).code, 0);
  EXPECT_EQ(slurp(again / "log.csv"), log);

  const CliRun e = run("eval --ckpt " + (run_dir / "final.ckpt").string() + " --data " +
                    (data / "manifest.tsv").string() + " --split val --save-images --out " +
                    eval_dir.string());
  ASSERT_EQ(e.code, 0) << e.out;
  const std::string metrics = slurp(eval_dir / "metrics.csv");
  EXPECT_EQ(metrics.substr(0, metrics.find('\n')), "id,psnr,ssim,rmse");
  EXPECT_NE(metrics.find("\nmean,"), std::string::npos);
  EXPECT_TRUE(fs::exists(eval_dir / "restored" / "phantom3.pgm"));
  EXPECT_EQ(run("eval --ckpt " + (run_dir / "final.ckpt").string() + " --data " +
                (data / "manifest.tsv").string() + " --split test --out " + eval_dir.string()).code,
            1);

  const CliRun f = run("erf --ckpt " + (run_dir / "final.ckpt").string() + " --size 16 --samples 2 --out " +
                    erf_dir.string());
  ASSERT_EQ(f.code, 0) << f.out;
  EXPECT_TRUE(fs::exists(erf_dir / "erf_checkpoint.pgm"));
  const CliRun g = run("erf --variant uni-wkv+uni --size 16 --samples 2 --out " + erf_dir.string());
  ASSERT_EQ(g.code, 0) << g.out;
  EXPECT_TRUE(fs::exists(erf_dir / "erf_uni-wkv_uni.pgm"));
  EXPECT_NE(slurp(erf_dir / "erf.csv").find("uni-wkv+uni,2,"), std::string::npos);
  EXPECT_EQ(run("erf --variant sideways --out " + erf_dir.string()).code, 1);
}

TEST_F(Cli, ErrorsMapToExitCodes) {
  const fs::path cfg = dir_ / "typo.cfg", bad = dir_ / "bad.ckpt", data = dir_ / "ec_data";
  ASSERT_EQ(run("synth --out " + data.string() + " --count 2 --val 1 --size 16").code, 0);
  const std::string m = (data / "manifest.tsv").string();
  std::ofstream(cfg) << "iteratons = 3\n";
  const CliRun typo = run("train --config " + cfg.string() + " --data " + m + " --out " + (dir_ / "x").string());
  EXPECT_EQ(typo.code, 1);
  EXPECT_NE(typo.out.find("iteratons"), std::string::npos) << typo.out;
  std::ofstream(bad) << "not a checkpoint";
  EXPECT_EQ(run("eval --ckpt " + bad.string() + " --data " + m + " --out " + (dir_ / "y").string()).code, 2);
  std::ofstream(dir_ / "ok.cfg") << "iterations = 1\n";
  EXPECT_EQ(run("train --config " + (dir_ / "ok.cfg").string() + " --data " + (dir_ / "none.tsv").string() +
                " --out " + (dir_ / "z").string()).code,
            2);
}

}  // namespace
}  // namespace rrwkv
