#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out;
};

Run cli(const std::string& args) {
  Run r;
  std::string cmd = std::string(CTXSCALE_CLI) + " " + args + " 2>/dev/null";
  FILE* p = ::popen(cmd.c_str(), "r");
  if (!p) return r;
  char buf[4096];
  std::size_t n;
  while ((n = std::fread(buf, 1, sizeof buf, p)) > 0) r.out.append(buf, n);
  int st = ::pclose(p);
  r.code = WIFEXITED(st) ? WEXITSTATUS(st) : -1;
  return r;
}

fs::path workdir() {
  auto d = fs::temp_directory_path() / "ctxscale_cli";
  static bool once = [&] {
    fs::remove_all(d);
    fs::create_directories(d);
    return true;
  }();
  (void)once;
  return d;
}

fs::path manifest(const std::string& name, const std::string& cells) {
  auto path = workdir() / (name + ".ini");
  std::ofstream(path) << R"([defaults]
pred_len = 4
d_model = 8
n_heads = 2
e_layers = 1
d_ff = 16
patch_len = 8
stride = 4
batch_size = 16
learning_rate = 0.001
epochs = 2
patience = 1
train_step = 5

[dataset toy]
generator = sine_noise
rows = 500
channels = 2
)" << cells;
  return path;
}

}  // namespace

TEST(CliTest, MatrixEvaluateAndReport) {
  auto m = manifest("ok", "[cell p16]\nmodel = patchtst\ndataset = toy\nseq_len = 16\n"
                          "[cell p32]\nmodel = patchtst\ndataset = toy\nseq_len = 32\n");
  auto out = workdir() / "ok_run";
  auto r = cli("matrix " + m.string() + " --out " + out.string());
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("p32,patchtst,toy,32,4,f32,2021,ok"), std::string::npos) << r.out;
  EXPECT_TRUE(fs::exists(out / "mse_vs_lookback.svg"));

  auto stored = nlohmann::json::parse(std::ifstream(out / "cells" / "p32" / "result.json"));
  auto e = cli("evaluate " + (out / "cells" / "p32" / "model.ckpt").string());
  ASSERT_EQ(e.code, 0);
  EXPECT_EQ(nlohmann::json::parse(e.out)["mse"].get<double>(), stored["result"]["mse"].get<double>());

  auto p = cli("probe " + (out / "cells" / "p32" / "model.ckpt").string() + " --samples 4");
  ASSERT_EQ(p.code, 0);
  EXPECT_EQ(nlohmann::json::parse(p.out)["samples"].get<int>(), 4);

  auto rep = cli("report " + out.string() + " --format csv,json");
  EXPECT_EQ(rep.code, 0);
  EXPECT_EQ(rep.out, r.out);
}

TEST(CliTest, ExitCodes) {
  EXPECT_EQ(cli("").code, 1);
  EXPECT_EQ(cli("--precision f16 report .").code, 1);
  EXPECT_EQ(cli("--parallelism 0 report .").code, 1);
  auto bad = manifest("bad", "[cell a]\nmodel = patchtst\ndataset = toy\nlearning_rat = 0.1\n");
  EXPECT_EQ(cli("matrix " + bad.string() + " --out " + (workdir() / "bad_run").string()).code, 1);
  EXPECT_EQ(cli("ingest " + (workdir() / "missing.csv").string()).code, 1);
  EXPECT_EQ(cli("report " + (workdir() / "nowhere").string()).code, 1);

  auto failing = manifest("fail", "[cell fine]\nmodel = patchtst\ndataset = toy\nseq_len = 16\n"
                                  "[cell huge]\nmodel = patchtst\ndataset = toy\nseq_len = 400\n");
  auto r = cli("matrix " + failing.string() + " --out " + (workdir() / "fail_run").string());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.out.find("fine,patchtst,toy,16,4,f32,2021,ok"), std::string::npos);
  EXPECT_NE(r.out.find("huge,patchtst,toy,400,4,f32,2021,failed"), std::string::npos) << r.out;
}

TEST(CliTest, SeedAndPrecisionOverrides) {
  auto m = manifest("seed", "[cell p]\nmodel = patchtst\ndataset = toy\nseq_len = 16\n");
  auto a = cli("train " + m.string() + " --seed 5 --precision f64 --out " + (workdir() / "seed_run").string());
  ASSERT_EQ(a.code, 0) << a.out;
  auto j = nlohmann::json::parse(a.out);
  EXPECT_EQ(j["result"]["seed"], 5);
  EXPECT_EQ(j["precision"], "f64");
  auto ing = cli("ingest synthetic:periodic --rows 100 --channels 2");
  ASSERT_EQ(ing.code, 0);
  auto d = nlohmann::json::parse(ing.out);
  EXPECT_EQ(d["rows"], 100);
  EXPECT_EQ(d["splits"]["val"][0], 60);
}
