// SPDX-License-Identifier: Apache-2.0
//
// Exercises the installed binary end to end; EBMFORGE_BIN points at it.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

namespace {

namespace fs = std::filesystem;

std::string binary() {
  const char* bin = std::getenv("EBMFORGE_BIN");
  REQUIRE_MESSAGE(bin != nullptr, "EBMFORGE_BIN must point at the CLI binary");
  return bin;
}

int run(const std::string& args) {
  const std::string cmd = binary() + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

fs::path temp_dir(const std::string& name) {
  const auto p = fs::temp_directory_path() / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

fs::path small_config(const fs::path& dir) {
  const auto p = dir / "small.cfg";
  std::ofstream out(p);
  out << "dataset = eight-gaussians\n"
         "data.n = 128\n"
         "batch_size = 8\n"
         "iterations = 4\n"
         "model.hidden = 8\n"
         "langevin.steps = 3\n"
         "langevin.step_size = 0.05\n"
         "langevin.noise_sigma = 0.01\n"
         "seed = 11\n";
  return p;
}

}  // namespace

TEST_CASE("unknown verbs and bad usage exit 2") {
  CHECK(run("frobnicate") == 2);
  CHECK(run("") == 2);
  CHECK(run("train") == 2);  // missing required --config
}

TEST_CASE("config errors exit 2, missing checkpoints exit 1") {
  const auto dir = temp_dir("ebmforge_cli_err");
  const auto cfg = small_config(dir);
  CHECK(run("train --config " + cfg.string() + " --set nonsense=1 --out " + dir.string()) == 2);
  CHECK(run("sample --config " + cfg.string() + " --checkpoint " + (dir / "nope.ckpt").string() +
            " --out " + dir.string()) == 1);
  fs::remove_all(dir);
}

TEST_CASE("train writes checkpoint, metrics and a reproducible effective config") {
  const auto dir = temp_dir("ebmforge_cli_train");
  const auto cfg = small_config(dir);
  const auto out1 = dir / "run1";
  const auto out2 = dir / "run2";
  REQUIRE(run("train --config " + cfg.string() + " --out " + out1.string()) == 0);
  CHECK(fs::exists(out1 / "model.ckpt"));
  CHECK(fs::exists(out1 / "metrics.csv"));
  CHECK(fs::exists(out1 / "effective-config.txt"));

  // re-running from the effective config reproduces the run bitwise
  REQUIRE(run("train --config " + (out1 / "effective-config.txt").string() + " --out " +
              out2.string()) == 0);
  CHECK(slurp(out1 / "metrics.csv") == slurp(out2 / "metrics.csv"));
  CHECK(slurp(out1 / "model.ckpt") == slurp(out2 / "model.ckpt"));
  fs::remove_all(dir);
}

TEST_CASE("sample and eval-ood consume a trained checkpoint") {
  const auto dir = temp_dir("ebmforge_cli_sample");
  const auto cfg = small_config(dir);
  const auto out = dir / "train";
  REQUIRE(run("train --config " + cfg.string() + " --out " + out.string()) == 0);

  const auto sdir = dir / "samples";
  REQUIRE(run("sample --config " + cfg.string() + " --checkpoint " +
              (out / "model.ckpt").string() + " --n 16 --rounds 2 --out " + sdir.string()) == 0);
  CHECK(fs::exists(sdir / "samples.csv"));
  {
    std::ifstream in(sdir / "samples.csv");
    std::string header;
    REQUIRE(std::getline(in, header));
    CHECK(header == "dim0,dim1");
  }

  const auto odir = dir / "ood";
  REQUIRE(run("eval-ood --config " + cfg.string() + " --checkpoint " +
              (out / "model.ckpt").string() + " --n 64 --out " + odir.string()) == 0);
  CHECK(fs::exists(odir / "ood_report.json"));
  const std::string rep = slurp(odir / "ood_report.json");
  CHECK(rep.find("\"auroc\"") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("truncation-report emits the K table") {
  const auto dir = temp_dir("ebmforge_cli_trunc");
  REQUIRE(run("truncation-report --out " + dir.string()) == 0);
  const std::string csv = slurp(dir / "truncation_report.csv");
  CHECK(csv.find("K,cosine,norm_ratio") != std::string::npos);
  CHECK(csv.find("\n1,1,1,") != std::string::npos);  // K=1 identity row
  fs::remove_all(dir);
}
