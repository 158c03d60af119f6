// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>

#include "ebmforge/io.hpp"
#include "ebmforge/trainer.hpp"

using namespace ebmforge;
using ad::Tensor;

namespace {

std::filesystem::path temp_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / name;
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

config::TrainConfig tiny_config() {
  config::TrainConfig cfg;
  cfg.dataset = "eight-gaussians";
  cfg.data_n = 256;
  cfg.batch_size = 16;
  cfg.iterations = 8;
  cfg.hidden = {8, 8};
  cfg.langevin_steps = 4;
  cfg.langevin_step_size = 0.05;
  cfg.langevin_noise_sigma = 0.01;
  cfg.seed = 5;
  cfg.lr = 1e-3;
  return cfg;
}

struct ParamPack {
  std::vector<Tensor> storage;
  std::vector<Tensor*> ptrs;
  explicit ParamPack(std::vector<Tensor> ts) : storage(std::move(ts)) {
    for (Tensor& t : storage) ptrs.push_back(&t);
  }
};

}  // namespace

TEST_CASE("adam: zero gradient and zero lr leave parameters unchanged") {
  ParamPack pack({Tensor({2}, {1.0, -2.0})});
  trainer::AdamState st;
  {
    std::vector<const Tensor*> cp(pack.ptrs.begin(), pack.ptrs.end());
    st.init({cp.data(), cp.size()});
  }
  const std::vector<Tensor> zero_g = {Tensor::zeros({2})};
  CHECK(trainer::adam_step(st, {pack.ptrs.data(), 1}, zero_g, 1e-3, 0.9, 0.999, 1e-8));
  CHECK(pack.storage[0].values == std::vector<double>{1.0, -2.0});

  const std::vector<Tensor> g = {Tensor({2}, {0.5, -0.25})};
  CHECK(trainer::adam_step(st, {pack.ptrs.data(), 1}, g, 0.0, 0.9, 0.999, 1e-8));
  CHECK(pack.storage[0].values == std::vector<double>{1.0, -2.0});
}

TEST_CASE("adam: repeated unit gradient follows the scalar recurrence") {
  const double lr = 1e-3, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  ParamPack pack({Tensor({1}, {0.0})});
  trainer::AdamState st;
  {
    std::vector<const Tensor*> cp(pack.ptrs.begin(), pack.ptrs.end());
    st.init({cp.data(), cp.size()});
  }
  // independent recurrence on plain doubles
  double m = 0.0, v = 0.0, x = 0.0;
  const std::vector<Tensor> g = {Tensor({1}, {1.0})};
  for (int t = 1; t <= 5; ++t) {
    REQUIRE(trainer::adam_step(st, {pack.ptrs.data(), 1}, g, lr, b1, b2, eps));
    m = b1 * m + (1 - b1) * 1.0;
    v = b2 * v + (1 - b2) * 1.0;
    const double mh = m / (1 - std::pow(b1, t));
    const double vh = v / (1 - std::pow(b2, t));
    x -= lr * mh / (std::sqrt(vh) + eps);
    CHECK(pack.storage[0].values[0] == doctest::Approx(x).epsilon(1e-15));
    if (t == 1) {
      // first update is a bias-corrected unit step of magnitude ~lr
      CHECK(std::abs(pack.storage[0].values[0] + lr) < lr * 1e-6);
    }
  }
}

TEST_CASE("adam: non-finite gradient applies nothing and signals") {
  ParamPack pack({Tensor({1}, {1.0})});
  trainer::AdamState st;
  {
    std::vector<const Tensor*> cp(pack.ptrs.begin(), pack.ptrs.end());
    st.init({cp.data(), cp.size()});
  }
  std::vector<Tensor> g = {Tensor({1}, {1.0})};
  g[0].values[0] = std::numeric_limits<double>::quiet_NaN();
  CHECK_FALSE(trainer::adam_step(st, {pack.ptrs.data(), 1}, g, 1e-3, 0.9, 0.999, 1e-8));
  CHECK(pack.storage[0].values[0] == 1.0);
  CHECK(st.step == 0);
}

TEST_CASE("ema update endpoints and fixed point") {
  ParamPack ema({Tensor({2}, {0.0, 0.0})});
  ParamPack params({Tensor({2}, {1.0, -1.0})});
  std::vector<const Tensor*> src(params.ptrs.begin(), params.ptrs.end());

  trainer::ema_update({ema.ptrs.data(), 1}, {src.data(), 1}, 0.0);
  CHECK(ema.storage[0].values == params.storage[0].values);  // decay 0 copies

  ParamPack ema2({Tensor({2}, {0.5, 0.5})});
  trainer::ema_update({ema2.ptrs.data(), 1}, {src.data(), 1}, 1.0);
  CHECK(ema2.storage[0].values == std::vector<double>{0.5, 0.5});  // decay 1 freezes

  // constant params: the distance shrinks monotonically
  ParamPack ema3({Tensor({2}, {0.0, 0.0})});
  double prev = 1.0;
  for (int i = 0; i < 50; ++i) {
    trainer::ema_update({ema3.ptrs.data(), 1}, {src.data(), 1}, 0.9);
    const double dist = std::abs(ema3.storage[0].values[0] - 1.0);
    CHECK(dist < prev);
    prev = dist;
  }
}

TEST_CASE("detect_divergence needs a full consecutive window") {
  const std::vector<double> zeros(100, 0.0);
  CHECK_FALSE(trainer::detect_divergence(zeros, 10.0, 50));

  const std::vector<double> big(50, 100.0);
  CHECK(trainer::detect_divergence(big, 10.0, 50));

  std::vector<double> spike(60, 100.0);
  spike[55] = 0.0;  // one recovery breaks the run
  CHECK_FALSE(trainer::detect_divergence(spike, 10.0, 50));

  CHECK_FALSE(trainer::detect_divergence({{100.0, 100.0}}, 10.0, 3));  // too short
}

TEST_CASE("one iteration writes one row with the right buffer fill") {
  config::TrainConfig cfg = tiny_config();
  cfg.iterations = 1;
  cfg.batch_size = 64;
  cfg.data_n = 512;
  const auto out = temp_dir("ebmforge_train_one");
  const trainer::TrainResult res = trainer::train(cfg, out);
  CHECK_FALSE(res.diverged);

  std::ifstream in(res.metrics_path);
  std::string header, row, extra;
  REQUIRE(std::getline(in, header));
  CHECK(header == io::kMetricsHeader);
  REQUIRE(std::getline(in, row));
  CHECK_FALSE(std::getline(in, extra));
  io::MetricsRow r{};
  REQUIRE(std::sscanf(row.c_str(), "%zu,%lf,%lf,%lf,%lf,%lf,%lf,%lf,%lf,%zu,%lf", &r.iter,
                      &r.loss_cd, &r.loss_kl_opt, &r.loss_kl_ent, &r.energy_pos, &r.energy_neg,
                      &r.energy_diff, &r.grad_cd, &r.grad_kl, &r.buffer_fill, &r.wall_s) == 11);
  CHECK(r.iter == 0);
  CHECK(r.buffer_fill == 64);
  CHECK(r.wall_s == 0.0);
  std::filesystem::remove_all(out);
}

TEST_CASE("zero learning rate leaves parameters at initialization") {
  config::TrainConfig cfg = tiny_config();
  cfg.lr = 0.0;
  const auto out = temp_dir("ebmforge_train_lr0");
  const trainer::TrainResult res = trainer::train(cfg, out);

  const data::Dataset ds = trainer::build_dataset(cfg);
  const model::AnyModel fresh = trainer::build_model(cfg, ds.input);
  const auto a = model::named_params(res.model);
  const auto b = model::named_params(fresh);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].second->values == b[i].second->values);
  }
  std::filesystem::remove_all(out);
}

TEST_CASE("fixed seed reproduces the metrics file bitwise") {
  const config::TrainConfig cfg = tiny_config();
  const auto out1 = temp_dir("ebmforge_det1");
  const auto out2 = temp_dir("ebmforge_det2");
  const trainer::TrainResult r1 = trainer::train(cfg, out1);
  const trainer::TrainResult r2 = trainer::train(cfg, out2);
  CHECK(slurp(r1.metrics_path) == slurp(r2.metrics_path));
  CHECK(slurp(r1.checkpoint_path) == slurp(r2.checkpoint_path));
  std::filesystem::remove_all(out1);
  std::filesystem::remove_all(out2);
}

TEST_CASE("metrics rows satisfy the energy-difference identity") {
  const config::TrainConfig cfg = tiny_config();
  const auto out = temp_dir("ebmforge_ident");
  const trainer::TrainResult res = trainer::train(cfg, out);
  std::ifstream in(res.metrics_path);
  std::string line;
  std::getline(in, line);
  std::size_t rows = 0;
  std::size_t prev_fill = 0;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    io::MetricsRow r{};
    REQUIRE(std::sscanf(line.c_str(), "%zu,%lf,%lf,%lf,%lf,%lf,%lf,%lf,%lf,%zu,%lf", &r.iter,
                        &r.loss_cd, &r.loss_kl_opt, &r.loss_kl_ent, &r.energy_pos, &r.energy_neg,
                        &r.energy_diff, &r.grad_cd, &r.grad_kl, &r.buffer_fill,
                        &r.wall_s) == 11);
    CHECK(r.energy_diff == r.energy_pos - r.energy_neg);  // %.17g round-trips exactly
    CHECK(r.buffer_fill >= prev_fill);
    prev_fill = r.buffer_fill;
    ++rows;
  }
  CHECK(rows == cfg.iterations);
  std::filesystem::remove_all(out);
}

TEST_CASE("checkpoint save/load/continue matches the uninterrupted run") {
  config::TrainConfig cfg = tiny_config();
  cfg.iterations = 10;
  const auto out_full = temp_dir("ebmforge_rt_full");
  const trainer::TrainResult full = trainer::train(cfg, out_full);

  config::TrainConfig half = cfg;
  half.iterations = 5;
  const auto out_half = temp_dir("ebmforge_rt_half");
  const trainer::TrainResult part = trainer::train(half, out_half);

  const auto out_cont = temp_dir("ebmforge_rt_cont");
  const trainer::TrainResult cont = trainer::train(cfg, out_cont, part.checkpoint_path);

  CHECK(slurp(cont.checkpoint_path) == slurp(full.checkpoint_path));

  // rows 5..9 of the full run equal the continued run's rows
  std::ifstream f(full.metrics_path), c(cont.metrics_path);
  std::vector<std::string> fl, cl;
  std::string line;
  while (std::getline(f, line)) fl.push_back(line);
  while (std::getline(c, line)) cl.push_back(line);
  REQUIRE(fl.size() == 11);
  REQUIRE(cl.size() == 6);
  for (std::size_t i = 1; i < cl.size(); ++i) CHECK(cl[i] == fl[5 + i]);

  for (const auto& p : {out_full, out_half, out_cont}) std::filesystem::remove_all(p);
}

TEST_CASE("noise chain init ignores the replay buffer") {
  config::TrainConfig cfg = tiny_config();
  cfg.chain_init = "noise";
  const auto out = temp_dir("ebmforge_noise_init");
  const trainer::TrainResult res = trainer::train(cfg, out);
  CHECK_FALSE(res.diverged);
  CHECK(res.iterations_run == cfg.iterations);
  std::filesystem::remove_all(out);
}

TEST_CASE("grid training exercises the multi-scale path") {
  config::TrainConfig cfg;
  cfg.dataset = "shapes8";
  cfg.data_n = 64;
  cfg.batch_size = 8;
  cfg.iterations = 2;
  cfg.hidden = {8};
  cfg.scales = {1, 2, 4};
  cfg.langevin_steps = 3;
  cfg.langevin_step_size = 0.02;
  cfg.langevin_noise_sigma = 0.01;
  cfg.aug_flip_p = 0.5;
  cfg.aug_rescale_p = 0.3;
  cfg.aug_blur_p = 0.3;
  cfg.aug_brightness_p = 0.3;
  cfg.seed = 8;
  const auto out = temp_dir("ebmforge_grid_train");
  const trainer::TrainResult res = trainer::train(cfg, out);
  CHECK(res.iterations_run == 2);
  CHECK(std::holds_alternative<model::MultiScaleEnergy>(res.model));
  std::filesystem::remove_all(out);
}
