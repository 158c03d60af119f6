// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "ebmforge/model.hpp"
#include "ebmforge/ops.hpp"
#include "ebmforge/sampler.hpp"

using namespace ebmforge;
using ad::Tensor;

namespace {

model::EnergyFn quadratic() {
  return [](const Tensor& x) {
    const Tensor ones = Tensor::full({x.shape[1], 1}, 1.0);
    return ad::scale(ad::reshape(ad::matmul(ad::square(x), ones), {x.shape[0]}), 0.5);
  };
}

model::EnergyFn constant_energy() {
  return [](const Tensor& x) {
    return ad::broadcast_to(Tensor::scalar_of(1.0), {x.shape[0]}, ad::BroadcastMode::scalar);
  };
}

sampler::Box box2(double lo, double hi) { return sampler::Box::cube(2, lo, hi); }

}  // namespace

TEST_CASE("langevin step: fixed point and linear flow") {
  Rng rng(1);
  const Tensor x({1, 2}, {0.7, -0.4});
  const Tensor same =
      sampler::langevin_step(constant_energy(), x, 0.1, 0.0, std::nullopt, rng, false);
  CHECK(same.values == x.values);

  const Tensor x2({1, 1}, {2.0});
  const Tensor stepped = sampler::langevin_step(quadratic(), x2, 0.1, 0.0, std::nullopt, rng, false);
  CHECK(stepped.values[0] == doctest::Approx(1.8));
}

TEST_CASE("tracked langevin step keeps the parameter dependence") {
  const model::AnyModel m = model::init_params(
      3, std::vector<std::size_t>{2, 8, 1}, model::InputSpec::vec(2));
  Rng rng(4);
  const Tensor x({2, 2}, {0.1, -0.2, 0.4, 0.3});
  ad::GraphScope scope;
  model::AnyModel watched = model::watch_params(m);
  const Tensor next = sampler::langevin_step(model::bind_energy(watched), x, 0.05, 0.0,
                                             std::nullopt, rng, /*track=*/true);
  REQUIRE(next.tracked());
  std::vector<ad::Tensor*> params = model::param_tensors(watched);
  std::vector<Tensor> wrt;
  for (ad::Tensor* p : params) wrt.push_back(*p);
  const auto grads = ad::grad(ad::sum(next), wrt);
  bool any = false;
  for (const Tensor& g : grads) {
    for (double v : g.values) any = any || v != 0.0;
  }
  CHECK(any);
}

TEST_CASE("replay buffer: bound, order, eviction") {
  Rng rng(5);
  sampler::ReplayBuffer buf(2, 0.99, box2(-1, 1), {2});
  CHECK(buf.size() == 0);

  const Tensor batch({3, 2}, {1, 1, 2, 2, 3, 3});
  buf.update(batch, rng);
  CHECK(buf.size() == 2);  // capacity bound

  sampler::ReplayBuffer big(10, 0.99, box2(-1, 1), {2});
  const Tensor two({2, 2}, {1, 1, 2, 2});
  big.update(two, rng);
  CHECK(big.size() == 2);
  const Tensor snap = big.snapshot();
  CHECK(snap.values == std::vector<double>{1, 1, 2, 2});  // retained in order

  Tensor tracked_like = batch;
  tracked_like.node = 3;  // simulates a tracked tensor
  CHECK_THROWS_AS(big.update(tracked_like, rng), std::invalid_argument);
}

TEST_CASE("empty buffer draws uniformly inside the init box") {
  Rng rng(6);
  sampler::ReplayBuffer buf(100, 0.99, box2(-2, 3), {2});
  const auto draw = buf.draw_init(50, rng);
  CHECK(draw.from_buffer == 0);
  for (double v : draw.states.values) {
    CHECK(v >= -2.0);
    CHECK(v <= 3.0);
  }
}

TEST_CASE("reuse probability 1 with a singleton buffer always reuses it") {
  Rng rng(7);
  sampler::ReplayBuffer buf(10, 1.0, box2(-1, 1), {2});
  const Tensor one({1, 2}, {0.25, -0.5});
  buf.update(one, rng);
  const auto draw = buf.draw_init(8, rng);
  CHECK(draw.from_buffer == 8);
  for (std::size_t b = 0; b < 8; ++b) {
    CHECK(draw.states.values[2 * b] == 0.25);
    CHECK(draw.states.values[2 * b + 1] == -0.5);
  }
}

TEST_CASE("buffer reuse fraction converges to the configured probability") {
  Rng rng(8);
  const double p = 0.99;
  sampler::ReplayBuffer buf(100, p, box2(-1, 1), {2});
  Tensor fill = Tensor::zeros({100, 2});
  buf.update(fill, rng);
  const std::size_t n = 10000;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < n; ++i) {
    hits += buf.draw_init(1, rng).from_buffer;
  }
  const double sigma = std::sqrt(n * p * (1 - p));
  CHECK(std::abs(static_cast<double>(hits) - p * n) <= 4.0 * sigma);
}

TEST_CASE("augmentation: identity, involution, rescale factor one") {
  Rng rng(9);
  // all probabilities zero: identity
  sampler::AugmentationSpec none = sampler::AugmentationSpec::none(box2(-5, 5));
  const Tensor x({2, 2}, {0.3, -0.7, 1.2, 0.1});
  CHECK(sampler::apply_augmentation(none, x, rng).values == x.values);

  // horizontal flip twice restores the grid
  sampler::AugmentationSpec flip;
  flip.data_box = sampler::Box::cube(16, -1, 1);
  sampler::GridAug g;
  g.flip_probability = 1.0;
  flip.grid = g;
  Rng gr(10);
  Tensor grid = Tensor::zeros({1, 4, 4});
  for (double& v : grid.values) v = gr.uniform(-1.0, 1.0);
  const Tensor once = sampler::apply_augmentation(flip, grid, gr);
  CHECK(once.values != grid.values);
  const Tensor twice = sampler::apply_augmentation(flip, once, gr);
  CHECK(twice.values == grid.values);

  // crop factor pinned at 1.0 resamples the identity
  sampler::AugmentationSpec rescale;
  rescale.data_box = sampler::Box::cube(16, -1, 1);
  sampler::GridAug r;
  r.rescale_probability = 1.0;
  r.rescale_lo = 1.0;
  r.rescale_hi = 1.0;
  rescale.grid = r;
  const Tensor same = sampler::apply_augmentation(rescale, grid, gr);
  for (std::size_t i = 0; i < grid.size(); ++i) {
    CHECK(same.values[i] == doctest::Approx(grid.values[i]).epsilon(1e-12));
  }
}

TEST_CASE("augmentation output is detached and clamped") {
  Rng rng(11);
  sampler::AugmentationSpec spec;
  spec.data_box = box2(-1, 1);
  sampler::VectorAug v;
  v.perturb_probability = 1.0;
  v.perturb_sigma = 5.0;  // guarantees clamping
  spec.vec = v;

  ad::GraphScope scope;
  const Tensor x = ad::watch(Tensor({2, 2}, {0.9, -0.9, 0.5, 0.0}));
  const Tensor out = sampler::apply_augmentation(spec, x, rng);
  CHECK_FALSE(out.tracked());
  CHECK(out.node == -1);
  for (double val : out.values) {
    CHECK(val >= -1.0);
    CHECK(val <= 1.0);
  }
}

TEST_CASE("vector reflection mirrors about the box center") {
  Rng rng(12);
  sampler::AugmentationSpec spec;
  spec.data_box = box2(-2, 2);
  sampler::VectorAug v;
  v.reflect_probability = 1.0;
  v.reflect_axes = {0};
  spec.vec = v;
  const Tensor x({1, 2}, {0.75, 0.5});
  const Tensor out = sampler::apply_augmentation(spec, x, rng);
  CHECK(out.values[0] == doctest::Approx(-0.75));
  CHECK(out.values[1] == 0.5);
}

TEST_CASE("generate_negatives produces value-equal tracked and detached states") {
  const model::AnyModel m = model::init_params(
      13, std::vector<std::size_t>{2, 8, 1}, model::InputSpec::vec(2));
  Rng rng(14);
  sampler::ReplayBuffer buf(50, 0.99, box2(-1, 1), {2});
  sampler::LangevinConfig cfg;
  cfg.steps = 5;
  cfg.step_size = 0.05;
  cfg.noise_sigma = 0.01;
  cfg.clamp = box2(-1, 1);
  const sampler::AugmentationSpec aug = sampler::AugmentationSpec::none(box2(-1, 1));

  ad::GraphScope scope;
  model::AnyModel watched = model::watch_params(m);
  const sampler::ChainBatch chain = sampler::generate_negatives(
      model::bind_energy(m), model::bind_energy(watched), buf, aug, cfg, 6, rng);
  CHECK(chain.detached.values == chain.tracked.values);
  CHECK(chain.detached.node == -1);
  CHECK(chain.tracked.tracked());
  CHECK(chain.noise_record.shape == chain.detached.shape);
}

TEST_CASE("sample_model with one round and no augmentation is a bare Langevin run") {
  const model::EnergyFn e = quadratic();
  sampler::LangevinConfig cfg;
  cfg.steps = 7;
  cfg.step_size = 0.05;
  cfg.noise_sigma = 0.02;
  const sampler::AugmentationSpec aug = sampler::AugmentationSpec::none(box2(-3, 3));
  const Tensor x0({4, 2}, {0.3, -0.2, 1.0, 0.5, -0.7, 0.9, 0.0, 0.1});

  Rng r1(21);
  const Tensor via_sample = sampler::sample_model(e, aug, cfg, 1, 4, {2}, r1, x0);
  Rng r2(21);
  Tensor manual = x0;
  for (std::size_t k = 0; k < cfg.steps; ++k) {
    manual = sampler::langevin_step(e, manual, cfg.step_size, cfg.noise_sigma, cfg.clamp, r2, false);
  }
  CHECK(via_sample.values == manual.values);

  Rng r3(21);
  const Tensor again = sampler::sample_model(e, aug, cfg, 1, 4, {2}, r3, x0);
  CHECK(again.values == via_sample.values);  // fixed seed, bitwise identical
}

TEST_CASE("langevin config validation") {
  sampler::LangevinConfig cfg;
  cfg.steps = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg.steps = 1;
  cfg.step_size = 0.0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg.step_size = 0.1;
  cfg.noise_sigma = -1.0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}
