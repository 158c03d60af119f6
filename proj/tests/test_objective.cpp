// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "ebmforge/eval.hpp"
#include "ebmforge/model.hpp"
#include "ebmforge/objective.hpp"
#include "ebmforge/ops.hpp"

using namespace ebmforge;
using ad::Tensor;

namespace {

// E(x) = x for 1-D inputs: a single dense layer with unit weight, zero bias
model::AnyModel identity_energy() {
  model::EnergyParams p;
  p.input = model::InputSpec::vec(1);
  p.layers.push_back({Tensor({1, 1}, {1.0}), Tensor({1}, {0.0})});
  return p;
}

sampler::ChainBatch make_chain(const model::AnyModel& watched_model, const Tensor& x_pre,
                               double lam, const std::vector<double>& noise) {
  Rng unused(0);
  sampler::ChainBatch chain;
  chain.tracked = sampler::langevin_step(model::bind_energy(watched_model), x_pre, lam, 0.0,
                                         std::nullopt, unused, true, nullptr, &noise);
  chain.detached = ad::stop_grad(chain.tracked);
  chain.noise_record = Tensor(x_pre.shape, noise);
  return chain;
}

}  // namespace

TEST_CASE("cd_loss arithmetic examples") {
  const model::AnyModel ident = identity_energy();
  const model::EnergyFn e = model::bind_energy(ident);

  const Tensor pos({1, 1}, {1.0});
  const Tensor neg({1, 1}, {3.0});
  CHECK(objective::cd_loss(e, pos, neg).scalar() == doctest::Approx(-2.0));

  // identical batches cancel exactly
  CHECK(objective::cd_loss(e, pos, pos).scalar() == 0.0);

  const model::EnergyFn constant = [](const Tensor& x) {
    return ad::broadcast_to(Tensor::scalar_of(4.2), {x.shape[0]}, ad::BroadcastMode::scalar);
  };
  CHECK(objective::cd_loss(constant, pos, neg).scalar() == 0.0);
}

TEST_CASE("cd_loss rejects tracked negatives") {
  const model::AnyModel ident = identity_energy();
  ad::GraphScope scope;
  const Tensor neg = ad::watch(Tensor({1, 1}, {3.0}));
  CHECK_THROWS_AS(objective::cd_loss(model::bind_energy(ident), Tensor({1, 1}, {1.0}), neg),
                  std::invalid_argument);
}

TEST_CASE("cd_loss gradient ignores how negatives were generated") {
  const model::AnyModel m = model::init_params(
      5, std::vector<std::size_t>{2, 8, 1}, model::InputSpec::vec(2));
  Rng rng(6);
  Tensor pos = Tensor::zeros({4, 2});
  for (double& v : pos.values) v = rng.uniform(-1, 1);

  auto cd_grads = [&](const Tensor& neg) {
    ad::GraphScope scope;
    model::AnyModel watched = model::watch_params(m);
    const Tensor loss = objective::cd_loss(model::bind_energy(watched), pos, neg);
    std::vector<ad::Tensor*> params = model::param_tensors(watched);
    std::vector<Tensor> wrt;
    for (auto* p : params) wrt.push_back(*p);
    return ad::grad(loss, wrt);
  };

  Tensor neg_a = Tensor::zeros({4, 2});
  for (double& v : neg_a.values) v = rng.uniform(-1, 1);
  const Tensor neg_b(neg_a.shape, neg_a.values);  // constant copy of the same values
  const auto ga = cd_grads(neg_a);
  const auto gb = cd_grads(neg_b);
  for (std::size_t i = 0; i < ga.size(); ++i) CHECK(ga[i].values == gb[i].values);
}

TEST_CASE("kl_opt_loss: closed-form toy gradient is -0.09") {
  // E(x) = theta x^2 / 2, one tracked step from x = 1, lambda = 0.1
  ad::GraphScope scope;
  const Tensor theta = ad::watch(Tensor::scalar_of(1.0));
  const Tensor x = ad::watch(Tensor::scalar_of(1.0));
  const Tensor e = ad::scale(ad::multiply(theta, ad::square(x)), 0.5);
  const Tensor gx = ad::grad(e, {{x}}, true)[0];
  const Tensor xp = ad::subtract(x, ad::scale(gx, 0.1));
  CHECK(xp.scalar() == doctest::Approx(0.9));
  const Tensor loss = ad::scale(ad::multiply(Tensor::scalar_of(1.0), ad::square(xp)), 0.5);
  const double d = ad::grad(loss, {{theta}})[0].scalar();
  CHECK(std::abs(d - (-0.09)) < 1e-10);
}

TEST_CASE("kl_opt_loss value equals the frozen-parameter energy of the chain") {
  const model::AnyModel m = model::init_params(
      7, std::vector<std::size_t>{2, 8, 1}, model::InputSpec::vec(2));
  const Tensor x_pre({3, 2}, {0.1, 0.2, -0.3, 0.4, 0.5, -0.6});
  std::vector<double> noise(x_pre.size(), 0.0);

  ad::GraphScope scope;
  model::AnyModel watched = model::watch_params(m);
  const sampler::ChainBatch chain = make_chain(watched, x_pre, 0.05, noise);
  const Tensor loss = objective::kl_opt_loss(model::bind_energy(m), chain);
  const double direct = ad::mean(model::energy(m, chain.detached)).scalar();
  CHECK(loss.scalar() == direct);
}

TEST_CASE("kl_opt_loss gradient vanishes as the step size goes to zero") {
  const model::AnyModel m = model::init_params(
      8, std::vector<std::size_t>{2, 8, 1}, model::InputSpec::vec(2));
  const Tensor x_pre({2, 2}, {0.1, -0.2, 0.3, 0.4});
  std::vector<double> noise(x_pre.size(), 0.0);
  const auto grads = eval::kl_opt_autodiff_grad(m, x_pre, 0.0, noise);
  for (const Tensor& g : grads) {
    for (double v : g.values) CHECK(v == 0.0);
  }
}

TEST_CASE("kl_opt_loss requires a tracked chain") {
  const model::AnyModel m = model::init_params(
      9, std::vector<std::size_t>{2, 8, 1}, model::InputSpec::vec(2));
  sampler::ChainBatch chain;
  chain.tracked = Tensor({1, 2}, {0.0, 0.0});
  chain.detached = chain.tracked;
  ad::GraphScope scope;
  CHECK_THROWS_AS(objective::kl_opt_loss(model::bind_energy(m), chain), std::invalid_argument);
}

TEST_CASE("kl_opt autodiff gradient matches the frozen-evaluation FD oracle") {
  const model::AnyModel m = model::init_params(
      10, std::vector<std::size_t>{2, 8, 8, 1}, model::InputSpec::vec(2));
  Rng rng(11);
  Tensor x_pre = Tensor::zeros({4, 2});
  for (double& v : x_pre.values) v = rng.uniform(-1.5, 1.5);
  std::vector<double> noise(x_pre.size());
  for (double& v : noise) v = 0.01 * rng.normal();
  const auto ad_g = eval::kl_opt_autodiff_grad(m, x_pre, 0.05, noise);
  const auto fd_g = eval::kl_opt_fd_grad(m, x_pre, 0.05, noise, 1e-5);
  CHECK(eval::max_rel_error(ad_g, fd_g) < 1e-4);
}

TEST_CASE("knn_entropy hand values and scaling law") {
  const Tensor two({2, 1}, {0.0, 1.0});
  CHECK(objective::knn_entropy(two) == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  const Tensor three({3, 1}, {0.0, 1.0, 3.0});
  CHECK(objective::knn_entropy(three) == doctest::Approx(std::log(54.0) / 3.0).epsilon(1e-12));

  Rng rng(12);
  Tensor X = Tensor::zeros({40, 2});
  for (double& v : X.values) v = rng.uniform(-2, 2);
  for (double c : {2.0, 0.5, 3.1}) {
    Tensor Xc = X;
    for (double& v : Xc.values) v *= c;
    const double shift = objective::knn_entropy(Xc) - objective::knn_entropy(X);
    CHECK(std::abs(shift - std::log(c)) < 1e-12);
  }

  CHECK_THROWS_AS(objective::knn_entropy(Tensor({1, 1}, {0.0})), std::invalid_argument);

  // duplicate points hit the distance floor instead of ln 0
  const Tensor dup({2, 1}, {0.5, 0.5});
  const double floored = objective::knn_entropy(dup);
  CHECK(std::isfinite(floored));
  CHECK(floored == doctest::Approx(std::log(2.0 * 1e-12)).epsilon(1e-9));
}

TEST_CASE("ent_loss values and repelling gradient") {
  objective::EntropyContext ctx(100);
  ctx.push(Tensor({2, 2}, {0.0, 0.0, 5.0, 5.0}));
  REQUIRE(ctx.active());

  {
    // sample at L2 distance 1 from the nearest reference: -ln 1 = 0
    ad::GraphScope scope;
    const Tensor x = ad::watch(Tensor({1, 2}, {1.0, 0.0}));
    CHECK(objective::ent_loss(x, ctx).scalar() == 0.0);
  }
  {
    // distance e^-1 contributes exactly 1
    ad::GraphScope scope;
    const Tensor x = ad::watch(Tensor({1, 2}, {std::exp(-1.0), 0.0}));
    CHECK(objective::ent_loss(x, ctx).scalar() == doctest::Approx(1.0).epsilon(1e-12));
  }
  {
    // minimizing the loss pushes x away from the nearest reference sample:
    // the descent direction -grad has positive inner product with x - b
    ad::GraphScope scope;
    const Tensor x = ad::watch(Tensor({1, 2}, {0.3, 0.4}));
    const Tensor loss = objective::ent_loss(x, ctx);
    const Tensor g = ad::grad(loss, {{x}})[0];
    const double inner = -(g.values[0] * 0.3 + g.values[1] * 0.4);  // b = origin here
    CHECK(inner > 0.0);
    // -ln d: the inner product of the raw gradient with (x-b) is exactly -1
    CHECK(inner == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("ent_loss requires a non-empty reference set") {
  objective::EntropyContext ctx(100);
  ad::GraphScope scope;
  const Tensor x = ad::watch(Tensor({1, 2}, {0.0, 0.0}));
  CHECK_THROWS_AS(objective::ent_loss(x, ctx), std::invalid_argument);
}

TEST_CASE("entropy context keeps the most recent window") {
  objective::EntropyContext ctx(3);
  ctx.push(Tensor({2, 1}, {1.0, 2.0}));
  ctx.push(Tensor({2, 1}, {3.0, 4.0}));
  CHECK(ctx.size() == 3);
  const Tensor ref = ctx.reference();
  CHECK(ref.values == std::vector<double>{2.0, 3.0, 4.0});
}

TEST_CASE("full_loss breakdown satisfies the weighting identity") {
  const model::AnyModel m = model::init_params(
      13, std::vector<std::size_t>{2, 8, 1}, model::InputSpec::vec(2));
  Rng rng(14);
  Tensor pos = Tensor::zeros({4, 2});
  for (double& v : pos.values) v = rng.uniform(-1, 1);
  const Tensor x_pre({4, 2}, std::vector<double>(8, 0.25));
  std::vector<double> noise(8, 0.0);

  objective::EntropyContext ctx(100);
  ctx.push(Tensor({2, 2}, {0.9, 0.9, -0.8, -0.8}));

  for (auto [w_opt, w_ent] : {std::pair{0.0, 0.0}, std::pair{1.0, 1.0}, std::pair{0.5, 2.0}}) {
    ad::GraphScope scope;
    model::AnyModel watched = model::watch_params(m);
    const sampler::ChainBatch chain = make_chain(watched, x_pre, 0.05, noise);
    std::vector<ad::Tensor*> params = model::param_tensors(watched);
    const objective::FullLossResult res =
        objective::full_loss(model::bind_energy(watched), model::bind_energy(m),
                             {params.data(), params.size()}, pos, chain, ctx, w_opt, w_ent);
    const objective::LossBreakdown& b = res.metrics;
    CHECK(b.total ==
          doctest::Approx(b.cd + w_opt * b.kl_opt + w_ent * b.kl_ent).epsilon(1e-12));
    CHECK(b.grad_norm_cd >= 0.0);
    CHECK(b.grad_norm_kl >= 0.0);
    CHECK(std::isfinite(b.grad_norm_cd));
    CHECK(std::isfinite(b.grad_norm_kl));
    CHECK(res.param_grads.size() == params.size());
    if (w_opt == 0.0 && w_ent == 0.0) {
      CHECK(b.total == b.cd);  // pure contrastive baseline
      CHECK(b.grad_norm_kl == 0.0);
    }
  }
}
