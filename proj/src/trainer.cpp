// SPDX-License-Identifier: Apache-2.0
#include "ebmforge/trainer.hpp"

#include <chrono>
#include <cmath>
#include <deque>
#include <iostream>
#include <map>
#include <utility>

#include "ebmforge/checkpoint.hpp"
#include "ebmforge/io.hpp"
#include "ebmforge/ops.hpp"

namespace ebmforge::trainer {

void AdamState::init(std::span<const ad::Tensor* const> params) {
  m.clear();
  v.clear();
  for (const ad::Tensor* p : params) {
    m.emplace_back(p->size(), 0.0);
    v.emplace_back(p->size(), 0.0);
  }
  step = 0;
}

bool adam_step(AdamState& state, std::span<ad::Tensor* const> params,
               std::span<const ad::Tensor> grads, double lr, double beta1, double beta2,
               double eps) {
  if (params.size() != grads.size() || params.size() != state.m.size()) {
    throw std::invalid_argument("adam_step: parameter/gradient count mismatch");
  }
  for (std::size_t t = 0; t < grads.size(); ++t) {
    if (grads[t].size() != params[t]->size()) {
      throw std::invalid_argument("adam_step: gradient shape mismatch");
    }
    for (double g : grads[t].values) {
      if (!std::isfinite(g)) return false;
    }
  }
  state.step += 1;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
  for (std::size_t t = 0; t < grads.size(); ++t) {
    double* mt = state.m[t].data();
    double* vt = state.v[t].data();
    double* pt = params[t]->values.data();
    const double* gt = grads[t].values.data();
    for (std::size_t i = 0; i < grads[t].size(); ++i) {
      mt[i] = beta1 * mt[i] + (1.0 - beta1) * gt[i];
      vt[i] = beta2 * vt[i] + (1.0 - beta2) * gt[i] * gt[i];
      const double mhat = mt[i] / bc1;
      const double vhat = vt[i] / bc2;
      pt[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
  return true;
}

void ema_update(std::span<ad::Tensor* const> ema, std::span<const ad::Tensor* const> params,
                double decay) {
  if (ema.size() != params.size()) throw std::invalid_argument("ema_update: count mismatch");
  for (std::size_t t = 0; t < ema.size(); ++t) {
    if (ema[t]->size() != params[t]->size()) {
      throw std::invalid_argument("ema_update: shape mismatch");
    }
    for (std::size_t i = 0; i < ema[t]->size(); ++i) {
      ema[t]->values[i] = decay * ema[t]->values[i] + (1.0 - decay) * params[t]->values[i];
    }
  }
}

bool detect_divergence(std::span<const double> history, double threshold, std::size_t window) {
  if (window < 1) throw std::invalid_argument("detect_divergence: window must be >= 1");
  if (history.size() < window) return false;
  for (std::size_t i = history.size() - window; i < history.size(); ++i) {
    if (std::abs(history[i]) <= threshold) return false;
  }
  return true;
}

data::Dataset build_dataset(const config::TrainConfig& cfg) {
  data::Dataset ds;
  if (cfg.dataset == "shapes8") {
    ds = data::make_shapes(cfg.data_n, 8, Rng::mix(cfg.seed, 0xDA7A));
  } else if (cfg.dataset == "shapes16") {
    ds = data::make_shapes(cfg.data_n, 16, Rng::mix(cfg.seed, 0xDA7A));
  } else {
    ds = data::make_mixture(cfg.dataset, cfg.data_n, Rng::mix(cfg.seed, 0xDA7A));
  }
  if (cfg.data_filter == "x0pos") {
    ds = data::filter(ds, [](std::span<const double> x) { return x[0] > 0.0; });
  } else if (cfg.data_filter == "x1pos") {
    ds = data::filter(ds, [](std::span<const double> x) { return x[1] > 0.0; });
  }
  return ds;
}

model::AnyModel build_model(const config::TrainConfig& cfg, const model::InputSpec& input) {
  const std::uint64_t seed = Rng::mix(cfg.seed, 0x30DE1);
  std::string kind = cfg.model_kind;
  if (kind == "auto") {
    kind = input.kind == model::InputKind::grid ? "multiscale" : "mlp";
  }
  if (kind == "conditional") {
    return model::init_conditional(seed, cfg.hidden, cfg.condition_dim, input);
  }
  if (kind == "multiscale") {
    if (input.kind != model::InputKind::grid) {
      throw config::ConfigError("model.kind multiscale requires a grid dataset");
    }
    return model::init_multiscale(seed, cfg.hidden, cfg.scales, input);
  }
  std::vector<std::size_t> arch;
  arch.push_back(input.flat_dim());
  arch.insert(arch.end(), cfg.hidden.begin(), cfg.hidden.end());
  arch.push_back(1);
  return model::init_params(seed, arch, input);
}

namespace {

sampler::AugmentationSpec build_aug(const config::TrainConfig& cfg, const data::Dataset& ds,
                                    const sampler::Box& box) {
  sampler::AugmentationSpec aug;
  aug.data_box = box;
  if (ds.input.kind == model::InputKind::grid) {
    sampler::GridAug g;
    g.flip_probability = cfg.aug_flip_p;
    g.rescale_probability = cfg.aug_rescale_p;
    g.rescale_lo = cfg.aug_rescale_lo;
    g.rescale_hi = cfg.aug_rescale_hi;
    g.blur_probability = cfg.aug_blur_p;
    g.blur_sigma_lo = cfg.aug_blur_sigma_lo;
    g.blur_sigma_hi = cfg.aug_blur_sigma_hi;
    g.brightness_probability = cfg.aug_brightness_p;
    g.brightness_lo = cfg.aug_brightness_lo;
    g.brightness_hi = cfg.aug_brightness_hi;
    if (g.flip_probability > 0 || g.rescale_probability > 0 || g.blur_probability > 0 ||
        g.brightness_probability > 0) {
      aug.grid = g;
    }
  } else {
    sampler::VectorAug v;
    v.perturb_probability = cfg.aug_perturb_p;
    v.perturb_sigma = cfg.aug_perturb_sigma;
    v.reflect_probability = cfg.aug_reflect_p;
    v.reflect_axes = cfg.aug_reflect_axes;
    if (v.perturb_probability > 0 || v.reflect_probability > 0) aug.vec = v;
  }
  return aug;
}

std::optional<std::size_t> condition_of(const config::TrainConfig& cfg,
                                        const model::AnyModel& m) {
  if (std::holds_alternative<model::ConditionalEnergy>(m)) return cfg.condition;
  return std::nullopt;
}

io::NamedTensors snapshot_state(const model::AnyModel& m, const model::AnyModel& ema,
                                const AdamState& adam, const sampler::ReplayBuffer& buffer,
                                const objective::EntropyContext& ctx, std::size_t next_iter,
                                const std::vector<double>& history) {
  io::NamedTensors out;
  for (const auto& [name, t] : model::named_params(m)) out.emplace_back(name, *t);
  for (const auto& [name, t] : model::named_params(ema)) out.emplace_back("ema." + name, *t);
  const auto named = model::named_params(m);
  for (std::size_t i = 0; i < named.size(); ++i) {
    out.emplace_back("adam.m." + named[i].first,
                     ad::Tensor(named[i].second->shape, adam.m[i]));
    out.emplace_back("adam.v." + named[i].first,
                     ad::Tensor(named[i].second->shape, adam.v[i]));
  }
  out.emplace_back("adam.t", ad::Tensor::scalar_of(static_cast<double>(adam.step)));
  out.emplace_back("trainer.iter", ad::Tensor::scalar_of(static_cast<double>(next_iter)));
  if (!history.empty()) {
    out.emplace_back("trainer.ediff_history",
                     ad::Tensor({history.size()}, {history.begin(), history.end()}));
  }
  if (buffer.size() > 0) out.emplace_back("buffer.items", buffer.snapshot());
  if (ctx.size() > 0) out.emplace_back("entctx.items", ctx.reference());
  return out;
}

const ad::Tensor* find_tensor(const io::NamedTensors& ts, const std::string& name) {
  for (const auto& [n, t] : ts) {
    if (n == name) return &t;
  }
  return nullptr;
}

void fill_params(model::AnyModel& m, const io::NamedTensors& ts, const std::string& prefix) {
  auto named = model::named_params(m);
  auto mut = model::param_tensors(m);
  for (std::size_t i = 0; i < named.size(); ++i) {
    const ad::Tensor* src = find_tensor(ts, prefix + named[i].first);
    if (!src) throw std::runtime_error("checkpoint is missing tensor " + prefix + named[i].first);
    if (src->shape != mut[i]->shape) {
      throw std::runtime_error("checkpoint tensor " + prefix + named[i].first +
                               " has wrong shape " + ad::shape_str(src->shape));
    }
    mut[i]->values = src->values;
  }
}

}  // namespace

model::AnyModel load_model(const config::TrainConfig& cfg, const std::filesystem::path& checkpoint,
                           bool use_ema) {
  const data::Dataset ds = build_dataset(cfg);
  model::AnyModel m = build_model(cfg, ds.input);
  const io::NamedTensors ts = io::load_tensors(checkpoint);
  fill_params(m, ts, use_ema ? "ema." : "");
  return m;
}

TrainResult train(const config::TrainConfig& cfg, const std::filesystem::path& out_dir,
                  const std::optional<std::filesystem::path>& resume_from) {
  cfg.validate();
  std::filesystem::create_directories(out_dir);

  const data::Dataset ds = build_dataset(cfg);
  const sampler::Box box = data::sampling_box(ds);
  const sampler::AugmentationSpec aug = build_aug(cfg, ds, box);

  sampler::LangevinConfig lcfg;
  lcfg.steps = cfg.langevin_steps;
  lcfg.step_size = cfg.langevin_step_size;
  lcfg.noise_sigma = cfg.langevin_noise_sigma;
  lcfg.clamp = box;

  model::AnyModel m = build_model(cfg, ds.input);
  model::AnyModel ema = m;
  AdamState adam;
  {
    const std::vector<const ad::Tensor*> ps = model::param_tensors(std::as_const(m));
    adam.init({ps.data(), ps.size()});
  }
  sampler::ReplayBuffer buffer(cfg.buffer_capacity, cfg.buffer_reuse_probability, box,
                               ad::Shape(ds.samples.shape.begin() + 1, ds.samples.shape.end()));
  objective::EntropyContext ctx(100);
  std::vector<double> history;
  std::size_t start_iter = 0;

  if (resume_from) {
    const io::NamedTensors ts = io::load_tensors(*resume_from);
    fill_params(m, ts, "");
    fill_params(ema, ts, "ema.");
    const auto named = model::named_params(m);
    for (std::size_t i = 0; i < named.size(); ++i) {
      const ad::Tensor* am = find_tensor(ts, "adam.m." + named[i].first);
      const ad::Tensor* av = find_tensor(ts, "adam.v." + named[i].first);
      if (!am || !av) throw std::runtime_error("checkpoint is missing Adam state");
      adam.m[i] = am->values;
      adam.v[i] = av->values;
    }
    if (const ad::Tensor* t = find_tensor(ts, "adam.t")) {
      adam.step = static_cast<std::uint64_t>(t->scalar());
    }
    if (const ad::Tensor* t = find_tensor(ts, "trainer.iter")) {
      start_iter = static_cast<std::size_t>(t->scalar());
    }
    if (const ad::Tensor* t = find_tensor(ts, "trainer.ediff_history")) {
      history.assign(t->values.begin(), t->values.end());
    }
    if (const ad::Tensor* t = find_tensor(ts, "buffer.items")) buffer.restore(*t);
    if (const ad::Tensor* t = find_tensor(ts, "entctx.items")) ctx.restore(*t);
  }

  TrainResult result;
  result.checkpoint_path = out_dir / cfg.checkpoint_name;
  result.metrics_path = out_dir / cfg.metrics_name;
  io::MetricsWriter metrics(result.metrics_path);

  const std::optional<std::size_t> cond = condition_of(cfg, m);
  const std::optional<double> reuse_override =
      cfg.chain_init == "noise" ? std::optional<double>(0.0) : std::nullopt;

  const auto t0 = std::chrono::steady_clock::now();
  std::size_t iter = start_iter;
  bool diverged = false;
  std::string divergence_note;

  for (; iter < cfg.iterations; ++iter) {
    Rng r_iter(Rng::mix(Rng::mix(cfg.seed, 0x17E4), iter));
    Rng r_pos = r_iter.fork(1);
    Rng r_chain = r_iter.fork(2);
    Rng r_buf = r_iter.fork(3);

    const ad::Tensor x_pos = data::minibatch(ds, cfg.batch_size, r_pos);

    io::MetricsRow row;
    row.iter = iter;
    try {
      ad::GraphScope scope;
      model::AnyModel watched = model::watch_params(m);
      const model::EnergyFn live = model::bind_energy(m, cond);
      const model::EnergyFn tracked = model::bind_energy(watched, cond);

      sampler::ChainBatch chain = sampler::generate_negatives(
          live, tracked, buffer, aug, lcfg, cfg.batch_size, r_chain, reuse_override);

      std::vector<ad::Tensor*> wparams = model::param_tensors(watched);
      objective::FullLossResult loss = objective::full_loss(
          tracked, live, {wparams.data(), wparams.size()}, x_pos, chain, ctx, cfg.weight_opt,
          cfg.weight_ent);

      std::vector<ad::Tensor*> mparams = model::param_tensors(m);
      if (!adam_step(adam, {mparams.data(), mparams.size()}, loss.param_grads, cfg.lr,
                     cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)) {
        diverged = true;
        divergence_note = "diverged iter=" + std::to_string(iter) + " reason=nonfinite-gradient";
      } else {
        std::vector<ad::Tensor*> eparams = model::param_tensors(ema);
        std::vector<const ad::Tensor*> csrc(mparams.begin(), mparams.end());
        ema_update({eparams.data(), eparams.size()}, {csrc.data(), csrc.size()}, cfg.ema_decay);
      }

      buffer.update(chain.detached, r_buf);
      ctx.push(chain.detached);

      row.loss_cd = loss.metrics.cd;
      row.loss_kl_opt = loss.metrics.kl_opt;
      row.loss_kl_ent = loss.metrics.kl_ent;
      row.energy_pos = loss.energy_pos_mean;
      row.energy_neg = loss.energy_neg_mean;
      row.energy_diff = loss.energy_pos_mean - loss.energy_neg_mean;
      row.grad_cd = loss.metrics.grad_norm_cd;
      row.grad_kl = loss.metrics.grad_norm_kl;
    } catch (const ad::NonFiniteError& e) {
      diverged = true;
      divergence_note =
          "diverged iter=" + std::to_string(iter) + " reason=" + std::string(e.what());
      metrics.comment(divergence_note);
      break;
    }

    row.buffer_fill = buffer.size();
    if (cfg.metrics_wallclock) {
      row.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }
    metrics.write(row);

    history.push_back(row.energy_diff);
    while (history.size() > cfg.divergence_window) history.erase(history.begin());

    if (diverged) {
      metrics.comment(divergence_note);
      ++iter;
      break;
    }
    if (detect_divergence({history.begin(), history.end()}, cfg.divergence_threshold,
                          cfg.divergence_window)) {
      diverged = true;
      divergence_note = "diverged iter=" + std::to_string(iter) + " reason=energy-diff-window";
      metrics.comment(divergence_note);
      ++iter;
      break;
    }

    if (cfg.checkpoint_every > 0 && (iter + 1) % cfg.checkpoint_every == 0 &&
        iter + 1 < cfg.iterations) {
      io::save_tensors(result.checkpoint_path,
                       snapshot_state(m, ema, adam, buffer, ctx, iter + 1, history));
    }
  }

  metrics.flush();
  io::save_tensors(result.checkpoint_path, snapshot_state(m, ema, adam, buffer, ctx, iter, history));
  result.diverged = diverged;
  result.iterations_run = iter;
  result.model = std::move(m);
  result.ema = std::move(ema);
  if (diverged) {
    std::cerr << "train: " << divergence_note << "\n";
  }
  return result;
}

}  // namespace ebmforge::trainer
