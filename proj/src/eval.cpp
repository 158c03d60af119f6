// SPDX-License-Identifier: Apache-2.0
#include "ebmforge/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "ebmforge/objective.hpp"
#include "ebmforge/ops.hpp"

namespace ebmforge::eval {

std::vector<ad::Tensor> fd_gradient(const ScalarFn& f, std::span<const ad::Tensor> params,
                                    double step) {
  if (step <= 0.0) throw std::invalid_argument("fd_gradient: step must be > 0");
  std::vector<ad::Tensor> work(params.begin(), params.end());
  std::vector<ad::Tensor> grads;
  grads.reserve(params.size());
  for (std::size_t pi = 0; pi < work.size(); ++pi) {
    ad::Tensor g = ad::Tensor::zeros(work[pi].shape);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double saved = work[pi].values[i];
      work[pi].values[i] = saved + step;
      const double fp = f(work);
      work[pi].values[i] = saved - step;
      const double fm = f(work);
      work[pi].values[i] = saved;
      g.values[i] = (fp - fm) / (2.0 * step);
    }
    grads.push_back(std::move(g));
  }
  return grads;
}

double max_rel_error(std::span<const ad::Tensor> a, std::span<const ad::Tensor> b) {
  if (a.size() != b.size()) throw std::invalid_argument("max_rel_error: tensor count mismatch");
  double max_abs_diff = 0.0;
  double max_ref = 0.0;
  for (std::size_t t = 0; t < a.size(); ++t) {
    if (a[t].size() != b[t].size()) throw std::invalid_argument("max_rel_error: size mismatch");
    for (std::size_t i = 0; i < a[t].size(); ++i) {
      max_abs_diff = std::max(max_abs_diff, std::abs(a[t].values[i] - b[t].values[i]));
      max_ref = std::max(max_ref, std::abs(b[t].values[i]));
    }
  }
  return max_abs_diff / std::max(1.0, max_ref);
}

namespace {

ad::Tensor value_add_step(const ad::Tensor& x, double step_size, const ad::Tensor& gx,
                          const std::vector<double>& noise) {
  ad::Tensor out = ad::stop_grad(x);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out.values[i] = out.values[i] - step_size * gx.values[i] + noise[i];
  }
  return out;
}

std::vector<ad::Tensor> deref(std::span<ad::Tensor* const> ptrs) {
  std::vector<ad::Tensor> out;
  out.reserve(ptrs.size());
  for (ad::Tensor* p : ptrs) out.push_back(*p);
  return out;
}

double dot_all(const std::vector<ad::Tensor>& a, const std::vector<ad::Tensor>& b) {
  double acc = 0.0;
  for (std::size_t t = 0; t < a.size(); ++t) {
    for (std::size_t i = 0; i < a[t].size(); ++i) acc += a[t].values[i] * b[t].values[i];
  }
  return acc;
}

double norm_all(const std::vector<ad::Tensor>& a) { return std::sqrt(dot_all(a, a)); }

}  // namespace

std::vector<ad::Tensor> kl_opt_autodiff_grad(const model::AnyModel& m, const ad::Tensor& x_pre,
                                             double step_size, const std::vector<double>& noise) {
  ad::GraphScope scope;
  model::AnyModel watched = model::watch_params(m);
  const model::EnergyFn tracked_fn = model::bind_energy(watched);
  const model::EnergyFn frozen_fn = model::bind_energy(m);
  Rng unused(0);
  sampler::ChainBatch chain;
  chain.tracked = sampler::langevin_step(tracked_fn, x_pre, step_size, 0.0, std::nullopt, unused,
                                         /*track=*/true, nullptr, &noise);
  chain.detached = ad::stop_grad(chain.tracked);
  chain.noise_record = ad::Tensor(x_pre.shape, noise);
  const ad::Tensor loss = objective::kl_opt_loss(frozen_fn, chain);
  return ad::grad(loss, deref(model::param_tensors(watched)), /*retain_graph=*/false);
}

std::vector<ad::Tensor> kl_opt_fd_grad(const model::AnyModel& m, const ad::Tensor& x_pre,
                                       double step_size, const std::vector<double>& noise,
                                       double fd_step) {
  // evaluation-side parameters stay at their unperturbed values; only the
  // sampling-side parameters move
  model::AnyModel probe = m;
  std::vector<ad::Tensor*> probe_params = model::param_tensors(probe);
  const model::EnergyFn eval_fn = model::bind_energy(m);
  const ScalarFn f = [&](std::span<const ad::Tensor> values) {
    for (std::size_t i = 0; i < probe_params.size(); ++i) *probe_params[i] = values[i];
    const ad::Tensor gx = model::grad_x(model::bind_energy(probe), x_pre, /*track=*/false);
    const ad::Tensor x_plus = value_add_step(x_pre, step_size, gx, noise);
    return ad::mean(eval_fn(x_plus)).scalar();
  };
  return fd_gradient(f, deref(model::param_tensors(const_cast<model::AnyModel&>(m))), fd_step);
}

TruncationReport compare_truncation(const model::AnyModel& m, const ad::Tensor& x0, std::size_t K,
                                    double step_size, double noise_sigma,
                                    std::uint64_t noise_seed) {
  if (K < 1) throw std::invalid_argument("compare_truncation: K must be >= 1");
  Rng rng(noise_seed);
  std::vector<std::vector<double>> noises(K);
  for (auto& nz : noises) {
    nz.assign(x0.size(), 0.0);
    for (double& v : nz) v = noise_sigma * rng.normal();
  }

  // truncated: detach before every step, record only the last
  std::vector<ad::Tensor> grads_trunc;
  {
    ad::GraphScope scope;
    model::AnyModel watched = model::watch_params(m);
    const model::EnergyFn live = model::bind_energy(m);
    const model::EnergyFn tracked = model::bind_energy(watched);
    Rng unused(0);
    ad::Tensor x = ad::stop_grad(x0);
    for (std::size_t k = 0; k + 1 < K; ++k) {
      x = sampler::langevin_step(live, x, step_size, 0.0, std::nullopt, unused, /*track=*/false,
                                 nullptr, &noises[k]);
    }
    const ad::Tensor xk = sampler::langevin_step(tracked, x, step_size, 0.0, std::nullopt, unused,
                                                 /*track=*/true, nullptr, &noises[K - 1]);
    const ad::Tensor loss = ad::mean(live(xk));
    grads_trunc = ad::grad(loss, deref(model::param_tensors(watched)), false);
  }

  // full unroll: the state stays tracked through every step
  std::vector<ad::Tensor> grads_full;
  {
    ad::GraphScope scope;
    model::AnyModel watched = model::watch_params(m);
    const model::EnergyFn live = model::bind_energy(m);
    const model::EnergyFn tracked = model::bind_energy(watched);
    ad::Tensor x = ad::watch(ad::stop_grad(x0));
    for (std::size_t k = 0; k < K; ++k) {
      const ad::Tensor gx = ad::grad(ad::sum(tracked(x)), {{x}}, /*retain_graph=*/true)[0];
      x = ad::add(ad::subtract(x, ad::scale(gx, step_size)), ad::Tensor(x0.shape, noises[k]));
    }
    const ad::Tensor loss = ad::mean(live(x));
    grads_full = ad::grad(loss, deref(model::param_tensors(watched)), false);
  }

  TruncationReport rep;
  rep.truncated_norm = norm_all(grads_trunc);
  rep.full_norm = norm_all(grads_full);
  if (rep.truncated_norm == 0.0 && rep.full_norm == 0.0) {
    rep.degenerate = true;
    rep.cosine = 1.0;
    rep.norm_ratio = 1.0;
    return rep;
  }
  bool identical = grads_trunc.size() == grads_full.size();
  for (std::size_t t = 0; identical && t < grads_trunc.size(); ++t) {
    identical = grads_trunc[t].values == grads_full[t].values;
  }
  if (identical) {  // K=1: the two graphs coincide
    rep.cosine = 1.0;
    rep.norm_ratio = 1.0;
    return rep;
  }
  rep.cosine = dot_all(grads_trunc, grads_full) / (rep.truncated_norm * rep.full_norm);
  rep.norm_ratio = rep.truncated_norm / rep.full_norm;
  return rep;
}

double auroc(std::span<const double> scores_in, std::span<const double> scores_out) {
  if (scores_in.empty() || scores_out.empty()) {
    throw std::invalid_argument("auroc: empty score set");
  }
  double acc = 0.0;
  for (double o : scores_out) {
    for (double i : scores_in) {
      if (o > i) {
        acc += 1.0;
      } else if (o == i) {
        acc += 0.5;
      }
    }
  }
  return acc / (static_cast<double>(scores_in.size()) * static_cast<double>(scores_out.size()));
}

ModeCoverage mode_coverage(const ad::Tensor& samples,
                           const std::vector<std::vector<double>>& centers, double radius,
                           double coverage_fraction) {
  if (centers.empty()) throw std::invalid_argument("mode_coverage: no centers");
  ModeCoverage mc;
  mc.counts.assign(centers.size(), 0);
  const std::size_t n = samples.shape.empty() ? 0 : samples.shape[0];
  const std::size_t d = n ? samples.size() / n : 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double* x = samples.values.data() + i * d;
    double best = std::numeric_limits<double>::infinity();
    std::size_t best_c = 0;
    for (std::size_t c = 0; c < centers.size(); ++c) {
      double dist2 = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        const double diff = x[k] - centers[c][k];
        dist2 += diff * diff;
      }
      if (dist2 < best) {
        best = dist2;
        best_c = c;
      }
    }
    if (std::sqrt(best) <= radius) {
      ++mc.counts[best_c];
    } else {
      ++mc.unassigned;
    }
  }
  const double need = coverage_fraction * static_cast<double>(n);
  for (std::size_t c = 0; c < centers.size(); ++c) {
    if (n > 0 && static_cast<double>(mc.counts[c]) >= need) ++mc.covered;
  }
  return mc;
}

double composition_satisfaction(const ad::Tensor& samples, std::span<const Predicate> predicates) {
  const std::size_t n = samples.shape.empty() ? 0 : samples.shape[0];
  if (n == 0) return 0.0;
  const std::size_t d = samples.size() / n;
  std::size_t ok = 0;
  for (std::size_t i = 0; i < n; ++i) {
    std::span<const double> row(samples.values.data() + i * d, d);
    bool all = true;
    for (const Predicate& p : predicates) {
      if (!p(row)) {
        all = false;
        break;
      }
    }
    if (all) ++ok;
  }
  return static_cast<double>(ok) / static_cast<double>(n);
}

std::vector<double> energies_of(const model::EnergyFn& energy, const ad::Tensor& samples) {
  const ad::Tensor e = energy(ad::stop_grad(samples));
  return e.values;
}

OODReport ood_report(const model::EnergyFn& energy, const ad::Tensor& samples_in,
                     const ad::Tensor& samples_out) {
  OODReport rep;
  const std::vector<double> ein = energies_of(energy, samples_in);
  const std::vector<double> eout = energies_of(energy, samples_out);
  auto stats = [](const std::vector<double>& v, double& mean, double& stdev) {
    double acc = 0.0;
    for (double x : v) acc += x;
    mean = acc / static_cast<double>(v.size());
    double var = 0.0;
    for (double x : v) var += (x - mean) * (x - mean);
    stdev = std::sqrt(var / static_cast<double>(v.size()));
  };
  stats(ein, rep.energy_in_mean, rep.energy_in_std);
  stats(eout, rep.energy_out_mean, rep.energy_out_std);
  rep.n_in = ein.size();
  rep.n_out = eout.size();
  rep.auroc = auroc(ein, eout);
  return rep;
}

}  // namespace ebmforge::eval
