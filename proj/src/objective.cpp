// SPDX-License-Identifier: Apache-2.0
#include "ebmforge/objective.hpp"

#include <cmath>
#include <iostream>
#include <limits>

#include "ebmforge/ops.hpp"

namespace ebmforge::objective {

EntropyContext::EntropyContext(std::size_t window) : window_(window) {
  if (window_ < 1) throw std::invalid_argument("entropy context: window must be >= 1");
}

void EntropyContext::push(const ad::Tensor& batch) {
  if (batch.node >= 0) throw std::invalid_argument("entropy context: samples must be detached");
  if (batch.rank() < 1) throw std::invalid_argument("entropy context: need a batch");
  const std::size_t n = batch.shape[0];
  const std::size_t d = batch.size() / std::max<std::size_t>(n, 1);
  if (flat_dim_ == 0) flat_dim_ = d;
  if (d != flat_dim_) throw std::invalid_argument("entropy context: sample dim changed");
  for (std::size_t i = 0; i < n; ++i) {
    items_.emplace_back(batch.values.begin() + static_cast<std::ptrdiff_t>(i * d),
                        batch.values.begin() + static_cast<std::ptrdiff_t>((i + 1) * d));
    if (items_.size() > window_) items_.pop_front();
  }
}

ad::Tensor EntropyContext::reference() const {
  if (items_.empty()) throw std::invalid_argument("entropy context: empty reference set");
  ad::Tensor out = ad::Tensor::zeros({items_.size(), flat_dim_});
  for (std::size_t i = 0; i < items_.size(); ++i) {
    std::copy(items_[i].begin(), items_[i].end(),
              out.values.begin() + static_cast<std::ptrdiff_t>(i * flat_dim_));
  }
  return out;
}

void EntropyContext::restore(const ad::Tensor& items) {
  if (items.rank() != 2) throw std::invalid_argument("entropy context: bad snapshot shape");
  items_.clear();
  flat_dim_ = items.shape[1];
  for (std::size_t i = 0; i < items.shape[0]; ++i) {
    items_.emplace_back(items.values.begin() + static_cast<std::ptrdiff_t>(i * flat_dim_),
                        items.values.begin() + static_cast<std::ptrdiff_t>((i + 1) * flat_dim_));
  }
}

ad::Tensor cd_loss(const model::EnergyFn& energy, const ad::Tensor& x_pos,
                   const ad::Tensor& x_neg_detached) {
  if (x_pos.size() == 0 || x_neg_detached.size() == 0) {
    throw std::invalid_argument("cd_loss: empty batch");
  }
  if (x_neg_detached.node >= 0) {
    throw std::invalid_argument("cd_loss: negatives must carry no graph");
  }
  return ad::subtract(ad::mean(energy(x_pos)), ad::mean(energy(x_neg_detached)));
}

ad::Tensor kl_opt_loss(const model::EnergyFn& frozen_energy, const sampler::ChainBatch& chain) {
  if (!chain.tracked.tracked()) {
    throw std::invalid_argument("kl_opt_loss: chain does not retain the final-step graph");
  }
  return ad::mean(frozen_energy(chain.tracked));
}

double knn_entropy(const ad::Tensor& X, double floor) {
  if (X.rank() != 2 || X.shape[0] < 2) {
    throw std::invalid_argument("knn_entropy: need at least 2 samples as [n,d]");
  }
  const std::size_t n = X.shape[0], d = X.shape[1];
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double best = std::numeric_limits<double>::infinity();
    const double* xi = X.values.data() + i * d;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;  // self-matches excluded
      const double* xj = X.values.data() + j * d;
      double dist2 = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        const double diff = xi[k] - xj[k];
        dist2 += diff * diff;
      }
      best = std::min(best, dist2);
    }
    double nn = std::sqrt(best);
    if (nn < floor) {
      std::cerr << "knn_entropy: duplicate point (NN distance " << nn << "), flooring at " << floor
                << "\n";
      nn = floor;
    }
    acc += std::log(static_cast<double>(n) * nn);
  }
  return acc / static_cast<double>(n);
}

ad::Tensor ent_loss(const ad::Tensor& x_tracked, const EntropyContext& ctx, double floor) {
  if (ctx.size() == 0) throw std::invalid_argument("ent_loss: empty reference set");
  const ad::Tensor ref = ctx.reference();  // [m, d] constant
  const std::size_t m = ref.shape[0], d = ref.shape[1];
  const std::size_t n = x_tracked.shape[0];
  if (x_tracked.size() != n * d) {
    throw std::invalid_argument("ent_loss: sample dim does not match reference set");
  }
  ad::Tensor flat =
      x_tracked.rank() == 2 ? x_tracked : ad::reshape(x_tracked, {n, d});

  // nearest reference per sample, found on values
  ad::Tensor nearest = ad::Tensor::zeros({n, d});
  for (std::size_t i = 0; i < n; ++i) {
    const double* xi = flat.values.data() + i * d;
    double best = std::numeric_limits<double>::infinity();
    std::size_t best_j = 0;
    for (std::size_t j = 0; j < m; ++j) {
      const double* bj = ref.values.data() + j * d;
      double dist2 = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        const double diff = xi[k] - bj[k];
        dist2 += diff * diff;
      }
      if (dist2 < best) {
        best = dist2;
        best_j = j;
      }
    }
    std::copy(ref.values.begin() + static_cast<std::ptrdiff_t>(best_j * d),
              ref.values.begin() + static_cast<std::ptrdiff_t>((best_j + 1) * d),
              nearest.values.begin() + static_cast<std::ptrdiff_t>(i * d));
  }

  // ||x - b|| floored smoothly: norm of the difference with a constant
  // `floor` column appended, i.e. sqrt(dist^2 + floor^2). Exact for any
  // distance above ~1e-8 and differentiable at duplicates.
  const ad::Tensor diff = ad::subtract(flat, nearest);
  const ad::Tensor padded = ad::concat({{diff, ad::Tensor::full({n, 1}, floor)}}, 1);
  const ad::Tensor dist = ad::l2_norm_rows(padded);
  return ad::scale(ad::mean(ad::log(dist)), -1.0);
}

namespace {

double grad_l2_norm(const ad::Tensor& scalar_loss, std::span<const ad::Tensor* const> params) {
  std::vector<ad::Tensor> wrt;
  wrt.reserve(params.size());
  for (const ad::Tensor* p : params) wrt.push_back(*p);
  const std::vector<ad::Tensor> grads = ad::grad(scalar_loss, wrt, /*retain_graph=*/false);
  double acc = 0.0;
  for (const ad::Tensor& g : grads) {
    for (double v : g.values) acc += v * v;
  }
  return std::sqrt(acc);
}

}  // namespace

FullLossResult full_loss(const model::EnergyFn& tracked_energy, const model::EnergyFn& frozen_energy,
                         std::span<const ad::Tensor* const> params, const ad::Tensor& x_pos,
                         const sampler::ChainBatch& chain, const EntropyContext& ctx,
                         double weight_opt, double weight_ent) {
  FullLossResult res;

  const ad::Tensor e_pos = ad::mean(tracked_energy(x_pos));
  const ad::Tensor e_neg = ad::mean(tracked_energy(chain.detached));
  res.energy_pos_mean = e_pos.scalar();
  res.energy_neg_mean = e_neg.scalar();
  const ad::Tensor cd = ad::subtract(e_pos, e_neg);

  const ad::Tensor opt = kl_opt_loss(frozen_energy, chain);

  const bool use_ent = ctx.active();
  ad::Tensor ent = use_ent ? ent_loss(chain.tracked, ctx) : ad::Tensor::scalar_of(0.0);

  ad::Tensor kl = ad::scale(opt, weight_opt);
  if (use_ent) kl = ad::add(kl, ad::scale(ent, weight_ent));
  res.total = ad::add(cd, kl);

  res.metrics.cd = cd.scalar();
  res.metrics.kl_opt = opt.scalar();
  res.metrics.kl_ent = ent.scalar();
  res.metrics.total = res.total.scalar();

  std::vector<ad::Tensor> wrt;
  wrt.reserve(params.size());
  for (const ad::Tensor* p : params) wrt.push_back(*p);
  res.param_grads = ad::grad(res.total, wrt, /*retain_graph=*/false);

  res.metrics.grad_norm_cd = grad_l2_norm(cd, params);
  res.metrics.grad_norm_kl = grad_l2_norm(kl, params);
  return res;
}

}  // namespace ebmforge::objective
