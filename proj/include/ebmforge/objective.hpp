// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <deque>

#include "ebmforge/model.hpp"
#include "ebmforge/sampler.hpp"

namespace ebmforge::objective {

struct LossBreakdown {
  double cd = 0.0;
  double kl_opt = 0.0;
  double kl_ent = 0.0;
  double total = 0.0;
  double grad_norm_cd = 0.0;
  double grad_norm_kl = 0.0;
};

// Sliding window of the most recent detached negative samples; the reference
// set for the nearest-neighbor entropy loss.
class EntropyContext {
 public:
  explicit EntropyContext(std::size_t window = 100);

  void push(const ad::Tensor& detached_batch);
  std::size_t size() const { return items_.size(); }
  bool active() const { return items_.size() >= 2; }
  ad::Tensor reference() const;  // [m, flat_dim] constant

  // checkpoint support
  void restore(const ad::Tensor& items);

 private:
  std::size_t window_;
  std::size_t flat_dim_ = 0;
  std::deque<std::vector<double>> items_;
};

// Mean energy of data minus mean energy of detached negatives. Gradient flows
// only through the energy evaluations, never into sample generation.
ad::Tensor cd_loss(const model::EnergyFn& energy, const ad::Tensor& x_pos,
                   const ad::Tensor& x_neg_detached);

// Mean energy, under parameters held constant, of the tracked final Langevin
// state. Its parameter gradient is the mixed second-order term realized by
// differentiating through the retained step.
ad::Tensor kl_opt_loss(const model::EnergyFn& frozen_energy, const sampler::ChainBatch& chain);

// (1/n) sum ln(n * NN_i) over pairwise-excluded nearest neighbor distances.
// Duplicate points are floored at `floor` with a warning on stderr.
double knn_entropy(const ad::Tensor& X, double floor = 1e-12);

// Mean of -ln(distance to nearest reference sample); pushes tracked samples
// apart from recent history. The floor enters smoothly (see implementation).
ad::Tensor ent_loss(const ad::Tensor& x_tracked, const EntropyContext& ctx, double floor = 1e-12);

struct FullLossResult {
  LossBreakdown metrics;
  double energy_pos_mean = 0.0;
  double energy_neg_mean = 0.0;
  ad::Tensor total;                    // tracked scalar
  std::vector<ad::Tensor> param_grads;  // d(total)/d(params), Adam inputs
};

// cd + weight_opt * kl_opt + weight_ent * kl_ent, with per-term gradient
// norms computed by separate backward passes over the same graph.
FullLossResult full_loss(const model::EnergyFn& tracked_energy, const model::EnergyFn& frozen_energy,
                         std::span<const ad::Tensor* const> params, const ad::Tensor& x_pos,
                         const sampler::ChainBatch& chain, const EntropyContext& ctx,
                         double weight_opt, double weight_ent);

}  // namespace ebmforge::objective
