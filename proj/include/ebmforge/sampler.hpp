// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <vector>

#include "ebmforge/model.hpp"
#include "ebmforge/rng.hpp"
#include "ebmforge/tensor.hpp"

namespace ebmforge::sampler {

// Per-flattened-dimension bounds. All chain states live inside this box.
struct Box {
  std::vector<double> lo, hi;

  std::size_t dims() const { return lo.size(); }
  static Box cube(std::size_t dims, double lo, double hi);
  Box expanded(double margin_fraction) const;  // grow each side about its center
};

void clamp_values(std::vector<double>& values, const Box& box);

struct LangevinConfig {
  std::size_t steps = 20;      // K
  double step_size = 0.1;      // lambda, multiplies the energy gradient
  double noise_sigma = 0.005;  // stddev of the per-step Gaussian kick
  std::optional<Box> clamp;

  void validate() const;
};

// Bounded reservoir of past negative samples. Draws reuse a stored sample
// with probability reuse_probability and fall back to a uniform draw over the
// init box otherwise. Eviction beyond capacity replaces a uniform-random slot.
class ReplayBuffer {
 public:
  ReplayBuffer(std::size_t capacity, double reuse_probability, Box init_box,
               ad::Shape sample_shape);

  std::size_t size() const { return items_.size(); }
  std::size_t capacity() const { return capacity_; }
  double reuse_probability() const { return reuse_p_; }
  const Box& init_box() const { return box_; }
  const ad::Shape& sample_shape() const { return sample_shape_; }

  struct InitDraw {
    ad::Tensor states;  // [batch, ...sample shape]
    std::size_t from_buffer = 0;
  };
  // reuse_override replaces the stored probability (noise-initialized chains
  // pass 0).
  InitDraw draw_init(std::size_t batch, Rng& rng,
                     std::optional<double> reuse_override = std::nullopt) const;

  void update(const ad::Tensor& batch_detached, Rng& rng);

  // checkpoint support
  ad::Tensor snapshot() const;  // [size, flat_dim]
  void restore(const ad::Tensor& items);

 private:
  std::size_t capacity_;
  double reuse_p_;
  Box box_;
  ad::Shape sample_shape_;
  std::vector<std::vector<double>> items_;
};

struct GridAug {
  double flip_probability = 0.0;         // horizontal flip
  double rescale_probability = 0.0;      // random crop + bilinear resize back
  double rescale_lo = 0.5, rescale_hi = 1.0;
  double blur_probability = 0.0;
  double blur_sigma_lo = 0.3, blur_sigma_hi = 1.2;
  double brightness_probability = 0.0;   // additive shift
  double brightness_lo = -0.2, brightness_hi = 0.2;
};

struct VectorAug {
  double perturb_probability = 0.0;  // additive Gaussian
  double perturb_sigma = 0.1;
  double reflect_probability = 0.0;  // reflect about the box center, per axis
  std::vector<std::size_t> reflect_axes;
};

struct AugmentationSpec {
  std::optional<GridAug> grid;
  std::optional<VectorAug> vec;
  Box data_box;  // outputs are clamped here

  static AugmentationSpec none(Box box);
};

// Sampled transforms in fixed order (flip, rescale, blur, brightness for
// grids; perturb, reflect for vectors). Output is detached and clamped.
ad::Tensor apply_augmentation(const AugmentationSpec& spec, const ad::Tensor& x, Rng& rng);

// One Langevin update x' = clamp(x - lambda * grad_x E(x) + noise). Untracked
// calls run in a private graph; tracked calls record the step (including the
// parameter dependence of grad_x E) in the caller's active graph.
ad::Tensor langevin_step(const model::EnergyFn& energy, const ad::Tensor& x, double step_size,
                         double noise_sigma, const std::optional<Box>& clamp, Rng& rng, bool track,
                         std::vector<double>* noise_out = nullptr,
                         const std::vector<double>* noise_override = nullptr);

// Negative batch with the derivative graph retained through the final step
// only. `detached` and `tracked` are value-equal.
struct ChainBatch {
  ad::Tensor detached;
  ad::Tensor tracked;
  ad::Tensor noise_record;  // final-step noise
};

// Buffer-policy init, one augmentation pass, then K Langevin steps; the state
// is detached before every step and only the last step is recorded. The
// replay buffer is not modified here.
ChainBatch generate_negatives(const model::EnergyFn& live, const model::EnergyFn& tracked,
                              const ReplayBuffer& buffer, const AugmentationSpec& aug,
                              const LangevinConfig& cfg, std::size_t batch, Rng& rng,
                              std::optional<double> reuse_override = std::nullopt);

// Standalone generation: rounds of (augment once, K detached Langevin steps).
// sample_shape is the per-sample shape ([d] or [h,w]); ignored when x0 given.
ad::Tensor sample_model(const model::EnergyFn& energy, const AugmentationSpec& aug,
                        const LangevinConfig& cfg, std::size_t rounds, std::size_t batch,
                        const ad::Shape& sample_shape, Rng& rng,
                        const std::optional<ad::Tensor>& x0 = std::nullopt);

}  // namespace ebmforge::sampler
