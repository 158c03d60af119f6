// SPDX-License-Identifier: Apache-2.0
#include "ebmforge/sampler.hpp"

#include <algorithm>
#include <cmath>

#include "ebmforge/ops.hpp"

namespace ebmforge::sampler {

Box Box::cube(std::size_t dims, double lo, double hi) {
  return {std::vector<double>(dims, lo), std::vector<double>(dims, hi)};
}

Box Box::expanded(double margin_fraction) const {
  Box out = *this;
  for (std::size_t i = 0; i < lo.size(); ++i) {
    const double c = 0.5 * (lo[i] + hi[i]);
    const double half = 0.5 * (hi[i] - lo[i]) * (1.0 + margin_fraction);
    out.lo[i] = c - half;
    out.hi[i] = c + half;
  }
  return out;
}

void clamp_values(std::vector<double>& values, const Box& box) {
  const std::size_t d = box.dims();
  for (std::size_t i = 0; i < values.size(); ++i) {
    const std::size_t j = i % d;
    values[i] = std::clamp(values[i], box.lo[j], box.hi[j]);
  }
}

void LangevinConfig::validate() const {
  if (steps < 1) throw std::invalid_argument("langevin: steps must be >= 1");
  if (step_size <= 0.0) throw std::invalid_argument("langevin: step_size must be > 0");
  if (noise_sigma < 0.0) throw std::invalid_argument("langevin: noise_sigma must be >= 0");
}

ReplayBuffer::ReplayBuffer(std::size_t capacity, double reuse_probability, Box init_box,
                           ad::Shape sample_shape)
    : capacity_(capacity),
      reuse_p_(reuse_probability),
      box_(std::move(init_box)),
      sample_shape_(std::move(sample_shape)) {
  if (capacity_ == 0) throw std::invalid_argument("replay buffer: capacity must be > 0");
  if (reuse_p_ < 0.0 || reuse_p_ > 1.0) {
    throw std::invalid_argument("replay buffer: reuse probability out of [0,1]");
  }
  if (box_.dims() != ad::numel(sample_shape_)) {
    throw std::invalid_argument("replay buffer: box dims do not match sample shape");
  }
}

ReplayBuffer::InitDraw ReplayBuffer::draw_init(std::size_t batch, Rng& rng,
                                               std::optional<double> reuse_override) const {
  const double p = reuse_override.value_or(reuse_p_);
  const std::size_t d = ad::numel(sample_shape_);
  ad::Shape shape;
  shape.push_back(batch);
  shape.insert(shape.end(), sample_shape_.begin(), sample_shape_.end());
  ad::Tensor out = ad::Tensor::zeros(shape);
  std::size_t hits = 0;
  for (std::size_t b = 0; b < batch; ++b) {
    double* row = out.values.data() + b * d;
    if (!items_.empty() && rng.bernoulli(p)) {
      const std::vector<double>& item = items_[rng.index(items_.size())];
      std::copy(item.begin(), item.end(), row);
      ++hits;
    } else {
      for (std::size_t j = 0; j < d; ++j) row[j] = rng.uniform(box_.lo[j], box_.hi[j]);
    }
  }
  return {std::move(out), hits};
}

void ReplayBuffer::update(const ad::Tensor& batch, Rng& rng) {
  if (batch.node >= 0) throw std::invalid_argument("replay buffer: samples must be detached");
  const std::size_t d = ad::numel(sample_shape_);
  if (batch.rank() < 1 || batch.size() % d != 0) {
    throw std::invalid_argument("replay buffer: batch does not match sample shape");
  }
  const std::size_t n = batch.size() / d;
  for (std::size_t b = 0; b < n; ++b) {
    std::vector<double> item(batch.values.begin() + static_cast<std::ptrdiff_t>(b * d),
                             batch.values.begin() + static_cast<std::ptrdiff_t>((b + 1) * d));
    if (items_.size() < capacity_) {
      items_.push_back(std::move(item));
    } else {
      items_[rng.index(capacity_)] = std::move(item);
    }
  }
}

ad::Tensor ReplayBuffer::snapshot() const {
  const std::size_t d = ad::numel(sample_shape_);
  ad::Tensor out = ad::Tensor::zeros({items_.size(), d});
  for (std::size_t i = 0; i < items_.size(); ++i) {
    std::copy(items_[i].begin(), items_[i].end(), out.values.begin() + static_cast<std::ptrdiff_t>(i * d));
  }
  return out;
}

void ReplayBuffer::restore(const ad::Tensor& items) {
  const std::size_t d = ad::numel(sample_shape_);
  if (items.rank() != 2 || items.shape[1] != d) {
    throw std::invalid_argument("replay buffer: bad snapshot shape");
  }
  items_.clear();
  for (std::size_t i = 0; i < items.shape[0]; ++i) {
    items_.emplace_back(items.values.begin() + static_cast<std::ptrdiff_t>(i * d),
                        items.values.begin() + static_cast<std::ptrdiff_t>((i + 1) * d));
  }
}

AugmentationSpec AugmentationSpec::none(Box box) {
  AugmentationSpec s;
  s.data_box = std::move(box);
  return s;
}

namespace {

// bilinear sample of grid at (r, c) with edge clamping
double bilinear(const double* g, std::size_t h, std::size_t w, double r, double c) {
  r = std::clamp(r, 0.0, static_cast<double>(h - 1));
  c = std::clamp(c, 0.0, static_cast<double>(w - 1));
  const std::size_t r0 = static_cast<std::size_t>(r);
  const std::size_t c0 = static_cast<std::size_t>(c);
  const std::size_t r1 = std::min(r0 + 1, h - 1);
  const std::size_t c1 = std::min(c0 + 1, w - 1);
  const double fr = r - static_cast<double>(r0);
  const double fc = c - static_cast<double>(c0);
  const double top = g[r0 * w + c0] * (1.0 - fc) + g[r0 * w + c1] * fc;
  const double bot = g[r1 * w + c0] * (1.0 - fc) + g[r1 * w + c1] * fc;
  return top * (1.0 - fr) + bot * fr;
}

void augment_grid(double* g, std::size_t h, std::size_t w, const GridAug& a, Rng& rng) {
  std::vector<double> tmp(h * w);
  if (rng.bernoulli(a.flip_probability)) {
    for (std::size_t r = 0; r < h; ++r) {
      for (std::size_t c = 0; c < w / 2; ++c) std::swap(g[r * w + c], g[r * w + (w - 1 - c)]);
    }
  }
  if (rng.bernoulli(a.rescale_probability)) {
    // random crop of factor f, resampled back to full size
    const double f = rng.uniform(a.rescale_lo, a.rescale_hi);
    const double ch = f * static_cast<double>(h);
    const double cw = f * static_cast<double>(w);
    const double r0 = rng.uniform(0.0, static_cast<double>(h) - ch);
    const double c0 = rng.uniform(0.0, static_cast<double>(w) - cw);
    for (std::size_t r = 0; r < h; ++r) {
      for (std::size_t c = 0; c < w; ++c) {
        const double sr = r0 + (ch - 1.0) * static_cast<double>(r) / static_cast<double>(h - 1);
        const double sc = c0 + (cw - 1.0) * static_cast<double>(c) / static_cast<double>(w - 1);
        tmp[r * w + c] = bilinear(g, h, w, sr, sc);
      }
    }
    std::copy(tmp.begin(), tmp.end(), g);
  }
  if (rng.bernoulli(a.blur_probability)) {
    const double sigma = rng.uniform(a.blur_sigma_lo, a.blur_sigma_hi);
    const int radius = std::max(1, static_cast<int>(std::ceil(2.0 * sigma)));
    std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
    double norm = 0.0;
    for (int k = -radius; k <= radius; ++k) {
      kernel[static_cast<std::size_t>(k + radius)] = std::exp(-0.5 * (k * k) / (sigma * sigma));
      norm += kernel[static_cast<std::size_t>(k + radius)];
    }
    for (double& v : kernel) v /= norm;
    auto at = [](std::ptrdiff_t i, std::size_t n) {
      return static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(i, 0, static_cast<std::ptrdiff_t>(n) - 1));
    };
    // separable: rows then columns
    for (std::size_t r = 0; r < h; ++r) {
      for (std::size_t c = 0; c < w; ++c) {
        double acc = 0.0;
        for (int k = -radius; k <= radius; ++k) {
          acc += kernel[static_cast<std::size_t>(k + radius)] * g[r * w + at(static_cast<std::ptrdiff_t>(c) + k, w)];
        }
        tmp[r * w + c] = acc;
      }
    }
    for (std::size_t r = 0; r < h; ++r) {
      for (std::size_t c = 0; c < w; ++c) {
        double acc = 0.0;
        for (int k = -radius; k <= radius; ++k) {
          acc += kernel[static_cast<std::size_t>(k + radius)] * tmp[at(static_cast<std::ptrdiff_t>(r) + k, h) * w + c];
        }
        g[r * w + c] = acc;
      }
    }
  }
  if (rng.bernoulli(a.brightness_probability)) {
    const double shift = rng.uniform(a.brightness_lo, a.brightness_hi);
    for (std::size_t i = 0; i < h * w; ++i) g[i] += shift;
  }
}

void augment_vector(double* v, std::size_t d, const Box& box, const VectorAug& a, Rng& rng) {
  if (rng.bernoulli(a.perturb_probability)) {
    for (std::size_t j = 0; j < d; ++j) v[j] += a.perturb_sigma * rng.normal();
  }
  for (std::size_t axis : a.reflect_axes) {
    if (axis >= d) throw std::invalid_argument("augmentation: reflection axis out of range");
    if (rng.bernoulli(a.reflect_probability)) {
      const double center = 0.5 * (box.lo[axis] + box.hi[axis]);
      v[axis] = 2.0 * center - v[axis];
    }
  }
}

}  // namespace

ad::Tensor apply_augmentation(const AugmentationSpec& spec, const ad::Tensor& x, Rng& rng) {
  ad::Tensor out = ad::stop_grad(x);
  if (spec.grid) {
    if (out.rank() != 3) throw std::invalid_argument("augmentation: grid spec needs [n,h,w]");
    const std::size_t n = out.shape[0], h = out.shape[1], w = out.shape[2];
    for (std::size_t b = 0; b < n; ++b) augment_grid(out.values.data() + b * h * w, h, w, *spec.grid, rng);
  } else if (spec.vec) {
    if (out.rank() != 2) throw std::invalid_argument("augmentation: vector spec needs [n,d]");
    const std::size_t n = out.shape[0], d = out.shape[1];
    for (std::size_t b = 0; b < n; ++b) augment_vector(out.values.data() + b * d, d, spec.data_box, *spec.vec, rng);
  }
  clamp_values(out.values, spec.data_box);
  return out;
}

namespace {

std::vector<double> draw_noise(std::size_t n, double sigma, Rng& rng) {
  std::vector<double> noise(n, 0.0);
  if (sigma > 0.0) {
    for (double& v : noise) v = sigma * rng.normal();
  }
  return noise;
}

// In-graph clamp: linear where inside the box, constant (zero-gradient)
// where clamped, selected by value-level masks.
ad::Tensor clamp_tracked(const ad::Tensor& x, const Box& box) {
  const std::size_t d = box.dims();
  ad::Tensor mask = ad::Tensor::zeros(x.shape);
  ad::Tensor clamped = ad::Tensor::zeros(x.shape);
  bool any_clamped = false;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const std::size_t j = i % d;
    const double v = x.values[i];
    const bool inside = v >= box.lo[j] && v <= box.hi[j];
    mask.values[i] = inside ? 1.0 : 0.0;
    clamped.values[i] = inside ? 0.0 : std::clamp(v, box.lo[j], box.hi[j]);
    any_clamped = any_clamped || !inside;
  }
  if (!any_clamped) return x;
  return ad::add(ad::multiply(x, mask), clamped);
}

}  // namespace

ad::Tensor langevin_step(const model::EnergyFn& energy, const ad::Tensor& x, double step_size,
                         double noise_sigma, const std::optional<Box>& clamp, Rng& rng, bool track,
                         std::vector<double>* noise_out,
                         const std::vector<double>* noise_override) {
  std::vector<double> noise =
      noise_override ? *noise_override : draw_noise(x.size(), noise_sigma, rng);
  if (noise.size() != x.size()) throw std::invalid_argument("langevin: noise size mismatch");
  if (noise_out) *noise_out = noise;

  if (!track) {
    ad::Tensor gx;
    {
      ad::GraphScope scope;
      ad::Tensor xw = ad::watch(ad::stop_grad(x));
      gx = ad::grad(ad::sum(energy(xw)), {{xw}}, /*retain_graph=*/false)[0];
    }
    ad::Tensor out = ad::stop_grad(x);
    for (std::size_t i = 0; i < out.size(); ++i) {
      out.values[i] -= step_size * gx.values[i];
      out.values[i] += noise[i];
      if (!std::isfinite(out.values[i])) {
        throw ad::NonFiniteError("non-finite Langevin state");
      }
    }
    if (clamp) clamp_values(out.values, *clamp);
    return out;
  }

  if (!ad::active_graph()) throw std::logic_error("tracked langevin_step needs an active graph");
  ad::Tensor xw = ad::watch(ad::stop_grad(x));
  ad::Tensor gx = ad::grad(ad::sum(energy(xw)), {{xw}}, /*retain_graph=*/true)[0];
  ad::Tensor step = ad::subtract(xw, ad::scale(gx, step_size));
  ad::Tensor next = ad::add(step, ad::Tensor(x.shape, std::move(noise)));
  if (clamp) next = clamp_tracked(next, *clamp);
  return next;
}

ChainBatch generate_negatives(const model::EnergyFn& live, const model::EnergyFn& tracked_fn,
                              const ReplayBuffer& buffer, const AugmentationSpec& aug,
                              const LangevinConfig& cfg, std::size_t batch, Rng& rng,
                              std::optional<double> reuse_override) {
  if (batch < 1) throw std::invalid_argument("generate_negatives: batch must be >= 1");
  cfg.validate();
  ad::Tensor x = buffer.draw_init(batch, rng, reuse_override).states;
  x = apply_augmentation(aug, x, rng);
  for (std::size_t k = 0; k + 1 < cfg.steps; ++k) {
    x = langevin_step(live, x, cfg.step_size, cfg.noise_sigma, cfg.clamp, rng, /*track=*/false);
  }
  ChainBatch out;
  std::vector<double> final_noise;
  out.tracked = langevin_step(tracked_fn, x, cfg.step_size, cfg.noise_sigma, cfg.clamp, rng,
                              /*track=*/true, &final_noise);
  out.detached = ad::stop_grad(out.tracked);
  out.noise_record = ad::Tensor(out.tracked.shape, std::move(final_noise));
  return out;
}

ad::Tensor sample_model(const model::EnergyFn& energy, const AugmentationSpec& aug,
                        const LangevinConfig& cfg, std::size_t rounds, std::size_t batch,
                        const ad::Shape& sample_shape, Rng& rng,
                        const std::optional<ad::Tensor>& x0) {
  if (rounds < 1) throw std::invalid_argument("sample_model: rounds must be >= 1");
  cfg.validate();
  ad::Tensor x;
  if (x0) {
    x = ad::stop_grad(*x0);
  } else {
    const Box& box = aug.data_box;
    const std::size_t d = box.dims();
    if (ad::numel(sample_shape) != d) {
      throw std::invalid_argument("sample_model: sample shape does not match data box");
    }
    ad::Shape shape;
    shape.push_back(batch);
    shape.insert(shape.end(), sample_shape.begin(), sample_shape.end());
    x = ad::Tensor::zeros(shape);
    for (std::size_t i = 0; i < x.size(); ++i) x.values[i] = rng.uniform(box.lo[i % d], box.hi[i % d]);
  }
  for (std::size_t n = 0; n < rounds; ++n) {
    x = apply_augmentation(aug, x, rng);
    for (std::size_t k = 0; k < cfg.steps; ++k) {
      x = langevin_step(energy, x, cfg.step_size, cfg.noise_sigma, cfg.clamp, rng, /*track=*/false);
    }
  }
  return x;
}

}  // namespace ebmforge::sampler
