// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "ebmforge/model.hpp"
#include "ebmforge/rng.hpp"
#include "ebmforge/sampler.hpp"

namespace ebmforge::data {

struct Dataset {
  model::InputSpec input;
  ad::Tensor samples;       // [n, d] or [n, h, w]
  std::vector<int> labels;  // component / ring / (shape*2+side); empty if none
  sampler::Box bbox;        // tight per-flat-dim bounds

  std::size_t size() const { return samples.shape.empty() ? 0 : samples.shape[0]; }
};

// eight-gaussians | two-rings | checkerboard | pinwheel
Dataset make_mixture(const std::string& name, std::size_t n, std::uint64_t seed);

// component centers of the eight-gaussians mixture (radius 2, 45 degree steps)
std::vector<std::vector<double>> eight_gaussian_centers();

// Grids with one random axis-aligned bar or square, values in [-1, 1].
// size must be divisible by 4 (quarter resolution).
Dataset make_shapes(std::size_t n, std::size_t size, std::uint64_t seed);

// IDX image file (magic 0x00000803), scaled to [-1, 1] and center-cropped to
// the largest 4-divisible size.
Dataset load_idx(const std::filesystem::path& path);

ad::Tensor minibatch(const Dataset& ds, std::size_t batch, Rng& rng);

Dataset filter(const Dataset& ds, const std::function<bool(std::span<const double>)>& keep);

// shift every sample by a constant offset (OOD construction)
Dataset shifted(const Dataset& ds, std::span<const double> offset);

// init/clamp box for sampling: grids use [-1, 1]; vectors use the data
// bounding box grown by 20%.
sampler::Box sampling_box(const Dataset& ds);

}  // namespace ebmforge::data
