// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "ebmforge/ops.hpp"
#include "ebmforge/rng.hpp"
#include "ebmforge/tensor.hpp"

namespace ebmforge::model {

enum class InputKind : std::uint8_t { vector, grid };

struct InputSpec {
  InputKind kind = InputKind::vector;
  std::size_t dim = 0;     // vector
  std::size_t height = 0;  // grid
  std::size_t width = 0;   // grid

  static InputSpec vec(std::size_t d) { return {InputKind::vector, d, 0, 0}; }
  static InputSpec grid(std::size_t h, std::size_t w) { return {InputKind::grid, 0, h, w}; }
  std::size_t flat_dim() const { return kind == InputKind::vector ? dim : height * width; }
  bool operator==(const InputSpec&) const = default;
};

struct DenseLayer {
  ad::Tensor weight;  // [in, out]
  ad::Tensor bias;    // [out]
};

// Dense network with swish hidden nonlinearity; scalar output per sample.
struct EnergyParams {
  std::vector<DenseLayer> layers;
  InputSpec input;
};

// Sum of per-resolution energies; factor f means the grid is average-pooled
// down by f before entering that scale's network.
struct MultiScaleEnergy {
  struct Scale {
    std::size_t factor;  // 1, 2 or 4
    EnergyParams net;
  };
  std::vector<Scale> scales;
  InputSpec input;  // grid
};

// One-hot condition concatenated to the flattened input.
struct ConditionalEnergy {
  EnergyParams base;  // input dim = flat_dim + condition_dim
  std::size_t condition_dim = 0;
  InputSpec input;  // the x part
};

using AnyModel = std::variant<EnergyParams, MultiScaleEnergy, ConditionalEnergy>;

// Scaled-uniform weights (half-width sqrt(2/fan_in)), zero biases. arch lists
// every layer width including input and the final 1.
EnergyParams init_params(std::uint64_t seed, std::span<const std::size_t> arch, InputSpec input);
MultiScaleEnergy init_multiscale(std::uint64_t seed, std::span<const std::size_t> hidden,
                                 std::span<const std::size_t> factors, InputSpec grid);
ConditionalEnergy init_conditional(std::uint64_t seed, std::span<const std::size_t> hidden,
                                   std::size_t condition_dim, InputSpec input);

ad::Tensor energy(const EnergyParams& p, const ad::Tensor& x);
ad::Tensor energy(const MultiScaleEnergy& m, const ad::Tensor& x);
ad::Tensor energy(const ConditionalEnergy& c, const ad::Tensor& x, std::size_t condition);
ad::Tensor energy(const AnyModel& m, const ad::Tensor& x,
                  std::optional<std::size_t> condition = std::nullopt);

// Energy bound to a model (and condition); what the sampler steps on.
// The model must outlive the returned callable.
using EnergyFn = std::function<ad::Tensor(const ad::Tensor&)>;
EnergyFn bind_energy(const AnyModel& m, std::optional<std::size_t> condition = std::nullopt);
EnergyFn bind_energy(AnyModel&&, std::optional<std::size_t> = std::nullopt) = delete;

struct ComposeMember {
  const AnyModel* m;
  std::optional<std::size_t> condition;
};

// Elementwise sum of member energies; usable directly as a sampling target.
ad::Tensor compose(std::span<const ComposeMember> members, const ad::Tensor& x);
EnergyFn bind_compose(std::vector<ComposeMember> members);

// Gradient of the summed batch energy w.r.t. x. With track set, runs in the
// caller's active graph and keeps the result differentiable (one Langevin
// step's worth of graph); otherwise evaluates in a private graph.
ad::Tensor grad_x(const EnergyFn& fn, const ad::Tensor& x, bool track = false);
ad::Tensor grad_x(const AnyModel& m, const ad::Tensor& x,
                  std::optional<std::size_t> condition = std::nullopt, bool track = false);

// Tracked copies of every parameter tensor, registered in the active graph.
AnyModel watch_params(const AnyModel& m);
std::vector<ad::Tensor*> param_tensors(AnyModel& m);
std::vector<const ad::Tensor*> param_tensors(const AnyModel& m);
std::vector<std::pair<std::string, const ad::Tensor*>> named_params(const AnyModel& m);
const InputSpec& input_spec(const AnyModel& m);

}  // namespace ebmforge::model
