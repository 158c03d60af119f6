// SPDX-License-Identifier: Apache-2.0
#include "ebmforge/model.hpp"

#include <cmath>

namespace ebmforge::model {

namespace {

ad::Tensor flatten_batch(const ad::Tensor& x, const InputSpec& in) {
  if (in.kind == InputKind::vector) {
    if (x.rank() != 2 || x.shape[1] != in.dim) {
      throw std::invalid_argument("energy: expected batch of shape [n," + std::to_string(in.dim) +
                                  "], got " + ad::shape_str(x.shape));
    }
    return x;
  }
  if (x.rank() != 3 || x.shape[1] != in.height || x.shape[2] != in.width) {
    throw std::invalid_argument("energy: expected grid batch [n," + std::to_string(in.height) +
                                "," + std::to_string(in.width) + "], got " + ad::shape_str(x.shape));
  }
  return ad::reshape(x, {x.shape[0], in.height * in.width});
}

ad::Tensor mlp(const EnergyParams& p, const ad::Tensor& flat) {
  if (p.layers.empty()) throw std::invalid_argument("energy: empty architecture");
  ad::Tensor h = flat;
  for (std::size_t li = 0; li < p.layers.size(); ++li) {
    const DenseLayer& layer = p.layers[li];
    h = ad::matmul(h, layer.weight);
    h = ad::add(h, ad::broadcast_to(layer.bias, h.shape, ad::BroadcastMode::rows));
    if (li + 1 < p.layers.size()) h = ad::swish(h);
  }
  if (h.shape[1] != 1) {
    throw std::invalid_argument("energy: final layer must output 1, got " + ad::shape_str(h.shape));
  }
  return ad::reshape(h, {h.shape[0]});
}

void check_finite_params(const std::vector<DenseLayer>& layers) {
  for (const DenseLayer& l : layers) {
    for (double v : l.weight.values) {
      if (!std::isfinite(v)) throw ad::NonFiniteError("non-finite parameter tensor");
    }
    for (double v : l.bias.values) {
      if (!std::isfinite(v)) throw ad::NonFiniteError("non-finite parameter tensor");
    }
  }
}

std::vector<DenseLayer> init_layers(Rng& rng, std::span<const std::size_t> arch) {
  std::vector<DenseLayer> layers;
  for (std::size_t li = 0; li + 1 < arch.size(); ++li) {
    const std::size_t fan_in = arch[li];
    const std::size_t fan_out = arch[li + 1];
    const double s = std::sqrt(2.0 / static_cast<double>(fan_in));
    ad::Tensor w = ad::Tensor::zeros({fan_in, fan_out});
    for (double& v : w.values) v = rng.uniform(-s, s);
    layers.push_back({std::move(w), ad::Tensor::zeros({fan_out})});
  }
  return layers;
}

std::size_t pool_count(std::size_t factor) {
  switch (factor) {
    case 1: return 0;
    case 2: return 1;
    case 4: return 2;
    default:
      throw std::invalid_argument("multi-scale factor must be 1, 2 or 4, got " +
                                  std::to_string(factor));
  }
}

}  // namespace

EnergyParams init_params(std::uint64_t seed, std::span<const std::size_t> arch, InputSpec input) {
  if (arch.empty()) throw std::invalid_argument("init_params: empty architecture");
  if (arch.back() != 1) throw std::invalid_argument("init_params: architecture must end with 1");
  if (arch.front() != input.flat_dim()) {
    throw std::invalid_argument("init_params: arch[0]=" + std::to_string(arch.front()) +
                                " does not match input dim " + std::to_string(input.flat_dim()));
  }
  Rng rng(seed);
  return {init_layers(rng, arch), input};
}

MultiScaleEnergy init_multiscale(std::uint64_t seed, std::span<const std::size_t> hidden,
                                 std::span<const std::size_t> factors, InputSpec grid) {
  if (grid.kind != InputKind::grid) {
    throw std::invalid_argument("init_multiscale: input must be a grid");
  }
  if (factors.empty() || factors.front() != 1) {
    throw std::invalid_argument("init_multiscale: factors must start at 1");
  }
  MultiScaleEnergy m;
  m.input = grid;
  std::size_t prev = 0;
  for (std::size_t si = 0; si < factors.size(); ++si) {
    const std::size_t f = factors[si];
    if (f <= prev) throw std::invalid_argument("init_multiscale: factors must strictly increase");
    prev = f;
    pool_count(f);
    if (grid.height % f != 0 || grid.width % f != 0) {
      throw std::invalid_argument("init_multiscale: grid extents not divisible by factor " +
                                  std::to_string(f));
    }
    InputSpec scale_in = InputSpec::grid(grid.height / f, grid.width / f);
    std::vector<std::size_t> arch;
    arch.push_back(scale_in.flat_dim());
    arch.insert(arch.end(), hidden.begin(), hidden.end());
    arch.push_back(1);
    m.scales.push_back({f, init_params(Rng::mix(seed, si), arch, scale_in)});
  }
  return m;
}

ConditionalEnergy init_conditional(std::uint64_t seed, std::span<const std::size_t> hidden,
                                   std::size_t condition_dim, InputSpec input) {
  if (condition_dim == 0) throw std::invalid_argument("init_conditional: condition_dim must be > 0");
  std::vector<std::size_t> arch;
  arch.push_back(input.flat_dim() + condition_dim);
  arch.insert(arch.end(), hidden.begin(), hidden.end());
  arch.push_back(1);
  ConditionalEnergy c;
  c.condition_dim = condition_dim;
  c.input = input;
  InputSpec base_in = InputSpec::vec(arch.front());
  c.base = init_params(seed, arch, base_in);
  return c;
}

ad::Tensor energy(const EnergyParams& p, const ad::Tensor& x) {
  check_finite_params(p.layers);
  return mlp(p, flatten_batch(x, p.input));
}

ad::Tensor energy(const MultiScaleEnergy& m, const ad::Tensor& x) {
  if (m.scales.empty()) throw std::invalid_argument("energy: multi-scale model has no scales");
  if (x.rank() != 3 || x.shape[1] != m.input.height || x.shape[2] != m.input.width) {
    throw std::invalid_argument("energy: expected grid batch [n," + std::to_string(m.input.height) +
                                "," + std::to_string(m.input.width) + "], got " +
                                ad::shape_str(x.shape));
  }
  ad::Tensor total;
  bool first = true;
  for (const MultiScaleEnergy::Scale& s : m.scales) {
    ad::Tensor y = x;
    for (std::size_t k = 0; k < pool_count(s.factor); ++k) y = ad::avg_pool2x2(y);
    ad::Tensor e = energy(s.net, y);
    total = first ? e : ad::add(total, e);
    first = false;
  }
  return total;
}

ad::Tensor energy(const ConditionalEnergy& c, const ad::Tensor& x, std::size_t condition) {
  if (condition >= c.condition_dim) {
    throw std::invalid_argument("energy: condition " + std::to_string(condition) +
                                " out of range (dim " + std::to_string(c.condition_dim) + ")");
  }
  ad::Tensor flat = flatten_batch(x, c.input);
  const std::size_t n = flat.shape[0];
  ad::Tensor onehot = ad::Tensor::zeros({n, c.condition_dim});
  for (std::size_t i = 0; i < n; ++i) onehot.values[i * c.condition_dim + condition] = 1.0;
  const ad::Tensor joined = ad::concat({{flat, onehot}}, 1);
  return mlp(c.base, joined);
}

ad::Tensor energy(const AnyModel& m, const ad::Tensor& x, std::optional<std::size_t> condition) {
  if (std::holds_alternative<ConditionalEnergy>(m)) {
    if (!condition) throw std::invalid_argument("energy: conditional model requires a condition");
    return energy(std::get<ConditionalEnergy>(m), x, *condition);
  }
  if (condition) {
    throw std::invalid_argument("energy: condition supplied to an unconditional model");
  }
  if (std::holds_alternative<EnergyParams>(m)) return energy(std::get<EnergyParams>(m), x);
  return energy(std::get<MultiScaleEnergy>(m), x);
}

EnergyFn bind_energy(const AnyModel& m, std::optional<std::size_t> condition) {
  return [&m, condition](const ad::Tensor& x) { return energy(m, x, condition); };
}

ad::Tensor compose(std::span<const ComposeMember> members, const ad::Tensor& x) {
  if (members.empty()) throw std::invalid_argument("compose: no members");
  const InputSpec& in0 = input_spec(*members[0].m);
  for (const ComposeMember& mem : members) {
    if (!(input_spec(*mem.m) == in0)) {
      throw std::invalid_argument("compose: members disagree on input kind");
    }
  }
  ad::Tensor total = energy(*members[0].m, x, members[0].condition);
  for (std::size_t i = 1; i < members.size(); ++i) {
    total = ad::add(total, energy(*members[i].m, x, members[i].condition));
  }
  return total;
}

EnergyFn bind_compose(std::vector<ComposeMember> members) {
  return [members = std::move(members)](const ad::Tensor& x) {
    return compose(members, x);
  };
}

ad::Tensor grad_x(const EnergyFn& fn, const ad::Tensor& x, bool track) {
  if (track) {
    ad::Tensor xw = x.tracked() ? x : ad::watch(x);
    return ad::grad(ad::sum(fn(xw)), {{xw}}, /*retain_graph=*/true)[0];
  }
  ad::GraphScope scope;
  ad::Tensor xw = ad::watch(ad::stop_grad(x));
  return ad::grad(ad::sum(fn(xw)), {{xw}}, /*retain_graph=*/false)[0];
}

ad::Tensor grad_x(const AnyModel& m, const ad::Tensor& x, std::optional<std::size_t> condition,
                  bool track) {
  return grad_x(bind_energy(m, condition), x, track);
}

namespace {

void watch_layers(std::vector<DenseLayer>& layers) {
  for (DenseLayer& l : layers) {
    l.weight = ad::watch(l.weight);
    l.bias = ad::watch(l.bias);
  }
}

void collect(std::vector<ad::Tensor*>& out, std::vector<DenseLayer>& layers) {
  for (DenseLayer& l : layers) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
}

void collect_named(std::vector<std::pair<std::string, const ad::Tensor*>>& out,
                   const std::string& prefix, const std::vector<DenseLayer>& layers) {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    out.emplace_back(prefix + "layer" + std::to_string(i) + ".w", &layers[i].weight);
    out.emplace_back(prefix + "layer" + std::to_string(i) + ".b", &layers[i].bias);
  }
}

}  // namespace

AnyModel watch_params(const AnyModel& m) {
  AnyModel copy = m;
  std::visit(
      [](auto& mm) {
        using T = std::decay_t<decltype(mm)>;
        if constexpr (std::is_same_v<T, EnergyParams>) {
          watch_layers(mm.layers);
        } else if constexpr (std::is_same_v<T, MultiScaleEnergy>) {
          for (auto& s : mm.scales) watch_layers(s.net.layers);
        } else {
          watch_layers(mm.base.layers);
        }
      },
      copy);
  return copy;
}

std::vector<ad::Tensor*> param_tensors(AnyModel& m) {
  std::vector<ad::Tensor*> out;
  std::visit(
      [&out](auto& mm) {
        using T = std::decay_t<decltype(mm)>;
        if constexpr (std::is_same_v<T, EnergyParams>) {
          collect(out, mm.layers);
        } else if constexpr (std::is_same_v<T, MultiScaleEnergy>) {
          for (auto& s : mm.scales) collect(out, s.net.layers);
        } else {
          collect(out, mm.base.layers);
        }
      },
      m);
  return out;
}

std::vector<const ad::Tensor*> param_tensors(const AnyModel& m) {
  auto mut = param_tensors(const_cast<AnyModel&>(m));
  return {mut.begin(), mut.end()};
}

std::vector<std::pair<std::string, const ad::Tensor*>> named_params(const AnyModel& m) {
  std::vector<std::pair<std::string, const ad::Tensor*>> out;
  std::visit(
      [&out](const auto& mm) {
        using T = std::decay_t<decltype(mm)>;
        if constexpr (std::is_same_v<T, EnergyParams>) {
          collect_named(out, "", mm.layers);
        } else if constexpr (std::is_same_v<T, MultiScaleEnergy>) {
          for (std::size_t si = 0; si < mm.scales.size(); ++si) {
            collect_named(out, "scale" + std::to_string(si) + ".", mm.scales[si].net.layers);
          }
        } else {
          collect_named(out, "cond.", mm.base.layers);
        }
      },
      m);
  return out;
}

const InputSpec& input_spec(const AnyModel& m) {
  return std::visit([](const auto& mm) -> const InputSpec& { return mm.input; }, m);
}

}  // namespace ebmforge::model
