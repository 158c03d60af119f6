// SPDX-License-Identifier: Apache-2.0
#include "ebmforge/tensor.hpp"

#include <atomic>

namespace ebmforge::ad {

namespace {
thread_local Graph* g_active = nullptr;
std::atomic<std::uint64_t> g_next_graph_id{1};
}  // namespace

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

Tensor::Tensor(Shape s, std::vector<double> v) : shape(std::move(s)), values(std::move(v)) {
  if (numel(shape) != values.size()) {
    throw std::invalid_argument("tensor shape " + shape_str(shape) + " does not match " +
                                std::to_string(values.size()) + " values");
  }
}

double Tensor::scalar() const {
  if (values.size() != 1) {
    throw std::invalid_argument("scalar() on tensor of shape " + shape_str(shape));
  }
  return values[0];
}

bool Tensor::tracked() const {
  const Graph* g = active_graph();
  return node >= 0 && g != nullptr && graph_id == g->id();
}

Tensor Tensor::scalar_of(double v) { return Tensor({}, {v}); }

Tensor Tensor::zeros(Shape s) {
  std::vector<double> v(numel(s), 0.0);
  return Tensor(std::move(s), std::move(v));
}

Tensor Tensor::full(Shape s, double value) {
  std::vector<double> v(numel(s), value);
  return Tensor(std::move(s), std::move(v));
}

const char* prim_name(Prim p) {
  switch (p) {
    case Prim::leaf: return "leaf";
    case Prim::constant: return "constant";
    case Prim::add: return "add";
    case Prim::subtract: return "subtract";
    case Prim::multiply: return "multiply";
    case Prim::matmul: return "matmul";
    case Prim::sum: return "sum";
    case Prim::mean: return "mean";
    case Prim::square: return "square";
    case Prim::sqrt: return "sqrt";
    case Prim::exp: return "exp";
    case Prim::log: return "log";
    case Prim::swish: return "swish";
    case Prim::sigmoid: return "sigmoid";
    case Prim::reciprocal: return "reciprocal";
    case Prim::broadcast: return "broadcast";
    case Prim::reshape: return "reshape";
    case Prim::concat: return "concat";
    case Prim::slice: return "slice";
    case Prim::avg_pool2x2: return "avg-pool-2x2";
    case Prim::l2_norm_rows: return "l2-norm-rows";
  }
  return "?";
}

Graph::Graph() : id_(g_next_graph_id.fetch_add(1)) {}

std::int64_t Graph::append(Node n) {
  nodes_.push_back(std::move(n));
  return static_cast<std::int64_t>(nodes_.size()) - 1;
}

Graph* active_graph() { return g_active; }

GraphScope::GraphScope() : prev_(g_active) { g_active = &graph_; }

GraphScope::~GraphScope() { g_active = prev_; }

Tensor watch(const Tensor& x) {
  Graph* g = active_graph();
  if (!g) throw std::logic_error("watch() requires an active graph scope");
  Tensor out = x;
  out.graph_id = g->id();
  out.node = g->append(Node{Prim::leaf, out.shape, out.values, {}, {}});
  return out;
}

Tensor stop_grad(const Tensor& x) {
  Tensor out = x;
  out.node = -1;
  out.graph_id = 0;
  return out;
}

}  // namespace ebmforge::ad
