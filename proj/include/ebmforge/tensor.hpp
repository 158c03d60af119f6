// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <deque>
#include <stdexcept>
#include <string>
#include <vector>

namespace ebmforge::ad {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Thrown when a forward operation on finite inputs produces NaN/Inf.
// The trainer treats this as a divergence signal rather than a bug.
struct NonFiniteError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Dense row-major 64-bit tensor. `node` is the identity of this value in the
// graph `graph_id`; a tensor is tracked only with respect to the currently
// active graph, so values that escape a graph scope decay to constants.
struct Tensor {
  Shape shape;
  std::vector<double> values;
  std::int64_t node = -1;
  std::uint64_t graph_id = 0;

  Tensor() = default;
  Tensor(Shape s, std::vector<double> v);

  std::size_t size() const { return values.size(); }
  std::size_t rank() const { return shape.size(); }
  double scalar() const;
  bool tracked() const;  // tracked in the active graph

  static Tensor scalar_of(double v);
  static Tensor zeros(Shape s);
  static Tensor full(Shape s, double v);
};

enum class Prim : std::uint8_t {
  leaf,
  constant,
  add,
  subtract,
  multiply,
  matmul,
  sum,
  mean,
  square,
  sqrt,
  exp,
  log,
  swish,
  sigmoid,
  reciprocal,
  broadcast,
  reshape,
  concat,
  slice,
  avg_pool2x2,
  l2_norm_rows,
};

const char* prim_name(Prim p);

enum class BroadcastMode : std::uint8_t {
  scalar,  // size-1 source, any target
  rows,    // source shape is a suffix of target: replicate along new leading axes
  cols,    // source shape is a prefix of target: replicate along new trailing axes
};

// Static attributes of a primitive application.
struct Attrs {
  Shape target;  // broadcast / reshape
  BroadcastMode mode = BroadcastMode::scalar;
  std::size_t axis = 0;    // concat / slice
  std::size_t begin = 0;   // slice
  std::size_t extent = 0;  // slice
  bool trans_a = false;    // matmul
  bool trans_b = false;    // matmul
};

// One recorded primitive application. Parents always precede children.
struct Node {
  Prim op;
  Shape shape;
  std::vector<double> values;
  std::vector<std::int64_t> parents;
  Attrs attrs;
};

class Graph {
 public:
  Graph();
  std::uint64_t id() const { return id_; }
  std::size_t size() const { return nodes_.size(); }
  const Node& at(std::int64_t i) const { return nodes_[static_cast<std::size_t>(i)]; }
  std::int64_t append(Node n);

 private:
  std::uint64_t id_;
  std::deque<Node> nodes_;  // deque: references stay valid while the backward appends
};

Graph* active_graph();

// Installs a fresh graph for the enclosing scope; restores the previous one
// on destruction. Graphs are rebuilt per training step.
class GraphScope {
 public:
  GraphScope();
  ~GraphScope();
  GraphScope(const GraphScope&) = delete;
  GraphScope& operator=(const GraphScope&) = delete;
  Graph& graph() { return graph_; }

 private:
  Graph graph_;
  Graph* prev_;
};

// Registers x as a differentiable leaf in the active graph.
Tensor watch(const Tensor& x);

// Value identity, derivative barrier.
Tensor stop_grad(const Tensor& x);

}  // namespace ebmforge::ad
