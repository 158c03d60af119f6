// SPDX-License-Identifier: Apache-2.0
#include "ebmforge/ops.hpp"

#include <cmath>
#include <cstring>
#include <optional>

namespace ebmforge::ad {

namespace {

thread_local bool g_tracking = true;

// Disables node recording for a scope (used by the non-retained backward).
struct TrackingOff {
  bool prev;
  TrackingOff() : prev(g_tracking) { g_tracking = false; }
  ~TrackingOff() { g_tracking = prev; }
};

struct TrackingSet {
  bool prev;
  explicit TrackingSet(bool on) : prev(g_tracking) { g_tracking = on; }
  ~TrackingSet() { g_tracking = prev; }
};

[[noreturn]] void shape_error(Prim op, const std::string& detail) {
  throw std::invalid_argument(std::string(prim_name(op)) + ": " + detail);
}

void check_finite(Prim op, const std::vector<double>& v) {
  for (double x : v) {
    if (!std::isfinite(x)) {
      throw NonFiniteError(std::string("non-finite value produced by ") + prim_name(op));
    }
  }
}

bool same_shape(const Shape& a, const Shape& b) { return a == b; }

// ---- forward kernels ------------------------------------------------------

void ew_check(Prim op, const Tensor& a, const Tensor& b) {
  if (!same_shape(a.shape, b.shape)) {
    shape_error(op, "shapes " + shape_str(a.shape) + " and " + shape_str(b.shape) + " differ");
  }
}

std::pair<std::size_t, std::size_t> mat_dims(const Tensor& t, bool trans, Prim op) {
  if (t.rank() != 2) shape_error(op, "expected rank-2 operand, got " + shape_str(t.shape));
  return trans ? std::make_pair(t.shape[1], t.shape[0]) : std::make_pair(t.shape[0], t.shape[1]);
}

Tensor matmul_forward(const Tensor& a, const Tensor& b, bool ta, bool tb) {
  const auto [m, k] = mat_dims(a, ta, Prim::matmul);
  const auto [k2, n] = mat_dims(b, tb, Prim::matmul);
  if (k != k2) {
    shape_error(Prim::matmul, "inner extents differ: " + shape_str(a.shape) +
                                  (ta ? "^T" : "") + " x " + shape_str(b.shape) + (tb ? "^T" : ""));
  }
  Tensor out = Tensor::zeros({m, n});
  const double* A = a.values.data();
  const double* B = b.values.data();
  double* C = out.values.data();
  const std::size_t lda = a.shape[1];
  const std::size_t ldb = b.shape[1];
  // accumulation over k in ascending order for every (i,j): deterministic
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double av = ta ? A[kk * lda + i] : A[i * lda + kk];
      if (av == 0.0) continue;
      const double* brow = tb ? nullptr : B + kk * ldb;
      double* crow = C + i * n;
      if (!tb) {
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      } else {
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * B[j * ldb + kk];
      }
    }
  }
  return out;
}

double stable_sigmoid(double x) {
  if (x >= 0.0) {
    const double e = std::exp(-x);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

void broadcast_check(const Tensor& x, const Shape& target, BroadcastMode mode) {
  const std::size_t xn = x.size();
  const std::size_t tn = numel(target);
  switch (mode) {
    case BroadcastMode::scalar:
      if (xn != 1) shape_error(Prim::broadcast, "scalar mode requires a size-1 source");
      return;
    case BroadcastMode::rows: {
      if (x.rank() > target.size()) shape_error(Prim::broadcast, "source rank exceeds target");
      for (std::size_t i = 0; i < x.rank(); ++i) {
        if (x.shape[x.rank() - 1 - i] != target[target.size() - 1 - i]) {
          shape_error(Prim::broadcast, "source " + shape_str(x.shape) +
                                           " is not a suffix of target " + shape_str(target));
        }
      }
      if (tn % xn != 0) shape_error(Prim::broadcast, "target size not a multiple of source");
      return;
    }
    case BroadcastMode::cols: {
      if (x.rank() > target.size()) shape_error(Prim::broadcast, "source rank exceeds target");
      for (std::size_t i = 0; i < x.rank(); ++i) {
        if (x.shape[i] != target[i]) {
          shape_error(Prim::broadcast, "source " + shape_str(x.shape) +
                                           " is not a prefix of target " + shape_str(target));
        }
      }
      if (tn % xn != 0) shape_error(Prim::broadcast, "target size not a multiple of source");
      return;
    }
  }
}

// lead x mid x tail decomposition around `axis`
struct AxisSplit {
  std::size_t lead = 1, mid = 1, tail = 1;
};

AxisSplit split_at(const Shape& s, std::size_t axis) {
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.lead *= s[i];
  r.mid = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.tail *= s[i];
  return r;
}

Tensor forward(Prim op, std::span<const Tensor> in, const Attrs& attrs) {
  switch (op) {
    case Prim::leaf:
    case Prim::constant:
      return in[0];
    case Prim::add: {
      ew_check(op, in[0], in[1]);
      Tensor out = Tensor::zeros(in[0].shape);
      for (std::size_t i = 0; i < out.size(); ++i) out.values[i] = in[0].values[i] + in[1].values[i];
      return out;
    }
    case Prim::subtract: {
      ew_check(op, in[0], in[1]);
      Tensor out = Tensor::zeros(in[0].shape);
      for (std::size_t i = 0; i < out.size(); ++i) out.values[i] = in[0].values[i] - in[1].values[i];
      return out;
    }
    case Prim::multiply: {
      ew_check(op, in[0], in[1]);
      Tensor out = Tensor::zeros(in[0].shape);
      for (std::size_t i = 0; i < out.size(); ++i) out.values[i] = in[0].values[i] * in[1].values[i];
      return out;
    }
    case Prim::matmul:
      return matmul_forward(in[0], in[1], attrs.trans_a, attrs.trans_b);
    case Prim::sum: {
      double acc = 0.0;
      for (double v : in[0].values) acc += v;
      return Tensor::scalar_of(acc);
    }
    case Prim::mean: {
      if (in[0].size() == 0) shape_error(op, "mean of empty tensor");
      double acc = 0.0;
      for (double v : in[0].values) acc += v;
      return Tensor::scalar_of(acc / static_cast<double>(in[0].size()));
    }
    case Prim::square: {
      Tensor out = Tensor::zeros(in[0].shape);
      for (std::size_t i = 0; i < out.size(); ++i) out.values[i] = in[0].values[i] * in[0].values[i];
      return out;
    }
    case Prim::sqrt: {
      Tensor out = Tensor::zeros(in[0].shape);
      for (std::size_t i = 0; i < out.size(); ++i) {
        if (in[0].values[i] < 0.0) {
          throw std::domain_error("sqrt of negative input");
        }
        out.values[i] = std::sqrt(in[0].values[i]);
      }
      return out;
    }
    case Prim::exp: {
      Tensor out = Tensor::zeros(in[0].shape);
      for (std::size_t i = 0; i < out.size(); ++i) out.values[i] = std::exp(in[0].values[i]);
      return out;
    }
    case Prim::log: {
      Tensor out = Tensor::zeros(in[0].shape);
      for (std::size_t i = 0; i < out.size(); ++i) {
        if (in[0].values[i] < 0.0) {
          throw std::domain_error("log of negative input");
        }
        out.values[i] = std::log(in[0].values[i]);
      }
      return out;
    }
    case Prim::swish: {
      Tensor out = Tensor::zeros(in[0].shape);
      for (std::size_t i = 0; i < out.size(); ++i) {
        out.values[i] = in[0].values[i] * stable_sigmoid(in[0].values[i]);
      }
      return out;
    }
    case Prim::sigmoid: {
      Tensor out = Tensor::zeros(in[0].shape);
      for (std::size_t i = 0; i < out.size(); ++i) out.values[i] = stable_sigmoid(in[0].values[i]);
      return out;
    }
    case Prim::reciprocal: {
      Tensor out = Tensor::zeros(in[0].shape);
      for (std::size_t i = 0; i < out.size(); ++i) out.values[i] = 1.0 / in[0].values[i];
      return out;
    }
    case Prim::broadcast: {
      broadcast_check(in[0], attrs.target, attrs.mode);
      Tensor out = Tensor::zeros(attrs.target);
      const std::size_t xn = in[0].size();
      const std::size_t tn = out.size();
      switch (attrs.mode) {
        case BroadcastMode::scalar: {
          const double v = in[0].values[0];
          for (std::size_t i = 0; i < tn; ++i) out.values[i] = v;
          break;
        }
        case BroadcastMode::rows:
          for (std::size_t i = 0; i < tn; ++i) out.values[i] = in[0].values[i % xn];
          break;
        case BroadcastMode::cols: {
          const std::size_t tail = tn / xn;
          for (std::size_t i = 0; i < tn; ++i) out.values[i] = in[0].values[i / tail];
          break;
        }
      }
      return out;
    }
    case Prim::reshape: {
      if (numel(attrs.target) != in[0].size()) {
        shape_error(op, "cannot reshape " + shape_str(in[0].shape) + " to " +
                            shape_str(attrs.target));
      }
      Tensor out = in[0];
      out.shape = attrs.target;
      out.node = -1;
      out.graph_id = 0;
      return out;
    }
    case Prim::concat: {
      if (in.empty()) shape_error(op, "no inputs");
      const std::size_t axis = attrs.axis;
      if (axis >= in[0].rank()) shape_error(op, "axis out of range");
      Shape out_shape = in[0].shape;
      std::size_t total_mid = 0;
      for (const Tensor& t : in) {
        if (t.rank() != in[0].rank()) shape_error(op, "rank mismatch");
        for (std::size_t d = 0; d < t.rank(); ++d) {
          if (d != axis && t.shape[d] != in[0].shape[d]) {
            shape_error(op, "extents differ off the concat axis");
          }
        }
        total_mid += t.shape[axis];
      }
      out_shape[axis] = total_mid;
      Tensor out = Tensor::zeros(out_shape);
      const AxisSplit os = split_at(out_shape, axis);
      std::size_t mid_off = 0;
      for (const Tensor& t : in) {
        const AxisSplit ts = split_at(t.shape, axis);
        for (std::size_t l = 0; l < ts.lead; ++l) {
          const double* src = t.values.data() + l * ts.mid * ts.tail;
          double* dst = out.values.data() + (l * os.mid + mid_off) * os.tail;
          std::memcpy(dst, src, ts.mid * ts.tail * sizeof(double));
        }
        mid_off += ts.mid;
      }
      return out;
    }
    case Prim::slice: {
      const std::size_t axis = attrs.axis;
      if (axis >= in[0].rank()) shape_error(op, "axis out of range");
      if (attrs.begin + attrs.extent > in[0].shape[axis] || attrs.extent == 0) {
        shape_error(op, "range [" + std::to_string(attrs.begin) + ", " +
                            std::to_string(attrs.begin + attrs.extent) + ") out of bounds for axis " +
                            std::to_string(axis) + " of " + shape_str(in[0].shape));
      }
      Shape out_shape = in[0].shape;
      out_shape[axis] = attrs.extent;
      Tensor out = Tensor::zeros(out_shape);
      const AxisSplit is = split_at(in[0].shape, axis);
      for (std::size_t l = 0; l < is.lead; ++l) {
        const double* src = in[0].values.data() + (l * is.mid + attrs.begin) * is.tail;
        double* dst = out.values.data() + l * attrs.extent * is.tail;
        std::memcpy(dst, src, attrs.extent * is.tail * sizeof(double));
      }
      return out;
    }
    case Prim::avg_pool2x2: {
      const Tensor& x = in[0];
      if (x.rank() != 2 && x.rank() != 3) shape_error(op, "expected rank 2 or 3 grid");
      const std::size_t b = x.rank() == 3 ? x.shape[0] : 1;
      const std::size_t h = x.shape[x.rank() - 2];
      const std::size_t w = x.shape[x.rank() - 1];
      if (h % 2 != 0 || w % 2 != 0) {
        shape_error(op, "grid extents " + shape_str(x.shape) + " not divisible by 2");
      }
      Shape out_shape = x.shape;
      out_shape[x.rank() - 2] = h / 2;
      out_shape[x.rank() - 1] = w / 2;
      Tensor out = Tensor::zeros(out_shape);
      const std::size_t h2 = h / 2, w2 = w / 2;
      for (std::size_t bi = 0; bi < b; ++bi) {
        const double* src = x.values.data() + bi * h * w;
        double* dst = out.values.data() + bi * h2 * w2;
        for (std::size_t i = 0; i < h2; ++i) {
          for (std::size_t j = 0; j < w2; ++j) {
            const std::size_t r = 2 * i, c = 2 * j;
            dst[i * w2 + j] =
                (src[r * w + c] + src[r * w + c + 1] + src[(r + 1) * w + c] +
                 src[(r + 1) * w + c + 1]) /
                4.0;
          }
        }
      }
      return out;
    }
    case Prim::l2_norm_rows: {
      const Tensor& x = in[0];
      if (x.rank() != 2) shape_error(op, "expected rank-2 input");
      const std::size_t n = x.shape[0], d = x.shape[1];
      Tensor out = Tensor::zeros({n});
      for (std::size_t i = 0; i < n; ++i) {
        double acc = 0.0;
        const double* row = x.values.data() + i * d;
        for (std::size_t j = 0; j < d; ++j) acc += row[j] * row[j];
        out.values[i] = std::sqrt(acc);
      }
      return out;
    }
  }
  shape_error(op, "unhandled primitive");
}

std::size_t arity(Prim op) {
  switch (op) {
    case Prim::add:
    case Prim::subtract:
    case Prim::multiply:
    case Prim::matmul:
      return 2;
    case Prim::concat:
      return 0;  // variadic
    default:
      return 1;
  }
}

}  // namespace

Tensor apply(Prim op, std::span<const Tensor> inputs, const Attrs& attrs) {
  if (op == Prim::leaf || op == Prim::constant) {
    throw std::invalid_argument("leaf/constant are not applicable primitives");
  }
  const std::size_t want = arity(op);
  if (want != 0 && inputs.size() != want) {
    throw std::invalid_argument(std::string(prim_name(op)) + ": expected " +
                                std::to_string(want) + " inputs, got " +
                                std::to_string(inputs.size()));
  }
  Tensor out = forward(op, inputs, attrs);
  check_finite(op, out.values);

  Graph* g = active_graph();
  if (g && g_tracking) {
    bool any_tracked = false;
    for (const Tensor& t : inputs) {
      if (t.node >= 0 && t.graph_id == g->id()) {
        any_tracked = true;
        break;
      }
    }
    if (any_tracked) {
      std::vector<std::int64_t> parents;
      parents.reserve(inputs.size());
      for (const Tensor& t : inputs) {
        if (t.node >= 0 && t.graph_id == g->id()) {
          parents.push_back(t.node);
        } else {
          parents.push_back(g->append(Node{Prim::constant, t.shape, t.values, {}, {}}));
        }
      }
      out.graph_id = g->id();
      out.node = g->append(Node{op, out.shape, out.values, std::move(parents), attrs});
    }
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) { return apply(Prim::add, {{a, b}}); }
Tensor subtract(const Tensor& a, const Tensor& b) { return apply(Prim::subtract, {{a, b}}); }
Tensor multiply(const Tensor& a, const Tensor& b) { return apply(Prim::multiply, {{a, b}}); }

Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a, bool trans_b) {
  Attrs at;
  at.trans_a = trans_a;
  at.trans_b = trans_b;
  return apply(Prim::matmul, {{a, b}}, at);
}

Tensor sum(const Tensor& x) { return apply(Prim::sum, {{x}}); }
Tensor mean(const Tensor& x) { return apply(Prim::mean, {{x}}); }
Tensor square(const Tensor& x) { return apply(Prim::square, {{x}}); }
Tensor sqrt(const Tensor& x) { return apply(Prim::sqrt, {{x}}); }
Tensor exp(const Tensor& x) { return apply(Prim::exp, {{x}}); }
Tensor log(const Tensor& x) { return apply(Prim::log, {{x}}); }
Tensor swish(const Tensor& x) { return apply(Prim::swish, {{x}}); }
Tensor sigmoid(const Tensor& x) { return apply(Prim::sigmoid, {{x}}); }
Tensor reciprocal(const Tensor& x) { return apply(Prim::reciprocal, {{x}}); }

Tensor broadcast_to(const Tensor& x, Shape target, BroadcastMode mode) {
  Attrs at;
  at.target = std::move(target);
  at.mode = mode;
  return apply(Prim::broadcast, {{x}}, at);
}

Tensor reshape(const Tensor& x, Shape target) {
  Attrs at;
  at.target = std::move(target);
  return apply(Prim::reshape, {{x}}, at);
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  Attrs at;
  at.axis = axis;
  return apply(Prim::concat, parts, at);
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t extent) {
  Attrs at;
  at.axis = axis;
  at.begin = begin;
  at.extent = extent;
  return apply(Prim::slice, {{x}}, at);
}

Tensor avg_pool2x2(const Tensor& x) { return apply(Prim::avg_pool2x2, {{x}}); }
Tensor l2_norm_rows(const Tensor& x) { return apply(Prim::l2_norm_rows, {{x}}); }

Tensor scale(const Tensor& x, double c) {
  return multiply(x, broadcast_to(Tensor::scalar_of(c), x.shape, BroadcastMode::scalar));
}

// ---- backward -------------------------------------------------------------

namespace {

Tensor node_tensor(const Graph& g, std::int64_t id) {
  const Node& n = g.at(id);
  Tensor t(n.shape, n.values);
  t.node = id;
  t.graph_id = g.id();
  return t;
}

Tensor ones_like_shape(const Shape& s) { return Tensor::full(s, 1.0); }

// Adjoint contribution of `node` (id `self`) to parent `pi`, given the
// incoming adjoint g. Expressed entirely via registered primitives so the
// result is differentiable when tracking is on.
Tensor vjp(const Graph& graph, const Node& node, std::int64_t self, std::size_t pi,
           const Tensor& g) {
  auto parent = [&](std::size_t i) { return node_tensor(graph, node.parents[i]); };
  auto out_tensor = [&] { return node_tensor(graph, self); };
  switch (node.op) {
    case Prim::add:
      return g;
    case Prim::subtract:
      return pi == 0 ? g : scale(g, -1.0);
    case Prim::multiply:
      return multiply(g, parent(pi == 0 ? 1 : 0));
    case Prim::matmul: {
      const Tensor a = parent(0), b = parent(1);
      const bool ta = node.attrs.trans_a, tb = node.attrs.trans_b;
      if (pi == 0) {
        if (!ta && !tb) return matmul(g, b, false, true);
        if (ta && !tb) return matmul(b, g, false, true);
        if (!ta && tb) return matmul(g, b, false, false);
        return matmul(b, g, true, true);
      }
      if (!ta && !tb) return matmul(a, g, true, false);
      if (ta && !tb) return matmul(a, g, false, false);
      if (!ta && tb) return matmul(g, a, true, false);
      return matmul(g, a, true, true);
    }
    case Prim::sum:
      return broadcast_to(g, graph.at(node.parents[0]).shape, BroadcastMode::scalar);
    case Prim::mean: {
      const Shape& ps = graph.at(node.parents[0]).shape;
      return scale(broadcast_to(g, ps, BroadcastMode::scalar),
                   1.0 / static_cast<double>(numel(ps)));
    }
    case Prim::square:
      return scale(multiply(g, parent(0)), 2.0);
    case Prim::sqrt:
      return scale(multiply(g, reciprocal(out_tensor())), 0.5);
    case Prim::exp:
      return multiply(g, out_tensor());
    case Prim::log:
      return multiply(g, reciprocal(parent(0)));
    case Prim::swish: {
      const Tensor x = parent(0);
      const Tensor s = sigmoid(x);
      const Tensor one = ones_like_shape(x.shape);
      // d/dx x*sig(x) = sig(x) + x*sig(x)*(1-sig(x))
      return multiply(g, add(s, multiply(x, multiply(s, subtract(one, s)))));
    }
    case Prim::sigmoid: {
      const Tensor y = out_tensor();
      return multiply(g, multiply(y, subtract(ones_like_shape(y.shape), y)));
    }
    case Prim::reciprocal: {
      const Tensor y = out_tensor();
      return scale(multiply(g, square(y)), -1.0);
    }
    case Prim::broadcast: {
      const Shape& ps = graph.at(node.parents[0]).shape;
      const std::size_t pn = numel(ps);
      const std::size_t tn = numel(node.shape);
      switch (node.attrs.mode) {
        case BroadcastMode::scalar:
          return reshape(sum(g), ps);
        case BroadcastMode::rows: {
          const std::size_t lead = tn / pn;
          const Tensor g2 = reshape(g, {lead, pn});
          return reshape(matmul(ones_like_shape({1, lead}), g2), ps);
        }
        case BroadcastMode::cols: {
          const std::size_t tail = tn / pn;
          const Tensor g2 = reshape(g, {pn, tail});
          return reshape(matmul(g2, ones_like_shape({tail, 1})), ps);
        }
      }
      shape_error(Prim::broadcast, "unhandled mode");
    }
    case Prim::reshape:
      return reshape(g, graph.at(node.parents[0]).shape);
    case Prim::concat: {
      std::size_t offset = 0;
      for (std::size_t i = 0; i < pi; ++i) offset += graph.at(node.parents[i]).shape[node.attrs.axis];
      const std::size_t extent = graph.at(node.parents[pi]).shape[node.attrs.axis];
      return slice(g, node.attrs.axis, offset, extent);
    }
    case Prim::slice: {
      const Shape& ps = graph.at(node.parents[0]).shape;
      const std::size_t axis = node.attrs.axis;
      std::vector<Tensor> parts;
      if (node.attrs.begin > 0) {
        Shape s = ps;
        s[axis] = node.attrs.begin;
        parts.push_back(Tensor::zeros(s));
      }
      parts.push_back(g);
      const std::size_t after = ps[axis] - node.attrs.begin - node.attrs.extent;
      if (after > 0) {
        Shape s = ps;
        s[axis] = after;
        parts.push_back(Tensor::zeros(s));
      }
      if (parts.size() == 1) return reshape(g, ps);
      return concat(parts, axis);
    }
    case Prim::avg_pool2x2: {
      // un-pool: duplicate rows, then duplicate columns, each at weight 1/2
      const Shape& ps = graph.at(node.parents[0]).shape;
      const std::size_t rank = ps.size();
      const std::size_t b = rank == 3 ? ps[0] : 1;
      const std::size_t h = ps[rank - 2], w = ps[rank - 1];
      const std::size_t h2 = h / 2, w2 = w / 2;
      Tensor stack = Tensor::zeros({2 * w2, w2});  // 0.5*[I; I]
      for (std::size_t j = 0; j < w2; ++j) {
        stack.values[j * w2 + j] = 0.5;
        stack.values[(w2 + j) * w2 + j] = 0.5;
      }
      const Tensor gh = reshape(matmul(reshape(g, {b * h2, w2}), stack, false, true),
                                {b * h * w2, 1});
      Tensor half_row = Tensor::full({1, 2}, 0.5);
      const Tensor gw = matmul(gh, half_row);
      return reshape(gw, ps);
    }
    case Prim::l2_norm_rows: {
      const Tensor x = parent(0);
      const Tensor inv = reciprocal(out_tensor());
      const Tensor gscaled = broadcast_to(multiply(g, inv), x.shape, BroadcastMode::cols);
      return multiply(gscaled, x);
    }
    case Prim::leaf:
    case Prim::constant:
      break;
  }
  throw std::logic_error("vjp on terminal node");
}

}  // namespace

std::vector<Tensor> grad(const Tensor& output, std::span<const Tensor> wrt, bool retain_graph) {
  Graph* g = active_graph();
  if (!g) throw std::logic_error("grad() requires an active graph scope");
  if (output.size() != 1) {
    throw std::invalid_argument("grad: output must be scalar, got " + shape_str(output.shape));
  }
  for (const Tensor& t : wrt) {
    if (!(t.node >= 0 && t.graph_id == g->id())) {
      throw std::invalid_argument("grad: wrt tensor not in graph");
    }
  }
  if (!output.tracked()) {
    // a fully detached output is a constant; its gradient is zero
    std::vector<Tensor> zeros;
    zeros.reserve(wrt.size());
    for (const Tensor& t : wrt) zeros.push_back(Tensor::zeros(t.shape));
    return zeros;
  }

  const std::int64_t root = output.node;
  std::vector<std::optional<Tensor>> adjoint(static_cast<std::size_t>(root) + 1);
  adjoint[static_cast<std::size_t>(root)] = Tensor::full(output.shape, 1.0);

  {
    TrackingSet ts(retain_graph);
    for (std::int64_t i = root; i >= 0; --i) {
      auto& a = adjoint[static_cast<std::size_t>(i)];
      if (!a.has_value()) continue;
      const Node& node = g->at(i);
      if (node.parents.empty()) continue;
      for (std::size_t pi = 0; pi < node.parents.size(); ++pi) {
        const std::int64_t p = node.parents[pi];
        if (g->at(p).op == Prim::constant) continue;  // adjoint never consumed
        Tensor contrib = vjp(*g, node, i, pi, *a);
        auto& pa = adjoint[static_cast<std::size_t>(p)];
        pa = pa.has_value() ? add(*pa, contrib) : std::move(contrib);
      }
    }
  }

  std::vector<Tensor> result;
  result.reserve(wrt.size());
  for (const Tensor& t : wrt) {
    if (t.node <= root && adjoint[static_cast<std::size_t>(t.node)].has_value()) {
      result.push_back(*adjoint[static_cast<std::size_t>(t.node)]);
    } else {
      result.push_back(Tensor::zeros(t.shape));  // no path: zero gradient
    }
  }
  return result;
}

}  // namespace ebmforge::ad
