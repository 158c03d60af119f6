// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>

#include "ebmforge/tensor.hpp"

namespace ebmforge::ad {

// Applies a primitive. The forward value is always computed; a node is
// appended to the active graph iff tracking is on and at least one input is
// tracked there (untracked inputs are materialized as constant nodes).
// Every primitive's adjoint rule is itself composed of these primitives,
// which is what makes grad-of-grad work without special cases.
Tensor apply(Prim op, std::span<const Tensor> inputs, const Attrs& attrs = {});

Tensor add(const Tensor& a, const Tensor& b);
Tensor subtract(const Tensor& a, const Tensor& b);
Tensor multiply(const Tensor& a, const Tensor& b);
Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a = false, bool trans_b = false);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor square(const Tensor& x);
Tensor sqrt(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor swish(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor reciprocal(const Tensor& x);
Tensor broadcast_to(const Tensor& x, Shape target, BroadcastMode mode);
Tensor reshape(const Tensor& x, Shape target);
Tensor concat(std::span<const Tensor> parts, std::size_t axis);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t extent);
Tensor avg_pool2x2(const Tensor& x);
Tensor l2_norm_rows(const Tensor& x);

// multiply by a scalar constant (composite, not a primitive)
Tensor scale(const Tensor& x, double c);

// d(output)/d(wrt_i) for a scalar output. With retain_graph the returned
// tensors are themselves tracked, so a second grad through them is valid.
std::vector<Tensor> grad(const Tensor& output, std::span<const Tensor> wrt,
                         bool retain_graph = false);

}  // namespace ebmforge::ad
