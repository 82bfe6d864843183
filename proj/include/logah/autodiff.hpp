// SPDX-License-Identifier: Apache-2.0
//
// Small tensor-level reverse-mode differentiation. A Var is a node in a
// dynamically built expression graph; backward() walks it in reverse
// topological order. All ops are 2-D unless noted (a 1-D tensor of length n
// behaves as a 1 x n row).
#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <vector>

#include "logah/kernels.hpp"
#include "logah/tensor.hpp"

namespace logah::ad {

struct Node {
  Tensor value;
  Tensor grad;  // empty until first accumulation
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward_fn;
  bool requires_grad = false;

  // Adds g into grad, allocating zeros on first use.
  void accumulate(std::span<const double> g);
  bool has_grad() const { return !grad.data.empty(); }
};

using Var = std::shared_ptr<Node>;

Var leaf(Tensor value, bool requires_grad = true);
Var constant(Tensor value);

// Wraps a value computed outside this file as a graph node. `fn` receives the
// node once its gradient is known and must accumulate into its inputs.
Var custom(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> fn);

// Seeds d(root)/d(root) = 1 for a scalar root and propagates.
void backward(const Var& root);

// --- linear algebra -------------------------------------------------------
// op(a) * op(b); see kernels::gemm for the transpose convention.
Var matmul(const Var& a, const Var& b, bool trans_a = false, bool trans_b = false);
// x * w^T + bias, the torch Linear convention (w is [out, in]).
Var linear(const Var& x, const Var& w, const Var& bias);
Var linear(const Var& x, const Var& w);

// --- elementwise ------------------------------------------------------------
Var add(const Var& a, const Var& b);
// [m, n] + [n] broadcast over rows.
Var add_row(const Var& a, const Var& row);
Var scale(const Var& a, double s);
Var relu(const Var& a);
Var gelu(const Var& a);  // tanh approximation
// offset + out_scale * tanh(in_scale * a)
Var tanh_affine(const Var& a, double in_scale, double out_scale, double offset);
// a * target / sqrt(mean(a^2) + eps)
Var rms_normalize(const Var& a, double target, double eps = 1e-12);

// --- shape ----------------------------------------------------------------
Var reshape(const Var& a, Shape shape);
// out.flat[i] = a.flat[index[i]]; gradients scatter-add back.
Var gather(const Var& a, std::vector<std::int64_t> index, Shape shape);
Var transpose(const Var& a);
Var concat_rows(const std::vector<Var>& parts);

// --- normalization & attention ------------------------------------------------
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);
Var softmax_rows(const Var& x);
// Packed-qkv multi-head attention; bias is optional [heads, seq, seq].
Var attention(const Var& qkv, const kernels::AttentionShape& shape, const Var& bias = nullptr);

// --- losses ----------------------------------------------------------------
// Mean cross-entropy of [m, c] logits against class labels.
Var cross_entropy(const Var& logits, std::span<const std::int64_t> labels);
Var sum_squares(const Var& a);
Var sum(const Var& a);

}  // namespace logah::ad
