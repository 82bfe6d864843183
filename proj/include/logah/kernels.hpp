// SPDX-License-Identifier: Apache-2.0
//
// Data-parallel inner loops. Every kernel has a plain serial reference in
// `kernels::serial` and an OpenMP version at namespace scope. Both accumulate
// each output element in the same order, so their results are bit-identical;
// the tests rely on that.
#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace logah::kernels {

// C = beta * C + op(A) * op(B), all row-major and contiguous.
// op(A) is m x k; op(B) is k x n. With trans_a, A is stored k x m.
// With trans_b, B is stored n x k.
void gemm(bool trans_a, bool trans_b, std::int64_t m, std::int64_t n, std::int64_t k, const double* a,
          const double* b, double beta, double* c);

// Multi-head scaled dot-product attention over a packed qkv buffer.
//   qkv:   [batch * seq, 3 * width], columns [q | k | v], heads split evenly.
//   bias:  optional [heads, seq, seq] additive score bias (shared by batch).
//   out:   [batch * seq, width]
//   probs: [batch, heads, seq, seq] softmax weights, kept for the backward pass.
struct AttentionShape {
  std::int64_t batch = 1;
  std::int64_t seq = 1;
  std::int64_t heads = 1;
  std::int64_t width = 1;
  bool causal = false;
};

void attention_forward(const AttentionShape& s, const double* qkv, const double* bias, double* out, double* probs);

// Gradients of attention. d_bias may be null; when present it is accumulated
// (+=) and summed over the batch.
void attention_backward(const AttentionShape& s, const double* qkv, const double* probs, const double* d_out,
                        double* d_qkv, double* d_bias);

// 1 - |<u,v>| / (|u| |v|) for every pair i < j of equal-length rows, in
// (0,1), (0,2), ..., (1,2), ... order.
std::vector<double> pairwise_abs_cosine_distance(std::span<const std::span<const double>> rows);

int max_threads();

namespace serial {

void gemm(bool trans_a, bool trans_b, std::int64_t m, std::int64_t n, std::int64_t k, const double* a,
          const double* b, double beta, double* c);
void attention_forward(const AttentionShape& s, const double* qkv, const double* bias, double* out, double* probs);
void attention_backward(const AttentionShape& s, const double* qkv, const double* probs, const double* d_out,
                        double* d_qkv, double* d_bias);
std::vector<double> pairwise_abs_cosine_distance(std::span<const std::span<const double>> rows);

}  // namespace serial

}  // namespace logah::kernels
