// SPDX-License-Identifier: Apache-2.0
//
// Low-rank parameter decoder.
//
// Final node features H [|V|, d] pass through a bias-free MLP
//
//     x = relu(relu(H M1) M2) M3                      [|V|, 2r^2]
//     x = relu(reshape(x, [|V|, 2r, r])) M4           [|V|, 2r, K]
//
// and each node's (2r, K) block is reread row-major as a (2K, r) block (a
// memory reinterpretation, not a transpose). Its first K rows are A (K x r);
// the transpose of its last K rows is B (r x K). A target tensor with folded
// dims (C_out*h) x (C_in*w) is realized as A[:C_out*h, :] * B[:, :C_in*w].
//
// Only those prefixes of A and B are ever needed, so prediction computes just
// the corresponding slices of the (2r, K) block instead of the full product.
#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "logah/autodiff.hpp"
#include "logah/encoder.hpp"
#include "logah/graphir.hpp"
#include "logah/param_set.hpp"

namespace logah::decoder {

struct DecoderConfig {
  std::int64_t d = 64;
  std::int64_t r = 32;
  std::int64_t K = 2048 * 16;  // max mask
  std::int64_t num_classes = 100;
  std::int64_t chunk_nodes = 16;  // nodes decoded per parallel chunk during prediction
  bool allow_fallback = true;

  void validate() const;
  bool operator==(const DecoderConfig&) const = default;
};

// x @ M1 -> ... -> M4, no biases: 4d^2 + 32d^2 + 8d*2r^2 + r*K scalars.
struct DecoderWeights {
  ad::Var m1;  // [d, 4d]
  ad::Var m2;  // [4d, 8d]
  ad::Var m3;  // [8d, 2r^2]
  ad::Var m4;  // [r, K]

  std::int64_t scalar_count() const;
};

DecoderWeights init_decoder(const DecoderConfig& cfg, std::mt19937_64& rng);
std::vector<std::pair<std::string, ad::Var>> named_parameters(const DecoderWeights& w);

struct LowRankFactors {
  Tensor a;  // [K, r]
  Tensor b;  // [r, K]
};

// (c_out, c_in, k_out, k_in)
using MaxShape = std::array<std::int64_t, 4>;

// Full factors for every feature row. Memory is |V| * 2K * r doubles; use
// predict_all for large K.
std::vector<LowRankFactors> decode_factors(const Tensor& features, const DecoderWeights& weights,
                                           const DecoderConfig& cfg);

// The (2r, r) block of each node after M1..M3 (before the ramp and M4).
Tensor mlp_blocks(const Tensor& features, const DecoderWeights& weights, const DecoderConfig& cfg);

// W = A[:c_out*k_out] B[:, :c_in*k_in] laid out for n_dim:
//   4 -> (c_out, c_in, k_out, k_in) with W[co,ci,ko,ki] = AB[co*k_out+ko, ci*k_in+ki]
//   2 -> (c_out*k_out, c_in*k_in) as is
//   1 -> (c_out), requires c_in = k_out = k_in = 1
// Throws OversizeError when a folded dim exceeds K and ContractError for a
// degenerate n_dim = 1 request.
Tensor realize_tensor(const LowRankFactors& factors, const MaxShape& max_shape, int n_dim);

// Index of (c_out*k_out) x (c_in*k_in) matrix element feeding each element of
// the n_dim = 4 layout.
std::vector<std::int64_t> conv_layout_index(const MaxShape& s);

// Post-scaling applied to every realized weight: 1 / sqrt(fan_in) for rank
// >= 2 tensors (fan_in = C_in * h * w), 1 for vectors.
double post_scale(const graphir::TargetShape& t);

// Final map from a realized tensor to parameter values. Matrices are brought
// to unit RMS and then multiplied by post_scale; norm scales become
// 1 + tanh(w / 4) and biases/shifts tanh(w / 5). Other vectors pass through.
struct OutputMap {
  bool squash = false;
  bool normalize = false;
  double in_scale = 1.0;
  double out_scale = 1.0;
  double offset = 0.0;
  double apply(double w) const;
};
OutputMap output_map(graphir::OpType op, const graphir::TargetShape& t);
inline constexpr double kRmsEps = 1e-12;
// 1 / sqrt(mean(w^2) + kRmsEps)
double rms_factor(std::span<const double> w);

bool fits(const graphir::TargetShape& t, std::int64_t K);

// Deterministic fan-in scaled normal init for a tensor the decoder cannot
// cover.
std::vector<float> fallback_values(const graphir::TargetShape& t, const std::string& name, std::uint64_t seed);

// Realizes every learnable node of `graph` at its target shape. Nodes are
// decoded in parallel chunks of cfg.chunk_nodes; oversize tensors go to the
// fallback report (or throw OversizeError when fallback is disabled).
params::PredictedParameterSet predict_all(const graphir::CompGraph& graph, const encoder::NodeFeatureMatrix& features,
                                          const DecoderWeights& weights, const DecoderConfig& cfg,
                                          std::uint64_t fallback_seed = 0);

// Differentiable counterpart of predict_all used for training: the returned
// tensors are graph nodes whose gradients flow back into the decoder and the
// encoder. Fallback tensors are constants.
struct PredictedVars {
  std::unordered_map<std::string, ad::Var> tensors;
  std::vector<std::string> predicted;  // node order
  std::vector<std::string> fallback;
};

PredictedVars predict_vars(const graphir::CompGraph& graph, const encoder::NodeFeatureMatrix& features,
                           const DecoderWeights& weights, const DecoderConfig& cfg, std::uint64_t fallback_seed = 0);

// GHN-3 style baseline: one d x d x 16 x 16 block per node, tiled along the
// channel axes and sliced to the target.
struct Ghn3BaselineWeights {
  std::int64_t d = 0;
  Tensor m1;       // [d, 4d]
  Tensor m2;       // [4d, 8d]
  Tensor m3;       // [8d, d*d]
  Tensor spatial;  // [d, 16*16]
};

inline constexpr std::int64_t kBaselineFace = 16;

Ghn3BaselineWeights init_ghn3_baseline(std::int64_t d, std::mt19937_64& rng);

// The node's predicted (d, d, 16, 16) block.
Tensor ghn3_block(std::span<const double> feature_row, const Ghn3BaselineWeights& w);

// out[co, ci, y, x] = block[co % d, ci % d, y, x]; returned in the rank of
// target (1, 2 or 4).
Tensor ghn3_decode_baseline(std::span<const double> feature_row, const Ghn3BaselineWeights& w,
                            const graphir::TargetShape& target);

}  // namespace logah::decoder
