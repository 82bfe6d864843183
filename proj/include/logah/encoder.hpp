// SPDX-License-Identifier: Apache-2.0
//
// Graph encoder: one-hot op embedding plus degree embedding, followed by
// post-norm Graphormer layers whose attention scores get a learned scalar
// bias per (head, clipped shortest-path distance).
#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "logah/autodiff.hpp"
#include "logah/graphir.hpp"

namespace logah::encoder {

struct EncoderConfig {
  std::int64_t d = 64;
  std::int64_t layers = 3;
  std::int64_t heads = 8;
  std::int64_t max_distance = 8;
  std::int64_t max_degree = 16;
  std::int64_t ffn_mult = 4;

  void validate() const;
  bool operator==(const EncoderConfig&) const = default;
};

struct EncoderLayer {
  ad::Var qkv_w, qkv_b;      // [3d, d], [3d]
  ad::Var out_w, out_b;      // [d, d], [d]
  ad::Var ln1_g, ln1_b;      // [d]
  ad::Var ffn1_w, ffn1_b;    // [ffn, d], [ffn]
  ad::Var ffn2_w, ffn2_b;    // [d, ffn], [d]
  ad::Var ln2_g, ln2_b;      // [d]
};

struct EncoderWeights {
  ad::Var op_table;      // [kNumOpTypes, d]
  ad::Var degree_table;  // [max_degree + 1, d]
  ad::Var dist_bias;     // [heads, max_distance + 2]; last column = unreachable
  std::vector<EncoderLayer> layers;
};

struct NodeFeatureMatrix {
  ad::Var values;  // [|V|, d]
  std::int64_t layer_index = 0;

  std::int64_t rows() const { return values->value.rows(); }
  std::int64_t width() const { return values->value.cols(); }
};

// Fan-in scaled normals for matrices, N(0, 1) embedding rows, zero biases,
// unit norm scales.
EncoderWeights init_encoder(const EncoderConfig& cfg, std::mt19937_64& rng);

std::int64_t scalar_count(const EncoderWeights& w);

// Row i = table[op(i)]; layer_index = 1.
NodeFeatureMatrix embed_nodes(const graphir::CompGraph& graph, const ad::Var& table);

// Adds the (in + out)-degree embedding, degrees clipped to max_degree.
NodeFeatureMatrix add_degree_embedding(const NodeFeatureMatrix& features, const graphir::CompGraph& graph,
                                       const EncoderWeights& weights, const EncoderConfig& cfg);

// [heads, |V|, |V|] bias index: h * (max_distance + 2) + clipped distance.
std::vector<std::int64_t> distance_bias_index(const graphir::DistanceMatrix& dist, const EncoderConfig& cfg);

// cfg.layers rounds of attention + FFN with residuals and post-norms.
// Throws NumericError naming the layer when activations stop being finite.
NodeFeatureMatrix graphormer_forward(const NodeFeatureMatrix& features, const graphir::DistanceMatrix& dist,
                                     const EncoderWeights& weights, const EncoderConfig& cfg);

// embed -> degree -> graphormer.
NodeFeatureMatrix encode(const graphir::CompGraph& graph, const EncoderWeights& weights, const EncoderConfig& cfg);

// Named views of every learnable tensor, in a fixed order.
std::vector<std::pair<std::string, ad::Var>> named_parameters(const EncoderWeights& w);

}  // namespace logah::encoder
