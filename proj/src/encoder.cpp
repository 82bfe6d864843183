// SPDX-License-Identifier: Apache-2.0
#include "logah/encoder.hpp"

#include <algorithm>
#include <cmath>

#include "logah/errors.hpp"

namespace logah::encoder {

namespace {

ad::Var normal(Shape shape, double stddev, std::mt19937_64& rng) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& v : t.data) v = dist(rng);
  return ad::leaf(std::move(t));
}

ad::Var fan_in_normal(std::int64_t out, std::int64_t in, std::mt19937_64& rng) {
  return normal(Shape{out, in}, 1.0 / std::sqrt(static_cast<double>(in)), rng);
}

ad::Var filled(std::int64_t n, double v) { return ad::leaf(Tensor(Shape{n}, v)); }

void check_finite(const ad::Var& v, std::int64_t layer, const char* where) {
  if (!all_finite(v->value.data)) {
    throw NumericError("non-finite encoder activation at layer " + std::to_string(layer) + " (" + where + ")");
  }
}

}  // namespace

void EncoderConfig::validate() const {
  if (d < 1 || heads < 1 || d % heads != 0) {
    throw ValidationError("encoder width " + std::to_string(d) + " must be a positive multiple of heads " +
                          std::to_string(heads));
  }
  if (layers < 0) throw ValidationError("encoder layer count must be non-negative");
  if (max_distance < 1 || max_degree < 1 || ffn_mult < 1) throw ValidationError("encoder sizes must be positive");
}

EncoderWeights init_encoder(const EncoderConfig& cfg, std::mt19937_64& rng) {
  cfg.validate();
  const auto d = cfg.d;
  const auto f = cfg.ffn_mult * d;
  EncoderWeights w;
  w.op_table = normal(Shape{graphir::kNumOpTypes, d}, 1.0, rng);
  w.degree_table = normal(Shape{cfg.max_degree + 1, d}, 1.0, rng);
  w.dist_bias = ad::leaf(Tensor(Shape{cfg.heads, cfg.max_distance + 2}, 0.0));
  for (std::int64_t l = 0; l < cfg.layers; ++l) {
    EncoderLayer L;
    L.qkv_w = fan_in_normal(3 * d, d, rng);
    L.qkv_b = filled(3 * d, 0.0);
    L.out_w = fan_in_normal(d, d, rng);
    L.out_b = filled(d, 0.0);
    L.ln1_g = filled(d, 1.0);
    L.ln1_b = filled(d, 0.0);
    L.ffn1_w = fan_in_normal(f, d, rng);
    L.ffn1_b = filled(f, 0.0);
    L.ffn2_w = fan_in_normal(d, f, rng);
    L.ffn2_b = filled(d, 0.0);
    L.ln2_g = filled(d, 1.0);
    L.ln2_b = filled(d, 0.0);
    w.layers.push_back(std::move(L));
  }
  return w;
}

std::vector<std::pair<std::string, ad::Var>> named_parameters(const EncoderWeights& w) {
  std::vector<std::pair<std::string, ad::Var>> out{
      {"encoder.op_table", w.op_table}, {"encoder.degree_table", w.degree_table}, {"encoder.dist_bias", w.dist_bias}};
  for (std::size_t l = 0; l < w.layers.size(); ++l) {
    const auto& L = w.layers[l];
    const std::string p = "encoder.layers." + std::to_string(l) + ".";
    out.insert(out.end(), {{p + "qkv.weight", L.qkv_w},
                           {p + "qkv.bias", L.qkv_b},
                           {p + "out.weight", L.out_w},
                           {p + "out.bias", L.out_b},
                           {p + "ln_1.weight", L.ln1_g},
                           {p + "ln_1.bias", L.ln1_b},
                           {p + "ffn.fc1.weight", L.ffn1_w},
                           {p + "ffn.fc1.bias", L.ffn1_b},
                           {p + "ffn.fc2.weight", L.ffn2_w},
                           {p + "ffn.fc2.bias", L.ffn2_b},
                           {p + "ln_2.weight", L.ln2_g},
                           {p + "ln_2.bias", L.ln2_b}});
  }
  return out;
}

std::int64_t scalar_count(const EncoderWeights& w) {
  std::int64_t n = 0;
  for (const auto& [name, v] : named_parameters(w)) n += v->value.numel();
  return n;
}

NodeFeatureMatrix embed_nodes(const graphir::CompGraph& graph, const ad::Var& table) {
  const auto d = table->value.cols();
  if (table->value.rows() != graphir::kNumOpTypes) {
    throw VocabularyError("embedding table has " + std::to_string(table->value.rows()) + " rows, vocabulary has " +
                          std::to_string(graphir::kNumOpTypes));
  }
  const auto n = static_cast<std::int64_t>(graph.nodes.size());
  std::vector<std::int64_t> idx(static_cast<std::size_t>(n * d));
  for (std::int64_t i = 0; i < n; ++i) {
    const auto op = static_cast<std::int64_t>(graph.nodes[static_cast<std::size_t>(i)].op);
    if (op < 0 || op >= graphir::kNumOpTypes) throw VocabularyError("node " + std::to_string(i) + " has an unknown op");
    for (std::int64_t c = 0; c < d; ++c) idx[static_cast<std::size_t>(i * d + c)] = op * d + c;
  }
  return {ad::gather(table, std::move(idx), Shape{n, d}), 1};
}

NodeFeatureMatrix add_degree_embedding(const NodeFeatureMatrix& features, const graphir::CompGraph& graph,
                                       const EncoderWeights& weights, const EncoderConfig& cfg) {
  const auto deg = graphir::degrees(graph);
  const auto n = static_cast<std::int64_t>(deg.size());
  const auto d = cfg.d;
  std::vector<std::int64_t> idx(static_cast<std::size_t>(n * d));
  for (std::int64_t i = 0; i < n; ++i) {
    const auto k = std::min(deg[static_cast<std::size_t>(i)], cfg.max_degree);
    for (std::int64_t c = 0; c < d; ++c) idx[static_cast<std::size_t>(i * d + c)] = k * d + c;
  }
  auto emb = ad::gather(weights.degree_table, std::move(idx), Shape{n, d});
  return {ad::add(features.values, emb), features.layer_index};
}

std::vector<std::int64_t> distance_bias_index(const graphir::DistanceMatrix& dist, const EncoderConfig& cfg) {
  const auto n = dist.n;
  const auto width = cfg.max_distance + 2;
  std::vector<std::int64_t> idx(static_cast<std::size_t>(cfg.heads * n * n));
  for (std::int64_t h = 0; h < cfg.heads; ++h) {
    for (std::int64_t e = 0; e < n * n; ++e) {
      const auto hop = dist.hops[static_cast<std::size_t>(e)];
      const std::int64_t bucket =
          hop == graphir::kUnreachable ? cfg.max_distance + 1 : std::min<std::int64_t>(hop, cfg.max_distance);
      idx[static_cast<std::size_t>(h * n * n + e)] = h * width + bucket;
    }
  }
  return idx;
}

NodeFeatureMatrix graphormer_forward(const NodeFeatureMatrix& features, const graphir::DistanceMatrix& dist,
                                     const EncoderWeights& weights, const EncoderConfig& cfg) {
  if (features.width() != cfg.d) {
    throw ContractError("feature width " + std::to_string(features.width()) + " does not match encoder width " +
                        std::to_string(cfg.d));
  }
  if (features.rows() != dist.n) throw ContractError("distance matrix does not match the feature rows");
  const auto n = features.rows();
  ad::Var x = features.values;
  if (weights.layers.empty()) return {x, 0};

  const ad::Var bias = ad::gather(weights.dist_bias, distance_bias_index(dist, cfg), Shape{cfg.heads, n, n});
  const kernels::AttentionShape shape{1, n, cfg.heads, cfg.d, false};
  std::int64_t layer = 0;
  for (const auto& L : weights.layers) {
    ++layer;
    auto qkv = ad::linear(x, L.qkv_w, L.qkv_b);
    auto att = ad::linear(ad::attention(qkv, shape, bias), L.out_w, L.out_b);
    x = ad::layer_norm(ad::add(x, att), L.ln1_g, L.ln1_b);
    check_finite(x, layer, "attention");
    auto ffn = ad::linear(ad::gelu(ad::linear(x, L.ffn1_w, L.ffn1_b)), L.ffn2_w, L.ffn2_b);
    x = ad::layer_norm(ad::add(x, ffn), L.ln2_g, L.ln2_b);
    check_finite(x, layer, "feed-forward");
  }
  return {x, layer};
}

NodeFeatureMatrix encode(const graphir::CompGraph& graph, const EncoderWeights& weights, const EncoderConfig& cfg) {
  auto h = add_degree_embedding(embed_nodes(graph, weights.op_table), graph, weights, cfg);
  return graphormer_forward(h, graphir::shortest_path_distances(graph), weights, cfg);
}

}  // namespace logah::encoder
