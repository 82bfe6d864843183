// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "logah/encoder.hpp"
#include "logah/errors.hpp"

using namespace logah;
using namespace logah::encoder;

namespace {
graphir::CompGraph small_graph() {
  archspace::ViTSpec s{2, 2, 16, 64, 4, 8, 10, 3};
  return graphir::build_graph(s, "small");
}

graphir::CompGraph permuted(const graphir::CompGraph& g, const std::vector<std::int64_t>& perm) {
  // perm[old] = new
  graphir::CompGraph out = g;
  for (std::size_t i = 0; i < g.nodes.size(); ++i) {
    auto n = g.nodes[i];
    n.id = perm[i];
    out.nodes[static_cast<std::size_t>(perm[i])] = n;
  }
  for (auto& [a, b] : out.edges) {
    a = perm[static_cast<std::size_t>(a)];
    b = perm[static_cast<std::size_t>(b)];
  }
  return out;
}

EncoderConfig cfg_with(std::int64_t layers) {
  EncoderConfig c;
  c.d = 16;
  c.layers = layers;
  c.heads = 4;
  return c;
}
}  // namespace

TEST_CASE("embedding rows are table rows (one-hot product)") {
  const auto g = small_graph();
  const auto cfg = cfg_with(1);
  std::mt19937_64 rng(1);
  const auto w = init_encoder(cfg, rng);
  const auto f = embed_nodes(g, w.op_table);
  CHECK(f.layer_index == 1);
  const auto& table = w.op_table->value;
  for (std::size_t i = 0; i < g.nodes.size(); ++i) {
    // one-hot(op) x table, summed explicitly
    for (std::int64_t c = 0; c < cfg.d; ++c) {
      double s = 0.0;
      for (int k = 0; k < graphir::kNumOpTypes; ++k) {
        s += (k == static_cast<int>(g.nodes[i].op) ? 1.0 : 0.0) * table.at(k, c);
      }
      CHECK(f.values->value.at(static_cast<std::int64_t>(i), c) == s);
    }
  }
  CHECK_THROWS_AS(embed_nodes(g, ad::leaf(Tensor(Shape{3, 16}))), VocabularyError);
}

TEST_CASE("zero layers is the identity on features") {
  const auto g = small_graph();
  const auto cfg = cfg_with(0);
  std::mt19937_64 rng(2);
  const auto w = init_encoder(cfg, rng);
  const auto in = add_degree_embedding(embed_nodes(g, w.op_table), g, w, cfg);
  const auto out = graphormer_forward(in, graphir::shortest_path_distances(g), w, cfg);
  CHECK(out.values->value == in.values->value);
  CHECK(out.layer_index == 0);
  CHECK(encode(g, w, cfg_with(0)).values->value == in.values->value);
}

TEST_CASE("degree embedding adds the clipped-degree row") {
  const auto g = small_graph();
  auto cfg = cfg_with(0);
  cfg.max_degree = 2;
  std::mt19937_64 rng(3);
  const auto w = init_encoder(cfg, rng);
  const auto base = embed_nodes(g, w.op_table);
  const auto with = add_degree_embedding(base, g, w, cfg);
  const auto deg = graphir::degrees(g);
  for (std::size_t i = 0; i < g.nodes.size(); ++i) {
    const auto k = std::min<std::int64_t>(deg[i], 2);
    for (std::int64_t c = 0; c < cfg.d; ++c) {
      CHECK(with.values->value.at(i, c) == base.values->value.at(i, c) + w.degree_table->value.at(k, c));
    }
  }
}

TEST_CASE("encoder is permutation equivariant") {
  const auto g = small_graph();
  const auto cfg = cfg_with(2);
  std::mt19937_64 rng(4);
  auto w = init_encoder(cfg, rng);
  // non-zero distance bias so the attention actually depends on structure
  std::normal_distribution<double> nd;
  for (auto& v : w.dist_bias->value.data) v = nd(rng);
  std::vector<std::int64_t> perm(g.nodes.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  const auto a = encode(g, w, cfg);
  const auto b = encode(permuted(g, perm), w, cfg);
  CHECK(a.layer_index == 2);
  double worst = 0.0;
  for (std::size_t i = 0; i < g.nodes.size(); ++i) {
    for (std::int64_t c = 0; c < cfg.d; ++c) {
      worst = std::max(worst, std::abs(a.values->value.at(i, c) - b.values->value.at(perm[i], c)));
    }
  }
  CHECK(worst < 1e-10);
}

TEST_CASE("distance bias index") {
  graphir::DistanceMatrix dm{2, {0, 12, graphir::kUnreachable, 0}};
  EncoderConfig cfg = cfg_with(1);
  cfg.heads = 2;
  cfg.max_distance = 8;
  const auto idx = distance_bias_index(dm, cfg);
  CHECK(idx == std::vector<std::int64_t>{0, 8, 9, 0, 10, 18, 19, 10});
}

TEST_CASE("non-finite activations are reported") {
  const auto g = small_graph();
  const auto cfg = cfg_with(1);
  std::mt19937_64 rng(5);
  auto w = init_encoder(cfg, rng);
  w.layers[0].qkv_w->value.data[0] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(encode(g, w, cfg), NumericError);
  EncoderConfig bad = cfg;
  bad.heads = 5;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
}
