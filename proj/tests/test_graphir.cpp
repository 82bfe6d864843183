// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "logah/errors.hpp"
#include "logah/graphir.hpp"
#include "logah/tensor.hpp"

using namespace logah;
using namespace logah::graphir;

namespace {
std::vector<archspace::ArchSpec> sample_specs() {
  archspace::Rng rng(2);
  std::vector<archspace::ArchSpec> out{archspace::preset("vit-s"), archspace::preset("gpt2-s"),
                                       archspace::LinearSpec{5, 3, true}};
  for (int i = 0; i < 4; ++i) {
    out.emplace_back(archspace::sample_tiny_vit_spec(rng));
    out.emplace_back(archspace::sample_tiny_gpt_spec(rng));
  }
  return out;
}

// Floyd-Warshall on the undirected closure.
std::vector<std::int64_t> all_pairs(const CompGraph& g) {
  const auto n = static_cast<std::int64_t>(g.size());
  const std::int64_t inf = 1LL << 40;
  std::vector<std::int64_t> d(static_cast<std::size_t>(n * n), inf);
  for (std::int64_t i = 0; i < n; ++i) d[i * n + i] = 0;
  for (auto [s, t] : g.edges) d[s * n + t] = d[t * n + s] = 1;
  for (std::int64_t k = 0; k < n; ++k)
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int64_t j = 0; j < n; ++j) d[i * n + j] = std::min(d[i * n + j], d[i * n + k] + d[k * n + j]);
  return d;
}

nlohmann::ordered_json reversed(const nlohmann::ordered_json& j) {
  if (j.is_object()) {
    nlohmann::ordered_json out = nlohmann::ordered_json::object();
    std::vector<std::string> keys;
    for (auto it = j.begin(); it != j.end(); ++it) keys.push_back(it.key());
    std::reverse(keys.begin(), keys.end());
    for (const auto& k : keys) out[k] = reversed(j.at(k));
    return out;
  }
  if (j.is_array()) {
    nlohmann::ordered_json out = nlohmann::ordered_json::array();
    for (const auto& e : j) out.push_back(reversed(e));
    return out;
  }
  return j;
}
}  // namespace

TEST_CASE("vocabulary") {
  for (int i = 0; i < kNumOpTypes; ++i) {
    const auto op = static_cast<OpType>(i);
    CHECK(parse_op(op_name(op)) == op);
  }
  CHECK_THROWS_AS(parse_op("conv3d"), VocabularyError);
}

TEST_CASE("graph counts equal spec counts") {
  for (const auto& s : sample_specs()) {
    const auto g = build_graph(s);
    CHECK(graph_param_count(g) == archspace::spec_param_count(s));
    const auto order = topological_order(g);
    std::vector<std::int64_t> pos(g.size());
    for (std::size_t i = 0; i < order.size(); ++i) pos[static_cast<std::size_t>(order[i])] = static_cast<std::int64_t>(i);
    for (auto [a, b] : g.edges) CHECK(pos[a] < pos[b]);
    for (const auto* n : learnable_nodes(g)) {
      CHECK(n->target->numel() == logah::shape_numel(n->target->tensor_shape()));
      CHECK_FALSE(n->tensor_name.empty());
    }
  }
}

TEST_CASE("gpt buffers are not nodes") {
  const auto g = build_graph(archspace::preset("gpt2-s"));
  CHECK(g.non_predicted.size() == 12);
  for (const auto& n : g.nodes) CHECK(n.tensor_name.find("causal_mask") == std::string::npos);
  bool has_head = false;
  for (const auto& n : g.nodes) has_head |= n.tensor_name == "lm_head.weight";
  CHECK_FALSE(has_head);  // tied
}

TEST_CASE("shortest paths match Floyd-Warshall") {
  for (const auto& s : sample_specs()) {
    const auto g = build_graph(s);
    if (g.size() > 300) continue;
    const auto dm = shortest_path_distances(g);
    const auto ref = all_pairs(g);
    const auto ser = serial::shortest_path_distances(g);
    CHECK(dm.hops == ser.hops);
    bool same = true;
    for (std::size_t i = 0; i < ref.size(); ++i) {
      const std::int64_t want = ref[i] >= (1LL << 40) ? kUnreachable : ref[i];
      same &= dm.hops[i] == want;
    }
    CHECK(same);
  }
  CompGraph g;
  g.nodes.resize(3);
  for (int i = 0; i < 3; ++i) g.nodes[static_cast<std::size_t>(i)].id = i;
  g.edges = {{0, 1}};
  const auto dm = shortest_path_distances(g);
  CHECK(dm.at(0, 2) == kUnreachable);
  CHECK(dm.at(1, 0) == 1);
}

TEST_CASE("cycles and dangling edges are rejected") {
  CompGraph g;
  g.nodes.resize(2);
  g.nodes[1].id = 1;
  g.edges = {{0, 1}, {1, 0}};
  CHECK_THROWS_AS(topological_order(g), BuildError);
  g.edges = {{0, 5}};
  CHECK_THROWS_AS(topological_order(g), BuildError);
}

TEST_CASE("serialization round trip, key order does not matter") {
  std::vector<CompGraph> gs;
  int i = 0;
  for (const auto& s : sample_specs()) gs.push_back(build_graph(s, "g" + std::to_string(i++)));
  std::stringstream ss;
  write_graphs(ss, gs);
  const auto back = read_graphs(ss);
  REQUIRE(back.size() == gs.size());
  for (std::size_t k = 0; k < gs.size(); ++k) {
    CHECK(back[k] == gs[k]);
    const auto line = reversed(nlohmann::ordered_json::parse(serialize_graph(gs[k]))).dump();
    CHECK(deserialize_graph(line) == gs[k]);
  }
}

TEST_CASE("malformed records") {
  CHECK_THROWS_AS(deserialize_graph("not json"), ParseError);
  CHECK_THROWS_AS(deserialize_graph("{\"id\":\"x\",\"nodes\":[{\"id\":0,\"op\":\"warp\",\"shape\":[]}],\"edges\":[]}"),
                  ParseError);
  CHECK_THROWS_AS(deserialize_graph("{\"id\":\"x\",\"nodes\":[{\"id\":0,\"op\":\"bias\",\"shape\":[0,1,1,1]}],\"edges\":[]}"),
                  ParseError);
  CHECK_THROWS(deserialize_graph("{\"id\":\"x\",\"nodes\":[{\"id\":0,\"op\":\"input\",\"shape\":[]}],\"edges\":[[0,0]]}"));
}
