// SPDX-License-Identifier: Apache-2.0
#include "logah/graphir.hpp"

#include <array>
#include <deque>
#include <istream>
#include <ostream>

#include <nlohmann/json.hpp>

#include "logah/errors.hpp"

namespace logah::graphir {

namespace {

constexpr std::array<std::string_view, kNumOpTypes> kOpNames{
    "token_embedding", "positional_embedding", "patch_projection", "qkv_projection",
    "attention_output_projection", "mlp_fc1", "mlp_fc2", "layer_norm_scale",
    "layer_norm_shift", "bias", "classification_head", "lm_head",
    "residual_add", "softmax", "activation", "input",
    "output",
};

TargetShape vec(std::int64_t n) { return TargetShape{{n, 1, 1, 1}, 1}; }
TargetShape mat(std::int64_t out, std::int64_t in) { return TargetShape{{out, in, 1, 1}, 2}; }
TargetShape conv(std::int64_t out, std::int64_t in, std::int64_t h, std::int64_t w) {
  return TargetShape{{out, in, h, w}, 4};
}

class Builder {
 public:
  explicit Builder(CompGraph& g) : g_(g) {}

  std::int64_t node(OpType op) { return push(op, std::nullopt, {}); }
  std::int64_t node(OpType op, std::string name, TargetShape shape) { return push(op, shape, std::move(name)); }
  void edge(std::int64_t src, std::int64_t dst) { g_.edges.emplace_back(src, dst); }
  // Links a -> b -> c ... and returns the last id.
  std::int64_t chain(std::initializer_list<std::int64_t> ids) {
    auto it = ids.begin();
    std::int64_t prev = *it++;
    for (; it != ids.end(); ++it) {
      edge(prev, *it);
      prev = *it;
    }
    return prev;
  }

  // Pre-norm transformer block shared by the ViT and GPT-2 families.
  std::int64_t block(std::int64_t in, const std::string& prefix, std::int64_t d, std::int64_t mlp) {
    const auto ln1s = node(OpType::layer_norm_scale, prefix + "ln_1.weight", vec(d));
    const auto ln1b = node(OpType::layer_norm_shift, prefix + "ln_1.bias", vec(d));
    const auto qkvw = node(OpType::qkv_projection, prefix + "attn.qkv.weight", mat(3 * d, d));
    const auto qkvb = node(OpType::bias, prefix + "attn.qkv.bias", vec(3 * d));
    const auto sm = node(OpType::softmax);
    const auto ow = node(OpType::attention_output_projection, prefix + "attn.proj.weight", mat(d, d));
    const auto ob = node(OpType::bias, prefix + "attn.proj.bias", vec(d));
    const auto add1 = node(OpType::residual_add);
    const auto ln2s = node(OpType::layer_norm_scale, prefix + "ln_2.weight", vec(d));
    const auto ln2b = node(OpType::layer_norm_shift, prefix + "ln_2.bias", vec(d));
    const auto f1w = node(OpType::mlp_fc1, prefix + "mlp.fc1.weight", mat(mlp, d));
    const auto f1b = node(OpType::bias, prefix + "mlp.fc1.bias", vec(mlp));
    const auto act = node(OpType::activation);
    const auto f2w = node(OpType::mlp_fc2, prefix + "mlp.fc2.weight", mat(d, mlp));
    const auto f2b = node(OpType::bias, prefix + "mlp.fc2.bias", vec(d));
    const auto add2 = node(OpType::residual_add);
    chain({in, ln1s, ln1b, qkvw, qkvb, sm, ow, ob, add1});
    edge(in, add1);
    chain({add1, ln2s, ln2b, f1w, f1b, act, f2w, f2b, add2});
    edge(add1, add2);
    return add2;
  }

 private:
  std::int64_t push(OpType op, std::optional<TargetShape> shape, std::string name) {
    const auto id = static_cast<std::int64_t>(g_.nodes.size());
    g_.nodes.push_back(GraphNode{id, op, shape, std::move(name)});
    return id;
  }
  CompGraph& g_;
};

void build_vit(Builder& b, const archspace::ViTSpec& s) {
  const auto d = s.hidden_dim;
  const auto in = b.node(OpType::input);
  const auto pw = b.node(OpType::patch_projection, "patch_embed.weight", conv(d, s.channels, s.patch_size, s.patch_size));
  const auto pb = b.node(OpType::bias, "patch_embed.bias", vec(d));
  const auto cls = b.node(OpType::token_embedding, "class_token", vec(d));
  const auto pos = b.node(OpType::positional_embedding, "pos_embedding", mat(s.seq_length(), d));
  auto prev = b.chain({in, pw, pb, cls, pos});
  for (std::int64_t i = 0; i < s.num_layers; ++i) prev = b.block(prev, "blocks." + std::to_string(i) + ".", d, s.mlp_dim);
  const auto lns = b.node(OpType::layer_norm_scale, "norm.weight", vec(d));
  const auto lnb = b.node(OpType::layer_norm_shift, "norm.bias", vec(d));
  const auto hw = b.node(OpType::classification_head, "head.weight", mat(s.num_classes, d));
  const auto hb = b.node(OpType::bias, "head.bias", vec(s.num_classes));
  const auto out = b.node(OpType::output);
  b.chain({prev, lns, lnb, hw, hb, out});
}

void build_gpt(Builder& b, CompGraph& g, const archspace::GPTSpec& s) {
  const auto d = s.embed_dim;
  const auto in = b.node(OpType::input);
  const auto wte = b.node(OpType::token_embedding, "wte.weight", mat(s.vocab_size, d));
  const auto wpe = b.node(OpType::positional_embedding, "wpe.weight", mat(s.context_length, d));
  const auto sum = b.node(OpType::residual_add);
  b.chain({in, wte, sum});
  b.chain({in, wpe, sum});
  auto prev = sum;
  for (std::int64_t i = 0; i < s.num_layers; ++i) {
    const std::string prefix = "blocks." + std::to_string(i) + ".";
    prev = b.block(prev, prefix, d, s.mlp_dim());
    g.non_predicted.push_back(prefix + "attn.causal_mask");
  }
  const auto lns = b.node(OpType::layer_norm_scale, "ln_f.weight", vec(d));
  const auto lnb = b.node(OpType::layer_norm_shift, "ln_f.bias", vec(d));
  prev = b.chain({prev, lns, lnb});
  if (!s.tie_word_embeddings) {
    const auto head = b.node(OpType::lm_head, "lm_head.weight", mat(s.vocab_size, d));
    prev = b.chain({prev, head});
  }
  const auto out = b.node(OpType::output);
  b.edge(prev, out);
}

void build_linear(Builder& b, const archspace::LinearSpec& s) {
  const auto w = b.node(OpType::classification_head, "fc.weight", mat(s.out_features, s.in_features));
  if (s.bias) {
    const auto bias = b.node(OpType::bias, "fc.bias", vec(s.out_features));
    b.edge(w, bias);
  }
}

template <class Fn>
DistanceMatrix distances_impl(const CompGraph& graph, Fn&& for_each_source) {
  const auto n = static_cast<std::int64_t>(graph.nodes.size());
  std::vector<std::vector<std::int64_t>> adj(static_cast<std::size_t>(n));
  for (const auto& [s, d] : graph.edges) {
    adj[static_cast<std::size_t>(s)].push_back(d);
    adj[static_cast<std::size_t>(d)].push_back(s);
  }
  DistanceMatrix dm{n, std::vector<std::int32_t>(static_cast<std::size_t>(n * n), kUnreachable)};
  auto bfs = [&](std::int64_t src) {
    std::int32_t* row = dm.hops.data() + src * n;
    std::deque<std::int64_t> q{src};
    row[src] = 0;
    while (!q.empty()) {
      const auto u = q.front();
      q.pop_front();
      for (auto v : adj[static_cast<std::size_t>(u)]) {
        if (row[v] == kUnreachable) {
          row[v] = row[u] + 1;
          q.push_back(v);
        }
      }
    }
  };
  for_each_source(n, bfs);
  return dm;
}

[[noreturn]] void parse_fail(const std::string& field, const std::string& what) {
  throw ParseError("graph record field '" + field + "': " + what);
}

}  // namespace

std::string_view op_name(OpType op) {
  const auto i = static_cast<std::size_t>(op);
  if (i >= kOpNames.size()) throw VocabularyError("op index " + std::to_string(i) + " outside the vocabulary");
  return kOpNames[i];
}

OpType parse_op(std::string_view name) {
  for (std::size_t i = 0; i < kOpNames.size(); ++i) {
    if (kOpNames[i] == name) return static_cast<OpType>(i);
  }
  throw VocabularyError("unknown op '" + std::string(name) + "'");
}

std::vector<std::int64_t> TargetShape::tensor_shape() const {
  switch (ndim) {
    case 1:
      return {dims[0]};
    case 2:
      return {dims[0], dims[1]};
    case 4:
      return {dims[0], dims[1], dims[2], dims[3]};
    default:
      throw ContractError("tensor rank must be 1, 2 or 4, got " + std::to_string(ndim));
  }
}

CompGraph build_graph(const archspace::ArchSpec& spec, std::string id) {
  archspace::validate(spec);
  CompGraph g;
  g.id = std::move(id);
  g.arch = spec;
  Builder b(g);
  switch (archspace::kind_of(spec)) {
    case archspace::Kind::vit:
      build_vit(b, std::get<archspace::ViTSpec>(spec));
      break;
    case archspace::Kind::gpt2:
      build_gpt(b, g, std::get<archspace::GPTSpec>(spec));
      break;
    case archspace::Kind::linear:
      build_linear(b, std::get<archspace::LinearSpec>(spec));
      break;
  }
  topological_order(g);
  return g;
}

std::vector<std::int64_t> topological_order(const CompGraph& graph) {
  const auto n = static_cast<std::int64_t>(graph.nodes.size());
  std::vector<std::int64_t> indeg(static_cast<std::size_t>(n), 0);
  std::vector<std::vector<std::int64_t>> out(static_cast<std::size_t>(n));
  for (const auto& [s, d] : graph.edges) {
    if (s < 0 || s >= n || d < 0 || d >= n) {
      throw BuildError("edge (" + std::to_string(s) + ", " + std::to_string(d) + ") references a missing node");
    }
    out[static_cast<std::size_t>(s)].push_back(d);
    ++indeg[static_cast<std::size_t>(d)];
  }
  std::deque<std::int64_t> ready;
  for (std::int64_t i = 0; i < n; ++i) {
    if (indeg[static_cast<std::size_t>(i)] == 0) ready.push_back(i);
  }
  std::vector<std::int64_t> order;
  order.reserve(static_cast<std::size_t>(n));
  while (!ready.empty()) {
    const auto u = ready.front();
    ready.pop_front();
    order.push_back(u);
    for (auto v : out[static_cast<std::size_t>(u)]) {
      if (--indeg[static_cast<std::size_t>(v)] == 0) ready.push_back(v);
    }
  }
  if (static_cast<std::int64_t>(order.size()) != n) throw BuildError("graph '" + graph.id + "' contains a cycle");
  return order;
}

std::vector<const GraphNode*> learnable_nodes(const CompGraph& graph) {
  std::vector<const GraphNode*> out;
  for (const auto& n : graph.nodes) {
    if (n.learnable()) out.push_back(&n);
  }
  return out;
}

std::int64_t graph_param_count(const CompGraph& graph) {
  std::int64_t total = 0;
  for (const auto& n : graph.nodes) {
    if (n.learnable()) total += n.target->numel();
  }
  return total;
}

std::vector<std::int64_t> degrees(const CompGraph& graph) {
  std::vector<std::int64_t> deg(graph.nodes.size(), 0);
  for (const auto& [s, d] : graph.edges) {
    ++deg[static_cast<std::size_t>(s)];
    ++deg[static_cast<std::size_t>(d)];
  }
  return deg;
}

DistanceMatrix shortest_path_distances(const CompGraph& graph) {
  return distances_impl(graph, [](std::int64_t n, auto& bfs) {
#pragma omp parallel for schedule(dynamic, 8) if (n > 64)
    for (std::int64_t s = 0; s < n; ++s) bfs(s);
  });
}

namespace serial {
DistanceMatrix shortest_path_distances(const CompGraph& graph) {
  return distances_impl(graph, [](std::int64_t n, auto& bfs) {
    for (std::int64_t s = 0; s < n; ++s) bfs(s);
  });
}
}  // namespace serial

std::string serialize_graph(const CompGraph& graph) {
  nlohmann::json nodes = nlohmann::json::array();
  for (const auto& n : graph.nodes) {
    nlohmann::json j{{"id", n.id}, {"op", op_name(n.op)}, {"name", n.tensor_name}};
    if (n.target) {
      j["shape"] = n.target->dims;
      j["ndim"] = n.target->ndim;
    } else {
      j["shape"] = nlohmann::json::array();
    }
    nodes.push_back(std::move(j));
  }
  nlohmann::json edges = nlohmann::json::array();
  for (const auto& [s, d] : graph.edges) edges.push_back({s, d});
  nlohmann::json rec{{"id", graph.id}, {"nodes", std::move(nodes)}, {"edges", std::move(edges)},
                     {"non_predicted", graph.non_predicted}};
  if (graph.arch) {
    rec["arch"] = {{"kind", archspace::kind_name(archspace::kind_of(*graph.arch))},
                   {"config", archspace::spec_to_json(*graph.arch)}};
  }
  return rec.dump();
}

CompGraph deserialize_graph(std::string_view line) {
  nlohmann::json rec;
  try {
    rec = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("graph record is not valid JSON: ") + e.what());
  }
  if (!rec.is_object()) parse_fail("<record>", "expected an object");
  CompGraph g;
  try {
    if (!rec.contains("id")) parse_fail("id", "missing");
    g.id = rec.at("id").is_string() ? rec.at("id").get<std::string>() : rec.at("id").dump();
    if (!rec.contains("nodes") || !rec.at("nodes").is_array()) parse_fail("nodes", "missing or not an array");
    std::int64_t index = 0;
    for (const auto& jn : rec.at("nodes")) {
      const std::string where = "nodes[" + std::to_string(index) + "]";
      GraphNode n;
      n.id = jn.at("id").get<std::int64_t>();
      if (n.id != index) parse_fail(where + ".id", "expected " + std::to_string(index));
      try {
        n.op = parse_op(jn.at("op").get<std::string>());
      } catch (const VocabularyError& e) {
        parse_fail(where + ".op", e.what());
      }
      n.tensor_name = jn.value("name", std::string{});
      const auto& shape = jn.at("shape");
      if (!shape.is_array()) parse_fail(where + ".shape", "not an array");
      if (!shape.empty()) {
        if (shape.size() != 4) parse_fail(where + ".shape", "expected 4 dimensions");
        TargetShape t;
        for (std::size_t k = 0; k < 4; ++k) {
          t.dims[k] = shape[k].get<std::int64_t>();
          if (t.dims[k] <= 0) parse_fail(where + ".shape", "dimensions must be positive");
        }
        t.ndim = jn.value("ndim", t.dims[2] * t.dims[3] > 1 ? 4 : (t.dims[1] > 1 ? 2 : 1));
        if (t.ndim != 1 && t.ndim != 2 && t.ndim != 4) parse_fail(where + ".ndim", "must be 1, 2 or 4");
        n.target = t;
      }
      g.nodes.push_back(std::move(n));
      ++index;
    }
    if (!rec.contains("edges") || !rec.at("edges").is_array()) parse_fail("edges", "missing or not an array");
    for (const auto& je : rec.at("edges")) {
      if (!je.is_array() || je.size() != 2) parse_fail("edges", "each edge must be [src, dst]");
      g.edges.emplace_back(je[0].get<std::int64_t>(), je[1].get<std::int64_t>());
    }
    if (rec.contains("non_predicted")) g.non_predicted = rec.at("non_predicted").get<std::vector<std::string>>();
    if (rec.contains("arch")) {
      const auto& a = rec.at("arch");
      g.arch = archspace::spec_from_json(archspace::parse_kind(a.at("kind").get<std::string>()), a.at("config"));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("graph record: ") + e.what());
  }
  try {
    topological_order(g);
  } catch (const BuildError& e) {
    parse_fail("edges", e.what());
  }
  return g;
}

void write_graphs(std::ostream& os, const std::vector<CompGraph>& graphs) {
  for (const auto& g : graphs) os << serialize_graph(g) << '\n';
}

std::vector<CompGraph> read_graphs(std::istream& is) {
  std::vector<CompGraph> out;
  std::string line;
  std::int64_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(deserialize_graph(line));
    } catch (const ParseError& e) {
      throw ParseError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace logah::graphir
