// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "logah/archspace.hpp"

namespace logah::graphir {

// Closed node vocabulary. Appending is a format change: bump kVocabVersion.
enum class OpType : std::int32_t {
  token_embedding = 0,
  positional_embedding,
  patch_projection,
  qkv_projection,
  attention_output_projection,
  mlp_fc1,
  mlp_fc2,
  layer_norm_scale,
  layer_norm_shift,
  bias,
  classification_head,
  lm_head,
  residual_add,
  softmax,
  activation,
  input,
  output,
};

inline constexpr int kNumOpTypes = 17;
inline constexpr int kVocabVersion = 1;

std::string_view op_name(OpType op);
OpType parse_op(std::string_view name);  // throws VocabularyError

// Target tensor of a learnable node. `shape` is always (C_out, C_in, h, w)
// with trailing ones for lower-rank tensors; `ndim` is the rank of the real
// tensor (1, 2 or 4). Structural nodes carry no tensor.
struct TargetShape {
  std::array<std::int64_t, 4> dims{1, 1, 1, 1};
  int ndim = 0;

  std::int64_t c_out() const { return dims[0]; }
  std::int64_t c_in() const { return dims[1]; }
  std::int64_t k_out() const { return dims[2]; }
  std::int64_t k_in() const { return dims[3]; }
  std::int64_t numel() const { return dims[0] * dims[1] * dims[2] * dims[3]; }
  // Matrix view (C_out * h) x (C_in * w).
  std::int64_t folded_rows() const { return dims[0] * dims[2]; }
  std::int64_t folded_cols() const { return dims[1] * dims[3]; }
  // Shape of the tensor as the target network sees it.
  std::vector<std::int64_t> tensor_shape() const;
  bool operator==(const TargetShape&) const = default;
};

struct GraphNode {
  std::int64_t id = 0;
  OpType op = OpType::input;
  std::optional<TargetShape> target;  // empty for structural nodes
  std::string tensor_name;

  bool learnable() const { return target.has_value(); }
  bool operator==(const GraphNode&) const = default;
};

struct CompGraph {
  std::string id;
  std::vector<GraphNode> nodes;
  std::vector<std::pair<std::int64_t, std::int64_t>> edges;
  std::vector<std::string> non_predicted;
  std::optional<archspace::ArchSpec> arch;

  std::size_t size() const { return nodes.size(); }
  bool operator==(const CompGraph&) const = default;
};

// One node per learnable tensor plus structural nodes; edges follow the
// forward pass. Verifies acyclicity before returning.
CompGraph build_graph(const archspace::ArchSpec& spec, std::string id = {});

// Kahn order; throws BuildError on a cycle or a dangling edge.
std::vector<std::int64_t> topological_order(const CompGraph& graph);

// Learnable nodes only, in node order.
std::vector<const GraphNode*> learnable_nodes(const CompGraph& graph);

// Sum of learnable scalars across nodes (non_predicted entries are buffers
// and hold no learnable scalars).
std::int64_t graph_param_count(const CompGraph& graph);

// (in + out) degree per node.
std::vector<std::int64_t> degrees(const CompGraph& graph);

// Hop counts on the undirected closure of the edge set, row-major |V| x |V|.
inline constexpr std::int32_t kUnreachable = 2147483647;
struct DistanceMatrix {
  std::int64_t n = 0;
  std::vector<std::int32_t> hops;
  std::int32_t at(std::int64_t i, std::int64_t j) const { return hops[static_cast<std::size_t>(i * n + j)]; }
};
DistanceMatrix shortest_path_distances(const CompGraph& graph);

namespace serial {
DistanceMatrix shortest_path_distances(const CompGraph& graph);
}

// JSON-lines graph records.
std::string serialize_graph(const CompGraph& graph);
CompGraph deserialize_graph(std::string_view line);
void write_graphs(std::ostream& os, const std::vector<CompGraph>& graphs);
std::vector<CompGraph> read_graphs(std::istream& is);

}  // namespace logah::graphir
