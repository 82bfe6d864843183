// SPDX-License-Identifier: Apache-2.0
#include "logah/targetnet.hpp"

#include <cmath>

#include "logah/errors.hpp"
#include "logah/graphir.hpp"

namespace logah::targetnet {

namespace {

const ad::Var& get(const ParamMap& p, const std::string& name) {
  auto it = p.find(name);
  if (it == p.end()) throw ContractError("missing parameter " + name);
  return it->second;
}

// Patch rows [n * P, C * p * p] ordered (c, y, x) within a patch, to match a
// [D, C, p, p] projection flattened to [D, C * p * p].
std::vector<std::int64_t> patch_index(const archspace::ViTSpec& s, std::int64_t n) {
  const auto g = s.image_size / s.patch_size;
  const auto ps = s.patch_size;
  const auto img = s.channels * s.image_size * s.image_size;
  std::vector<std::int64_t> idx;
  idx.reserve(static_cast<std::size_t>(n * g * g * s.channels * ps * ps));
  for (std::int64_t b = 0; b < n; ++b) {
    for (std::int64_t gy = 0; gy < g; ++gy) {
      for (std::int64_t gx = 0; gx < g; ++gx) {
        for (std::int64_t c = 0; c < s.channels; ++c) {
          for (std::int64_t y = 0; y < ps; ++y) {
            for (std::int64_t x = 0; x < ps; ++x) {
              idx.push_back(b * img + c * s.image_size * s.image_size + (gy * ps + y) * s.image_size + gx * ps + x);
            }
          }
        }
      }
    }
  }
  return idx;
}

// Selected rows of a [*, d] matrix, repeats allowed.
ad::Var pick_rows(const ad::Var& a, const std::vector<std::int64_t>& rows, std::int64_t d) {
  std::vector<std::int64_t> idx(rows.size() * static_cast<std::size_t>(d));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::int64_t c = 0; c < d; ++c) idx[i * static_cast<std::size_t>(d) + static_cast<std::size_t>(c)] = rows[i] * d + c;
  }
  return ad::gather(a, std::move(idx), Shape{static_cast<std::int64_t>(rows.size()), d});
}

ad::Var block(const ParamMap& p, const std::string& prefix, const ad::Var& x, const kernels::AttentionShape& shape) {
  auto h = ad::layer_norm(x, get(p, prefix + "ln_1.weight"), get(p, prefix + "ln_1.bias"));
  auto qkv = ad::linear(h, get(p, prefix + "attn.qkv.weight"), get(p, prefix + "attn.qkv.bias"));
  auto att = ad::attention(qkv, shape);
  auto y = ad::add(x, ad::linear(att, get(p, prefix + "attn.proj.weight"), get(p, prefix + "attn.proj.bias")));
  h = ad::layer_norm(y, get(p, prefix + "ln_2.weight"), get(p, prefix + "ln_2.bias"));
  h = ad::gelu(ad::linear(h, get(p, prefix + "mlp.fc1.weight"), get(p, prefix + "mlp.fc1.bias")));
  return ad::add(y, ad::linear(h, get(p, prefix + "mlp.fc2.weight"), get(p, prefix + "mlp.fc2.bias")));
}

std::string block_prefix(std::int64_t i) { return "blocks." + std::to_string(i) + "."; }

}  // namespace

std::vector<std::pair<std::string, Shape>> tensor_shapes(const archspace::ArchSpec& spec) {
  const auto g = graphir::build_graph(spec);
  std::vector<std::pair<std::string, Shape>> out;
  for (const auto* n : graphir::learnable_nodes(g)) out.emplace_back(n->tensor_name, n->target->tensor_shape());
  return out;
}

ad::Var vit_forward(const archspace::ViTSpec& s, const ParamMap& p, const Tensor& images) {
  const auto n = images.rows();
  const auto d = s.hidden_dim;
  const auto P = s.num_patches();
  const auto S = s.seq_length();
  const auto pdim = s.channels * s.patch_size * s.patch_size;
  if (images.cols() != s.channels * s.image_size * s.image_size) throw ContractError("image size does not match spec");

  auto patches = ad::gather(ad::constant(images), patch_index(s, n), Shape{n * P, pdim});
  auto proj_w = ad::reshape(get(p, "patch_embed.weight"), Shape{d, pdim});
  auto tokens = ad::linear(patches, proj_w, get(p, "patch_embed.bias"));

  // Row 0 is the class token, rows 1.. are patch tokens of all images.
  auto pool = ad::concat_rows({ad::reshape(get(p, "class_token"), Shape{1, d}), tokens});
  std::vector<std::int64_t> order;
  std::vector<std::int64_t> pos_rows;
  for (std::int64_t b = 0; b < n; ++b) {
    order.push_back(0);
    pos_rows.push_back(0);
    for (std::int64_t i = 0; i < P; ++i) {
      order.push_back(1 + b * P + i);
      pos_rows.push_back(1 + i);
    }
  }
  auto x = ad::add(pick_rows(pool, order, d), pick_rows(get(p, "pos_embedding"), pos_rows, d));

  const kernels::AttentionShape shape{n, S, s.num_heads, d, false};
  for (std::int64_t i = 0; i < s.num_layers; ++i) x = block(p, block_prefix(i), x, shape);
  x = ad::layer_norm(x, get(p, "norm.weight"), get(p, "norm.bias"));

  std::vector<std::int64_t> cls_rows;
  for (std::int64_t b = 0; b < n; ++b) cls_rows.push_back(b * S);
  return ad::linear(pick_rows(x, cls_rows, d), get(p, "head.weight"), get(p, "head.bias"));
}

ad::Var gpt_forward(const archspace::GPTSpec& s, const ParamMap& p, std::span<const std::int64_t> tokens,
                    std::int64_t n, std::int64_t t) {
  const auto d = s.embed_dim;
  if (static_cast<std::int64_t>(tokens.size()) != n * t) throw ContractError("token batch size mismatch");
  if (t > s.context_length) throw ContractError("sequence longer than context length");
  std::vector<std::int64_t> ids(tokens.begin(), tokens.end());
  std::vector<std::int64_t> pos;
  for (std::int64_t b = 0; b < n; ++b) {
    for (std::int64_t i = 0; i < t; ++i) pos.push_back(i);
  }
  for (auto id : ids) {
    if (id < 0 || id >= s.vocab_size) throw ContractError("token id out of vocabulary range");
  }
  const auto& wte = get(p, "wte.weight");
  auto x = ad::add(pick_rows(wte, ids, d), pick_rows(get(p, "wpe.weight"), pos, d));
  const kernels::AttentionShape shape{n, t, s.num_heads, d, true};
  for (std::int64_t i = 0; i < s.num_layers; ++i) x = block(p, block_prefix(i), x, shape);
  x = ad::layer_norm(x, get(p, "ln_f.weight"), get(p, "ln_f.bias"));
  const auto& head = s.tie_word_embeddings ? wte : get(p, "lm_head.weight");
  return ad::matmul(x, head, false, true);
}

ad::Var linear_forward(const archspace::LinearSpec& s, const ParamMap& p, const Tensor& x) {
  if (x.cols() != s.in_features) throw ContractError("input width does not match spec");
  auto in = ad::constant(x);
  if (s.bias) return ad::linear(in, get(p, "fc.weight"), get(p, "fc.bias"));
  return ad::linear(in, get(p, "fc.weight"));
}

params::PredictedParameterSet random_init(const archspace::ArchSpec& spec, std::uint64_t seed) {
  const auto g = graphir::build_graph(spec);
  std::mt19937_64 rng(seed);
  params::PredictedParameterSet out;
  out.arch_kind = archspace::kind_name(archspace::kind_of(spec));
  out.non_predicted = g.non_predicted;
  // Biases take the fan-in of the weight node that precedes them.
  std::int64_t last_fan_in = 1;
  for (const auto* n : graphir::learnable_nodes(g)) {
    const auto& t = *n->target;
    params::NamedTensor nt{n->tensor_name, t.tensor_shape(), std::vector<float>(static_cast<std::size_t>(t.numel())),
                           params::Status::reinitialized};
    using graphir::OpType;
    switch (n->op) {
      case OpType::layer_norm_scale:
        std::fill(nt.values.begin(), nt.values.end(), 1.0f);
        break;
      case OpType::layer_norm_shift:
        break;
      case OpType::token_embedding:
      case OpType::positional_embedding: {
        std::normal_distribution<double> dist(0.0, 0.02);
        for (auto& v : nt.values) v = static_cast<float>(dist(rng));
        break;
      }
      default: {
        std::int64_t fan_in = last_fan_in;
        if (n->op != OpType::bias) {
          fan_in = t.c_in() * t.k_out() * t.k_in();
          last_fan_in = fan_in;
        }
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        std::uniform_real_distribution<double> dist(-bound, bound);
        for (auto& v : nt.values) v = static_cast<float>(dist(rng));
      }
    }
    out.tensors.push_back(std::move(nt));
  }
  return out;
}

ParamMap to_param_map(const archspace::ArchSpec& spec, const params::PredictedParameterSet& set, bool trainable) {
  ParamMap out;
  for (const auto& [name, shape] : tensor_shapes(spec)) {
    const auto* t = set.find(name);
    if (!t) throw ContractError("initialization is missing tensor " + name);
    if (t->shape != shape) {
      throw ContractError("tensor " + name + " has shape " + shape_string(t->shape) + ", network expects " +
                          shape_string(shape));
    }
    auto value = params::to_tensor(*t);
    out[name] = trainable ? ad::leaf(std::move(value)) : ad::constant(std::move(value));
  }
  return out;
}

params::PredictedParameterSet from_param_map(const archspace::ArchSpec& spec, const ParamMap& p,
                                             const params::PredictedParameterSet& like) {
  params::PredictedParameterSet out;
  out.arch_kind = like.arch_kind;
  out.non_predicted = like.non_predicted;
  for (const auto& [name, shape] : tensor_shapes(spec)) {
    const auto* src = like.find(name);
    out.tensors.push_back(
        params::from_tensor(name, get(p, name)->value, src ? src->status : params::Status::reinitialized));
  }
  return out;
}

}  // namespace logah::targetnet
