// SPDX-License-Identifier: Apache-2.0
#include "logah/decoder.hpp"

#include <algorithm>
#include <cmath>

#include "logah/errors.hpp"
#include "logah/kernels.hpp"

namespace logah::decoder {

namespace {

Tensor normal_tensor(Shape shape, double stddev, std::mt19937_64& rng) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& v : t.data) v = dist(rng);
  return t;
}

Tensor fan_in_tensor(std::int64_t in, std::int64_t out, std::mt19937_64& rng) {
  return normal_tensor(Shape{in, out}, 1.0 / std::sqrt(static_cast<double>(in)), rng);
}

Tensor matmul_plain(const Tensor& a, const Tensor& b) {
  Tensor out(Shape{a.rows(), b.cols()});
  kernels::gemm(false, false, a.rows(), b.cols(), a.cols(), a.data.data(), b.data.data(), 0.0, out.data.data());
  return out;
}

void relu_inplace(std::span<double> v) {
  for (auto& x : v) x = x > 0.0 ? x : 0.0;
}

// Elements [f0, f1) of the row-major (2r, K) block t @ m4, where t is the
// node's (2r, r) block after the ramp. Each element sums over t's columns in
// ascending order, the same order gemm uses for the full product.
void block_segment(const double* t, const double* m4, std::int64_t r, std::int64_t K, std::int64_t f0,
                   std::int64_t f1, double* out) {
  std::int64_t f = f0;
  while (f < f1) {
    const std::int64_t i = f / K;
    const std::int64_t k0 = f % K;
    const std::int64_t k1 = std::min(K, k0 + (f1 - f));
    double* o = out + (f - f0);
    std::fill(o, o + (k1 - k0), 0.0);
    for (std::int64_t p = 0; p < r; ++p) {
      const double tv = t[i * r + p];
      const double* mrow = m4 + p * K;
      for (std::int64_t k = k0; k < k1; ++k) o[k - k0] += tv * mrow[k];
    }
    f += k1 - k0;
  }
}

// Inverse of block_segment for the backward pass: accumulates into dt (the
// node's (2r, r) gradient) and into row p of dm4 for p in [p0, p1).
void block_segment_grad_t(const double* g, const double* m4, std::int64_t r, std::int64_t K, std::int64_t f0,
                          std::int64_t f1, double* dt) {
  for (std::int64_t f = f0; f < f1; ++f) {
    const std::int64_t i = f / K;
    const std::int64_t k = f % K;
    const double gv = g[f - f0];
    for (std::int64_t p = 0; p < r; ++p) dt[i * r + p] += gv * m4[p * K + k];
  }
}

void block_segment_grad_m4_row(const double* g, const double* t, std::int64_t r, std::int64_t K, std::int64_t f0,
                               std::int64_t f1, std::int64_t p, double* dm4_row) {
  for (std::int64_t f = f0; f < f1; ++f) {
    const std::int64_t i = f / K;
    const std::int64_t k = f % K;
    dm4_row[k] += g[f - f0] * t[i * r + p];
  }
}

Tensor apply_layout(const Tensor& w, const graphir::TargetShape& t) {
  if (t.ndim == 4) {
    const auto idx = conv_layout_index(t.dims);
    Tensor out(t.tensor_shape());
    for (std::size_t e = 0; e < idx.size(); ++e) out.data[e] = w.data[static_cast<std::size_t>(idx[e])];
    return out;
  }
  return Tensor(t.tensor_shape(), w.data);
}

std::uint64_t fnv1a(const std::string& s, std::uint64_t seed) {
  std::uint64_t h = 1469598103934665603ULL ^ seed;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace

void DecoderConfig::validate() const {
  if (d < 1 || r < 1 || K < 1) throw ValidationError("decoder d, r and K must be positive");
  if (chunk_nodes < 1) throw ValidationError("decoder chunk size must be positive");
}

std::int64_t DecoderWeights::scalar_count() const {
  return m1->value.numel() + m2->value.numel() + m3->value.numel() + m4->value.numel();
}

DecoderWeights init_decoder(const DecoderConfig& cfg, std::mt19937_64& rng) {
  cfg.validate();
  const auto d = cfg.d;
  const auto r = cfg.r;
  return DecoderWeights{
      ad::leaf(fan_in_tensor(d, 4 * d, rng)),
      ad::leaf(fan_in_tensor(4 * d, 8 * d, rng)),
      ad::leaf(fan_in_tensor(8 * d, 2 * r * r, rng)),
      ad::leaf(fan_in_tensor(r, cfg.K, rng)),
  };
}

std::vector<std::pair<std::string, ad::Var>> named_parameters(const DecoderWeights& w) {
  return {{"decoder.m1", w.m1}, {"decoder.m2", w.m2}, {"decoder.m3", w.m3}, {"decoder.m4", w.m4}};
}

Tensor mlp_blocks(const Tensor& features, const DecoderWeights& w, const DecoderConfig& cfg) {
  if (features.cols() != cfg.d) {
    throw ContractError("decoder expects width " + std::to_string(cfg.d) + ", got " + std::to_string(features.cols()));
  }
  Tensor h = matmul_plain(features, w.m1->value);
  relu_inplace(h.data);
  h = matmul_plain(h, w.m2->value);
  relu_inplace(h.data);
  return matmul_plain(h, w.m3->value);
}

std::vector<LowRankFactors> decode_factors(const Tensor& features, const DecoderWeights& weights,
                                           const DecoderConfig& cfg) {
  const auto r = cfg.r;
  const auto K = cfg.K;
  Tensor x = mlp_blocks(features, weights, cfg);
  relu_inplace(x.data);
  const auto n = x.rows();
  std::vector<LowRankFactors> out(static_cast<std::size_t>(n));
  std::vector<double> block(static_cast<std::size_t>(2 * r * K));
  for (std::int64_t j = 0; j < n; ++j) {
    kernels::gemm(false, false, 2 * r, K, r, x.data.data() + j * 2 * r * r, weights.m4->value.data.data(), 0.0,
                  block.data());
    if (!all_finite(block)) throw NumericError("non-finite decoder output at node " + std::to_string(j));
    // (2r, K) reread as (2K, r): rows [0, K) are A, rows [K, 2K) are B^T.
    auto& f = out[static_cast<std::size_t>(j)];
    f.a = Tensor(Shape{K, r}, std::vector<double>(block.begin(), block.begin() + K * r));
    f.b = Tensor(Shape{r, K});
    for (std::int64_t q = 0; q < K; ++q) {
      for (std::int64_t p = 0; p < r; ++p) f.b.at(p, q) = block[static_cast<std::size_t>((K + q) * r + p)];
    }
  }
  return out;
}

std::vector<std::int64_t> conv_layout_index(const MaxShape& s) {
  const auto [c_out, c_in, k_out, k_in] = s;
  const auto cols = c_in * k_in;
  std::vector<std::int64_t> idx(static_cast<std::size_t>(c_out * c_in * k_out * k_in));
  std::size_t e = 0;
  for (std::int64_t co = 0; co < c_out; ++co) {
    for (std::int64_t ci = 0; ci < c_in; ++ci) {
      for (std::int64_t ko = 0; ko < k_out; ++ko) {
        for (std::int64_t ki = 0; ki < k_in; ++ki) idx[e++] = (co * k_out + ko) * cols + ci * k_in + ki;
      }
    }
  }
  return idx;
}

Tensor realize_tensor(const LowRankFactors& factors, const MaxShape& s, int n_dim) {
  const auto [c_out, c_in, k_out, k_in] = s;
  const auto K = factors.a.rows();
  const auto r = factors.a.cols();
  const auto rows = c_out * k_out;
  const auto cols = c_in * k_in;
  if (rows > K || cols > factors.b.cols()) {
    throw OversizeError("folded shape " + std::to_string(rows) + " x " + std::to_string(cols) +
                        " exceeds max mask " + std::to_string(K));
  }
  if (n_dim == 1 && (c_in != 1 || k_out != 1 || k_in != 1)) {
    throw ContractError("n_dim = 1 requires c_in = k_out = k_in = 1");
  }
  if (n_dim != 1 && n_dim != 2 && n_dim != 4) throw ContractError("n_dim must be 1, 2 or 4");
  std::vector<double> b_prefix(static_cast<std::size_t>(r * cols));
  for (std::int64_t p = 0; p < r; ++p) {
    for (std::int64_t q = 0; q < cols; ++q) b_prefix[static_cast<std::size_t>(p * cols + q)] = factors.b.at(p, q);
  }
  Tensor w(Shape{rows, cols});
  kernels::gemm(false, false, rows, cols, r, factors.a.data.data(), b_prefix.data(), 0.0, w.data.data());
  switch (n_dim) {
    case 1:
      return Tensor(Shape{c_out}, std::move(w.data));
    case 2:
      return w;
    default: {
      graphir::TargetShape t{s, 4};
      return apply_layout(w, t);
    }
  }
}

double post_scale(const graphir::TargetShape& t) {
  if (t.ndim <= 1) return 1.0;
  return 1.0 / std::sqrt(static_cast<double>(t.c_in() * t.k_out() * t.k_in()));
}

double rms_factor(std::span<const double> w) {
  double sq = 0.0;
  for (double v : w) sq += v * v;
  return 1.0 / std::sqrt(sq / static_cast<double>(w.size()) + kRmsEps);
}

double OutputMap::apply(double w) const {
  return squash ? offset + out_scale * std::tanh(in_scale * w) : out_scale * w;
}

OutputMap output_map(graphir::OpType op, const graphir::TargetShape& t) {
  using graphir::OpType;
  if (t.ndim >= 2) return {false, true, 1.0, post_scale(t), 0.0};
  if (op == OpType::layer_norm_scale) return {true, false, 0.25, 1.0, 1.0};
  if (op == OpType::bias || op == OpType::layer_norm_shift) return {true, false, 0.2, 1.0, 0.0};
  return {};
}

bool fits(const graphir::TargetShape& t, std::int64_t K) { return t.folded_rows() <= K && t.folded_cols() <= K; }

std::vector<float> fallback_values(const graphir::TargetShape& t, const std::string& name, std::uint64_t seed) {
  std::mt19937_64 rng(fnv1a(name, seed));
  const double fan_in = t.ndim <= 1 ? 1.0 : static_cast<double>(t.c_in() * t.k_out() * t.k_in());
  std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(fan_in));
  std::vector<float> v(static_cast<std::size_t>(t.numel()));
  for (auto& x : v) x = static_cast<float>(dist(rng));
  return v;
}

params::PredictedParameterSet predict_all(const graphir::CompGraph& graph, const encoder::NodeFeatureMatrix& features,
                                          const DecoderWeights& weights, const DecoderConfig& cfg,
                                          std::uint64_t fallback_seed) {
  cfg.validate();
  const auto& H = features.values->value;
  if (H.rows() != static_cast<std::int64_t>(graph.nodes.size())) {
    throw ContractError("feature rows do not match the graph's node count");
  }
  const auto nodes = graphir::learnable_nodes(graph);
  const auto r = cfg.r;
  const auto K = cfg.K;
  if (!cfg.allow_fallback) {
    for (const auto* n : nodes) {
      if (!fits(*n->target, K)) {
        throw OversizeError("tensor " + n->tensor_name + " with folded shape " +
                            std::to_string(n->target->folded_rows()) + " x " +
                            std::to_string(n->target->folded_cols()) + " exceeds max mask " + std::to_string(K));
      }
    }
  }
  Tensor rows(Shape{static_cast<std::int64_t>(nodes.size()), cfg.d});
  for (std::size_t j = 0; j < nodes.size(); ++j) {
    std::copy_n(H.data.begin() + nodes[j]->id * cfg.d, cfg.d, rows.data.begin() + static_cast<std::ptrdiff_t>(j) * cfg.d);
  }
  Tensor blocks = mlp_blocks(rows, weights, cfg);
  relu_inplace(blocks.data);

  params::PredictedParameterSet out;
  if (graph.arch) out.arch_kind = archspace::kind_name(archspace::kind_of(*graph.arch));
  out.non_predicted = graph.non_predicted;
  out.tensors.resize(nodes.size());
  std::vector<int> bad(nodes.size(), 0);
  const auto count = static_cast<std::int64_t>(nodes.size());
  for (std::int64_t c0 = 0; c0 < count; c0 += cfg.chunk_nodes) {
    const auto c1 = std::min(count, c0 + cfg.chunk_nodes);
#pragma omp parallel for schedule(dynamic, 1)
    for (std::int64_t j = c0; j < c1; ++j) {
      const auto& node = *nodes[static_cast<std::size_t>(j)];
      const auto& t = *node.target;
      auto& slot = out.tensors[static_cast<std::size_t>(j)];
      slot.name = node.tensor_name;
      slot.shape = t.tensor_shape();
      if (!fits(t, K)) {
        slot.values = fallback_values(t, node.tensor_name, fallback_seed);
        slot.status = params::Status::fallback;
        continue;
      }
      const auto a_rows = t.folded_rows();
      const auto b_rows = t.folded_cols();
      const double* tb = blocks.data.data() + j * 2 * r * r;
      std::vector<double> a(static_cast<std::size_t>(a_rows * r));
      std::vector<double> bt(static_cast<std::size_t>(b_rows * r));
      block_segment(tb, weights.m4->value.data.data(), r, K, 0, a_rows * r, a.data());
      block_segment(tb, weights.m4->value.data.data(), r, K, K * r, K * r + b_rows * r, bt.data());
      Tensor w(Shape{a_rows, b_rows});
      kernels::gemm(false, true, a_rows, b_rows, r, a.data(), bt.data(), 0.0, w.data.data());
      Tensor laid = apply_layout(w, t);
      const auto map = output_map(node.op, t);
      const double norm = map.normalize ? rms_factor(laid.data) : 1.0;
      slot.values.resize(laid.data.size());
      for (std::size_t e = 0; e < laid.data.size(); ++e) {
        slot.values[e] = static_cast<float>(map.apply(laid.data[e] * norm));
      }
      slot.status = params::Status::predicted;
      if (!all_finite(laid.data)) bad[static_cast<std::size_t>(j)] = 1;
    }
  }
  for (std::size_t j = 0; j < bad.size(); ++j) {
    if (bad[j]) throw NumericError("non-finite decoder output at node " + std::to_string(nodes[j]->id));
  }
  return out;
}

PredictedVars predict_vars(const graphir::CompGraph& graph, const encoder::NodeFeatureMatrix& features,
                           const DecoderWeights& weights, const DecoderConfig& cfg, std::uint64_t fallback_seed) {
  cfg.validate();
  const auto nodes = graphir::learnable_nodes(graph);
  const auto r = cfg.r;
  const auto K = cfg.K;
  const auto d = cfg.d;
  const auto m = static_cast<std::int64_t>(nodes.size());
  PredictedVars out;
  if (m == 0) return out;

  std::vector<std::int64_t> row_idx(static_cast<std::size_t>(m * d));
  for (std::int64_t j = 0; j < m; ++j) {
    for (std::int64_t c = 0; c < d; ++c) row_idx[static_cast<std::size_t>(j * d + c)] = nodes[static_cast<std::size_t>(j)]->id * d + c;
  }
  auto h = ad::gather(features.values, std::move(row_idx), Shape{m, d});
  auto x = ad::matmul(ad::relu(ad::matmul(ad::relu(ad::matmul(h, weights.m1)), weights.m2)), weights.m3);
  auto t = ad::relu(ad::reshape(x, Shape{m * 2 * r, r}));

  // Segment layout: for each fitting node, its A prefix then its B^T prefix.
  struct Seg {
    std::int64_t node = 0;
    std::int64_t f0 = 0;
    std::int64_t f1 = 0;
    std::int64_t offset = 0;
  };
  std::vector<Seg> segs;
  std::vector<std::int64_t> a_off(static_cast<std::size_t>(m), -1);
  std::vector<std::int64_t> b_off(static_cast<std::size_t>(m), -1);
  std::int64_t total = 0;
  for (std::int64_t j = 0; j < m; ++j) {
    const auto& tg = *nodes[static_cast<std::size_t>(j)]->target;
    if (!fits(tg, K)) continue;
    a_off[static_cast<std::size_t>(j)] = total;
    segs.push_back({j, 0, tg.folded_rows() * r, total});
    total += tg.folded_rows() * r;
    b_off[static_cast<std::size_t>(j)] = total;
    segs.push_back({j, K * r, K * r + tg.folded_cols() * r, total});
    total += tg.folded_cols() * r;
  }

  ad::Var flat;
  if (total > 0) {
    Tensor value(Shape{total});
    const double* tv = t->value.data.data();
    const double* m4 = weights.m4->value.data.data();
    const auto nseg = static_cast<std::int64_t>(segs.size());
#pragma omp parallel for schedule(dynamic, 1)
    for (std::int64_t s = 0; s < nseg; ++s) {
      const auto& sg = segs[static_cast<std::size_t>(s)];
      block_segment(tv + sg.node * 2 * r * r, m4, r, K, sg.f0, sg.f1, value.data.data() + sg.offset);
    }
    flat = ad::custom(std::move(value), {t, weights.m4}, [segs, r, K, m](ad::Node& self) {
      const auto& T = self.inputs[0];
      const auto& M4 = self.inputs[1];
      const double* g = self.grad.data.data();
      const auto nseg = static_cast<std::int64_t>(segs.size());
      if (T->requires_grad) {
        std::vector<double> dt(static_cast<std::size_t>(m * 2 * r * r), 0.0);
        // Segments of one node touch only that node's rows of dt; both of a
        // node's segments are adjacent, so split work by node.
#pragma omp parallel for schedule(dynamic, 1)
        for (std::int64_t s = 0; s < nseg; s += 2) {
          for (std::int64_t q = s; q < std::min(s + 2, nseg); ++q) {
            const auto& sg = segs[static_cast<std::size_t>(q)];
            block_segment_grad_t(g + sg.offset, M4->value.data.data(), r, K, sg.f0, sg.f1,
                                 dt.data() + sg.node * 2 * r * r);
          }
        }
        T->accumulate(dt);
      }
      if (M4->requires_grad) {
        std::vector<double> dm4(static_cast<std::size_t>(r * K), 0.0);
#pragma omp parallel for schedule(static)
        for (std::int64_t p = 0; p < r; ++p) {
          for (const auto& sg : segs) {
            block_segment_grad_m4_row(g + sg.offset, T->value.data.data() + sg.node * 2 * r * r, r, K, sg.f0, sg.f1, p,
                                      dm4.data() + p * K);
          }
        }
        M4->accumulate(dm4);
      }
    });
  }

  auto slice = [&](std::int64_t offset, std::int64_t rows) {
    std::vector<std::int64_t> idx(static_cast<std::size_t>(rows * r));
    for (std::size_t e = 0; e < idx.size(); ++e) idx[e] = offset + static_cast<std::int64_t>(e);
    return ad::gather(flat, std::move(idx), Shape{rows, r});
  };

  for (std::int64_t j = 0; j < m; ++j) {
    const auto& node = *nodes[static_cast<std::size_t>(j)];
    const auto& tg = *node.target;
    if (a_off[static_cast<std::size_t>(j)] < 0) {
      const auto v = fallback_values(tg, node.tensor_name, fallback_seed);
      out.tensors[node.tensor_name] = ad::constant(Tensor(tg.tensor_shape(), std::vector<double>(v.begin(), v.end())));
      out.fallback.push_back(node.tensor_name);
      continue;
    }
    auto a = slice(a_off[static_cast<std::size_t>(j)], tg.folded_rows());
    auto bt = slice(b_off[static_cast<std::size_t>(j)], tg.folded_cols());
    auto w = ad::matmul(a, bt, false, true);
    if (tg.ndim == 4) {
      w = ad::gather(w, conv_layout_index(tg.dims), tg.tensor_shape());
    } else {
      w = ad::reshape(w, tg.tensor_shape());
    }
    const auto map = output_map(node.op, tg);
    if (map.squash) {
      w = ad::tanh_affine(w, map.in_scale, map.out_scale, map.offset);
    } else if (map.normalize) {
      w = ad::rms_normalize(w, map.out_scale, kRmsEps);
    } else if (map.out_scale != 1.0) {
      w = ad::scale(w, map.out_scale);
    }
    out.tensors[node.tensor_name] = w;
    out.predicted.push_back(node.tensor_name);
  }
  return out;
}

Ghn3BaselineWeights init_ghn3_baseline(std::int64_t d, std::mt19937_64& rng) {
  if (d < 1) throw ValidationError("baseline width must be positive");
  Ghn3BaselineWeights w;
  w.d = d;
  w.m1 = fan_in_tensor(d, 4 * d, rng);
  w.m2 = fan_in_tensor(4 * d, 8 * d, rng);
  w.m3 = fan_in_tensor(8 * d, d * d, rng);
  w.spatial = fan_in_tensor(d, kBaselineFace * kBaselineFace, rng);
  return w;
}

Tensor ghn3_block(std::span<const double> feature_row, const Ghn3BaselineWeights& w) {
  const auto d = w.d;
  if (static_cast<std::int64_t>(feature_row.size()) != d) throw ContractError("baseline feature width mismatch");
  Tensor f(Shape{1, d}, std::vector<double>(feature_row.begin(), feature_row.end()));
  Tensor h = matmul_plain(f, w.m1);
  relu_inplace(h.data);
  h = matmul_plain(h, w.m2);
  relu_inplace(h.data);
  const Tensor chan = matmul_plain(h, w.m3);      // [1, d*d]
  const Tensor face = matmul_plain(f, w.spatial);  // [1, 256]
  const auto area = kBaselineFace * kBaselineFace;
  Tensor block(Shape{d, d, kBaselineFace, kBaselineFace});
  for (std::int64_t c = 0; c < d * d; ++c) {
    for (std::int64_t s = 0; s < area; ++s) {
      block.data[static_cast<std::size_t>(c * area + s)] = chan.data[static_cast<std::size_t>(c)] * face.data[static_cast<std::size_t>(s)];
    }
  }
  return block;
}

Tensor ghn3_decode_baseline(std::span<const double> feature_row, const Ghn3BaselineWeights& w,
                            const graphir::TargetShape& target) {
  const auto d = w.d;
  const auto [c_out, c_in, h, wd] = target.dims;
  if (h > kBaselineFace || wd > kBaselineFace) {
    throw ContractError("baseline block covers at most 16 x 16 spatial positions");
  }
  const Tensor block = ghn3_block(feature_row, w);
  const auto area = kBaselineFace * kBaselineFace;
  Tensor out(target.tensor_shape());
  std::size_t e = 0;
  for (std::int64_t co = 0; co < c_out; ++co) {
    for (std::int64_t ci = 0; ci < c_in; ++ci) {
      for (std::int64_t y = 0; y < h; ++y) {
        for (std::int64_t x = 0; x < wd; ++x) {
          const auto src = (((co % d) * d + (ci % d)) * area) + y * kBaselineFace + x;
          out.data[e++] = block.data[static_cast<std::size_t>(src)];
        }
      }
    }
  }
  return out;
}

}  // namespace logah::decoder
