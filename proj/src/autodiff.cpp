// SPDX-License-Identifier: Apache-2.0
#include "logah/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <unordered_set>

#include "logah/errors.hpp"

namespace logah::ad {

namespace {

Var make_result(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> fn) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  bool needs = false;
  for (const auto& in : inputs) needs = needs || (in && in->requires_grad);
  if (needs) {
    node->requires_grad = true;
    node->inputs = std::move(inputs);
    node->backward_fn = std::move(fn);
  }
  return node;
}

void require(bool ok, const std::string& what) {
  if (!ok) throw ContractError(what);
}

std::int64_t rows_of(const Tensor& t) { return t.rows(); }
std::int64_t cols_of(const Tensor& t) { return t.cols(); }

}  // namespace

void Node::accumulate(std::span<const double> g) {
  if (grad.data.empty()) grad = Tensor(value.shape, 0.0);
  for (std::size_t i = 0; i < g.size(); ++i) grad.data[i] += g[i];
}

Var leaf(Tensor value, bool requires_grad) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = requires_grad;
  return node;
}

Var constant(Tensor value) { return leaf(std::move(value), false); }

Var custom(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> fn) {
  return make_result(std::move(value), std::move(inputs), std::move(fn));
}

void backward(const Var& root) {
  require(root->value.numel() == 1, "backward() needs a scalar root");
  // Iterative post-order DFS gives a topological order without recursion.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.get(), 0}};
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child && child->requires_grad && !seen.contains(child)) {
        seen.insert(child);
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  const double one = 1.0;
  root->accumulate(std::span<const double>(&one, 1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && n->has_grad()) n->backward_fn(*n);
  }
}

Var matmul(const Var& a, const Var& b, bool trans_a, bool trans_b) {
  const auto& A = a->value;
  const auto& B = b->value;
  const std::int64_t m = trans_a ? cols_of(A) : rows_of(A);
  const std::int64_t k = trans_a ? rows_of(A) : cols_of(A);
  const std::int64_t kb = trans_b ? cols_of(B) : rows_of(B);
  const std::int64_t n = trans_b ? rows_of(B) : cols_of(B);
  require(k == kb, "matmul inner dimensions differ: " + shape_string(A.shape) + " x " + shape_string(B.shape));
  Tensor out(Shape{m, n});
  kernels::gemm(trans_a, trans_b, m, n, k, A.data.data(), B.data.data(), 0.0, out.data.data());
  return make_result(std::move(out), {a, b}, [m, n, k, trans_a, trans_b](Node& self) {
    const auto& g = self.grad.data;
    const auto& A = self.inputs[0];
    const auto& B = self.inputs[1];
    if (A->requires_grad) {
      std::vector<double> da(static_cast<std::size_t>(m * k));
      if (!trans_a) {
        kernels::gemm(false, !trans_b, m, k, n, g.data(), B->value.data.data(), 0.0, da.data());
      } else {
        kernels::gemm(trans_b, true, k, m, n, B->value.data.data(), g.data(), 0.0, da.data());
      }
      A->accumulate(da);
    }
    if (B->requires_grad) {
      std::vector<double> db(static_cast<std::size_t>(k * n));
      if (!trans_b) {
        kernels::gemm(!trans_a, false, k, n, m, A->value.data.data(), g.data(), 0.0, db.data());
      } else {
        kernels::gemm(true, trans_a, n, k, m, g.data(), A->value.data.data(), 0.0, db.data());
      }
      B->accumulate(db);
    }
  });
}

Var linear(const Var& x, const Var& w, const Var& bias) { return add_row(matmul(x, w, false, true), bias); }

Var linear(const Var& x, const Var& w) { return matmul(x, w, false, true); }

Var add(const Var& a, const Var& b) {
  require(a->value.numel() == b->value.numel(),
          "add shape mismatch: " + shape_string(a->value.shape) + " vs " + shape_string(b->value.shape));
  Tensor out = a->value;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += b->value.data[i];
  return make_result(std::move(out), {a, b}, [](Node& self) {
    for (const auto& in : self.inputs) {
      if (in->requires_grad) in->accumulate(self.grad.data);
    }
  });
}

Var add_row(const Var& a, const Var& row) {
  const std::int64_t n = cols_of(a->value);
  require(row->value.numel() == n, "add_row width mismatch: " + shape_string(a->value.shape) + " + " +
                                       shape_string(row->value.shape));
  Tensor out = a->value;
  const std::int64_t m = rows_of(out);
  for (std::int64_t i = 0; i < m; ++i) {
    for (std::int64_t j = 0; j < n; ++j) out.data[static_cast<std::size_t>(i * n + j)] += row->value.data[static_cast<std::size_t>(j)];
  }
  return make_result(std::move(out), {a, row}, [m, n](Node& self) {
    if (self.inputs[0]->requires_grad) self.inputs[0]->accumulate(self.grad.data);
    if (self.inputs[1]->requires_grad) {
      std::vector<double> g(static_cast<std::size_t>(n), 0.0);
      for (std::int64_t i = 0; i < m; ++i) {
        for (std::int64_t j = 0; j < n; ++j) g[static_cast<std::size_t>(j)] += self.grad.data[static_cast<std::size_t>(i * n + j)];
      }
      self.inputs[1]->accumulate(g);
    }
  });
}

Var scale(const Var& a, double s) {
  Tensor out = a->value;
  for (auto& v : out.data) v *= s;
  return make_result(std::move(out), {a}, [s](Node& self) {
    std::vector<double> g = self.grad.data;
    for (auto& v : g) v *= s;
    self.inputs[0]->accumulate(g);
  });
}

Var relu(const Var& a) {
  Tensor out = a->value;
  for (auto& v : out.data) v = v > 0.0 ? v : 0.0;
  return make_result(std::move(out), {a}, [](Node& self) {
    const auto& x = self.inputs[0]->value.data;
    std::vector<double> g = self.grad.data;
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (!(x[i] > 0.0)) g[i] = 0.0;
    }
    self.inputs[0]->accumulate(g);
  });
}

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)
constexpr double kGeluA = 0.044715;
}  // namespace

Var gelu(const Var& a) {
  Tensor out = a->value;
  for (auto& v : out.data) {
    const double t = std::tanh(kGeluC * (v + kGeluA * v * v * v));
    v = 0.5 * v * (1.0 + t);
  }
  return make_result(std::move(out), {a}, [](Node& self) {
    const auto& x = self.inputs[0]->value.data;
    std::vector<double> g = self.grad.data;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double v = x[i];
      const double t = std::tanh(kGeluC * (v + kGeluA * v * v * v));
      const double dt = (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * v * v);
      g[i] *= 0.5 * (1.0 + t) + 0.5 * v * dt;
    }
    self.inputs[0]->accumulate(g);
  });
}

Var tanh_affine(const Var& a, double in_scale, double out_scale, double offset) {
  Tensor out = a->value;
  for (auto& v : out.data) v = offset + out_scale * std::tanh(in_scale * v);
  return make_result(std::move(out), {a}, [in_scale, out_scale](Node& self) {
    const auto& x = self.inputs[0]->value.data;
    std::vector<double> g = self.grad.data;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double t = std::tanh(in_scale * x[i]);
      g[i] *= out_scale * in_scale * (1.0 - t * t);
    }
    self.inputs[0]->accumulate(g);
  });
}

Var rms_normalize(const Var& a, double target, double eps) {
  const auto n = static_cast<double>(a->value.numel());
  double sq = 0.0;
  for (double v : a->value.data) sq += v * v;
  const double rho = std::sqrt(sq / n + eps);
  Tensor out = a->value;
  for (auto& v : out.data) v *= target / rho;
  return make_result(std::move(out), {a}, [target, rho, n](Node& self) {
    const auto& x = self.inputs[0]->value.data;
    const auto& g = self.grad.data;
    double gx = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) gx += g[i] * x[i];
    std::vector<double> d(g.size());
    const double c = gx / (n * rho * rho);
    for (std::size_t i = 0; i < g.size(); ++i) d[i] = target / rho * (g[i] - x[i] * c);
    self.inputs[0]->accumulate(d);
  });
}

Var reshape(const Var& a, Shape shape) {
  require(shape_numel(shape) == a->value.numel(),
          "reshape " + shape_string(a->value.shape) + " -> " + shape_string(shape) + " changes element count");
  Tensor out(std::move(shape), a->value.data);
  return make_result(std::move(out), {a}, [](Node& self) { self.inputs[0]->accumulate(self.grad.data); });
}

Var gather(const Var& a, std::vector<std::int64_t> index, Shape shape) {
  require(shape_numel(shape) == static_cast<std::int64_t>(index.size()), "gather index count does not match shape");
  const auto n = a->value.numel();
  Tensor out(std::move(shape));
  for (std::size_t i = 0; i < index.size(); ++i) {
    require(index[i] >= 0 && index[i] < n, "gather index out of range");
    out.data[i] = a->value.data[static_cast<std::size_t>(index[i])];
  }
  return make_result(std::move(out), {a}, [idx = std::move(index)](Node& self) {
    auto& in = *self.inputs[0];
    if (!in.has_grad()) in.grad = Tensor(in.value.shape, 0.0);
    for (std::size_t i = 0; i < idx.size(); ++i) in.grad.data[static_cast<std::size_t>(idx[i])] += self.grad.data[i];
  });
}

Var transpose(const Var& a) {
  const std::int64_t m = rows_of(a->value);
  const std::int64_t n = cols_of(a->value);
  std::vector<std::int64_t> idx(static_cast<std::size_t>(m * n));
  for (std::int64_t j = 0; j < n; ++j) {
    for (std::int64_t i = 0; i < m; ++i) idx[static_cast<std::size_t>(j * m + i)] = i * n + j;
  }
  return gather(a, std::move(idx), Shape{n, m});
}

Var concat_rows(const std::vector<Var>& parts) {
  require(!parts.empty(), "concat_rows needs at least one part");
  const std::int64_t n = cols_of(parts.front()->value);
  std::int64_t m = 0;
  for (const auto& p : parts) {
    require(cols_of(p->value) == n, "concat_rows width mismatch");
    m += rows_of(p->value);
  }
  Tensor out(Shape{m, n});
  std::size_t off = 0;
  for (const auto& p : parts) {
    std::copy(p->value.data.begin(), p->value.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(off));
    off += p->value.data.size();
  }
  return make_result(std::move(out), parts, [](Node& self) {
    std::size_t off = 0;
    for (const auto& p : self.inputs) {
      const auto len = p->value.data.size();
      if (p->requires_grad) {
        p->accumulate(std::span<const double>(self.grad.data.data() + off, len));
      }
      off += len;
    }
  });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  const std::int64_t m = rows_of(x->value);
  const std::int64_t n = cols_of(x->value);
  require(gamma->value.numel() == n && beta->value.numel() == n, "layer_norm parameter width mismatch");
  Tensor out(x->value.shape);
  auto xhat = std::make_shared<std::vector<double>>(static_cast<std::size_t>(m * n));
  auto inv_std = std::make_shared<std::vector<double>>(static_cast<std::size_t>(m));
  for (std::int64_t i = 0; i < m; ++i) {
    const double* row = x->value.data.data() + i * n;
    double mean = 0.0;
    for (std::int64_t j = 0; j < n; ++j) mean += row[j];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::int64_t j = 0; j < n; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<double>(n);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[static_cast<std::size_t>(i)] = is;
    for (std::int64_t j = 0; j < n; ++j) {
      const double h = (row[j] - mean) * is;
      (*xhat)[static_cast<std::size_t>(i * n + j)] = h;
      out.data[static_cast<std::size_t>(i * n + j)] = h * gamma->value.data[static_cast<std::size_t>(j)] +
                                                      beta->value.data[static_cast<std::size_t>(j)];
    }
  }
  return make_result(std::move(out), {x, gamma, beta}, [m, n, xhat, inv_std](Node& self) {
    const auto& g = self.grad.data;
    const auto& gam = self.inputs[1]->value.data;
    if (self.inputs[0]->requires_grad) {
      std::vector<double> dx(static_cast<std::size_t>(m * n));
      for (std::int64_t i = 0; i < m; ++i) {
        double mean_d = 0.0;
        double mean_dx = 0.0;
        for (std::int64_t j = 0; j < n; ++j) {
          const auto e = static_cast<std::size_t>(i * n + j);
          const double d = g[e] * gam[static_cast<std::size_t>(j)];
          mean_d += d;
          mean_dx += d * (*xhat)[e];
        }
        mean_d /= static_cast<double>(n);
        mean_dx /= static_cast<double>(n);
        const double is = (*inv_std)[static_cast<std::size_t>(i)];
        for (std::int64_t j = 0; j < n; ++j) {
          const auto e = static_cast<std::size_t>(i * n + j);
          const double d = g[e] * gam[static_cast<std::size_t>(j)];
          dx[e] = is * (d - mean_d - (*xhat)[e] * mean_dx);
        }
      }
      self.inputs[0]->accumulate(dx);
    }
    if (self.inputs[1]->requires_grad || self.inputs[2]->requires_grad) {
      std::vector<double> dg(static_cast<std::size_t>(n), 0.0);
      std::vector<double> db(static_cast<std::size_t>(n), 0.0);
      for (std::int64_t i = 0; i < m; ++i) {
        for (std::int64_t j = 0; j < n; ++j) {
          const auto e = static_cast<std::size_t>(i * n + j);
          dg[static_cast<std::size_t>(j)] += g[e] * (*xhat)[e];
          db[static_cast<std::size_t>(j)] += g[e];
        }
      }
      if (self.inputs[1]->requires_grad) self.inputs[1]->accumulate(dg);
      if (self.inputs[2]->requires_grad) self.inputs[2]->accumulate(db);
    }
  });
}

Var softmax_rows(const Var& x) {
  const std::int64_t m = rows_of(x->value);
  const std::int64_t n = cols_of(x->value);
  Tensor out(x->value.shape);
  for (std::int64_t i = 0; i < m; ++i) {
    const double* row = x->value.data.data() + i * n;
    double* orow = out.data.data() + i * n;
    const double mx = *std::max_element(row, row + n);
    double s = 0.0;
    for (std::int64_t j = 0; j < n; ++j) s += (orow[j] = std::exp(row[j] - mx));
    for (std::int64_t j = 0; j < n; ++j) orow[j] /= s;
  }
  return make_result(std::move(out), {x}, [m, n](Node& self) {
    const auto& y = self.value.data;
    const auto& g = self.grad.data;
    std::vector<double> dx(static_cast<std::size_t>(m * n));
    for (std::int64_t i = 0; i < m; ++i) {
      double dot = 0.0;
      for (std::int64_t j = 0; j < n; ++j) dot += g[static_cast<std::size_t>(i * n + j)] * y[static_cast<std::size_t>(i * n + j)];
      for (std::int64_t j = 0; j < n; ++j) {
        const auto e = static_cast<std::size_t>(i * n + j);
        dx[e] = y[e] * (g[e] - dot);
      }
    }
    self.inputs[0]->accumulate(dx);
  });
}

Var attention(const Var& qkv, const kernels::AttentionShape& shape, const Var& bias) {
  require(shape.width % shape.heads == 0, "attention width not divisible by heads");
  require(qkv->value.numel() == shape.batch * shape.seq * 3 * shape.width, "attention qkv size mismatch");
  if (bias) require(bias->value.numel() == shape.heads * shape.seq * shape.seq, "attention bias size mismatch");
  Tensor out(Shape{shape.batch * shape.seq, shape.width});
  auto probs = std::make_shared<std::vector<double>>(
      static_cast<std::size_t>(shape.batch * shape.heads * shape.seq * shape.seq));
  kernels::attention_forward(shape, qkv->value.data.data(), bias ? bias->value.data.data() : nullptr,
                             out.data.data(), probs->data());
  std::vector<Var> inputs{qkv};
  if (bias) inputs.push_back(bias);
  return make_result(std::move(out), std::move(inputs), [shape, probs](Node& self) {
    const auto& q = self.inputs[0];
    const bool want_bias = self.inputs.size() > 1 && self.inputs[1]->requires_grad;
    std::vector<double> dqkv(q->value.data.size(), 0.0);
    std::vector<double> dbias;
    if (want_bias) dbias.assign(self.inputs[1]->value.data.size(), 0.0);
    kernels::attention_backward(shape, q->value.data.data(), probs->data(), self.grad.data.data(), dqkv.data(),
                                want_bias ? dbias.data() : nullptr);
    if (q->requires_grad) q->accumulate(dqkv);
    if (want_bias) self.inputs[1]->accumulate(dbias);
  });
}

Var cross_entropy(const Var& logits, std::span<const std::int64_t> labels) {
  const std::int64_t m = rows_of(logits->value);
  const std::int64_t c = cols_of(logits->value);
  require(static_cast<std::int64_t>(labels.size()) == m, "cross_entropy label count mismatch");
  auto probs = std::make_shared<std::vector<double>>(static_cast<std::size_t>(m * c));
  std::vector<std::int64_t> lab(labels.begin(), labels.end());
  double total = 0.0;
  for (std::int64_t i = 0; i < m; ++i) {
    require(lab[static_cast<std::size_t>(i)] >= 0 && lab[static_cast<std::size_t>(i)] < c, "label out of range");
    const double* row = logits->value.data.data() + i * c;
    const double mx = *std::max_element(row, row + c);
    double s = 0.0;
    for (std::int64_t j = 0; j < c; ++j) s += std::exp(row[j] - mx);
    const double lse = mx + std::log(s);
    for (std::int64_t j = 0; j < c; ++j) (*probs)[static_cast<std::size_t>(i * c + j)] = std::exp(row[j] - lse);
    total += lse - row[lab[static_cast<std::size_t>(i)]];
  }
  return make_result(Tensor::scalar(total / static_cast<double>(m)), {logits},
                     [m, c, probs, lab = std::move(lab)](Node& self) {
                       const double g = self.grad.data[0] / static_cast<double>(m);
                       std::vector<double> d(static_cast<std::size_t>(m * c));
                       for (std::int64_t i = 0; i < m; ++i) {
                         for (std::int64_t j = 0; j < c; ++j) {
                           const auto e = static_cast<std::size_t>(i * c + j);
                           d[e] = g * ((*probs)[e] - (j == lab[static_cast<std::size_t>(i)] ? 1.0 : 0.0));
                         }
                       }
                       self.inputs[0]->accumulate(d);
                     });
}

Var sum_squares(const Var& a) {
  double s = 0.0;
  for (double v : a->value.data) s += v * v;
  return make_result(Tensor::scalar(s), {a}, [](Node& self) {
    const double g = self.grad.data[0];
    std::vector<double> d = self.inputs[0]->value.data;
    for (auto& v : d) v *= 2.0 * g;
    self.inputs[0]->accumulate(d);
  });
}

Var sum(const Var& a) {
  double s = 0.0;
  for (double v : a->value.data) s += v;
  return make_result(Tensor::scalar(s), {a}, [](Node& self) {
    std::vector<double> d(self.inputs[0]->value.data.size(), self.grad.data[0]);
    self.inputs[0]->accumulate(d);
  });
}

}  // namespace logah::ad
