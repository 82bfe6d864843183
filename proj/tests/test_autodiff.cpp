// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "logah/autodiff.hpp"

using namespace logah;
using namespace logah::ad;

namespace {
Tensor randt(Shape s, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, scale);
  Tensor t(std::move(s));
  for (auto& v : t.data) v = nd(rng);
  return t;
}

// Non-linear scalar readout so every output element gets a different weight.
Var readout(const Var& y) { return add(sum(y), scale(sum_squares(y), 0.3)); }

// Central differences against backward() for every input element.
double max_rel_error(const std::vector<Tensor>& inputs, const std::function<Var(const std::vector<Var>&)>& f) {
  std::vector<Var> vs;
  for (const auto& t : inputs) vs.push_back(leaf(t));
  backward(readout(f(vs)));
  double worst = 0.0;
  for (std::size_t k = 0; k < vs.size(); ++k) {
    for (std::size_t i = 0; i < inputs[k].data.size(); ++i) {
      auto eval = [&](double delta) {
        std::vector<Var> c;
        for (std::size_t q = 0; q < inputs.size(); ++q) {
          Tensor t = inputs[q];
          if (q == k) t.data[i] += delta;
          c.push_back(constant(t));
        }
        return readout(f(c))->value.data[0];
      };
      const double h = 1e-5;
      const double fd = (eval(h) - eval(-h)) / (2 * h);
      const double an = vs[k]->has_grad() ? vs[k]->grad.data[i] : 0.0;
      const double den = std::max({std::abs(fd), std::abs(an), 1e-6});
      worst = std::max(worst, std::abs(fd - an) / den);
    }
  }
  return worst;
}
}  // namespace

TEST_CASE("matmul in all transpose modes") {
  for (bool ta : {false, true}) {
    for (bool tb : {false, true}) {
      Shape sa = ta ? Shape{4, 3} : Shape{3, 4};
      Shape sb = tb ? Shape{5, 4} : Shape{4, 5};
      CHECK(max_rel_error({randt(sa, 1), randt(sb, 2)},
                          [&](const std::vector<Var>& v) { return matmul(v[0], v[1], ta, tb); }) < 1e-6);
    }
  }
}

TEST_CASE("linear, add, add_row, scale") {
  CHECK(max_rel_error({randt({3, 4}, 1), randt({2, 4}, 2), randt({2}, 3)},
                      [](const std::vector<Var>& v) { return linear(v[0], v[1], v[2]); }) < 1e-6);
  CHECK(max_rel_error({randt({3, 4}, 1), randt({3, 4}, 2)},
                      [](const std::vector<Var>& v) { return add(v[0], scale(v[1], -2.5)); }) < 1e-6);
  CHECK(max_rel_error({randt({3, 4}, 1), randt({4}, 2)},
                      [](const std::vector<Var>& v) { return add_row(v[0], v[1]); }) < 1e-6);
}

TEST_CASE("pointwise maps") {
  CHECK(max_rel_error({randt({4, 5}, 4)}, [](const std::vector<Var>& v) { return relu(v[0]); }) < 1e-6);
  CHECK(max_rel_error({randt({4, 5}, 5)}, [](const std::vector<Var>& v) { return gelu(v[0]); }) < 1e-6);
  CHECK(max_rel_error({randt({4, 5}, 6, 3.0)},
                      [](const std::vector<Var>& v) { return tanh_affine(v[0], 0.25, 1.0, 1.0); }) < 1e-6);
  CHECK(max_rel_error({randt({4, 5}, 7)}, [](const std::vector<Var>& v) { return rms_normalize(v[0], 0.7); }) < 1e-6);
}

TEST_CASE("rms_normalize and tanh_affine values") {
  auto x = leaf(Tensor(Shape{4}, std::vector<double>{1, -1, 1, -1}));
  auto y = rms_normalize(x, 3.0);
  for (double v : y->value.data) CHECK(std::abs(v) == doctest::Approx(3.0));
  auto t = tanh_affine(leaf(Tensor(Shape{1}, std::vector<double>{0.0})), 0.25, 1.0, 1.0);
  CHECK(t->value.data[0] == 1.0);
}

TEST_CASE("shape ops") {
  CHECK(max_rel_error({randt({3, 4}, 1)},
                      [](const std::vector<Var>& v) { return reshape(v[0], Shape{2, 6}); }) < 1e-6);
  CHECK(max_rel_error({randt({3, 4}, 2)}, [](const std::vector<Var>& v) { return transpose(v[0]); }) < 1e-6);
  // repeated indices must scatter-add
  CHECK(max_rel_error({randt({3, 4}, 3)},
                      [](const std::vector<Var>& v) {
                        return gather(v[0], {0, 0, 5, 11, 5, 2}, Shape{2, 3});
                      }) < 1e-6);
  CHECK(max_rel_error({randt({2, 4}, 4), randt({3, 4}, 5)},
                      [](const std::vector<Var>& v) { return concat_rows({v[0], v[1]}); }) < 1e-6);
}

TEST_CASE("layer norm and softmax") {
  CHECK(max_rel_error({randt({3, 6}, 1), randt({6}, 2), randt({6}, 3)},
                      [](const std::vector<Var>& v) { return layer_norm(v[0], v[1], v[2]); }) < 1e-5);
  CHECK(max_rel_error({randt({3, 6}, 4)}, [](const std::vector<Var>& v) { return softmax_rows(v[0]); }) < 1e-6);
  auto s = softmax_rows(leaf(randt({2, 5}, 9)));
  for (int r = 0; r < 2; ++r) {
    double z = 0;
    for (int c = 0; c < 5; ++c) z += s->value.at(r, c);
    CHECK(z == doctest::Approx(1.0));
  }
}

TEST_CASE("attention with bias, causal and not") {
  for (bool causal : {false, true}) {
    kernels::AttentionShape sh{2, 4, 2, 4, causal};
    CHECK(max_rel_error({randt({8, 12}, 1), randt({2, 4, 4}, 2)},
                        [&](const std::vector<Var>& v) { return attention(v[0], sh, v[1]); }) < 1e-5);
  }
  kernels::AttentionShape sh{1, 3, 1, 2, false};
  CHECK(max_rel_error({randt({3, 6}, 3)}, [&](const std::vector<Var>& v) { return attention(v[0], sh); }) < 1e-5);
}

TEST_CASE("cross entropy") {
  const std::vector<std::int64_t> labels{0, 3, 2};
  CHECK(max_rel_error({randt({3, 4}, 1)},
                      [&](const std::vector<Var>& v) { return cross_entropy(v[0], labels); }) < 1e-6);
  // uniform logits give log(classes)
  auto ce = cross_entropy(leaf(Tensor(Shape{3, 4}, 0.0)), labels);
  CHECK(ce->value.data[0] == doctest::Approx(std::log(4.0)));
}

TEST_CASE("custom op and shared subexpressions") {
  // y = x + x routed through a custom doubling op; gradient of sum is 4
  auto x = leaf(Tensor(Shape{3}, std::vector<double>{1, 2, 3}));
  Tensor dv = x->value;
  for (auto& v : dv.data) v *= 2;
  auto twice = custom(dv, {x}, [x](Node& n) {
    std::vector<double> g(n.grad.data);
    for (auto& v : g) v *= 2;
    x->accumulate(g);
  });
  backward(sum(add(twice, twice)));
  for (double g : x->grad.data) CHECK(g == 4.0);
  auto c = constant(Tensor(Shape{2}, 1.0));
  backward(sum(add(c, leaf(Tensor(Shape{2}, 1.0)))));
  CHECK_FALSE(c->has_grad());
}
